"""Next-location prediction from LBSN check-ins: preprocessing pipeline,
multi-task recurrent models with a time -> activity -> location causal chain,
a distance-weighted location loss, and an evaluation/analysis suite."""

__version__ = "0.1.0"
