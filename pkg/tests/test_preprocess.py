import math
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nextloc.ingest import RawRecord, RecordSet
from nextloc.preprocess import (
    PreprocessError,
    build_sessions,
    filter_and_merge,
    filter_sparse,
    load_processed,
    load_vocab,
    local_fields,
    merge_consecutive,
    run_pipeline,
    save_processed,
    save_vocab,
    split_train_test,
)

DAY = 86400
WEEK = 7 * DAY
# Monday 2023-01-02 00:00:00 UTC
MONDAY = 1672617600


def rec(user, loc, utc, cat="Cafe", lat=40.7, lon=-74.0, tz=0):
    return RawRecord(user, loc, cat, lat, lon, utc, tz)


def record_set(records):
    from nextloc.ingest import LocationInfo

    rs = RecordSet(records=sorted(records, key=lambda r: (r.user_key, r.utc_seconds)),
                   source_tag="foursquare")
    for r in rs.records:
        rs.locations.setdefault(r.location_key, LocationInfo(r.lat, r.lon, r.category_name))
    return rs


def spread(user, loc, n, start, step=2 * DAY):
    return [rec(user, loc, start + i * step) for i in range(n)]


# ---------------------------------------------------------------------------
# filter_sparse
# ---------------------------------------------------------------------------

def test_single_user_below_threshold_is_fatal():
    rs = record_set(spread("a", "X", 9, MONDAY))
    with pytest.raises(PreprocessError):
        filter_sparse(rs, 10)


def test_at_threshold_unchanged():
    rs = record_set(spread("a", "X", 10, MONDAY))
    assert filter_sparse(rs, 10).records == rs.records


def test_sparse_location_cascades_to_user():
    # user b has 10 records but 1 is at a sparse location; dropping the
    # location drops b below 10, so b disappears entirely
    records = spread("a", "X", 12, MONDAY)
    records += spread("b", "X", 9, MONDAY + 3600)
    records += [rec("b", "RARE", MONDAY + 50 * DAY)]
    out = filter_sparse(record_set(records), 10)
    assert {r.user_key for r in out.records} == {"a"}


def brute_force_fixpoint(records, min_count):
    """Oracle: remove one violating entity at a time until none remain."""
    current = list(records)
    while True:
        locs = Counter(r.location_key for r in current)
        users = Counter(r.user_key for r in current)
        bad_loc = sorted(k for k, v in locs.items() if v < min_count)
        bad_user = sorted(k for k, v in users.items() if v < min_count)
        if not bad_loc and not bad_user:
            return current
        if bad_loc:
            current = [r for r in current if r.location_key != bad_loc[0]]
        else:
            current = [r for r in current if r.user_key != bad_user[0]]


@settings(max_examples=100)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 4)), min_size=1, max_size=30),
       st.integers(2, 5))
def test_filter_matches_brute_force_oracle(pairs, min_count):
    records = [rec(f"u{u}", f"l{l}", MONDAY + i * 3600) for i, (u, l) in enumerate(pairs)]
    expected = brute_force_fixpoint(records, min_count)
    rs = record_set(records)
    if not expected:
        with pytest.raises(PreprocessError):
            filter_sparse(rs, min_count)
    else:
        got = filter_sparse(rs, min_count).records
        assert sorted((r.user_key, r.utc_seconds) for r in got) == sorted(
            (r.user_key, r.utc_seconds) for r in expected
        )


# ---------------------------------------------------------------------------
# merge_consecutive
# ---------------------------------------------------------------------------

def test_same_day_run_collapses_to_earliest():
    rs = record_set([rec("a", "X", MONDAY + 9 * 3600), rec("a", "X", MONDAY + 11 * 3600)])
    out = merge_consecutive(rs)
    assert [r.utc_seconds for r in out.records] == [MONDAY + 9 * 3600]


def test_interleaved_location_breaks_run():
    rs = record_set([
        rec("a", "X", MONDAY + 9 * 3600),
        rec("a", "Y", MONDAY + 10 * 3600),
        rec("a", "X", MONDAY + 11 * 3600),
    ])
    assert len(merge_consecutive(rs).records) == 3


def test_local_day_boundary_breaks_run():
    rs = record_set([
        rec("a", "X", MONDAY + 23 * 3600 + 50 * 60),
        rec("a", "X", MONDAY + DAY + 10 * 60),
    ])
    assert len(merge_consecutive(rs).records) == 2


def test_merge_uses_local_day():
    # 23:50 and next 00:10 UTC fall on one local day at offset -60 minutes
    rs = record_set([
        rec("a", "X", MONDAY + 23 * 3600 + 50 * 60, tz=-60),
        rec("a", "X", MONDAY + DAY + 10 * 60, tz=-60),
    ])
    assert len(merge_consecutive(rs).records) == 1


@settings(max_examples=60)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 2), st.integers(0, 6 * 24)), max_size=25))
def test_filter_merge_idempotent(triples):
    records = [
        rec(f"u{u}", f"l{l}", MONDAY + h * 3600 + 60 * i)
        for i, (u, l, h) in enumerate(triples)
    ]
    rs = record_set(records)
    try:
        once = filter_and_merge(rs, 3)
    except PreprocessError:
        return
    twice = filter_and_merge(once, 3)
    assert twice.records == once.records


# ---------------------------------------------------------------------------
# build_sessions / split
# ---------------------------------------------------------------------------

def week_fixture(n_weeks=6, per_week=2, user="a"):
    records = []
    for w in range(n_weeks):
        for k in range(per_week):
            records.append(rec(user, f"L{k}", MONDAY + w * WEEK + k * DAY + 3600 * (9 + k)))
    return record_set(records)


def test_same_iso_week_one_session():
    rs = record_set([rec("a", "X", MONDAY), rec("a", "Y", MONDAY + DAY)])
    # user below min_sessions would be dropped; relax minimums to isolate grouping
    vocab, users = build_sessions(rs, min_session_records=2, min_sessions=1)
    assert len(users) == 1 and len(users[0].sessions) == 1
    assert len(users[0].sessions[0].records) == 2


def test_single_record_sessions_dropped_then_user_dropped():
    rs = record_set([rec("a", "X", MONDAY), rec("a", "X", MONDAY + WEEK)])
    with pytest.raises(PreprocessError):
        build_sessions(rs, min_session_records=2, min_sessions=1)


def test_min_sessions_enforced():
    rs = week_fixture(n_weeks=4)
    with pytest.raises(PreprocessError):
        build_sessions(rs, min_sessions=5)
    vocab, users = build_sessions(week_fixture(n_weeks=5), min_sessions=5)
    assert len(users[0].sessions) == 5


def test_monday_midnight_features():
    hour, dow, tow = local_fields(MONDAY, 0)
    assert (hour, dow, tow) == (0, 0, 0.0)


def test_local_fields_general():
    # Wednesday 15:30:36 local
    utc = MONDAY + 2 * DAY + 15 * 3600 + 30 * 60 + 36
    hour, dow, tow = local_fields(utc, 0)
    assert (hour, dow) == (15, 2)
    assert tow == pytest.approx((2 * 24 + 15 + 30 / 60 + 36 / 3600) / 168.0)
    # same instant seen from offset +60 is one hour later on the wall clock
    hour2, _, _ = local_fields(utc, 60)
    assert hour2 == 16


def test_vocab_contiguous_and_consistent():
    vocab, users = build_sessions(week_fixture(), min_sessions=5)
    assert vocab.user_key == ["a"]
    assert vocab.loc_key == sorted(vocab.loc_key)
    for u in users:
        for s in u.sessions:
            for r in s.records:
                assert 0 <= r.loc < vocab.n_locs
                assert 0 <= r.cat < vocab.n_cats
                assert vocab.loc_cat[r.loc] == r.cat


def test_split_points():
    for n, want in ((5, 4), (7, 6), (10, 8)):
        rs = week_fixture(n_weeks=n)
        vocab, users = build_sessions(rs, min_sessions=5)
        split_train_test(users, 0.8)
        assert users[0].split_point == want == math.ceil(0.8 * n)


def test_pipeline_record_conservation():
    records = []
    for u in range(3):
        for w in range(6):
            for k in range(3):
                records.append(rec(f"u{u}", f"l{(u + k) % 4}", MONDAY + w * WEEK + k * DAY + u * 3600))
    result = run_pipeline(record_set(records), min_count=5)
    total = sum(len(s.records) for user in result.users for s in user.sessions)
    assert total == result.final.records


def test_save_load_round_trip(tmp_path):
    records = []
    for u in range(3):
        for w in range(6):
            for k in range(3):
                records.append(rec(f"u{u}", f"l{(u + k) % 4}", MONDAY + w * WEEK + k * DAY + u * 3600))
    result = run_pipeline(record_set(records), min_count=5)
    save_vocab(tmp_path / "vocab.txt", result.vocab)
    save_processed(tmp_path / "proc.txt", result.vocab, result.users)
    vocab2 = load_vocab(tmp_path / "vocab.txt")
    users2 = load_processed(tmp_path / "proc.txt", vocab2)
    assert vocab2 == result.vocab
    assert users2 == result.users
