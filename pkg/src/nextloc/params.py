"""Named parameter store with Adam state and a binary checkpoint format.

Checkpoint layout (version 1, documented byte-exact):

* bytes 0..7    magic ``NLCKPT01``
* bytes 8..15   little-endian u64, JSON header length ``n``
* bytes 16..16+n  UTF-8 JSON: ``{"version": 1, "step": int, "seed": int,
  "meta": {...}, "tensors": [{"name": str, "shape": [int, ...]}, ...]}``
* then, for each tensor in header order: parameter values, first moment,
  second moment, each as C-order float64 little-endian raw bytes.

Loading reproduces the store bit-exactly.
"""

from __future__ import annotations

import json

import numpy as np

from .autodiff import Tensor

CHECKPOINT_MAGIC = b"NLCKPT01"


class CheckpointError(Exception):
    pass


class _Entry:
    __slots__ = ("tensor", "m", "v")

    def __init__(self, tensor: Tensor):
        self.tensor = tensor
        self.m = np.zeros_like(tensor.value)
        self.v = np.zeros_like(tensor.value)


def _fan_in(shape) -> int:
    return shape[-1] if len(shape) > 1 else shape[0]


class ParamStore:
    """All trainable tensors of one model, keyed by name, plus Adam moments
    and a shared step counter. Creation order is the seeded-init draw order,
    so building the same parameter set twice yields identical values."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._rng = np.random.default_rng(self.seed)
        self.entries: dict[str, _Entry] = {}
        self.step = 0

    def add(self, name: str, shape, init: str = "fanin") -> Tensor:
        if name in self.entries:
            raise ValueError(f"duplicate parameter {name!r}")
        shape = tuple(int(d) for d in shape)
        if init == "fanin":
            bound = 1.0 / np.sqrt(_fan_in(shape))
            value = self._rng.uniform(-bound, bound, size=shape)
        elif init == "zeros":
            value = np.zeros(shape)
        else:
            raise ValueError(f"unknown init {init!r}")
        t = Tensor(value, requires_grad=True)
        self.entries[name] = _Entry(t)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.entries[name].tensor

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def names(self) -> list[str]:
        return list(self.entries)

    def n_params(self) -> int:
        return sum(e.tensor.value.size for e in self.entries.values())

    def zero_grad(self) -> None:
        for e in self.entries.values():
            e.tensor.zero_grad()

    def grad_norm(self) -> float:
        sq = sum(float((e.tensor.grad ** 2).sum()) for e in self.entries.values())
        return float(np.sqrt(sq))

    def clip_global_norm(self, max_norm: float) -> float:
        """Scale all gradients so their joint L2 norm is at most max_norm."""
        norm = self.grad_norm()
        if norm > max_norm:
            scale = max_norm / norm
            for e in self.entries.values():
                e.tensor.grad *= scale
        return norm

    def adam_step(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
        """Bias-corrected Adam update; zeroes gradients and bumps the step."""
        self.step += 1
        t = self.step
        for e in self.entries.values():
            g = e.tensor.grad
            e.m *= beta1
            e.m += (1.0 - beta1) * g
            e.v *= beta2
            e.v += (1.0 - beta2) * g * g
            m_hat = e.m / (1.0 - beta1 ** t)
            v_hat = e.v / (1.0 - beta2 ** t)
            e.tensor.value -= lr * m_hat / (np.sqrt(v_hat) + eps)
        self.zero_grad()


def save_checkpoint(path, store: ParamStore, meta: dict | None = None) -> None:
    names = store.names()
    header = {
        "version": 1,
        "step": store.step,
        "seed": store.seed,
        "meta": meta or {},
        "tensors": [{"name": n, "shape": list(store[n].value.shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        for n in names:
            e = store.entries[n]
            for arr in (e.tensor.value, e.m, e.v):
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[ParamStore, dict]:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}")
        n = int.from_bytes(fh.read(8), "little")
        header = json.loads(fh.read(n).decode("utf-8"))
        if header.get("version") != 1:
            raise CheckpointError(f"{path}: unsupported version {header.get('version')}")
        store = ParamStore(seed=header["seed"])
        store.step = int(header["step"])
        for spec in header["tensors"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            entry_arrays = []
            for _ in range(3):
                raw = fh.read(count * 8)
                if len(raw) != count * 8:
                    raise CheckpointError(f"{path}: truncated tensor {spec['name']}")
                entry_arrays.append(np.frombuffer(raw, dtype="<f8").reshape(shape).copy())
            t = Tensor(entry_arrays[0], requires_grad=True)
            e = _Entry(t)
            e.m, e.v = entry_arrays[1], entry_arrays[2]
            store.entries[spec["name"]] = e
    return store, header["meta"]
