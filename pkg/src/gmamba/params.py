"""Parameter tensors, the named parameter store, and checkpoint I/O.

Checkpoint layout: an 8-byte little-endian header length, a UTF-8 JSON
header with a ``version`` field and per-parameter (name, shape, offset)
entries, then the raw little-endian float64 payload.  Offsets are byte
offsets into the payload section.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import ConfigError, DataFormatError

CHECKPOINT_VERSION = "gmamba-ckpt-1"


class Tensor:
    """Dense float64 value with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = True):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def add_grad(self, g) -> None:
        if g is None:
            return
        g = np.asarray(g, dtype=np.float64)
        if g.shape != self.data.shape:
            raise ConfigError(
                f"gradient shape {g.shape} does not match parameter shape {self.data.shape}"
            )
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class ParamStore:
    """Named parameters with deterministic (insertion) iteration order."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def register(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params:
            raise ConfigError(f"duplicate parameter name: {name!r}")
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self):
        return self._params.values()

    def num_elements(self) -> int:
        return sum(t.size for t in self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.zero_grad()

    def first_nonfinite(self) -> str | None:
        """Name of the first parameter containing NaN/Inf, or None."""
        for name, t in self._params.items():
            if not np.all(np.isfinite(t.data)):
                return name
        return None


def save_checkpoint(store: ParamStore, path) -> None:
    entries = []
    offset = 0
    for name, t in store.items():
        entries.append({"name": name, "shape": list(t.shape), "offset": offset})
        offset += t.data.nbytes
    header = json.dumps({"version": CHECKPOINT_VERSION, "params": entries}).encode("utf-8")
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for t in store.tensors():
            f.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def read_checkpoint(path) -> dict[str, np.ndarray]:
    """Load a checkpoint into a name -> array mapping."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 8:
        raise DataFormatError(f"{path}: truncated checkpoint")
    (header_len,) = struct.unpack("<Q", raw[:8])
    try:
        header = json.loads(raw[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"{path}: bad checkpoint header: {exc}") from exc
    if header.get("version") != CHECKPOINT_VERSION:
        raise DataFormatError(
            f"{path}: unsupported checkpoint version {header.get('version')!r}"
        )
    payload = raw[8 + header_len :]
    out = {}
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=start)
        out[entry["name"]] = arr.reshape(shape).astype(np.float64)
    return out


def load_checkpoint(store: ParamStore, path) -> None:
    """Restore ``store`` parameters in place; names and shapes must match."""
    loaded = read_checkpoint(path)
    if set(loaded) != set(store.names()):
        missing = set(store.names()) - set(loaded)
        extra = set(loaded) - set(store.names())
        raise ConfigError(
            f"checkpoint/store parameter mismatch: missing={sorted(missing)} extra={sorted(extra)}"
        )
    for name, t in store.items():
        arr = loaded[name]
        if arr.shape != t.shape:
            raise ConfigError(
                f"checkpoint shape {arr.shape} != store shape {t.shape} for {name!r}"
            )
        t.data[...] = arr
