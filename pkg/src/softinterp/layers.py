"""Parameter management, basic neural layers, and checkpoint serialization.

Weights initialize from uniform(-s, s) with s = 1/sqrt(fan_in), biases from
zeros, all seeded through a numpy Generator owned by the ParamStore.

Checkpoints are a deterministic binary format (same params + meta in, same
bytes out): an 8-byte magic with version, a canonical-JSON header mapping each
parameter name to its shape, then raw little-endian float64 blobs in sorted
name order.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

CHECKPOINT_MAGIC = b"SINT0001"


class ParamStore:
    """Named parameter registry with seeded initialization."""

    def __init__(self, rng: np.random.Generator) -> None:
        self.rng = rng
        self.params: dict[str, Tensor] = {}

    def add(self, name: str, shape: tuple[int, ...], fan_in: int | None = None) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter {name!r}")
        if fan_in is None:
            data = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(fan_in)
            data = self.rng.uniform(-bound, bound, size=shape)
        tensor = ad.parameter(data)
        self.params[name] = tensor
        return tensor

    def add_constant_init(self, name: str, shape: tuple[int, ...], value: float) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter {name!r}")
        tensor = ad.parameter(np.full(shape, value))
        self.params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def tensors(self) -> list[Tensor]:
        return [self.params[name] for name in sorted(self.params)]

    def names(self) -> list[str]:
        return sorted(self.params)

    def as_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(arrays)
        extra = set(arrays) - set(self.params)
        if missing or extra:
            raise ValueError(f"parameter mismatch: missing {sorted(missing)}, extra {sorted(extra)}")
        for name, tensor in self.params.items():
            value = np.asarray(arrays[name], dtype=np.float64)
            if value.shape != tensor.data.shape:
                raise ValueError(
                    f"shape mismatch for {name!r}: {value.shape} vs {tensor.data.shape}"
                )
            tensor.data = value.copy()

    def zero_grads(self) -> None:
        for tensor in self.params.values():
            tensor.zero_grad()


class Dense:
    """Affine map over the last axis: y = x @ W + b."""

    def __init__(self, store: ParamStore, name: str, in_dim: int, out_dim: int) -> None:
        self.w = store.add(f"{name}.w", (in_dim, out_dim), fan_in=in_dim)
        self.b = store.add(f"{name}.b", (out_dim,))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, self.w), self.b)


class LayerNorm:
    """Normalize the last axis to zero mean / unit variance, then scale+shift."""

    def __init__(self, store: ParamStore, name: str, dim: int, eps: float = 1e-5) -> None:
        self.gain = store.add_constant_init(f"{name}.gain", (dim,), 1.0)
        self.bias = store.add(f"{name}.bias", (dim,))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        mu = ad.tmean(x, axis=-1, keepdims=True)
        centered = ad.sub(x, mu)
        var = ad.tmean(ad.mul(centered, centered), axis=-1, keepdims=True)
        inv = ad.pow_scalar(ad.add(var, self.eps), -0.5)
        return ad.add(ad.mul(ad.mul(centered, inv), self.gain), self.bias)


class LSTM:
    """Stacked LSTM; state is a list of (h, c) pairs, output the top h."""

    def __init__(
        self, store: ParamStore, name: str, input_dim: int, hidden_dim: int, layers: int = 2
    ) -> None:
        self.hidden_dim = hidden_dim
        self.layers = layers
        self.cells = []
        for layer in range(layers):
            in_dim = input_dim if layer == 0 else hidden_dim
            wx = store.add(f"{name}.l{layer}.wx", (in_dim, 4 * hidden_dim), fan_in=in_dim)
            wh = store.add(f"{name}.l{layer}.wh", (hidden_dim, 4 * hidden_dim), fan_in=hidden_dim)
            b = store.add(f"{name}.l{layer}.b", (4 * hidden_dim,))
            self.cells.append((wx, wh, b))

    def init_state(self, leading_shape: tuple[int, ...]) -> list[tuple[Tensor, Tensor]]:
        shape = (*leading_shape, self.hidden_dim)
        return [
            (ad.constant(np.zeros(shape)), ad.constant(np.zeros(shape)))
            for _ in range(self.layers)
        ]

    def step(
        self, state: list[tuple[Tensor, Tensor]], x: Tensor
    ) -> tuple[list[tuple[Tensor, Tensor]], Tensor]:
        inp = x
        new_state = []
        hidden = self.hidden_dim
        for (wx, wh, b), (h, c) in zip(self.cells, state):
            z = ad.add(ad.add(ad.matmul(inp, wx), ad.matmul(h, wh)), b)
            i = ad.sigmoid(z[..., 0:hidden])
            f = ad.sigmoid(z[..., hidden : 2 * hidden])
            g = ad.tanh(z[..., 2 * hidden : 3 * hidden])
            o = ad.sigmoid(z[..., 3 * hidden : 4 * hidden])
            c_new = ad.add(ad.mul(f, c), ad.mul(i, g))
            h_new = ad.mul(o, ad.tanh(c_new))
            new_state.append((h_new, c_new))
            inp = h_new
        return new_state, inp


def rnn_step(cell: LSTM, state, x):
    """Spec-shaped alias: one recurrent step, returns (state', output)."""
    return cell.step(state, x)


def dropout(x: Tensor, rate: float, rng: np.random.Generator, train: bool) -> Tensor:
    if not train or rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(np.float64) / (1.0 - rate)
    return ad.mul(x, keep)


# --- checkpoint serialization -------------------------------------------------


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    names = sorted(arrays)
    header = {
        "version": 1,
        "meta": meta,
        "params": {name: list(np.asarray(arrays[name]).shape) for name in names},
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += len(header_bytes).to_bytes(8, "big")
    blob += header_bytes
    for name in names:
        blob += np.ascontiguousarray(np.asarray(arrays[name], dtype="<f8")).tobytes()
    Path(path).write_bytes(bytes(blob))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"not a checkpoint file (bad magic {raw[:8]!r})")
    header_len = int.from_bytes(raw[8:16], "big")
    header = json.loads(raw[16 : 16 + header_len].decode("utf-8"))
    if header.get("version") != 1:
        raise ValueError(f"unsupported checkpoint version {header.get('version')!r}")
    offset = 16 + header_len
    arrays: dict[str, np.ndarray] = {}
    for name in sorted(header["params"]):
        shape = tuple(header["params"][name])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        arrays[name] = np.frombuffer(raw[offset:end], dtype="<f8").reshape(shape).astype(np.float64)
        offset = end
    if offset != len(raw):
        raise ValueError("trailing bytes in checkpoint")
    return arrays, header["meta"]
