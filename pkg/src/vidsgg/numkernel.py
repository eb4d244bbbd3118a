"""Dense numeric primitives: softmax, GRU cell, attention, RoI align, MLPs and the weight store."""

import logging
import math
from collections.abc import Iterator, Mapping, Sequence
from typing import NamedTuple, Optional

import numpy as np

from .errors import ConfigurationError, PreconditionError
from .geometry import BoundingBox

logger = logging.getLogger(__name__)


def feature_tensor(data: Sequence[float] | np.ndarray, shape: Sequence[int]) -> np.ndarray:
    """Build a float64 tensor from flat row-major data, checking size and finiteness."""
    flat = np.asarray(data, dtype=np.float64).reshape(-1)
    expected = int(np.prod(shape, dtype=np.int64)) if len(shape) else 1
    if flat.size != expected:
        raise ConfigurationError(f"tensor data has {flat.size} values, shape {tuple(shape)} needs {expected}")
    if not np.all(np.isfinite(flat)):
        raise ConfigurationError("tensor contains non-finite values")
    return flat.reshape(tuple(shape))


class WeightStore:
    """Read-only mapping from parameter name to float64 array.

    Multi-layer perceptrons are stored as ``<prefix>.<i>.weight`` /
    ``<prefix>.<i>.bias`` for consecutive layer indices starting at 0.
    """

    def __init__(self, params: Mapping[str, np.ndarray]) -> None:
        self._params: dict[str, np.ndarray] = {}
        for name in sorted(params):
            arr = np.array(params[name], dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise ConfigurationError(f"parameter {name} contains non-finite values")
            arr.setflags(write=False)
            self._params[name] = arr

    def __contains__(self, name: object) -> bool:
        return name in self._params

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self._params[name]
        except KeyError:
            raise ConfigurationError(f"missing parameter: {name}") from None

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self) -> Iterator[tuple[str, np.ndarray]]:
        return iter(self._params.items())

    def manifest(self) -> dict[str, tuple[int, ...]]:
        """Parameter name to shape, in name order."""
        return {name: tuple(arr.shape) for name, arr in self._params.items()}

    def require(self, name: str, shape: Sequence[Optional[int]]) -> np.ndarray:
        """Fetch a parameter and check its shape (None matches any size)."""
        arr = self[name]
        if arr.ndim != len(shape) or any(want is not None and want != got for want, got in zip(shape, arr.shape)):
            raise ConfigurationError(f"parameter {name} has shape {arr.shape}, expected {tuple(shape)}")
        return arr

    def layers(self, prefix: str) -> list[tuple[str, np.ndarray, np.ndarray]]:
        """Consecutive (name, weight, bias) layers stored under ``prefix``."""
        out = []
        i = 0
        while f"{prefix}.{i}.weight" in self._params:
            name = f"{prefix}.{i}"
            weight = self._params[f"{name}.weight"]
            bias = self[f"{name}.bias"]
            if weight.ndim != 2 or bias.shape != (weight.shape[0],):
                raise ConfigurationError(f"layer {name} has weight {weight.shape} and bias {bias.shape}")
            out.append((name, weight, bias))
            i += 1
        return out

    def renamed(self, old_prefix: str, new_prefix: str) -> "WeightStore":
        """Copy of the store with one name prefix replaced by another."""
        params = {}
        for name, arr in self._params.items():
            if name.startswith(old_prefix):
                name = new_prefix + name[len(old_prefix):]
            params[name] = arr
        return WeightStore(params)

    def merged(self, other: Mapping[str, np.ndarray]) -> "WeightStore":
        params = dict(self._params)
        params.update(other)
        return WeightStore(params)


def softmax(v: np.ndarray | Sequence[float], axis: int = -1) -> np.ndarray:
    """Exp-normalize with max subtraction."""
    arr = np.asarray(v, dtype=np.float64)
    shifted = arr - np.max(arr, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def sigmoid(x: np.ndarray | float) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def linear(x: np.ndarray, w: WeightStore, name: str, bias: bool = False) -> np.ndarray:
    """Apply ``<name>.weight`` (and optionally ``<name>.bias``) to a vector."""
    x = np.asarray(x, dtype=np.float64)
    weight = w.require(f"{name}.weight", (None, x.shape[-1]))
    out = weight @ x
    if bias:
        out = out + w.require(f"{name}.bias", (weight.shape[0],))
    return out


def gru_cell(x: np.ndarray, h_prev: np.ndarray, w: WeightStore, prefix: str) -> np.ndarray:
    """One GRU step with h' = (1 - z) * h + z * h_candidate."""
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h_prev, dtype=np.float64)
    dx, dh = x.shape[0], h.shape[0]

    def gate(tag: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (
            w.require(f"{prefix}.W{tag}", (dh, dx)),
            w.require(f"{prefix}.U{tag}", (dh, dh)),
            w.require(f"{prefix}.b{tag}", (dh,)),
        )

    wz, uz, bz = gate("z")
    wr, ur, br = gate("r")
    wh, uh, bh = gate("h")
    z = sigmoid(wz @ x + uz @ h + bz)
    r = sigmoid(wr @ x + ur @ h + br)
    h_cand = np.tanh(wh @ x + uh @ (r * h) + bh)
    return (1.0 - z) * h + z * h_cand


class AttentionTrace(NamedTuple):
    """Per-head internals of one attention call."""

    weights: np.ndarray  # (heads, T)
    values: np.ndarray  # (T, heads, d_head) projected values
    head_outputs: np.ndarray  # (heads, d_head)


def attention_heads(
    query: np.ndarray,
    keys: Sequence[np.ndarray] | np.ndarray,
    values: Sequence[np.ndarray] | np.ndarray,
    w: WeightStore,
    heads: int,
    prefix: str,
) -> AttentionTrace:
    """Scaled dot-product attention per head, before the output projection."""
    k = np.asarray(keys, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if k.ndim != 2 or k.shape[0] == 0:
        raise PreconditionError("attention needs at least one key/value step")
    if v.shape[0] != k.shape[0]:
        raise PreconditionError(f"got {k.shape[0]} keys but {v.shape[0]} values")
    q = np.asarray(query, dtype=np.float64)

    wq = w.require(f"{prefix}.Wq", (None, q.shape[0]))
    model_dim = wq.shape[0]
    if heads < 1 or model_dim % heads != 0:
        raise ConfigurationError(f"{prefix}: model dim {model_dim} is not divisible by {heads} heads")
    wk = w.require(f"{prefix}.Wk", (model_dim, k.shape[1]))
    wv = w.require(f"{prefix}.Wv", (model_dim, v.shape[1]))
    d_head = model_dim // heads
    steps = k.shape[0]

    qh = (wq @ q).reshape(heads, d_head)
    kh = (k @ wk.T).reshape(steps, heads, d_head)
    vh = (v @ wv.T).reshape(steps, heads, d_head)
    scores = np.einsum("hd,thd->ht", qh, kh) / math.sqrt(d_head)
    weights = softmax(scores, axis=1)
    head_outputs = np.einsum("ht,thd->hd", weights, vh)
    return AttentionTrace(weights=weights, values=vh, head_outputs=head_outputs)


def multi_head_attention(
    query: np.ndarray,
    keys: Sequence[np.ndarray] | np.ndarray,
    values: Sequence[np.ndarray] | np.ndarray,
    w: WeightStore,
    heads: int,
    prefix: str = "attn",
) -> np.ndarray:
    """Multi-head attention with learned q/k/v/output projections (no biases)."""
    trace = attention_heads(query, keys, values, w, heads, prefix)
    concat = trace.head_outputs.reshape(-1)
    wo = w.require(f"{prefix}.Wo", (None, concat.shape[0]))
    return wo @ concat


def bilinear_sample(grid: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample a C x H x W grid on the outer product of ``ys`` and ``xs``.

    Cell (i, j) spans [j, j+1) x [i, i+1); its value sits at the cell center.
    Points outside the grid clamp to the edge.
    """
    _, height, width = grid.shape
    fy = np.clip(np.asarray(ys, dtype=np.float64) - 0.5, 0.0, height - 1)
    fx = np.clip(np.asarray(xs, dtype=np.float64) - 0.5, 0.0, width - 1)
    y0 = np.floor(fy).astype(np.int64)
    x0 = np.floor(fx).astype(np.int64)
    y1 = np.minimum(y0 + 1, height - 1)
    x1 = np.minimum(x0 + 1, width - 1)
    wy = (fy - y0)[:, None]
    wx = fx - x0

    rows0 = grid[:, y0]
    rows1 = grid[:, y1]
    top = rows0[:, :, x0] + wx * (rows0[:, :, x1] - rows0[:, :, x0])
    bottom = rows1[:, :, x0] + wx * (rows1[:, :, x1] - rows1[:, :, x0])
    return top + wy * (bottom - top)


def roi_align(grid: np.ndarray, box: BoundingBox, out_h: int, out_w: int) -> np.ndarray:
    """RoI align with one bilinear sample at the center of each output bin.

    ``box`` is already expressed in grid coordinates.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 3:
        raise PreconditionError(f"roi_align expects a C x H x W grid, got shape {grid.shape}")
    ys = box.y1 + (np.arange(out_h) + 0.5) * (box.y2 - box.y1) / out_h
    xs = box.x1 + (np.arange(out_w) + 0.5) * (box.x2 - box.x1) / out_w
    return bilinear_sample(grid, ys, xs)


def mlp_forward(x: np.ndarray, w: WeightStore, prefix: str) -> np.ndarray:
    """Stacked linear layers with ReLU between them and a linear read-out."""
    layers = w.layers(prefix)
    if not layers:
        raise ConfigurationError(f"missing parameter: {prefix}.0.weight")
    h = np.asarray(x, dtype=np.float64)
    last = len(layers) - 1
    for i, (name, weight, bias) in enumerate(layers):
        if weight.shape[1] != h.shape[0]:
            raise ConfigurationError(f"parameter {name}.weight expects input {weight.shape[1]}, got {h.shape[0]}")
        h = weight @ h + bias
        if i < last:
            h = np.maximum(h, 0.0)
    return h
