"""
Dense arrays with a define-by-run reverse-mode gradient tape.

Usage:

    x = Tensor(np.ones((3, 4)), requires_grad=True)
    with Tape() as tape:
        loss = mean(square(matmul(x, w)))
    (gx,) = tape.gradient(loss, [x])

Tensors are immutable values. Primitives executed while a tape is active and
with at least one input that requires a gradient are appended to that tape in
execution order, which is a topological order by construction.

Broadcasting is limited to a 1-D gain or bias over the last axis; anything
else must be reshaped explicitly.
"""

from __future__ import annotations

import contextlib
import contextvars
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError, DomainError, NumericError

RMS_EPS = 1e-6

_active_tape: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar("avlab_active_tape", default=None)
_default_dtype: contextvars.ContextVar[type] = contextvars.ContextVar("avlab_default_dtype", default=np.float64)


@contextlib.contextmanager
def fast_mode():
    """Create new tensors in float32 inside the block (training throughput mode)."""
    token = _default_dtype.set(np.float32)
    try:
        yield
    finally:
        _default_dtype.reset(token)


def default_dtype():
    return _default_dtype.get()


class Tensor:
    __slots__ = ("data", "requires_grad", "node_id")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.array(data, dtype=dtype or _default_dtype.get())
        arr.setflags(write=False)
        self.data = arr
        self.requires_grad = requires_grad
        self.node_id: int | None = None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # Primitive outputs are fresh arrays (or views of immutable inputs), no copy needed
        out = cls.__new__(cls)
        arr = np.asarray(arr)
        arr.setflags(write=False)
        out.data = arr
        out.requires_grad = False
        out.node_id = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() needs a single element, tensor has shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else add_scalar(self, float(other))

    def __radd__(self, other):
        return add_scalar(self, float(other))

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else add_scalar(self, -float(other))

    def __rsub__(self, other):
        return add_scalar(scale(self, -1.0), float(other))

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scale(self, float(other))

    def __rmul__(self, other):
        return scale(self, float(other))

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ContractError("division is only defined by a scalar")
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


@dataclass
class TapeEntry:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], tuple[np.ndarray | None, ...]]


class Tape:
    """
    Ordered record of primitive operations for one define-by-run pass.

    A tape is single-owner: build it, call `gradient`, then drop it.
    """

    def __init__(self):
        self.entries: list[TapeEntry] = []
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _active_tape.reset(self._token)
        self._token = None
        return False

    def __len__(self) -> int:
        return len(self.entries)

    def record(self, op: str, inputs: tuple[Tensor, ...], output: Tensor, backward) -> None:
        output.node_id = len(self.entries)
        self.entries.append(TapeEntry(op, inputs, output, backward))

    def gradient(self, target: Tensor, sources: Sequence[Tensor], unused: str = "zeros") -> list[np.ndarray | None]:
        """
        Reverse pass from a scalar `target`. Every entry is visited once, last
        recorded first. Sources that do not influence the target get zeros, or
        None with unused="none".
        """
        if target.size != 1:
            raise ContractError(f"gradient target must be a scalar, got shape {target.shape}")
        grads: dict[int, np.ndarray] = {id(target): np.ones_like(target.data)}
        for entry in reversed(self.entries):
            g = grads.get(id(entry.output))
            if g is None:
                continue
            for tensor, g_in in zip(entry.inputs, entry.backward(g)):
                if g_in is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                grads[key] = grads[key] + g_in if key in grads else g_in
        out = []
        for s in sources:
            g = grads.get(id(s))
            if g is None:
                out.append(None if unused == "none" else np.zeros_like(s.data))
            else:
                out.append(np.array(g, dtype=s.data.dtype))
        return out


def record(op: str, inputs: tuple[Tensor, ...], out_data: np.ndarray, backward) -> Tensor:
    """Wrap a primitive result and put it on the active tape when any input needs a gradient."""
    out = Tensor._wrap(out_data)
    tape = _active_tape.get()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(op, inputs, out, backward)
    return out


def _check_last_axis(op: str, a: Tensor, b: Tensor) -> bool:
    """True when b is a last-axis vector to broadcast over a; raises on other mismatches."""
    if a.shape == b.shape:
        return False
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        return True
    raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ (only last-axis vectors broadcast)")


def _sum_leading(g: np.ndarray) -> np.ndarray:
    return g.reshape(-1, g.shape[-1]).sum(axis=0)


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    bcast = _check_last_axis("add", a, b)

    def backward(g):
        return g, (_sum_leading(g) if bcast else g)

    return record("add", (a, b), a.data + b.data, backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    bcast = _check_last_axis("sub", a, b)

    def backward(g):
        return g, -(_sum_leading(g) if bcast else g)

    return record("sub", (a, b), a.data - b.data, backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    bcast = _check_last_axis("mul", a, b)

    def backward(g):
        gb = g * a.data
        return g * b.data, (_sum_leading(gb) if bcast else gb)

    return record("mul", (a, b), a.data * b.data, backward)


def scale(a: Tensor, c: float) -> Tensor:
    return record("scale", (a,), a.data * c, lambda g: (g * c,))


def add_scalar(a: Tensor, c: float) -> Tensor:
    return record("add_scalar", (a,), a.data + c, lambda g: (g,))


def square(a: Tensor) -> Tensor:
    return record("square", (a,), a.data * a.data, lambda g: (2.0 * g * a.data,))


def silu(a: Tensor) -> Tensor:
    sig = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        return (g * (sig + a.data * sig * (1.0 - sig)),)

    return record("silu", (a,), a.data * sig, backward)


# ---------------------------------------------------------------------------
# linear algebra and layout
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """
    a[..., m, k] @ b[..., k, n]. Leading extents of a and b must be equal, or b
    must be a plain [k, n] matrix shared by every leading index of a.
    """
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs at least 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    shared_weight = b.ndim == 2 and a.ndim > 2
    if not shared_weight and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul leading extents differ: {a.shape} @ {b.shape}")

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        if shared_weight:
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return ga, gb

    return record("matmul", (a, b), np.matmul(a.data, b.data), backward)


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise DimensionError(f"transpose axes {axes} do not permute a {a.ndim}-D tensor")
    inverse = tuple(np.argsort(axes))
    return record("transpose", (a,), np.transpose(a.data, axes), lambda g: (np.transpose(g, inverse),))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {a.shape} into {shape}") from exc
    return record("reshape", (a,), out, lambda g: (g.reshape(a.shape),))


def slice_axis(a: Tensor, start: int, stop: int, axis: int = -1) -> Tensor:
    axis = axis % a.ndim
    if not 0 <= start < stop <= a.shape[axis]:
        raise DimensionError(f"slice [{start}:{stop}] out of range for axis {axis} of {a.shape}")
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def backward(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return record("slice", (a,), a.data[index], backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    axis = axis % tensors[0].ndim
    for t in tensors[1:]:
        if t.ndim != tensors[0].ndim or any(
            t.shape[d] != tensors[0].shape[d] for d in range(t.ndim) if d != axis
        ):
            raise DimensionError(f"concat shapes {[x.shape for x in tensors]} differ off axis {axis}")
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors))
        )

    return record("concat", tensors, np.concatenate([t.data for t in tensors], axis=axis), backward)


def embedding(table: Tensor, ids) -> Tensor:
    """Rows of a [vocab, dim] table selected by integer ids."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise DimensionError(f"embedding table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ContractError(f"embedding ids outside [0, {table.shape[0]})")

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        return (full,)

    return record("embedding", (table,), table.data[ids], backward)


# ---------------------------------------------------------------------------
# reductions and normalisation
# ---------------------------------------------------------------------------


def sum(a: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    if axis is None:
        return record("sum", (a,), np.asarray(a.data.sum()), lambda g: (np.broadcast_to(g, a.shape).copy(),))
    axis = axis % a.ndim
    return record(
        "sum", (a,), a.data.sum(axis=axis), lambda g: (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)
    )


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    count = a.size if axis is None else a.shape[axis]
    return scale(sum(a, axis), 1.0 / count)


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis, stabilised by subtracting the row maximum."""
    if x.shape[-1] < 1:
        raise DimensionError("softmax over an empty axis")
    if not np.all(np.isfinite(x.data)):
        raise NumericError("softmax_rows received non-finite input")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return record("softmax", (x,), y, backward)


def rms_norm(x: Tensor, gain: Tensor | None = None) -> Tensor:
    """x / sqrt(mean(x²) + 1e-6) over the last axis, times an optional last-axis gain."""
    if gain is not None and (gain.ndim != 1 or gain.shape[0] != x.shape[-1]):
        raise DimensionError(f"rms_norm gain {gain.shape} does not match last axis of {x.shape}")
    r = np.sqrt((x.data * x.data).mean(axis=-1, keepdims=True) + RMS_EPS)
    n = x.data / r
    out = n * gain.data if gain is not None else n

    def backward(g):
        dn = g * gain.data if gain is not None else g
        dx = (dn - n * (dn * n).mean(axis=-1, keepdims=True)) / r
        if gain is None:
            return (dx,)
        return dx, _sum_leading(g * n)

    inputs = (x,) if gain is None else (x, gain)
    return record("rms_norm", inputs, out, backward)


def timestep_embedding(tau: float, dim: int, max_period: float = 10000.0, time_scale: float = 1000.0) -> Tensor:
    """Sinusoidal embedding [cos | sin] of an effective time τ; a constant input, never differentiated."""
    if dim % 2:
        raise ContractError(f"timestep embedding dim must be even, got {dim}")
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half, dtype=np.float64) / half)
    args = float(tau) * time_scale * freqs
    return Tensor(np.concatenate([np.cos(args), np.sin(args)]))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    out = matmul(x, weight)
    return add(out, bias) if bias is not None else out


def mse(pred: Tensor, target: Tensor) -> Tensor:
    if pred.shape != target.shape:
        raise DimensionError(f"mse shapes differ: {pred.shape} vs {target.shape}")
    return mean(square(sub(pred, target)))


def check_finite(t: Tensor, what: str) -> None:
    if not np.all(np.isfinite(t.data)):
        raise NumericError(f"{what} contains NaN or infinity")


# ---------------------------------------------------------------------------
# finite-difference checking
# ---------------------------------------------------------------------------


def grad_check(
    f: Callable[[Tensor], Tensor],
    point: Tensor,
    eps: float = 1e-5,
    coords: int | None = None,
    seed: int = 0,
) -> float:
    """
    Max over coordinates of |analytic - central difference| / max(1, |central difference|).

    `coords` limits the check to a seeded random subset of coordinates, which
    keeps checks on large parameter tensors fast.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise DomainError(f"grad_check eps must lie in [1e-7, 1e-3], got {eps}")
    base = np.array(point.data, dtype=np.float64)
    x = Tensor(base, requires_grad=True, dtype=np.float64)
    with Tape() as tape:
        y = f(x)
        if not isinstance(y, Tensor) or y.size != 1:
            raise ContractError("grad_check needs a scalar-valued function")
        (analytic,) = tape.gradient(y, [x])

    flat_idx = np.arange(base.size)
    if coords is not None and coords < base.size:
        flat_idx = np.sort(np.random.default_rng(seed).choice(base.size, size=coords, replace=False))

    worst = 0.0
    for i in flat_idx:
        idx = np.unravel_index(i, base.shape)
        plus = base.copy()
        minus = base.copy()
        plus[idx] += eps
        minus[idx] -= eps
        numeric = (f(Tensor(plus, dtype=np.float64)).item() - f(Tensor(minus, dtype=np.float64)).item()) / (2.0 * eps)
        err = abs(float(analytic[idx]) - numeric) / max(1.0, abs(numeric))
        worst = max(worst, err)
    return worst
