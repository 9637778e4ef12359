"""
Rotary phases on a shared physical time grid.

Audio token j sits at position j and video token i at s·i with s = f_a / f_v,
so tokens that describe the same instant receive the same rotation.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .diffcore import Tensor, record
from .errors import ContractError, DimensionError, DomainError


@dataclass(frozen=True)
class RotaryBasis:
    """θ_m = base^(−2m/head_dim) is the angular frequency of pair m."""

    head_dim: int
    base: float = 10000.0
    theta: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.head_dim < 2 or self.head_dim % 2:
            raise ContractError(f"rotary head_dim must be a positive even integer, got {self.head_dim}")
        if not self.base > 1.0:
            raise DomainError(f"rotary base must exceed 1, got {self.base}")
        m = np.arange(self.head_dim // 2, dtype=np.float64)
        theta = self.base ** (-2.0 * m / self.head_dim)
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    def phases(self, positions: Sequence[float]) -> np.ndarray:
        """[len(positions), head_dim/2] rotation angles p·θ_m."""
        return np.outer(np.asarray(positions, dtype=np.float64), self.theta)


@dataclass(frozen=True)
class TimeGrid:
    f_v: float = 1.5
    f_a: float = 6.0

    def __post_init__(self):
        if not (self.f_v > 0 and self.f_a > 0):
            raise DomainError(f"frame rates must be positive, got f_v={self.f_v}, f_a={self.f_a}")

    @property
    def s(self) -> float:
        return self.f_a / self.f_v

    def video_tokens(self, duration_s: float) -> int:
        return int(round(self.f_v * duration_s))

    def audio_tokens(self, duration_s: float) -> int:
        return int(round(self.f_a * duration_s))


def position_video(grid: TimeGrid, i: int) -> float:
    if i < 0:
        raise DomainError(f"video token index must be non-negative, got {i}")
    return grid.s * i


def position_audio(grid: TimeGrid, j: int) -> float:
    if j < 0:
        raise DomainError(f"audio token index must be non-negative, got {j}")
    return float(j)


def video_positions(grid: TimeGrid, n: int) -> list[float]:
    return [position_video(grid, i) for i in range(n)]


def audio_positions(grid: TimeGrid, n: int) -> list[float]:
    return [position_audio(grid, j) for j in range(n)]


def _rotate(data: np.ndarray, cos: np.ndarray, sin: np.ndarray) -> np.ndarray:
    even = data[..., 0::2]
    odd = data[..., 1::2]
    out = np.empty_like(data)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out


def apply_rotary(x: Tensor, positions: Sequence[float], basis: RotaryBasis) -> Tensor:
    """
    Rotate each adjacent pair (2m, 2m+1) of x[..., seq, head_dim] by p·θ_m.
    The rotation is orthogonal, so the backward pass rotates by −p·θ_m.
    """
    if x.ndim < 2:
        raise DimensionError(f"apply_rotary needs [..., seq, head_dim], got {x.shape}")
    if x.shape[-1] != basis.head_dim:
        raise DimensionError(f"head_dim {x.shape[-1]} does not match rotary basis {basis.head_dim}")
    if len(positions) != x.shape[-2]:
        raise DimensionError(f"{len(positions)} positions for a sequence of {x.shape[-2]} tokens")
    angles = basis.phases(positions)
    cos = np.cos(angles).astype(x.dtype)
    sin = np.sin(angles).astype(x.dtype)

    def backward(g):
        return (_rotate(g, cos, -sin),)

    return record("rotary", (x,), _rotate(x.data, cos, sin), backward)
