"""Positional embeddings by per-head spherical interpolation.

Each axis (rows, columns) owns two learned endpoint vectors. The
embedding for any fractional position t in [0, 1] walks the great-circle
arc between them:

    e_i <- s * e_i / ||e_i||        (per attention head, s = sqrt(d_head))
    theta = arccos(cos(e_0, e_1))
    e(t) = sin((1-t) * theta) / sin(theta) * e_0 + sin(t * theta) / sin(theta) * e_1

so every per-head slice keeps norm s for all t, and the embedding depends
only on the fractional position, never on the grid size. A cell at
(i, j) in an r x c grid gets the row embedding at t = i/(r-1) plus the
column embedding at t = j/(c-1) (t = 0.5 on a degenerate axis).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["SlerpPositionTable", "slerp_interpolate", "axis_embedding", "position_grid"]

COLLINEAR_EPS = 1e-7


@dataclass(frozen=True)
class SlerpPositionTable:
    """Endpoint embeddings for both axes plus the head layout."""

    e0_row: np.ndarray
    e1_row: np.ndarray
    e0_col: np.ndarray
    e1_col: np.ndarray
    n_heads: int

    def __post_init__(self):
        d = self.e0_row.shape[0]
        for name in ("e0_row", "e1_row", "e0_col", "e1_col"):
            e = getattr(self, name)
            if e.shape != (d,):
                raise ValueError("endpoint embeddings must share one dimension")
            if not np.all(np.isfinite(e)):
                raise ValueError(f"{name} must be finite")
        if d % self.n_heads != 0:
            raise ValueError(f"dim {d} not divisible by {self.n_heads} heads")
        dh = d // self.n_heads
        for name in ("e0_row", "e1_row", "e0_col", "e1_col"):
            heads = getattr(self, name).reshape(self.n_heads, dh)
            if np.any(np.linalg.norm(heads, axis=1) == 0.0):
                raise ValueError(f"{name} has a zero-norm head slice")

    @property
    def dim(self) -> int:
        return self.e0_row.shape[0]

    @property
    def head_dim(self) -> int:
        return self.dim // self.n_heads

    @classmethod
    def random(cls, dim: int, n_heads: int, seed: int = 0) -> "SlerpPositionTable":
        rng = np.random.default_rng(seed)
        e = rng.standard_normal((4, dim))
        return cls(e[0], e[1], e[2], e[3], n_heads)


def slerp_interpolate(e0: np.ndarray, e1: np.ndarray, t: float) -> np.ndarray:
    """Interpolate one head slice; result norm is sqrt(len(e0)).

    Endpoints are normalized and scaled before interpolation. Nearly
    collinear endpoints (angle < 1e-7) fall back to linear interpolation
    rescaled to the same norm, where the spherical form is undefined.
    """
    e0 = np.asarray(e0, dtype=np.float64)
    e1 = np.asarray(e1, dtype=np.float64)
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    n0 = np.linalg.norm(e0)
    n1 = np.linalg.norm(e1)
    if n0 == 0.0 or n1 == 0.0:
        raise ValueError("zero-norm endpoint")
    s = math.sqrt(e0.shape[0])
    u0 = e0 / n0 * s
    u1 = e1 / n1 * s
    cos_theta = min(1.0, max(-1.0, float(np.dot(u0, u1)) / (s * s)))
    theta = math.acos(cos_theta)
    if theta < COLLINEAR_EPS:
        v = (1.0 - t) * u0 + t * u1
        return v * (s / np.linalg.norm(v))
    st = math.sin(theta)
    return (math.sin((1.0 - t) * theta) / st) * u0 + (math.sin(t * theta) / st) * u1


def axis_embedding(e0: np.ndarray, e1: np.ndarray, n_heads: int, t: float) -> np.ndarray:
    """Full-width embedding: slerp each head slice independently."""
    d = e0.shape[0]
    dh = d // n_heads
    out = np.empty(d, dtype=np.float64)
    for h in range(n_heads):
        lo = h * dh
        out[lo : lo + dh] = slerp_interpolate(e0[lo : lo + dh], e1[lo : lo + dh], t)
    return out


def _fractions(n: int) -> list[float]:
    if n == 1:
        return [0.5]
    return [i / (n - 1) for i in range(n)]


def position_grid(table: SlerpPositionTable, rows: int, cols: int) -> np.ndarray:
    """Embeddings for every cell of an r x c grid, row-major [rows*cols, d]."""
    if rows < 1 or cols < 1:
        raise ValueError("grid extents must be positive")
    row_embs = [axis_embedding(table.e0_row, table.e1_row, table.n_heads, t) for t in _fractions(rows)]
    col_embs = [axis_embedding(table.e0_col, table.e1_col, table.n_heads, t) for t in _fractions(cols)]
    out = np.empty((rows * cols, table.dim), dtype=np.float64)
    for i in range(rows):
        for j in range(cols):
            out[i * cols + j] = row_embs[i] + col_embs[j]
    return out
