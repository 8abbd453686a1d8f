"""Orthonormal DCT-II and invertible 2D Haar zoom transforms.

The DCT basis is the orthonormal DCT-II matrix

    D[k, t] = sqrt(2/n) * c_k * cos(pi * (2t + 1) * k / (2n)),   c_0 = 1/sqrt(2), c_k = 1 otherwise,

applied along the temporal (row) axis of a matrix, so D @ D.T = I and the
inverse transform is plain transposition.

The 2D Haar step correlates each non-overlapping 2x2 patch with four kernels

    w_s = [[1, 1], [1, 1]]    w_h = [[1, -1], [1, -1]]
    w_v = [[1, 1], [-1, -1]]  w_d = [[1, -1], [-1, 1]]

scaled by 1/2, and stacks the four coefficient matrices along the row axis in
the order [s | h | v | d].  The kernels divided by 2 form an orthonormal basis
of the 2x2 patch space, so a "zoom-in" (S x T' -> 2S x T'/2) preserves the
Frobenius norm and is exactly inverted by the matching "zoom-out"
patch[i, j] = 1/2 * sum_k coeff_k * w_k[i, j].

Odd column counts are handled by appending one zero column before a zoom-in
and cropping it again on the way out; the per-level pad counts ride along on
the grid so nested zooms always round-trip.  The row count is required to be
even and is never padded.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# 2x2 correlation kernels, exact integer entries.
HAAR_KERNELS = {
    "s": np.array([[1, 1], [1, 1]]),
    "h": np.array([[1, -1], [1, -1]]),
    "v": np.array([[1, 1], [-1, -1]]),
    "d": np.array([[1, -1], [-1, 1]]),
}
HAAR_ORDER = ("s", "h", "v", "d")

_dct_cache: dict[tuple[int, np.dtype], np.ndarray] = {}


def dct_matrix(n: int, dtype=np.float64) -> np.ndarray:
    """Return the n x n orthonormal DCT-II matrix (cached per size/dtype)."""
    if n < 1:
        raise ValueError(f"DCT dimension must be >= 1, got {n}")
    dtype = np.dtype(dtype)
    key = (n, dtype)
    mat = _dct_cache.get(key)
    if mat is None:
        k = np.arange(n)[:, None]
        t = np.arange(n)[None, :]
        mat = np.sqrt(2.0 / n) * np.cos(np.pi * (2 * t + 1) * k / (2 * n))
        mat[0, :] /= np.sqrt(2.0)
        mat = np.ascontiguousarray(mat.astype(dtype))
        mat.setflags(write=False)
        _dct_cache[key] = mat
    return mat


def dct_apply(x: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Apply the DCT (or its inverse) along the row axis of a T x C matrix."""
    x = np.asarray(x)
    if x.ndim != 2:
        raise ValueError(f"expected a 2D matrix, got shape {x.shape}")
    d = dct_matrix(x.shape[0], dtype=x.dtype if x.dtype == np.float32 else np.float64)
    return (d.T @ x) if inverse else (d @ x)


@dataclass
class SpectrumGrid:
    """An S x T' coefficient grid with its resolution level and pad history."""

    data: np.ndarray
    level: int = 0
    pad_trail: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 2:
            raise ValueError(f"grid data must be 2D, got shape {self.data.shape}")
        if len(self.pad_trail) != self.level:
            raise ValueError(
                f"pad_trail length {len(self.pad_trail)} != level {self.level}"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


def _half(dtype) -> np.floating:
    return np.asarray(0.5, dtype=dtype) if dtype == np.float32 else 0.5


def zoom_in_matrix(g: np.ndarray, blocks: int = 1) -> np.ndarray:
    """Forward 2D Haar step on an even-by-even matrix; no pad bookkeeping.

    With blocks > 1 the input is treated as `blocks` independent grids stacked
    along the row axis, each transformed on its own.
    """
    rows, cols = g.shape
    if rows % blocks:
        raise ValueError(f"{rows} rows do not split into {blocks} blocks")
    sub = rows // blocks
    if sub % 2 or cols % 2:
        raise ValueError(f"zoom-in needs even dimensions, got {sub}x{cols}")
    g3 = g.reshape(blocks, sub, cols)
    a = g3[:, 0::2, 0::2]
    b = g3[:, 0::2, 1::2]
    c = g3[:, 1::2, 0::2]
    d = g3[:, 1::2, 1::2]
    half = _half(g.dtype)
    out = np.concatenate(
        (
            (a + b + c + d) * half,
            (a - b + c - d) * half,
            (a + b - c - d) * half,
            (a - b - c + d) * half,
        ),
        axis=1,
    )
    return out.reshape(blocks * 2 * sub, cols // 2)


def zoom_out_matrix(g: np.ndarray, blocks: int = 1) -> np.ndarray:
    """Inverse of :func:`zoom_in_matrix`; per-block rows must divide by 4."""
    rows, cols = g.shape
    if rows % blocks:
        raise ValueError(f"{rows} rows do not split into {blocks} blocks")
    sub = rows // blocks
    if sub % 4:
        raise ValueError(f"zoom-out needs row count divisible by 4, got {sub}")
    q = sub // 4
    g3 = g.reshape(blocks, sub, cols)
    s, h, v, d = g3[:, :q], g3[:, q : 2 * q], g3[:, 2 * q : 3 * q], g3[:, 3 * q :]
    half = _half(g.dtype)
    out = np.empty((blocks, 2 * q, 2 * cols), dtype=(s + h).dtype)
    out[:, 0::2, 0::2] = (s + h + v + d) * half
    out[:, 0::2, 1::2] = (s - h + v - d) * half
    out[:, 1::2, 0::2] = (s + h - v - d) * half
    out[:, 1::2, 1::2] = (s - h - v + d) * half
    return out.reshape(blocks * 2 * q, 2 * cols)


def haar_zoom_in(grid: SpectrumGrid) -> SpectrumGrid:
    """Zoom a grid one level up: S x T' -> 2S x ceil(T'/2), recording any pad."""
    data = grid.data
    rows, cols = data.shape
    if rows % 2:
        raise ValueError(f"row count must be even to zoom in, got {rows}")
    pad = cols % 2
    if pad:
        data = np.concatenate((data, np.zeros((rows, 1), dtype=data.dtype)), axis=1)
    return SpectrumGrid(
        zoom_in_matrix(data), level=grid.level + 1, pad_trail=grid.pad_trail + (pad,)
    )


def haar_zoom_out(grid: SpectrumGrid) -> SpectrumGrid:
    """Invert the most recent zoom-in, cropping the recorded pad column."""
    if grid.level < 1:
        raise ValueError("grid is already at level 0; cannot zoom out")
    out = zoom_out_matrix(grid.data)
    pad = grid.pad_trail[-1]
    if pad:
        out = out[:, :-pad]
    return SpectrumGrid(out, level=grid.level - 1, pad_trail=grid.pad_trail[:-1])


def zoomed_width(cols: int) -> int:
    """Column count after one zoom-in step (zero-pad to even, then halve)."""
    return (cols + cols % 2) // 2


def level_widths(cols: int, levels: int) -> list[int]:
    """Column counts at resolution levels 0..levels-1 for a level-0 width."""
    widths = [cols]
    for _ in range(levels - 1):
        widths.append(zoomed_width(widths[-1]))
    return widths
