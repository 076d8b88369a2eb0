"""Local-kernel weights linking off-grid Fourier samples to grid points.

Both kernels factor over axes, which the vectorized helpers exploit:

* gaussian: ``exp(-|n_j - n|^2 / h)`` on the 3x3x3 block around ``rint(n_j)``
* trilinear: ``prod_a (1 - |n_j,a - n_a|)`` on the 8 corners ``floor(n_j) + {0,1}^3``

Points are given in signed frequency units.  Grid points outside
``[-n/2, n/2)`` get zero weight.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import OutsideWindow, ValidationError

KINDS = ("gaussian", "trilinear")


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "trilinear"
    bandwidth: float = 2.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"kernel kind must be one of {KINDS}, got {self.kind!r}")
        if self.kind == "gaussian" and not self.bandwidth > 0:
            raise ValidationError("gaussian bandwidth must be positive")

    @classmethod
    def gaussian(cls, bandwidth: float = 2.0) -> "KernelSpec":
        return cls("gaussian", bandwidth)

    @classmethod
    def trilinear(cls) -> "KernelSpec":
        return cls("trilinear")

    @property
    def axis_offsets(self) -> tuple[int, ...]:
        return (-1, 0, 1) if self.kind == "gaussian" else (0, 1)

    @property
    def window(self) -> list[tuple[int, int, int]]:
        return list(itertools.product(self.axis_offsets, repeat=3))

    def anchor(self, point) -> np.ndarray:
        p = np.asarray(point, dtype=np.float64)
        return np.rint(p) if self.kind == "gaussian" else np.floor(p)


def kernel_weight(spec: KernelSpec, grid_point, continuous_point) -> float:
    """Weight ``K(|n_j - n| / h)`` of grid point ``n`` for sample ``n_j``."""
    n = np.asarray(grid_point, dtype=np.float64)
    nj = np.asarray(continuous_point, dtype=np.float64)
    offset = n - spec.anchor(nj)
    if not np.all(np.isin(offset, spec.axis_offsets)):
        raise OutsideWindow(f"grid point {tuple(n)} is outside the window of {tuple(nj)}")
    d = nj - n
    if spec.kind == "gaussian":
        return float(np.exp(-np.dot(d, d) / spec.bandwidth))
    return float(np.prod(1.0 - np.abs(d)))


def axis_weights(spec: KernelSpec, points: np.ndarray, n: int):
    """Per-axis window indices and weights.

    Returns ``(idx, w)`` of shape ``(M, 3, m)`` where ``m`` is 3 (gaussian) or
    2 (trilinear).  ``idx`` holds storage indices (clipped into the grid);
    neighbours outside the grid carry zero weight.
    """
    p = np.asarray(points, dtype=np.float64)
    anchor = spec.anchor(p)
    offs = np.asarray(spec.axis_offsets, dtype=np.float64)
    nb = anchor[..., None] + offs  # (M, 3, m) signed frequencies
    d = nb - p[..., None]
    if spec.kind == "gaussian":
        w = np.exp(-(d * d) / spec.bandwidth)
    else:
        w = 1.0 - np.abs(d)
    half = n // 2
    inside = (nb >= -half) & (nb <= half - 1)
    w = np.where(inside, w, 0.0)
    idx = np.clip(nb, -half, half - 1).astype(np.int64) + half
    return idx, w


def in_grid(points: np.ndarray, n: int) -> np.ndarray:
    """Points whose continuous coordinates lie inside the grid hull."""
    half = n // 2
    p = np.asarray(points)
    return np.all((p >= -half) & (p <= half - 1), axis=-1)


def _combos(m: int):
    return list(itertools.product(range(m), repeat=3))


def interpolate(volume: np.ndarray, points: np.ndarray, spec: KernelSpec) -> np.ndarray:
    """Normalized kernel interpolation of a centered grid at ``points`` (M, 3).

    Points outside the grid hull evaluate to 0.
    """
    n = volume.shape[0]
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    idx, w = axis_weights(spec, pts, n)
    m = idx.shape[-1]
    flat_v = volume.reshape(-1)
    acc = np.zeros(len(pts), dtype=volume.dtype)
    for a, b, c in _combos(m):
        flat = (idx[:, 0, a] * n + idx[:, 1, b]) * n + idx[:, 2, c]
        acc += flat_v[flat] * (w[:, 0, a] * w[:, 1, b] * w[:, 2, c])
    norm = w.sum(axis=2).prod(axis=1)
    ok = in_grid(pts, n) & (norm > 0)
    out = np.zeros(len(pts), dtype=np.result_type(volume.dtype, np.float64))
    out[ok] = acc[ok] / norm[ok]
    return out.reshape(np.shape(points)[:-1])


def scatter(numerator: np.ndarray, weight: np.ndarray, points: np.ndarray,
            values: np.ndarray, value_scale: np.ndarray, weight_scale: np.ndarray,
            spec: KernelSpec) -> None:
    """Accumulate ``K * value_scale * values`` into ``numerator`` and
    ``K * weight_scale`` into ``weight`` (both modified in place).

    Points outside the grid hull are skipped, matching :func:`interpolate`.
    """
    n = numerator.shape[0]
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    vals = np.asarray(values).reshape(-1) * np.asarray(value_scale).reshape(-1)
    wsc = np.broadcast_to(np.asarray(weight_scale, dtype=np.float64).reshape(-1), (len(pts),))
    keep = in_grid(pts, n)
    pts, vals, wsc = pts[keep], vals[keep], wsc[keep]
    if not len(pts):
        return
    idx, w = axis_weights(spec, pts, n)
    m = idx.shape[-1]
    flats, ks = [], []
    for a, b, c in _combos(m):
        flats.append((idx[:, 0, a] * n + idx[:, 1, b]) * n + idx[:, 2, c])
        ks.append(w[:, 0, a] * w[:, 1, b] * w[:, 2, c])
    flat = np.concatenate(flats)
    k = np.concatenate(ks)
    size = n**3
    v = np.tile(vals, len(flats)) * k
    shape = numerator.shape
    numerator += (np.bincount(flat, weights=v.real, minlength=size)
                  + 1j * np.bincount(flat, weights=v.imag, minlength=size)).reshape(shape)
    weight += np.bincount(flat, weights=np.tile(wsc, len(flats)) * k,
                          minlength=size).reshape(shape)
