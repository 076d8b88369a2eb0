"""Fourier shell correlation, resolution estimates and masks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import EmptyMask, GridMismatch, ValidationError
from .grid import FourierVolume, Volume3D, fft3_array, shell_index

FSC_THRESHOLD = 0.143
# shells whose power is below this fraction of the total count as empty
# (round-off left by real/Fourier round trips otherwise correlates)
EMPTY_SHELL_RTOL = 1e-20


@dataclass(frozen=True)
class FSCCurve:
    """Per-shell correlation; shell ``r`` covers voxels with ``round(|k|) == r``."""

    radius: np.ndarray
    values: np.ndarray
    side_n: int
    voxel_size: float = 1.0
    counts: np.ndarray | None = None

    def __post_init__(self):
        r = np.asarray(self.radius, dtype=np.float64)
        v = np.asarray(self.values, dtype=np.float64)
        if r.shape != v.shape or r.ndim != 1 or not len(r):
            raise ValidationError("FSC radii and values must be equal-length 1D arrays")
        if r[0] != 0 or np.any(np.diff(r) <= 0):
            raise ValidationError("FSC radii must start at 0 and increase")
        if np.any(np.abs(v) > 1 + 1e-9):
            raise ValidationError("FSC values exceed 1 in magnitude")
        object.__setattr__(self, "radius", r)
        object.__setattr__(self, "values", v)

    @property
    def frequency(self) -> np.ndarray:
        """Physical frequency in 1/Angstrom."""
        return self.radius / (self.side_n * self.voxel_size)

    def at(self, shell: int) -> float:
        return float(self.values[int(shell)])


@dataclass(frozen=True)
class Resolution:
    shell: float
    frequency: float
    angstrom: float
    limit_reached: bool


def fsc(F, G, voxel_size: float | None = None) -> FSCCurve:
    """Shell-wise ``Re sum F conj(G) / sqrt(sum|F|^2 sum|G|^2)``.

    Shells where either input is (numerically) zero give 0.
    """
    a = F.data if isinstance(F, FourierVolume) else np.asarray(F)
    b = G.data if isinstance(G, FourierVolume) else np.asarray(G)
    if a.shape != b.shape:
        raise GridMismatch(f"grid shapes differ: {a.shape} vs {b.shape}")
    n = a.shape[0]
    vs = voxel_size if voxel_size is not None else getattr(F, "voxel_size", 1.0)
    sh = shell_index(n).ravel()
    keep = sh <= n // 2
    sh = sh[keep]
    fa, fb = a.ravel()[keep], b.ravel()[keep]
    m = n // 2 + 1
    cross = np.bincount(sh, weights=(fa * np.conj(fb)).real, minlength=m)
    pa = np.bincount(sh, weights=np.abs(fa) ** 2, minlength=m)
    pb = np.bincount(sh, weights=np.abs(fb) ** 2, minlength=m)
    denom = np.sqrt(pa * pb)
    vals = np.zeros(m)
    ok = (pa > EMPTY_SHELL_RTOL * pa.sum()) & (pb > EMPTY_SHELL_RTOL * pb.sum())
    vals[ok] = np.clip(cross[ok] / denom[ok], -1.0, 1.0)
    return FSCCurve(np.arange(m, dtype=np.float64), vals, n, vs, np.bincount(sh, minlength=m))


def resolution_at_threshold(c: FSCCurve, threshold: float = FSC_THRESHOLD) -> Resolution:
    """First downward crossing of ``threshold`` scanning out from shell 1.

    Interpolates linearly between the bracketing shells.  A curve that never
    drops below the threshold reports Nyquist with ``limit_reached``.
    """
    if not 0 < threshold < 1:
        raise ValidationError("threshold must lie in (0, 1)")
    v = c.values
    r = c.radius
    cross = None
    for i in range(1, len(v)):
        if v[i] < threshold:
            lo, hi = v[i - 1], v[i]
            t = (lo - threshold) / (lo - hi) if lo > threshold else 0.0
            cross = r[i - 1] + t * (r[i] - r[i - 1])
            break
    limit = cross is None
    shell = float(r[-1]) if limit else float(cross)
    freq = shell / (c.side_n * c.voxel_size)
    ang = np.inf if freq == 0 else 1.0 / freq
    return Resolution(shell, freq, ang, limit)


# ---------------------------------------------------------------------------
# masks


@dataclass(frozen=True)
class Mask:
    data: np.ndarray

    def __post_init__(self):
        m = np.array(self.data, dtype=np.float64)
        if m.ndim != 3:
            raise ValidationError("mask must be 3D")
        if np.any(m < 0) or np.any(m > 1):
            raise ValidationError("mask values must lie in [0, 1]")
        m.flags.writeable = False
        object.__setattr__(self, "data", m)

    @classmethod
    def ones(cls, side_n: int) -> "Mask":
        return cls(np.ones((side_n,) * 3))


def apply_mask(v: Volume3D, m: Mask) -> Volume3D:
    if v.data.shape != m.data.shape:
        raise GridMismatch("mask and volume shapes differ")
    return Volume3D(v.data * m.data, v.voxel_size)


def make_mask(reference: Volume3D, level: float, soft_edge_voxels: float = 0.0) -> Mask:
    """Support ``|density| >= level``, dilated by one voxel, with a raised-cosine edge."""
    if not level > 0:
        raise ValidationError("mask level must be positive")
    core = np.abs(reference.data) >= level
    if not core.any():
        raise EmptyMask(f"no voxel reaches level {level}")
    support = ndimage.binary_dilation(core, structure=np.ones((3, 3, 3), bool))
    if soft_edge_voxels <= 0:
        return Mask(support.astype(np.float64))
    d = ndimage.distance_transform_edt(~support)
    edge = np.where(d >= soft_edge_voxels, 0.0,
                    0.5 * (1.0 + np.cos(np.pi * d / soft_edge_voxels)))
    return Mask(np.where(support, 1.0, edge))


def support_mask(reference: Volume3D, rel_level: float = 0.01, dilate: int = 1) -> np.ndarray:
    """Boolean support at ``rel_level * max`` dilated by ``dilate`` voxels."""
    core = np.abs(reference.data) >= rel_level * np.max(np.abs(reference.data))
    if dilate > 0:
        core = ndimage.binary_dilation(core, structure=np.ones((3, 3, 3), bool), iterations=dilate)
    return core


def model_map_fsc(experimental: Volume3D, reference: Volume3D, mask: Mask | None = None) -> FSCCurve:
    """FSC of a map against a reference volume on the same grid, optionally masked."""
    if experimental.data.shape != reference.data.shape or \
            not np.isclose(experimental.voxel_size, reference.voxel_size):
        raise GridMismatch("experimental and reference maps differ in grid or voxel size")
    a, b = experimental, reference
    if mask is not None:
        a, b = apply_mask(a, mask), apply_mask(b, mask)
    return fsc(fft3_array(a.data), fft3_array(b.data), experimental.voxel_size)


def volume_fsc(a: Volume3D, b: Volume3D, mask: Mask | None = None) -> FSCCurve:
    """FSC between two real-space maps (half maps, typically)."""
    return model_map_fsc(a, b, mask)
