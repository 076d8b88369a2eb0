"""Expectation step, kernel-regression backprojection and closed-form reconstructions.

Likelihood bookkeeping
----------------------
Particle images are transforms of real images, so ``X(-j) = conj X(j)``.
Residuals are summed over the non-redundant half-plane ``{k > 0} or
{k = 0, l >= 0}`` inside the current resolution cutoff, and each complex
component is weighted by ``1 / sigma^2(shell)`` where ``sigma^2`` is the
variance of its real (equivalently imaginary) part.  Posterior weights are
``exp(-residual_sq / 2)``.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import sparse

from .errors import NonHermitianAccumulator, OddParticleCount, ValidationError
from .forward import (
    CTFParams,
    ParticleImage,
    ParticleSet,
    Pose,
    ctf_grid,
    plane_frequencies,
    rotation_matrices,
    rotation_matrix,
    shift_phase,
)
from .grid import (
    FourierVolume,
    freq_axis,
    friedel_mate,
    hermitian_residual,
    radius_grid,
    shell_index,
)
from .kernels import KernelSpec, interpolate, scatter

PRUNE_FLOOR = 1e-8


# ---------------------------------------------------------------------------
# orientation grid


def _disk_offsets(radius: int) -> np.ndarray:
    return np.array([(a, b) for a in range(-radius, radius + 1)
                     for b in range(-radius, radius + 1) if a * a + b * b <= radius * radius],
                    dtype=np.float64).reshape(-1, 2)


def euler_grid(angle_step: float, psi_step: float | None = None,
               equal_area: bool = True) -> np.ndarray:
    """Fixed Euler grid, ``(O, 3)`` degrees.

    Tilt runs over ``0..180`` in ``angle_step``; at the poles only ``rot = 0``
    is kept (other rot values repeat a psi rotation).  With ``equal_area``
    the number of rot samples on a tilt ring scales with ``sin(tilt)``.
    """
    psi_step = angle_step if psi_step is None else psi_step
    tilts = np.arange(0.0, 180.0 + 1e-9, angle_step)
    psis = np.arange(0.0, 360.0 - 1e-9, psi_step)
    full = max(1, int(round(360.0 / angle_step)))
    rows = []
    for t in tilts:
        if np.isclose(t, 0.0) or np.isclose(t, 180.0):
            n_rot = 1
        elif equal_area:
            n_rot = max(1, int(round(full * np.sin(np.deg2rad(t)))))
        else:
            n_rot = full
        for r in np.arange(n_rot) * 360.0 / n_rot:
            for p in psis:
                rows.append((r, t, p))
    return np.array(rows, dtype=np.float64)


@dataclass(frozen=True)
class OrientationGrid:
    """Candidate poses: orientations x integer shifts, addressed by candidate index.

    ``pairs[c] = (orientation_index, shift_index)``.  Product grids enumerate
    every pair with the orientation varying slowest.
    """

    angles: np.ndarray
    shifts: np.ndarray
    pairs: np.ndarray = None

    def __post_init__(self):
        a = np.asarray(self.angles, dtype=np.float64).reshape(-1, 3)
        s = np.asarray(self.shifts, dtype=np.float64).reshape(-1, 2)
        if not len(a) or not len(s):
            raise ValidationError("orientation grid is empty")
        if self.pairs is None:
            pairs = np.array(list(itertools.product(range(len(a)), range(len(s)))),
                             dtype=np.int64)
        else:
            pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        if not len(pairs):
            raise ValidationError("orientation grid is empty")
        keys = np.concatenate([a[pairs[:, 0]], s[pairs[:, 1]]], axis=1)
        if len(np.unique(np.round(keys, 9), axis=0)) != len(keys):
            raise ValidationError("orientation grid contains duplicate poses")
        for name, val in (("angles", a), ("shifts", s), ("pairs", pairs)):
            val.flags.writeable = False
            object.__setattr__(self, name, val)

    @classmethod
    def uniform(cls, angle_step: float = 15.0, translation_radius: int = 0,
                psi_step: float | None = None, equal_area: bool = True) -> "OrientationGrid":
        return cls(euler_grid(angle_step, psi_step, equal_area), _disk_offsets(translation_radius))

    @classmethod
    def from_poses(cls, poses: Sequence[Pose]) -> "OrientationGrid":
        ang = np.array([p.angles for p in poses], dtype=np.float64).reshape(-1, 3)
        sh = np.array([p.shift for p in poses], dtype=np.float64).reshape(-1, 2)
        ua, ia = np.unique(np.round(ang, 9), axis=0, return_inverse=True)
        us, is_ = np.unique(np.round(sh, 9), axis=0, return_inverse=True)
        return cls(ua, us, np.stack([ia.ravel(), is_.ravel()], axis=1))

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def translation_radius(self) -> float:
        return float(np.max(np.hypot(self.shifts[:, 0], self.shifts[:, 1])))

    def pose(self, c: int) -> Pose:
        o, t = self.pairs[c]
        return Pose(*self.angles[o], *self.shifts[t])

    def poses(self) -> list[Pose]:
        return [self.pose(c) for c in range(len(self))]

    def check_side(self, side_n: int) -> None:
        if self.translation_radius > side_n / 8:
            raise ValidationError(
                f"translation radius {self.translation_radius} exceeds side_n/8 = {side_n / 8}")

    def index_of(self, pose: Pose, atol: float = 1e-6) -> int | None:
        """Candidate index matching ``pose`` (angles and shift), if any."""
        key = np.array(pose.angles + pose.shift)
        cand = np.concatenate([self.angles[self.pairs[:, 0]], self.shifts[self.pairs[:, 1]]], 1)
        d = np.abs(cand - key)
        d[:, [0, 2]] = np.minimum(d[:, [0, 2]], 360.0 - d[:, [0, 2]])
        hit = np.flatnonzero(np.all(d <= atol, axis=1))
        return int(hit[0]) if len(hit) else None


# ---------------------------------------------------------------------------
# noise and posteriors


@dataclass(frozen=True)
class NoiseSpectrum:
    """Per-shell variance of the real (= imaginary) part of a Fourier component."""

    sigma2: np.ndarray

    def __post_init__(self):
        s = np.array(self.sigma2, dtype=np.float64).ravel()
        if not np.all(s > 0) or not np.all(np.isfinite(s)):
            raise ValidationError("noise variances must be positive and finite")
        s.flags.writeable = False
        object.__setattr__(self, "sigma2", s)

    @classmethod
    def white(cls, side_n: int, sigma2: float = 1.0) -> "NoiseSpectrum":
        return cls(np.full(side_n // 2 + 1, float(sigma2)))

    def at_shells(self, shells: np.ndarray) -> np.ndarray:
        return self.sigma2[np.clip(shells, 0, len(self.sigma2) - 1)]


@dataclass(frozen=True)
class PosteriorRow:
    """Sparse posterior over candidates; pruned entries are exact zeros."""

    indices: np.ndarray
    weights: np.ndarray
    n_candidates: int

    def dense(self) -> np.ndarray:
        out = np.zeros(self.n_candidates)
        out[self.indices] = self.weights
        return out

    @property
    def best(self) -> int:
        return int(self.indices[np.argmax(self.weights)])


def posterior_from_residuals(res: np.ndarray, prune_floor: float = PRUNE_FLOOR) -> PosteriorRow:
    """Normalized ``exp(-res/2)`` with pruning below ``prune_floor`` and renormalization."""
    res = np.asarray(res, dtype=np.float64)
    w = np.exp(-0.5 * (res - res.min()))
    w /= w.sum()
    keep = np.flatnonzero(w >= prune_floor)
    kw = w[keep]
    return PosteriorRow(keep, kw / kw.sum(), len(res))


def default_cutoff(side_n: int) -> int:
    return side_n // 2 - 1


def half_plane(side_n: int, cutoff: float | None = None):
    """Non-redundant image frequencies with ``round(|j|) <= cutoff``.

    Returns ``(k, l, shells, flat_index)`` with ``flat_index`` into the
    centered ``n x n`` image array.
    """
    cutoff = default_cutoff(side_n) if cutoff is None else min(cutoff, default_cutoff(side_n))
    f = freq_axis(side_n)
    K, L = np.meshgrid(f, f, indexing="ij")
    shells = np.rint(np.hypot(K, L)).astype(np.int64)
    canon = (K > 0) | ((K == 0) & (L >= 0))
    sel = canon & (shells <= cutoff)
    flat = np.flatnonzero(sel)
    return K.ravel()[flat].astype(np.float64), L.ravel()[flat].astype(np.float64), \
        shells.ravel()[flat], flat


def residual_sq(image: ParticleImage, V: FourierVolume, pose: Pose, kernel: KernelSpec,
                noise: NoiseSpectrum, cutoff: float | None = None) -> float:
    """Noise-weighted squared residual of one image against one pose."""
    n = image.side_n
    k, l, shells, flat = half_plane(n, cutoff)
    pts = np.stack([k, l, np.zeros_like(k)], axis=1) @ rotation_matrix(pose).T
    model = interpolate(V.data, pts, kernel) * shift_phase(pose.shift_x, pose.shift_y, k, l, n)
    model *= ctf_grid(image.ctf, n, V.voxel_size).ravel()[flat]
    r = image.fourier_data.ravel()[flat] - model
    return float(np.sum(np.abs(r) ** 2 / noise.at_shells(shells)))


def orientation_slices(V: np.ndarray, angles: np.ndarray, k: np.ndarray, l: np.ndarray,
                       kernel: KernelSpec, chunk_points: int = 2_000_000) -> np.ndarray:
    """Unshifted slices ``S[o, j]`` of centered volume ``V`` for every orientation."""
    R = rotation_matrices(angles)
    O, F = len(R), len(k)
    out = np.empty((O, F), dtype=np.complex128)
    step = max(1, chunk_points // max(F, 1))
    for s in range(0, O, step):
        Rc = R[s:s + step]
        pts = Rc[:, None, :, 0] * k[None, :, None] + Rc[:, None, :, 1] * l[None, :, None]
        out[s:s + step] = interpolate(V, pts.reshape(-1, 3), kernel).reshape(len(Rc), F)
    return out


def _ctf_groups(particles: ParticleSet) -> dict[CTFParams, list[int]]:
    groups: dict[CTFParams, list[int]] = {}
    for i, p in enumerate(particles):
        groups.setdefault(p.ctf, []).append(i)
    return groups


def _map_chunks(fn, chunks, threads: int):
    if threads <= 1 or len(chunks) <= 1:
        return [fn(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, chunks))


def e_step(particles: ParticleSet, V: FourierVolume, grid: OrientationGrid,
           kernel: KernelSpec, noise: NoiseSpectrum, cutoff: float | None = None,
           prune_floor: float = PRUNE_FLOOR, threads: int = 1,
           chunk: int = 32) -> list[PosteriorRow]:
    """Posterior over ``grid`` candidates for every particle.

    The cross term ``Re sum conj(X) e^{-i theta} CTF S / sigma^2`` is evaluated
    for all (shift, orientation) pairs as a real matrix product.
    """
    n = particles.side_n
    grid.check_side(n)
    k, l, shells, flat = half_plane(n, cutoff)
    inv_s2 = 1.0 / noise.at_shells(shells)
    S = orientation_slices(V.data, grid.angles, k, l, kernel)
    phases = np.exp(-2j * np.pi * (grid.shifts[:, :1] * k + grid.shifts[:, 1:] * l) / n)
    po, pt = grid.pairs[:, 0], grid.pairs[:, 1]
    T = len(grid.shifts)
    rows: list[PosteriorRow | None] = [None] * len(particles)

    for ctf, members in _ctf_groups(particles).items():
        c = ctf_grid(ctf, n, particles.voxel_size).ravel()[flat]
        CS = S * c
        norm_o = np.sum(np.abs(CS) ** 2 * inv_s2, axis=1)
        CSr = np.ascontiguousarray(CS.real.T)
        CSi = np.ascontiguousarray(CS.imag.T)
        X = np.stack([particles[i].fourier_data.ravel()[flat] for i in members])

        def work(sl):
            Xc = X[sl]
            xx = np.sum(np.abs(Xc) ** 2 * inv_s2, axis=1)
            B = (np.conj(Xc)[:, None, :] * phases[None] * inv_s2).reshape(-1, len(k))
            cross = (np.ascontiguousarray(B.real) @ CSr
                     - np.ascontiguousarray(B.imag) @ CSi).reshape(len(Xc), T, -1)
            res = xx[:, None] + norm_o[po][None, :] - 2.0 * cross[:, pt, po]
            return [posterior_from_residuals(r, prune_floor) for r in res]

        chunks = [slice(s, s + chunk) for s in range(0, len(members), chunk)]
        for sl, out in zip(chunks, _map_chunks(work, chunks, threads)):
            for i, row in zip(members[sl], out):
                rows[i] = row
    return rows


# ---------------------------------------------------------------------------
# accumulators


@dataclass(frozen=True)
class AccumulatorPair:
    """Backprojection numerator and weight grids (centered storage)."""

    numerator: np.ndarray = field(repr=False)
    weight: np.ndarray = field(repr=False)
    finalized: bool = False
    voxel_size: float = 1.0

    def __post_init__(self):
        num = np.array(self.numerator, dtype=np.complex128)
        w = np.array(self.weight, dtype=np.float64)
        if num.shape != w.shape or num.ndim != 3:
            raise ValidationError("numerator and weight grids must share a cubic shape")
        if np.any(w < 0):
            raise ValidationError("accumulator weights must be non-negative")
        num.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "numerator", num)
        object.__setattr__(self, "weight", w)

    @classmethod
    def empty(cls, side_n: int, voxel_size: float = 1.0) -> "AccumulatorPair":
        return cls(np.zeros((side_n,) * 3, complex), np.zeros((side_n,) * 3), False, voxel_size)

    @property
    def side_n(self) -> int:
        return self.weight.shape[0]

    def finalize(self) -> "AccumulatorPair":
        """Friedel-symmetrize: numerator Hermitian, weight centrosymmetric."""
        num = 0.5 * (self.numerator + np.conj(friedel_mate(self.numerator)))
        w = 0.5 * (self.weight + friedel_mate(self.weight))
        num[w == 0] = 0
        return AccumulatorPair(num, w, True, self.voxel_size)

    def __add__(self, other: "AccumulatorPair") -> "AccumulatorPair":
        return AccumulatorPair(self.numerator + other.numerator, self.weight + other.weight,
                               self.finalized and other.finalized, self.voxel_size)

    def check_finalized(self) -> None:
        if not self.finalized:
            raise NonHermitianAccumulator("accumulator has not been finalized")
        if hermitian_residual(self.numerator) > 1e-9:
            raise NonHermitianAccumulator("accumulator numerator is not Hermitian")


def _insert_points(n: int, cutoff: float | None):
    plane = plane_frequencies(n)
    k, l = plane[..., 0].ravel(), plane[..., 1].ravel()
    flat = np.arange(n * n)
    if cutoff is not None:
        keep = np.rint(np.hypot(k, l)) <= cutoff
        k, l, flat = k[keep], l[keep], flat[keep]
    return k, l, flat


def _posterior_entries(rows: Sequence[PosteriorRow], members: Sequence[int], grid: OrientationGrid):
    """Flatten posterior rows of ``members`` into (local particle, orientation, shift, weight)."""
    loc = np.concatenate([np.full(len(rows[i].indices), j) for j, i in enumerate(members)])
    cand = np.concatenate([rows[i].indices for i in members])
    w = np.concatenate([rows[i].weights for i in members])
    return loc, grid.pairs[cand, 0], grid.pairs[cand, 1], w


def _orientation_sums(X: np.ndarray, rows, members, grid: OrientationGrid, k, l, n, conj_phase: bool):
    """``Y[o] = sum_{i,t} P_i(o,t) e^{+/- i theta_t} X_i`` and ``p[o] = sum_{i,t} P_i(o,t)``.

    Posterior mass is aggregated per orientation with one sparse product per shift.
    """
    O = len(grid.angles)
    loc, o_of, t_of, w = _posterior_entries(rows, members, grid)
    Y = np.zeros((O, X.shape[1]), dtype=np.complex128)
    for t in np.unique(t_of):
        sel = t_of == t
        Pt = sparse.csr_matrix((w[sel], (o_of[sel], loc[sel])), shape=(O, X.shape[0]))
        sx, sy = grid.shifts[t]
        ph = shift_phase(sx, sy, k, l, n)
        Y += (Pt @ X) * (np.conj(ph) if conj_phase else ph)
    mass = np.bincount(o_of, weights=w, minlength=O)
    return Y, mass


def backproject_accumulate(particles: ParticleSet, posteriors: Sequence[PosteriorRow],
                           kernel: KernelSpec, grid: OrientationGrid,
                           cutoff: float | None = None, finalize: bool = True,
                           threads: int = 1, chunk_points: int = 2_000_000) -> AccumulatorPair:
    """Kernel-weighted insertion of every particle at every supported candidate.

    ``numerator += P K CTF e^{+i theta} X`` and ``weight += P K CTF^2``; the
    phase undoes the candidate shift.  Insertion is linear in the posterior,
    so each orientation's plane is summed over particles and shifts first
    and inserted once.  ``cutoff`` limits the inserted shells.
    """
    n = particles.side_n
    k, l, flat = _insert_points(n, cutoff)
    O, F = len(grid.angles), len(k)
    num_plane = np.zeros((O, F), dtype=np.complex128)
    wgt_plane = np.zeros((O, F))
    for ctf, members in _ctf_groups(particles).items():
        c = ctf_grid(ctf, n, particles.voxel_size).ravel()[flat]
        X = np.stack([particles[i].fourier_data.ravel()[flat] for i in members])
        Y, mass = _orientation_sums(X, posteriors, members, grid, k, l, n, conj_phase=True)
        num_plane += Y * c
        wgt_plane += mass[:, None] * (c * c)

    active = np.flatnonzero(wgt_plane.any(axis=1) | num_plane.any(axis=1))
    R = rotation_matrices(grid.angles[active])
    step = max(1, chunk_points // max(F, 1))
    chunks = [slice(s, s + step) for s in range(0, len(active), step)]

    def insert(sl):
        num = np.zeros((n, n, n), complex)
        wgt = np.zeros((n, n, n))
        Rc = R[sl]
        pts = Rc[:, None, :, 0] * k[None, :, None] + Rc[:, None, :, 1] * l[None, :, None]
        o = active[sl]
        scatter(num, wgt, pts.reshape(-1, 3), num_plane[o].ravel(), 1.0,
                wgt_plane[o].ravel(), kernel)
        return num, wgt

    num = np.zeros((n, n, n), complex)
    wgt = np.zeros((n, n, n))
    groups = [chunks[g::threads] for g in range(max(1, threads))] if threads > 1 else [chunks]

    def insert_many(group):
        acc_n = np.zeros((n, n, n), complex)
        acc_w = np.zeros((n, n, n))
        for sl in group:
            pn, pw = insert(sl)
            acc_n += pn
            acc_w += pw
        return acc_n, acc_w

    for pn, pw in _map_chunks(insert_many, groups, threads):
        num += pn
        wgt += pw
    acc = AccumulatorPair(num, wgt, False, particles.voxel_size)
    return acc.finalize() if finalize else acc


# ---------------------------------------------------------------------------
# closed-form reconstructions


def default_weight_floor(acc: AccumulatorPair) -> float:
    pos = acc.weight[acc.weight > 0]
    return 1e-6 * float(pos.mean()) if len(pos) else 0.0


def naive_reconstruct(acc: AccumulatorPair, weight_floor: float | None = None) -> FourierVolume:
    """Per-voxel least squares ``numerator / max(weight, floor)``; untouched voxels are 0."""
    floor = default_weight_floor(acc) if weight_floor is None else weight_floor
    w = acc.weight
    out = np.zeros_like(acc.numerator)
    touched = w > 0
    out[touched] = acc.numerator[touched] / np.maximum(w[touched], floor)
    return FourierVolume(out, acc.voxel_size)


def shell_mean_weight(acc: AccumulatorPair) -> np.ndarray:
    """Mean of ``N(n)`` over *all* voxels of each shell ``round(|n|)``."""
    sh = shell_index(acc.side_n).ravel()
    sums = np.bincount(sh, weights=acc.weight.ravel())
    counts = np.bincount(sh)
    return sums / np.maximum(counts, 1)


def wiener_reconstruct(acc: AccumulatorPair, fsc_prev, fsc_floor: float = 1e-3) -> FourierVolume:
    """Traditional per-shell regularized solve.

    ``V = numerator / (weight + mean_shell_weight(r) * (1/FSC(r) - 1))`` with
    FSC clamped to ``[fsc_floor, 1]``; shells beyond the curve use the floor.
    """
    values = np.asarray(getattr(fsc_prev, "values", fsc_prev), dtype=np.float64)
    n = acc.side_n
    sh = shell_index(n)
    nshell = int(sh.max()) + 1
    f = np.full(nshell, fsc_floor)
    m = min(len(values), nshell)
    f[:m] = np.clip(values[:m], fsc_floor, 1.0)
    tau = shell_mean_weight(acc) * (1.0 / f - 1.0)
    denom = acc.weight + tau[sh]
    out = np.zeros_like(acc.numerator)
    ok = denom > 0
    out[ok] = acc.numerator[ok] / denom[ok]
    return FourierVolume(out, acc.voxel_size)


# ---------------------------------------------------------------------------
# noise estimation


def data_power_spectrum(particles: ParticleSet) -> NoiseSpectrum:
    """``mean |X|^2 / 2`` per shell: the all-noise upper bound used to start EM."""
    n = particles.side_n
    sh = np.rint(radius_grid(n, 2)).astype(np.int64).ravel()
    keep = sh <= n // 2
    p = np.mean(np.abs(particles.stack().reshape(len(particles), -1)) ** 2, axis=0)
    s = np.bincount(sh[keep], weights=p[keep], minlength=n // 2 + 1) / \
        np.maximum(np.bincount(sh[keep], minlength=n // 2 + 1), 1)
    return NoiseSpectrum(np.maximum(0.5 * s, 1e-12))


def estimate_noise(particles: ParticleSet, posteriors: Sequence[PosteriorRow], V: FourierVolume,
                   kernel: KernelSpec, grid: OrientationGrid,
                   max_shell: int | None = None,
                   fallback: NoiseSpectrum | None = None) -> NoiseSpectrum:
    """Posterior-weighted mean of ``|residual|^2 / 2`` per shell, floored at 1e-12.

    Residual power is expanded as ``|X|^2 - 2 Re(conj X CTF S e^{-i theta})
    + CTF^2 |S|^2`` so the posterior sums reduce to sparse products.  Shells
    above ``max_shell`` (at most ``n/2 - 1``) come from ``fallback`` (default:
    the data power spectrum).
    """
    n = particles.side_n
    top = default_cutoff(n) if max_shell is None else min(int(max_shell), default_cutoff(n))
    k, l, shells, flat = half_plane(n, top)
    S = orientation_slices(V.data, grid.angles, k, l, kernel)
    S2 = np.abs(S) ** 2
    total = np.zeros(len(k))
    for ctf, members in _ctf_groups(particles).items():
        c = ctf_grid(ctf, n, particles.voxel_size).ravel()[flat]
        X = np.stack([particles[i].fourier_data.ravel()[flat] for i in members])
        loc, o_of, t_of, w = _posterior_entries(posteriors, members, grid)
        Po = sparse.csr_matrix((w, (loc, o_of)), shape=(len(members), len(grid.angles)))
        quad = np.asarray((Po @ S2).sum(axis=0)).ravel() * c * c
        cross = np.zeros(len(k))
        for t in np.unique(t_of):
            sel = t_of == t
            Pt = sparse.csr_matrix((w[sel], (loc[sel], o_of[sel])),
                                   shape=(len(members), len(grid.angles)))
            sx, sy = grid.shifts[t]
            M = (Pt @ S) * shift_phase(sx, sy, k, l, n)
            cross += np.sum((np.conj(X) * M).real, axis=0)
        total += np.sum(np.abs(X) ** 2, axis=0) - 2.0 * c * cross + quad
    counts = np.bincount(shells, minlength=top + 1).astype(np.float64)
    est = np.bincount(shells, weights=0.5 * total, minlength=top + 1) / \
        (len(particles) * np.maximum(counts, 1))
    fb = fallback.sigma2 if fallback is not None else data_power_spectrum(particles).sigma2
    out = fb.copy()
    out[: top + 1] = est
    return NoiseSpectrum(np.maximum(out, 1e-12))


def split_indices(n_particles: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Sorted index arrays of two random disjoint halves of equal size."""
    if n_particles % 2:
        raise OddParticleCount(f"cannot split {n_particles} particles into equal halves")
    perm = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5EED])).permutation(n_particles)
    half = n_particles // 2
    return np.sort(perm[:half]), np.sort(perm[half:])


def split_halves(particles: ParticleSet, seed: int = 0) -> tuple[ParticleSet, ParticleSet]:
    """Random disjoint halves of equal size, deterministic given ``seed``."""
    a, b = split_indices(len(particles), seed)
    return particles.subset(a), particles.subset(b)
