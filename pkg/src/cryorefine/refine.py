"""Outer expectation-maximization loop with gold-standard half-map validation."""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .em import (
    AccumulatorPair,
    OrientationGrid,
    PosteriorRow,
    backproject_accumulate,
    data_power_spectrum,
    default_cutoff,
    e_step,
    estimate_noise,
    naive_reconstruct,
    split_indices,
    wiener_reconstruct,
)
from .errors import DidNotConverge, ValidationError
from .forward import ParticleSet, lowpass
from .grid import FourierVolume, Volume3D, fft3_array, ifft3_array
from .params import RefineConfig
from .regularizer import m_step
from .validation import FSCCurve, Resolution, fsc, resolution_at_threshold

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    cutoff: int
    fsc: FSCCurve
    resolution: Resolution
    pose_change: float
    seconds: float


@dataclass
class RefineResult:
    volume: Volume3D
    half_maps: tuple[Volume3D, Volume3D]
    trace: list[IterationRecord]
    posteriors: list[PosteriorRow]
    converged: bool
    fsc: FSCCurve
    resolution: Resolution
    accumulators: tuple[AccumulatorPair, ...] = field(default=(), repr=False)

    @property
    def resolution_trace(self) -> list[float]:
        return [r.resolution.shell for r in self.trace]


def _real(F: FourierVolume) -> Volume3D:
    return Volume3D(ifft3_array(F.data).real, F.voxel_size)


def _full_fsc(curve: FSCCurve) -> FSCCurve:
    """Expected full-data correlation from the half-map curve: ``2F / (1 + F)``."""
    f = np.clip(curve.values, 0.0, 1.0)
    return FSCCurve(curve.radius, 2 * f / (1 + f), curve.side_n, curve.voxel_size)


class _Reconstructor:
    """M-step dispatch for one reconstruction stream (a half map or the full map).

    Returns ``(map, unregularized)`` where ``unregularized`` is the Wiener
    (or naive) solution of the same accumulator; its half-map FSC drives
    the per-shell filter and the resolution cutoff.
    """

    def __init__(self, cfg: RefineConfig):
        self.cfg = cfg

    def __call__(self, acc: AccumulatorPair, fsc_data: FSCCurve, x_prev: Volume3D):
        cfg = self.cfg
        if cfg.mode == "naive":
            x = _real(naive_reconstruct(acc))
            return x, x
        wien = _real(wiener_reconstruct(acc, fsc_data, cfg.fsc_floor))
        if cfg.mode == "baseline_wiener":
            return wien, wien
        reg = cfg.reg_config(acc)
        if cfg.m_step_init == "naive":
            x0 = _real(naive_reconstruct(acc))
        elif cfg.m_step_init == "wiener":
            x0 = wien
        else:
            x0 = x_prev
        return m_step(acc, x0, x_prev, reg), wien


def _data_shells(curve: FSCCurve, cutoff: int) -> FSCCurve:
    """Zero the curve beyond the insertion cutoff; those shells hold no data.

    Whatever a nonlinear M-step puts there comes from the prior alone, which
    both halves share, so it would correlate without carrying information.
    """
    vals = np.where(curve.radius <= cutoff + 1, curve.values, 0.0)
    return FSCCurve(curve.radius, vals, curve.side_n, curve.voxel_size, curve.counts)


def _best(rows) -> np.ndarray:
    return np.array([r.best for r in rows])


def initial_cutoff(side_n: int, voxel_size: float, lowpass_A: float) -> int:
    r0 = side_n * voxel_size / lowpass_A
    return int(min(np.floor(r0) + 2, default_cutoff(side_n)))


def em_refine(particles: ParticleSet, initial: Volume3D, config: RefineConfig,
              grid: OrientationGrid | None = None) -> RefineResult:
    """Alternate E-step, backprojection and M-step on two independent halves.

    Each iteration evaluates likelihoods and inserts data up to the current
    resolution estimate plus two shells.  The loop stops once the resolution
    has not improved by more than ``resolution_tol`` shells and fewer than
    ``pose_change_tol`` of the particles changed their best pose, both for
    two consecutive iterations.  Otherwise a DidNotConverge warning is issued
    and the last maps are returned with ``converged = False``.
    """
    cfg = config
    n = particles.side_n
    if initial.side_n != n:
        raise ValidationError("initial volume and particles differ in size")
    grid = grid or OrientationGrid.uniform(cfg.angle_step, cfg.translation_radius, cfg.psi_step)
    grid.check_side(n)
    kernel = cfg.kernel_spec
    recon = _Reconstructor(cfg)
    vs = particles.voxel_size
    x0 = lowpass(Volume3D(initial.data, vs), cfg.lowpass_A)

    if cfg.split:
        idx = split_indices(len(particles), cfg.seed)
    else:
        idx = (np.arange(len(particles)),)
    sets = [particles.subset(i) for i in idx]
    noise = [data_power_spectrum(s) for s in sets]
    xs = [x0 for _ in sets]
    cutoff = initial_cutoff(n, vs, cfg.lowpass_A)
    fsc_data: FSCCurve | None = None
    prev_best = [None for _ in sets]
    best_shell = -np.inf
    quiet = 0
    trace: list[IterationRecord] = []
    posts: list = [None for _ in sets]
    accs: list = [None for _ in sets]
    converged = False

    for it in range(1, cfg.max_iters + 1):
        t0 = time.perf_counter()
        changed = 0
        for h, s in enumerate(sets):
            V = FourierVolume(fft3_array(xs[h].data), vs)
            posts[h] = e_step(s, V, grid, kernel, noise[h], cutoff, threads=cfg.threads)
            b = _best(posts[h])
            changed += len(b) if prev_best[h] is None else int(np.sum(b != prev_best[h]))
            prev_best[h] = b
            noise[h] = estimate_noise(s, posts[h], V, kernel, grid, max_shell=cutoff,
                                      fallback=noise[h])
        pose_change = changed / len(particles)

        if cfg.split:
            for h, s in enumerate(sets):
                accs[h] = backproject_accumulate(s, posts[h], kernel, grid, cutoff,
                                                 threads=cfg.threads)
            pair = accs
        else:
            even = np.arange(0, len(sets[0]), 2)
            odd = np.arange(1, len(sets[0]), 2)
            pair = [backproject_accumulate(sets[0].subset(sub), [posts[0][i] for i in sub],
                                           kernel, grid, cutoff, threads=cfg.threads)
                    for sub in (even, odd)]
            accs[0] = pair[0] + pair[1]
        if fsc_data is None:
            fsc_data = fsc(naive_reconstruct(pair[0]), naive_reconstruct(pair[1]), vs)

        outs = [recon(p, fsc_data, xs[h if cfg.split else 0]) for h, p in enumerate(pair)]
        halves = [o[0] for o in outs]
        if cfg.split:
            xs = halves
        else:
            xs = [recon(accs[0], _full_fsc(fsc_data), xs[0])[0]]
        curve = _data_shells(fsc(fft3_array(halves[0].data), fft3_array(halves[1].data), vs),
                             cutoff)
        res = resolution_at_threshold(curve)
        fsc_data = fsc(fft3_array(outs[0][1].data), fft3_array(outs[1][1].data), vs)
        data_res = resolution_at_threshold(fsc_data)

        rec = IterationRecord(it, cutoff, curve, res, pose_change, time.perf_counter() - t0)
        trace.append(rec)
        log.info("iter %d cutoff %d resolution %.2f shells (%.2f A) unregularized %.2f "
                 "pose change %.3f (%.1fs)", it, cutoff, res.shell, res.angstrom,
                 data_res.shell, pose_change, rec.seconds)

        improved = res.shell > best_shell + cfg.resolution_tol
        best_shell = max(best_shell, res.shell)
        quiet = 0 if (improved or pose_change >= cfg.pose_change_tol) else quiet + 1
        cutoff = max(cutoff, int(min(np.floor(data_res.shell) + 2, default_cutoff(n))))
        if quiet >= 2:
            converged = True
            break

    if not converged:
        warnings.warn(f"refinement stopped after {cfg.max_iters} iterations without converging",
                      DidNotConverge, stacklevel=2)

    if cfg.split:
        merged = accs[0] + accs[1]
        anchor = Volume3D(0.5 * (xs[0].data + xs[1].data), vs)
        full = recon(merged, _full_fsc(fsc_data), anchor)[0]
        half_maps = (xs[0], xs[1])
    else:
        merged = accs[0]
        full = xs[0]
        half_maps = (halves[0], halves[1])

    rows: list = [None] * len(particles)
    for h, ids in enumerate(idx):
        for j, i in enumerate(ids):
            rows[int(i)] = posts[h][j]
    return RefineResult(full, half_maps, trace, rows, converged, trace[-1].fsc,
                        trace[-1].resolution, tuple(accs) + (merged,))


def known_pose_grid(particles: ParticleSet) -> tuple[OrientationGrid, list[PosteriorRow]]:
    """Grid of the distinct recorded poses plus one-hot posteriors pointing into it."""
    poses = []
    for p in particles:
        if p.true_pose is None:
            raise ValidationError(f"particle {p.id} has no recorded pose")
        poses.append(p.true_pose)
    keys = np.round([p.angles + p.shift for p in poses], 9)
    uniq, first, inv = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    grid = OrientationGrid.from_poses([poses[i] for i in first])
    lookup = [grid.index_of(poses[i]) for i in first]
    rows = [PosteriorRow(np.array([lookup[j]]), np.array([1.0]), len(grid))
            for j in np.ravel(inv)]
    return grid, rows


def reconstruct_known_poses(particles: ParticleSet, mode: str = "naive",
                            config: RefineConfig | None = None) -> tuple[Volume3D, FSCCurve]:
    """Single-pass reconstruction at the recorded poses.

    ``naive`` divides numerator by weight; ``wiener`` filters with the FSC of
    naive half reconstructions.  Returns the map and that half-map curve.
    """
    cfg = config or RefineConfig()
    if mode not in ("naive", "wiener"):
        raise ValidationError("reconstruct mode must be 'naive' or 'wiener'")
    grid, rows = known_pose_grid(particles)
    kernel = cfg.kernel_spec
    vs = particles.voxel_size
    halves = split_indices(len(particles), cfg.seed)
    accs = [backproject_accumulate(particles.subset(ix), [rows[i] for i in ix], kernel, grid,
                                   threads=cfg.threads) for ix in halves]
    curve = fsc(naive_reconstruct(accs[0]), naive_reconstruct(accs[1]), vs)
    merged = accs[0] + accs[1]
    if mode == "naive":
        return _real(naive_reconstruct(merged)), curve
    return _real(wiener_reconstruct(merged, _full_fsc(curve), cfg.fsc_floor)), curve


@dataclass(frozen=True)
class SweepTable:
    """Resolution per value along one multiplier axis."""

    axis: str
    values: tuple[float, ...]
    resolutions: tuple[Resolution, ...]

    @property
    def best(self) -> int:
        """Index of the highest resolution shell; ties go to the earlier value."""
        shells = [r.shell for r in self.resolutions]
        return max(range(len(shells)), key=lambda i: (shells[i], -i))

    def to_csv(self) -> str:
        lines = [f"{self.axis},resolution_shell,resolution_A,best"]
        for i, (v, r) in enumerate(zip(self.values, self.resolutions)):
            lines.append(f"{v:.9g},{r.shell:.6f},{r.angstrom:.6f},{int(i == self.best)}")
        return "\n".join(lines) + "\n"


def sweep_resolution(particles: ParticleSet, initial: Volume3D, base: RefineConfig,
                     axis: str, values) -> SweepTable:
    """Refine once per value of ``axis`` and tabulate the gold-standard resolution."""
    from .params import sweep_grid

    res = []
    for cfg in sweep_grid(base, axis, values):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DidNotConverge)
            res.append(em_refine(particles, initial, cfg).resolution)
    return SweepTable(axis, tuple(float(v) for v in values), tuple(res))
