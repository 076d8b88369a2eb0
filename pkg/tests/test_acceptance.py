"""End-to-end acceptance checks; each test prints one PASS/FAIL line.

The 48^3 experiment is shared by the comparison and sweep checks and takes
several minutes; both are marked ``slow``.
"""

import time
import warnings
from pathlib import Path

import numpy as np
import pytest

from cryorefine.cli import main
from cryorefine.em import (OrientationGrid, NoiseSpectrum, backproject_accumulate, e_step,
                           naive_reconstruct, posterior_from_residuals)
from cryorefine.errors import DidNotConverge
from cryorefine.forward import (CTFParams, GridPoseSampler, PhantomSpec, Pose, UniformPoseSampler,
                                generate_phantom, noise_sigma_for_snr, simulate_particles)
from cryorefine.grid import (FourierVolume, GradientField, Volume3D, fft3, friedel_mate,
                             gradient_adjoint, gradient_array, ifft3)
from cryorefine.io import write_mrc
from cryorefine.kernels import KernelSpec
from cryorefine.params import RefineConfig
from cryorefine.refine import em_refine, known_pose_grid, sweep_resolution
from cryorefine.regularizer import (MStepTrace, data_gradient, m_step, prox_l1,
                                    smoothed_tv_gradient, smoothed_tv_value)
from cryorefine.validation import fsc, model_map_fsc, support_mask

from cases import backprojection_case
from oracles import brute_force_reconstruction, dft3, soft_threshold_scan
from test_regularizer import central_fd, explicit_data_loss, random_acc

DATA = Path(__file__).parent / "data"


@pytest.fixture
def report(capsys):
    """``report(n, ok, detail)`` prints the verdict past capture and asserts."""
    def _report(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail
    return _report


# ---------------------------------------------------------------------------


def test_criterion_1_backprojection_oracle(report):
    t0 = time.perf_counter()
    worst = 0.0
    cases = [(seed, kind) for seed in range(12) for kind in ("trilinear", "gaussian")]
    for seed, kind in cases:
        ps, rows, grid, kernel, args = backprojection_case(seed, kind)
        V = naive_reconstruct(backproject_accumulate(ps, rows, kernel, grid), weight_floor=0).data
        ref, _ = brute_force_reconstruction(**args)
        worst = max(worst, np.max(np.abs(V - ref)) / np.max(np.abs(ref)))
    secs = time.perf_counter() - t0
    report(1, worst <= 1e-10 and secs < 10,
           f"{len(cases)} instances, worst rel err {worst:.2e}, {secs:.1f}s")


def test_criterion_2_gradients(report):
    t0 = time.perf_counter()
    tv_err, data_err = 0.0, 0.0
    for seed in range(10):
        r = np.random.default_rng(100 + seed)
        x = r.standard_normal((6, 6, 6))
        w = r.uniform(0.5, 2.0, x.shape)
        g = smoothed_tv_gradient(Volume3D(x), 0.2, w).data
        fd = central_fd(lambda z: smoothed_tv_value(z, 0.2, w), x)
        tv_err = max(tv_err, np.linalg.norm(g - fd) / np.linalg.norm(fd))

        acc = random_acc(r)
        g = data_gradient(Volume3D(x), acc).data
        fd = central_fd(lambda z: explicit_data_loss(z, acc), x)
        data_err = max(data_err, np.linalg.norm(g - fd) / np.linalg.norm(fd))
    secs = time.perf_counter() - t0
    report(2, tv_err < 1e-4 and data_err < 1e-5 and secs < 30,
           f"TV rel err {tv_err:.1e}, data rel err {data_err:.1e} on 10 volumes each, {secs:.1f}s")


def test_criterion_3_prox_scan(report):
    r = np.random.default_rng(3)
    xs, ts = r.uniform(-3, 3, 1000), r.uniform(0, 2, 1000)
    got = prox_l1(xs, ts)
    worst = max(abs(g - soft_threshold_scan(x, t)) for g, x, t in zip(got, xs, ts))
    report(3, worst <= 1e-4, f"1000 pairs, worst deviation {worst:.1e}")


def test_criterion_4_descent_and_majorization(report):
    n = 32
    truth = generate_phantom(PhantomSpec.random(8, n, seed=4, radius_frac=0.15), n, 2.0)
    ps = simulate_particles(truth, 400, UniformPoseSampler(1), CTFParams(), 4.0, seed=5)
    grid, rows = known_pose_grid(ps)
    acc = backproject_accumulate(ps, rows, KernelSpec.trilinear(), grid)
    cfg = RefineConfig(eps=0.1 * truth.data.max(), inner_iters=80).reg_config(acc)
    x0 = ifft3(naive_reconstruct(acc))
    trace = MStepTrace()
    m_step(acc, x0, x0, cfg, trace)
    before, after = np.array(trace.surrogate_before), np.array(trace.surrogate_after)
    surr_viol = np.max((after - before) / np.abs(before))
    ln = np.array(trace.log_norm)
    ln_viol = np.max(np.diff(ln) / np.abs(ln[1:]))
    report(4, surr_viol <= 1e-9 and ln_viol <= 1e-9,
           f"{len(before)} inner iterations, worst surrogate rise {surr_viol:.1e}, "
           f"worst log-norm rise {ln_viol:.1e} (relative)")


def test_criterion_5_identities(report):
    r = np.random.default_rng(5)
    x = r.standard_normal((8, 8, 8))
    X = fft3(Volume3D(x)).data
    checks = {}
    checks["plancherel"] = abs(np.sum(x * x) - np.sum(np.abs(X) ** 2) / x.size) / np.sum(x * x)
    checks["round trip"] = np.linalg.norm(ifft3(FourierVolume(X)).data - x) / np.linalg.norm(x)
    g = r.standard_normal((3, 8, 8, 8))
    lhs, rhs = np.sum(gradient_array(x) * g), np.sum(x * gradient_adjoint(GradientField(g)).data)
    checks["adjointness"] = abs(lhs - rhs) / abs(lhs)

    truth = generate_phantom(PhantomSpec.random(3, 8, seed=1), 8, 2.0)
    ident = simulate_particles(truth, 1, GridPoseSampler(OrientationGrid.from_poses([Pose()])),
                               CTFParams.identity(), 0.0)
    proj = dft3(truth.data)[:, :, 4]
    checks["projection slice"] = np.max(np.abs(ident[0].fourier_data - proj)) / np.max(np.abs(proj))

    ps = simulate_particles(truth, 5, UniformPoseSampler(1), CTFParams(), 1.0, seed=2)
    rows = e_step(ps, fft3(truth), OrientationGrid.uniform(45.0, 1), KernelSpec.trilinear(),
                  NoiseSpectrum.white(8))
    rows += [posterior_from_residuals(r.uniform(0, 500, 40)) for _ in range(20)]
    checks["posterior sum"] = max(abs(row.weights.sum() - 1.0) for row in rows)

    ps2, rows2, grid2, kernel2, _ = backprojection_case(7, "gaussian")
    acc = backproject_accumulate(ps2, rows2, kernel2, grid2)
    checks["friedel"] = (np.max(np.abs(acc.numerator - np.conj(friedel_mate(acc.numerator))))
                         / np.max(np.abs(acc.numerator)))

    F, G = dft3(x), dft3(r.standard_normal((8, 8, 8)))
    checks["|fsc| excess"] = max(0.0, np.max(np.abs(fsc(F, G).values)) - 1.0)
    checks["fsc(F,F) - 1"] = np.max(np.abs(fsc(F, F).values - 1.0))

    limits = {"plancherel": 1e-10, "round trip": 1e-10, "adjointness": 1e-10,
              "projection slice": 1e-10, "posterior sum": 1e-9, "friedel": 1e-12,
              "|fsc| excess": 1e-9, "fsc(F,F) - 1": 1e-12}
    ok = all(checks[k] <= limits[k] for k in limits)
    report(5, ok, ", ".join(f"{k} {v:.0e}" for k, v in checks.items()))


# ---------------------------------------------------------------------------
# scaled experiment


N, VOXEL = 48, 3.0


def _simulate(ctf):
    truth = generate_phantom(PhantomSpec.random(10, N, seed=7), N, VOXEL)
    sigma = noise_sigma_for_snr(truth, 0.1, ctf=ctf, oversample=2)
    ps = simulate_particles(truth, 1500, UniformPoseSampler(2), ctf, sigma, seed=11, oversample=2)
    return truth, ps


def _base(truth, **kw):
    opts = dict(eps=0.1 * truth.data.max(), max_iters=5, angle_step=15.0,
                translation_radius=2, seed=0)
    return RefineConfig(**{**opts, **kw})


@pytest.fixture(scope="module")
def identity_fixture():
    return _simulate(CTFParams.identity())


def _compare(truth, ps):
    out = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DidNotConverge)
        for mode in ("baseline_wiener", "regularized"):
            out[mode] = em_refine(ps, truth, _base(truth, mode=mode))
    outside = ~support_mask(truth)
    stats = {}
    for mode, res in out.items():
        stats[mode] = (res.resolution.shell, model_map_fsc(res.volume, truth).at(N // 4),
                       float(np.mean(res.volume.data[outside] == 0)))
    return stats


@pytest.mark.slow
def test_criterion_6_scaled_experiment(report, identity_fixture):
    t0 = time.perf_counter()
    results = {"identity": _compare(*identity_fixture)}
    results["ctf"] = _compare(*_simulate(CTFParams(300.0, 10000.0, 2.0, 0.1)))
    secs = time.perf_counter() - t0
    ok = secs < 600
    parts = []
    for name, st in results.items():
        (rb, mb, zb), (rr, mr, zr) = st["baseline_wiener"], st["regularized"]
        ok &= rr >= rb - 1.0 and mr - mb >= 0.02 and zr >= 0.5 and zb < 0.05
        parts.append(f"{name}: res {rb:.2f}->{rr:.2f} shells, FSC@{N // 4} {mb:.3f}->{mr:.3f}, "
                     f"zeros {zb:.0%}->{zr:.0%}")
    report(6, ok, "; ".join(parts) + f"; {secs:.0f}s")


@pytest.mark.slow
def test_criterion_7_beta_sweep(report, identity_fixture):
    truth, ps = identity_fixture
    values = [1.0, 1.4, 1.8, 2.2]
    base = _base(truth, max_iters=2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        first = sweep_resolution(ps, truth, base, "beta_mult", values)
        second = sweep_resolution(ps, truth, base, "beta_mult", values)
    shells = [r.shell for r in first.resolutions]
    unique = shells.count(max(shells)) == 1
    same = first.to_csv() == second.to_csv()
    table = ", ".join(f"{v:g}:{s:.4f}" for v, s in zip(values, shells))
    report(7, unique and same,
           f"shells {table}; best beta_mult {values[first.best]:g}; repeat identical {same}")


# ---------------------------------------------------------------------------


def test_criterion_8_conformance(report, tmp_path):
    gold = (DATA / "golden_4cube.mrc").read_bytes()
    write_mrc(tmp_path / "g.mrc",
              Volume3D((np.arange(64, dtype=np.float64).reshape(4, 4, 4) - 20.0) / 7.0, 1.5))
    golden_ok = (tmp_path / "g.mrc").read_bytes() == gold

    d = tmp_path
    assert main(["phantom", str(d / "t.mrc"), "--size", "16", "--blobs", "3", "--seed", "1"]) == 0
    assert main(["simulate", str(d / "t.mrc"), "--stack", str(d / "s.mrc"), "--meta",
                 str(d / "m.csv"), "--count", "30", "--seed", "2"]) == 0
    (d / "c.cfg").write_text("angle_step = 30\ntranslation_radius = 1\ninner_iters = 10\n")
    outputs = []
    for run in ("a", "b"):
        argv = ["refine", str(d / "s.mrc"), str(d / "m.csv"), "--initial", str(d / "t.mrc"),
                "--config", str(d / "c.cfg"), "--max-iters", "2", "--seed", "5",
                "--out-dir", str(d / run)]
        assert main(argv) == 0
        outputs.append({p.name: p.read_bytes() for p in sorted((d / run).iterdir())})
    cli_ok = outputs[0] == outputs[1] and len(outputs[0]) == 6
    report(8, golden_ok and cli_ok,
           f"golden bytes equal {golden_ok}; CLI refine outputs identical {cli_ok} "
           f"({len(outputs[0])} files)")
