"""Command-line entry point: ``cryorefine <subcommand> ...``.

Exit codes: 0 success, 1 validation or usage error, 2 I/O error.  Each
subcommand reads and checks all of its inputs before it writes anything.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from .errors import CryoRefineError, DidNotConverge, IoError, ValidationError
from .forward import (CTFParams, PhantomSpec, UniformPoseSampler, generate_phantom,
                      noise_sigma_for_snr, simulate_particles)
from .grid import Volume3D
from .io import (ImageStack, emit_curve, meta_rows, particles_from_files, particles_to_stack,
                 read_mrc, read_particle_meta, write_mrc, write_particle_meta)
from .params import SWEEP_AXES, RefineConfig, dump_config, parse_config_text
from .refine import em_refine, reconstruct_known_poses, sweep_resolution
from .validation import Mask, model_map_fsc, resolution_at_threshold

log = logging.getLogger("cryorefine")

EXIT_OK, EXIT_VALIDATION, EXIT_IO = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; here usage errors are validation errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _volume(path) -> Volume3D:
    v = read_mrc(path)
    if not isinstance(v, Volume3D):
        raise ValidationError(f"{path} holds an image stack, expected a volume")
    return v


def _particles(stack_path, meta_path):
    stack = read_mrc(stack_path)
    if isinstance(stack, Volume3D):
        stack = ImageStack(stack.data, stack.voxel_size)
    return particles_from_files(stack, read_particle_meta(meta_path))


def _config(args, initial: Volume3D | None = None) -> RefineConfig:
    """Defaults, then the config file, then explicit flags.

    Without an explicit ``eps`` the threshold is ``eps_frac`` of the initial
    map's maximum, so it tracks the density scale of the data.
    """
    text = ""
    if getattr(args, "config", None):
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as e:
            raise IoError(f"cannot read config {args.config}: {e}") from e
    cfg = parse_config_text(text)
    updates = {"seed": args.seed, "threads": args.threads}
    for flag in ("mode", "max_iters", "eps", "kernel"):
        val = getattr(args, flag, None)
        if val is not None:
            updates[flag] = val
    if getattr(args, "no_split", False):
        updates["split"] = False
    eps_given = "eps" in updates or any(
        line.split("#", 1)[0].split("=", 1)[0].strip() == "eps" for line in text.splitlines())
    if not eps_given and initial is not None:
        peak = float(np.max(np.abs(initial.data)))
        if peak > 0:
            updates["eps"] = args.eps_frac * peak
    return cfg.with_(**updates)


def _resolution_dict(res) -> dict:
    return {"shell": round(res.shell, 6), "frequency_inv_A": round(res.frequency, 9),
            "angstrom": None if not np.isfinite(res.angstrom) else round(res.angstrom, 6),
            "limit_reached": bool(res.limit_reached)}


def _write_json(path: Path, obj) -> None:
    try:
        path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def _out_dir(path) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise IoError(f"cannot create {p}: {e}") from e
    return p


# ---------------------------------------------------------------------------
# subcommands


def cmd_phantom(args) -> int:
    spec = PhantomSpec.random(args.blobs, args.size, seed=args.seed)
    vol = generate_phantom(spec, args.size, args.voxel_size)
    write_mrc(args.output, vol)
    print(f"wrote {args.output}: {args.size}^3 phantom with {args.blobs} blobs")
    return EXIT_OK


def cmd_simulate(args) -> int:
    truth = _volume(args.truth)
    if args.identity_ctf:
        ctf = CTFParams.identity()
    else:
        ctf = CTFParams(args.voltage, args.defocus, args.cs, args.amplitude_contrast)
    if args.sigma is not None:
        sigma = args.sigma
    else:
        if not args.snr > 0:
            raise ValidationError("--snr must be positive")
        sigma = noise_sigma_for_snr(truth, args.snr, ctf=ctf, seed=args.seed,
                                    oversample=args.oversample)
    if args.count < 1:
        raise ValidationError("--count must be >= 1")
    ps = simulate_particles(truth, args.count, UniformPoseSampler(args.max_shift), ctf, sigma,
                            seed=args.seed, oversample=args.oversample)
    write_mrc(args.stack, particles_to_stack(ps))
    write_particle_meta(args.meta, meta_rows(ps))
    print(f"wrote {args.count} particles (noise sigma {sigma:.6g}) to {args.stack}, {args.meta}")
    return EXIT_OK


def cmd_refine(args) -> int:
    ps = _particles(args.stack, args.meta)
    initial = _volume(args.initial)
    cfg = _config(args, initial)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", DidNotConverge)
        result = em_refine(ps, initial, cfg)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    out = _out_dir(args.out_dir)
    write_mrc(out / "half1.mrc", result.half_maps[0])
    write_mrc(out / "half2.mrc", result.half_maps[1])
    write_mrc(out / "full.mrc", result.volume)
    curves = {"half_map_fsc": result.fsc}
    emit_curve(out / "fsc.csv", curves, "csv")
    emit_curve(out / "fsc.svg", curves, "svg")
    report = {
        "mode": cfg.mode,
        "converged": result.converged,
        "resolution": _resolution_dict(result.resolution),
        "iterations": [{"iteration": r.iteration, "cutoff": r.cutoff,
                        "resolution_shell": round(r.resolution.shell, 6),
                        "pose_change": round(r.pose_change, 6)} for r in result.trace],
        "config": {k: v for k, v in (line.split(" = ", 1) for line in
                                     dump_config(cfg).splitlines())},
    }
    _write_json(out / "report.json", report)
    res = result.resolution
    print(f"{cfg.mode}: gold-standard resolution {res.angstrom:.2f} A "
          f"(shell {res.shell:.2f}){' [Nyquist]' if res.limit_reached else ''}")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    ps = _particles(args.stack, args.meta)
    cfg = _config(args)
    vol, curve = reconstruct_known_poses(ps, args.recon_mode, cfg)
    write_mrc(args.output, vol)
    res = resolution_at_threshold(curve)
    print(f"wrote {args.output}; half-map resolution {res.angstrom:.2f} A")
    return EXIT_OK


def cmd_fsc(args) -> int:
    a, b = _volume(args.map1), _volume(args.map2)
    mask = None
    if args.mask:
        mask = Mask(np.clip(_volume(args.mask).data, 0.0, 1.0))
    curve = model_map_fsc(a, b, mask)
    res = resolution_at_threshold(curve, args.threshold)
    if args.csv:
        emit_curve(args.csv, {"fsc": curve}, "csv")
    if args.svg:
        emit_curve(args.svg, {"fsc": curve}, "svg")
    flag = " (limit reached)" if res.limit_reached else ""
    print(f"resolution {res.angstrom:.4g} A at shell {res.shell:.4g}{flag}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    ps = _particles(args.stack, args.meta)
    initial = _volume(args.initial)
    base = _config(args, initial)
    try:
        values = [float(v) for v in args.values.split(",")]
    except ValueError:
        raise ValidationError(f"--values must be comma-separated numbers: {args.values!r}") from None
    table = sweep_resolution(ps, initial, base, args.axis, values)
    text = table.to_csv()
    if args.output:
        try:
            Path(args.output).write_text(text, encoding="utf-8")
        except OSError as e:
            raise IoError(f"cannot write {args.output}: {e}") from e
    sys.stdout.write(text)
    print(f"best {args.axis} = {table.values[table.best]:g}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed for every randomized step")
    common.add_argument("--threads", type=int, default=1, help="worker thread cap")
    common.add_argument("--config", help="key = value file with RefineConfig fields")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="cryorefine", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("phantom", parents=[common], help="write a random blob phantom")
    s.add_argument("output")
    s.add_argument("--size", type=int, default=48)
    s.add_argument("--blobs", type=int, default=10)
    s.add_argument("--voxel-size", type=float, default=3.0)
    s.set_defaults(func=cmd_phantom)

    s = sub.add_parser("simulate", parents=[common], help="simulate noisy CTF-modulated particles")
    s.add_argument("truth")
    s.add_argument("--stack", required=True)
    s.add_argument("--meta", required=True)
    s.add_argument("--count", type=int, default=1500)
    g = s.add_mutually_exclusive_group()
    g.add_argument("--snr", type=float, default=0.1, help="target SNR at half Nyquist")
    g.add_argument("--sigma", type=float, help="per-component noise std (overrides --snr)")
    s.add_argument("--max-shift", type=int, default=2)
    s.add_argument("--oversample", type=int, default=2)
    s.add_argument("--identity-ctf", action="store_true")
    s.add_argument("--voltage", type=float, default=300.0)
    s.add_argument("--defocus", type=float, default=10000.0, help="defocus in Angstrom")
    s.add_argument("--cs", type=float, default=2.0)
    s.add_argument("--amplitude-contrast", type=float, default=0.1)
    s.set_defaults(func=cmd_simulate)

    for name, func, helptext in (("refine", cmd_refine, "split-half EM refinement"),
                                 ("sweep", cmd_sweep, "refine along one multiplier axis")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("stack")
        s.add_argument("meta")
        s.add_argument("--initial", required=True, help="initial reference MRC")
        s.add_argument("--mode", choices=("regularized", "baseline_wiener", "naive"))
        s.add_argument("--max-iters", dest="max_iters", type=int)
        s.add_argument("--eps", type=float, help="absolute log-norm offset")
        s.add_argument("--eps-frac", type=float, default=0.1,
                       help="eps as a fraction of the initial map maximum (default 0.1)")
        s.add_argument("--kernel", choices=("trilinear", "gaussian"))
        s.add_argument("--no-split", action="store_true",
                       help="refine all particles as one set (oracle tests only)")
        s.set_defaults(func=func)
        if name == "refine":
            s.add_argument("--out-dir", required=True)
        else:
            s.add_argument("--axis", choices=SWEEP_AXES, default="beta_mult")
            s.add_argument("--values", default="1.0,1.4,1.8,2.2")
            s.add_argument("--output", help="CSV table path")

    s = sub.add_parser("reconstruct", parents=[common], help="backproject at recorded poses")
    s.add_argument("stack")
    s.add_argument("meta")
    s.add_argument("output")
    s.add_argument("--mode", dest="recon_mode", choices=("naive", "wiener"), default="naive")
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("fsc", parents=[common], help="FSC between two maps")
    s.add_argument("map1")
    s.add_argument("map2")
    s.add_argument("--mask")
    s.add_argument("--threshold", type=float, default=0.143)
    s.add_argument("--csv")
    s.add_argument("--svg")
    s.set_defaults(func=cmd_fsc)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        return args.func(args)
    except IoError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (CryoRefineError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
