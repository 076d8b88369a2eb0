"""Regularization scale heuristics and the refinement configuration."""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .em import AccumulatorPair
from .errors import IoError, NonPositiveScale, ParameterRangeWarning, ParseError, ValidationError
from .grid import ifft3_array
from .kernels import KernelSpec
from .regularizer import STEP_RULES, WEIGHT_MODES, RegConfig

MODES = ("regularized", "baseline_wiener", "naive")
SWEEP_AXES = ("alpha_mult", "beta_mult", "gamma_mult")
MULT_RANGES = {"alpha_mult": (0.4, 0.5), "beta_mult": (1.2, 2.6), "gamma_mult": (0.05, 0.2)}
INIT_CHOICES = ("previous", "naive", "wiener")


def scale_data(acc: AccumulatorPair) -> tuple[float, float]:
    """``(s_y, s_N)``: RMS of the inverse transform of the numerator, and mean weight.

    The numerator grid is ``D y`` in the normal-equation form of the data
    term, so ``ifft3(numerator)`` is the unregularized back-transformed data.
    """
    s_y = float(np.sqrt(np.mean(np.abs(ifft3_array(acc.numerator)) ** 2)))
    s_N = float(np.mean(acc.weight))
    return s_y, s_N


def check_multiplier_ranges(a: float, b: float, g: float) -> None:
    for name, val in zip(SWEEP_AXES, (a, b, g)):
        lo, hi = MULT_RANGES[name]
        if val and not lo <= val <= hi:
            warnings.warn(f"{name} = {val} lies outside the useful range [{lo}, {hi}]",
                          ParameterRangeWarning, stacklevel=3)


def derive_config(s_y: float, s_N: float, eps: float, eps_prime: float | None = None,
                  multipliers: tuple[float, float, float] = (0.45, 1.8, 0.1),
                  **reg_kw) -> RegConfig:
    """``alpha = a s_y eps``, ``beta = b s_y eps'``, ``gamma = g s_N``."""
    a, b, g = (float(m) for m in multipliers)
    if min(a, b, g) < 0:
        raise ValidationError("multipliers must be non-negative")
    eps_prime = eps / 3.0 if eps_prime is None else eps_prime
    if s_y <= 0 and (a or b):
        raise NonPositiveScale("data scale s_y is zero; alpha and beta cannot be derived")
    check_multiplier_ranges(a, b, g)
    return RegConfig(alpha=a * s_y * eps, beta=b * s_y * eps_prime, gamma=g * s_N,
                     eps=eps, eps_prime=eps_prime, **reg_kw)


@dataclass(frozen=True)
class RefineConfig:
    """Everything ``em_refine`` needs; flat so it maps onto ``key=value`` files."""

    mode: str = "regularized"
    # regularization (multipliers on the data-derived scales)
    alpha_mult: float = 0.45
    beta_mult: float = 1.8
    gamma_mult: float = 0.1
    eps: float = 0.1
    eps_prime: float | None = None
    mu: float | None = None
    inner_iters: int = 60
    step_rule: str = "backtracking"
    step_size: float | None = None
    convex_mode: bool = False
    weight_refresh: str = "iteration"
    m_step_init: str = "wiener"
    # model
    kernel: str = "trilinear"
    bandwidth: float = 2.0
    # search
    angle_step: float = 15.0
    psi_step: float | None = None
    translation_radius: int = 2
    # loop
    lowpass_A: float = 30.0
    max_iters: int = 10
    pose_change_tol: float = 0.01
    resolution_tol: float = 0.25
    fsc_floor: float = 1e-3
    split: bool = True
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.step_rule not in STEP_RULES:
            raise ValidationError(f"step_rule must be one of {STEP_RULES}")
        if self.weight_refresh not in WEIGHT_MODES:
            raise ValidationError(f"weight_refresh must be one of {WEIGHT_MODES}")
        if self.m_step_init not in INIT_CHOICES:
            raise ValidationError(f"m_step_init must be one of {INIT_CHOICES}")
        if min(self.alpha_mult, self.beta_mult, self.gamma_mult) < 0:
            raise ValidationError("multipliers must be non-negative")
        if not self.eps > 0 or (self.eps_prime is not None and not self.eps_prime > 0):
            raise ValidationError("eps and eps_prime must be positive")
        if not self.angle_step > 0 or (self.psi_step is not None and not self.psi_step > 0):
            raise ValidationError("angular steps must be positive")
        if self.translation_radius < 0 or int(self.translation_radius) != self.translation_radius:
            raise ValidationError("translation_radius must be a non-negative integer")
        if self.max_iters < 1:
            raise ValidationError("max_iters must be >= 1")
        if not 0 <= self.pose_change_tol <= 1:
            raise ValidationError("pose_change_tol must lie in [0, 1]")
        if not self.lowpass_A > 0:
            raise ValidationError("lowpass_A must be positive")
        if self.threads < 1:
            raise ValidationError("threads must be >= 1")
        KernelSpec(self.kernel, self.bandwidth)
        if self.mode == "regularized":
            check_multiplier_ranges(self.alpha_mult, self.beta_mult, self.gamma_mult)

    @property
    def kernel_spec(self) -> KernelSpec:
        return KernelSpec(self.kernel, self.bandwidth)

    @property
    def multipliers(self) -> tuple[float, float, float]:
        return (self.alpha_mult, self.beta_mult, self.gamma_mult)

    def reg_config(self, acc: AccumulatorPair) -> RegConfig:
        """Regularization weights derived from the data scales of ``acc``."""
        s_y, s_N = scale_data(acc)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ParameterRangeWarning)
            return derive_config(s_y, s_N, self.eps, self.eps_prime, self.multipliers,
                                 mu=self.mu, inner_iters=self.inner_iters,
                                 step_rule=self.step_rule, step_size=self.step_size,
                                 convex_mode=self.convex_mode,
                                 weight_refresh=self.weight_refresh)

    def with_(self, **kw) -> "RefineConfig":
        return replace(self, **kw)


def sweep_grid(base: RefineConfig, axis: str, values: Sequence[float]) -> list[RefineConfig]:
    """One config per value along ``axis``; order follows ``values``."""
    if axis not in SWEEP_AXES:
        raise ValidationError(f"sweep axis must be one of {SWEEP_AXES}")
    if not len(values):
        raise ValidationError("sweep needs at least one value")
    return [replace(base, **{axis: float(v)}) for v in values]


# ---------------------------------------------------------------------------
# key=value config files


def _coerce(f: dataclasses.Field, raw: str, line: int):
    typ = str(f.type)
    text = raw.strip()
    if text.lower() in ("none", "") and "None" in typ:
        return None
    try:
        if typ.startswith("bool"):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if typ.startswith("int"):
            return int(text)
        if typ.startswith("float"):
            return float(text)
        return text
    except ValueError:
        raise ParseError(f"bad value {text!r} for {f.name}", line) from None


def parse_config_text(text: str, base: RefineConfig | None = None) -> RefineConfig:
    """Parse ``key = value`` lines (``#`` comments) onto ``base``."""
    known = {f.name: f for f in fields(RefineConfig)}
    updates = {}
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected key=value, got {line!r}", no)
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ParseError(f"unknown config key {key!r}", no)
        updates[key] = _coerce(known[key], val, no)
    return replace(base or RefineConfig(), **updates)


def load_config(path, base: RefineConfig | None = None) -> RefineConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise IoError(f"cannot read config {path}: {e}") from e
    return parse_config_text(text, base)


def dump_config(cfg: RefineConfig) -> str:
    return "".join(f"{f.name} = {getattr(cfg, f.name)}\n" for f in fields(cfg))
