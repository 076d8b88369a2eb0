"""Maximization step: reweighted L1 plus smoothed TV plus a quadratic restraint.

The data term is the Fourier-diagonal quadratic

    data(x) = 1/(2L) * sum_{N(n) > 0} N(n) |X(n) - num(n)/N(n)|^2,   X = fft3(x)

whose real-space gradient is ``ifft3(N X - num)`` and whose gradient
Lipschitz constant is ``max N`` (``fft3`` is unnormalized, ``ifft3`` carries
``1/L``).  Smoothed TV uses the Huber form ``h_mu`` of the voxel gradient
magnitude; the same smoothed magnitude enters the TV weights and the
log-norm objective so that the tangent-line surrogate majorizes it exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .em import AccumulatorPair
from .errors import StepDiverged, ValidationError
from .grid import (
    Volume3D,
    fft3_array,
    gradient_adjoint_array,
    gradient_array,
    ifft3_array,
    real_part_checked,
)
from .errors import NonHermitianAccumulator

STEP_RULES = ("lipschitz", "fixed", "backtracking")
WEIGHT_MODES = ("iteration", "mstep")
DIVERGENCE_RTOL = 1e-9


@dataclass(frozen=True)
class RegConfig:
    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0
    eps: float = 0.1
    eps_prime: float = 0.1 / 3
    mu: float | None = None
    inner_iters: int = 24
    step_rule: str = "lipschitz"
    step_size: float | None = None
    convex_mode: bool = False
    weight_refresh: str = "iteration"
    boundary: str = "replicate"

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            if not getattr(self, name) >= 0:
                raise ValidationError(f"{name} must be >= 0")
        for name in ("eps", "eps_prime"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be > 0")
        if self.mu is None:
            object.__setattr__(self, "mu", 0.01 * self.eps_prime)
        if not self.mu > 0:
            raise ValidationError("mu must be > 0")
        if int(self.inner_iters) < 1:
            raise ValidationError("inner_iters must be >= 1")
        if self.step_rule not in STEP_RULES:
            raise ValidationError(f"step_rule must be one of {STEP_RULES}")
        if self.step_rule == "fixed" and not (self.step_size and self.step_size > 0):
            raise ValidationError("fixed step rule needs a positive step_size")
        if self.weight_refresh not in WEIGHT_MODES:
            raise ValidationError(f"weight_refresh must be one of {WEIGHT_MODES}")

    def with_(self, **kw) -> "RegConfig":
        return replace(self, **kw)


@dataclass(frozen=True)
class WeightFields:
    w_l1: np.ndarray = field(repr=False)
    w_tv: np.ndarray = field(repr=False)


# ---------------------------------------------------------------------------
# smoothed TV


def huber(g: np.ndarray, mu: float) -> np.ndarray:
    """Closed-form value of the per-voxel smoothed norm."""
    g = np.asarray(g, dtype=np.float64)
    return np.where(g < mu, g * g / (2.0 * mu), g - 0.5 * mu)


def _data(v) -> np.ndarray:
    return v.data if isinstance(v, Volume3D) else np.asarray(v, dtype=np.float64)


def smoothed_tv_value(v, mu: float, w_tv=None, boundary: str = "replicate") -> float:
    g = np.sqrt(np.sum(gradient_array(_data(v), boundary) ** 2, axis=0))
    h = huber(g, mu)
    return float(np.sum(h if w_tv is None else w_tv * h))


def smoothed_tv_gradient_array(x: np.ndarray, mu: float, w_tv=None,
                               boundary: str = "replicate") -> np.ndarray:
    d = gradient_array(x, boundary)
    mag = np.sqrt(np.sum(d * d, axis=0))
    u = d / np.maximum(mag, mu)
    if w_tv is not None:
        u = u * w_tv
    return gradient_adjoint_array(u, boundary)


def smoothed_tv_gradient(v: Volume3D, mu: float, w_tv=None, boundary: str = "replicate") -> Volume3D:
    """``D^T u`` with ``u = w * Dx / max(|Dx|, mu)``; Lipschitz constant ``<= 12 max(w) / mu``."""
    return Volume3D(smoothed_tv_gradient_array(v.data, mu, w_tv, boundary), v.voxel_size)


# ---------------------------------------------------------------------------
# weights, data term, prox


def compute_weights(x_prev, eps: float, eps_prime: float, convex_mode: bool = False,
                    mu: float | None = None, boundary: str = "replicate") -> WeightFields:
    """Tangent-line weights ``1/(|x|+eps)`` and ``1/(|grad x|+eps')``.

    With ``mu`` the gradient magnitude is replaced by its smoothed value
    ``h_mu(|grad x|)``, which makes the surrogate an exact majorizer of the
    smoothed log-norm objective.
    """
    x = _data(x_prev)
    if convex_mode:
        one = np.ones_like(x)
        return WeightFields(one, one.copy())
    g = np.sqrt(np.sum(gradient_array(x, boundary) ** 2, axis=0))
    if mu is not None:
        g = huber(g, mu)
    return WeightFields(1.0 / (np.abs(x) + eps), 1.0 / (g + eps_prime))


def _check_acc(acc: AccumulatorPair) -> None:
    if not acc.finalized:
        raise NonHermitianAccumulator("accumulator must be finalized before the M-step")


def data_gradient_array(x: np.ndarray, acc: AccumulatorPair) -> np.ndarray:
    NX = acc.weight * fft3_array(x)
    scale = float(np.max(np.abs(NX)) + np.max(np.abs(acc.numerator))) / x.size
    return real_part_checked(ifft3_array(NX - acc.numerator), NonHermitianAccumulator, scale)


def data_gradient(x: Volume3D, acc: AccumulatorPair) -> Volume3D:
    """Real-space gradient ``ifft3(N fft3(x) - num)`` of the data term."""
    _check_acc(acc)
    return Volume3D(data_gradient_array(x.data, acc), x.voxel_size)


def data_term(x, acc: AccumulatorPair) -> float:
    X = fft3_array(_data(x))
    w = acc.weight
    on = w > 0
    r = w[on] * X[on] - acc.numerator[on]
    return float(np.sum(np.abs(r) ** 2 / w[on]) / (2.0 * X.size))


def prox_l1(x_dash, thresholds):
    """Soft threshold with per-voxel thresholds; below-threshold voxels become exactly 0."""
    if isinstance(x_dash, Volume3D):
        return Volume3D(prox_l1(x_dash.data, thresholds), x_dash.voxel_size)
    x = np.asarray(x_dash, dtype=np.float64)
    t = np.asarray(thresholds, dtype=np.float64)
    if np.any(t < 0):
        raise ValidationError("thresholds must be non-negative")
    return np.where(np.abs(x) < t, 0.0, x - t * np.sign(x))


# ---------------------------------------------------------------------------
# objectives


@dataclass(frozen=True)
class ObjectiveValue:
    """Surrogate (frozen weights) and log-norm values at one point.

    ``surrogate + constant >= log_norm`` everywhere, with equality at the
    point the weights were taken from.
    """

    surrogate: float
    log_norm: float
    data: float
    constant: float


def _smoothed_mag(x: np.ndarray, cfg: RegConfig) -> np.ndarray:
    g = np.sqrt(np.sum(gradient_array(x, cfg.boundary) ** 2, axis=0))
    return huber(g, cfg.mu)


def surrogate_value(x: np.ndarray, acc: AccumulatorPair, cfg: RegConfig, anchor: np.ndarray,
                    w: WeightFields) -> float:
    h = _smoothed_mag(x, cfg)
    return (data_term(x, acc) + cfg.alpha * float(np.sum(w.w_l1 * np.abs(x)))
            + cfg.beta * float(np.sum(w.w_tv * h))
            + cfg.gamma * float(np.sum((x - anchor) ** 2)))


def log_norm_value(x: np.ndarray, acc: AccumulatorPair, cfg: RegConfig, anchor: np.ndarray) -> float:
    if cfg.convex_mode:
        one = np.ones_like(x)
        return surrogate_value(x, acc, cfg, anchor, WeightFields(one, one))
    h = _smoothed_mag(x, cfg)
    return (data_term(x, acc) + cfg.alpha * float(np.sum(np.log(np.abs(x) + cfg.eps)))
            + cfg.beta * float(np.sum(np.log(h + cfg.eps_prime)))
            + cfg.gamma * float(np.sum((x - anchor) ** 2)))


def penalized_objective(x, acc: AccumulatorPair, config: RegConfig, x_anchor,
                        x_weights_source) -> ObjectiveValue:
    """Surrogate with weights from ``x_weights_source`` and the log-norm objective at ``x``."""
    xa, anc, src = _data(x), _data(x_anchor), _data(x_weights_source)
    w = compute_weights(src, config.eps, config.eps_prime, config.convex_mode, config.mu,
                        config.boundary)
    sur = surrogate_value(xa, acc, config, anc, w)
    ln = log_norm_value(xa, acc, config, anc)
    if config.convex_mode:
        const = 0.0
    else:
        hs = _smoothed_mag(src, config)
        const = (config.alpha * float(np.sum(np.log(np.abs(src) + config.eps) - w.w_l1 * np.abs(src)))
                 + config.beta * float(np.sum(np.log(hs + config.eps_prime) - w.w_tv * hs)))
    return ObjectiveValue(sur, ln, data_term(xa, acc), const)


# ---------------------------------------------------------------------------
# proximal gradient solver


@dataclass
class MStepTrace:
    """Per inner iteration: surrogate before/after the step (same frozen weights),
    the log-norm objective after the step, and the step size used."""

    surrogate_before: list = field(default_factory=list)
    surrogate_after: list = field(default_factory=list)
    log_norm: list = field(default_factory=list)
    step: list = field(default_factory=list)


def lipschitz_step(acc: AccumulatorPair, cfg: RegConfig, w: WeightFields) -> float:
    L = float(acc.weight.max()) + 2.0 * cfg.gamma + 12.0 * cfg.beta * float(w.w_tv.max()) / cfg.mu
    return 1.0 / L if L > 0 else 1.0


def _smooth_part(x, acc, cfg, anchor, w):
    return (data_term(x, acc) + cfg.beta * float(np.sum(w.w_tv * _smoothed_mag(x, cfg)))
            + cfg.gamma * float(np.sum((x - anchor) ** 2)))


def m_step(acc: AccumulatorPair, x_init: Volume3D, x_anchor: Volume3D, config: RegConfig,
           trace: MStepTrace | None = None) -> Volume3D:
    """Proximal-gradient iterations on the reweighted surrogate.

    Each iteration takes the weights from the current iterate (or once from
    ``x_init`` when ``weight_refresh == "mstep"``), steps along the gradient
    of the smooth part and soft-thresholds with ``step * alpha * w_l1``.
    Under the Lipschitz or backtracking rules the frozen-weight surrogate
    may not increase; a rise beyond ``1e-9`` relative (plus a rounding floor
    tied to the data scale) raises StepDiverged.
    """
    _check_acc(acc)
    cfg = config
    x = np.array(x_init.data, dtype=np.float64)
    anchor = x_anchor.data
    w = None
    step = None
    # rounding floor of the data term, so a converged iterate is not flagged
    floor = 1e-13 * data_term(np.zeros_like(x), acc)
    for _ in range(int(cfg.inner_iters)):
        if w is None or cfg.weight_refresh == "iteration":
            w = compute_weights(x, cfg.eps, cfg.eps_prime, cfg.convex_mode, cfg.mu, cfg.boundary)
        grad = data_gradient_array(x, acc) + 2.0 * cfg.gamma * (x - anchor)
        if cfg.beta:
            grad += cfg.beta * smoothed_tv_gradient_array(x, cfg.mu, w.w_tv, cfg.boundary)
        before = surrogate_value(x, acc, cfg, anchor, w)
        lip = lipschitz_step(acc, cfg, w)
        if cfg.step_rule == "fixed":
            step = cfg.step_size
            x_new = prox_l1(x - step * grad, step * cfg.alpha * w.w_l1)
        elif cfg.step_rule == "lipschitz":
            step = lip
            x_new = prox_l1(x - step * grad, step * cfg.alpha * w.w_l1)
        else:
            f0 = _smooth_part(x, acc, cfg, anchor, w)
            step = max(lip, 2.0 * step) if step else max(lip, 1.0 / max(float(acc.weight.max()), 1e-300))
            while True:
                x_new = prox_l1(x - step * grad, step * cfg.alpha * w.w_l1)
                d = x_new - x
                if step <= lip or _smooth_part(x_new, acc, cfg, anchor, w) <= \
                        f0 + float(np.sum(grad * d)) + float(np.sum(d * d)) / (2.0 * step):
                    break
                step = max(lip, 0.5 * step)
        after = surrogate_value(x_new, acc, cfg, anchor, w)
        if cfg.step_rule != "fixed" and after > before + DIVERGENCE_RTOL * abs(before) + floor:
            raise StepDiverged(f"surrogate rose from {before:.12g} to {after:.12g}")
        x = x_new
        if trace is not None:
            trace.surrogate_before.append(before)
            trace.surrogate_after.append(after)
            trace.log_norm.append(log_norm_value(x, acc, cfg, anchor))
            trace.step.append(step)
    return Volume3D(x, x_init.voxel_size)
