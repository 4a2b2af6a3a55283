"""Batch and online fitting of noising-regularized GLMs."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import Dataset, SparseVector
from .glm import as_family, dataset_nll_grad
from .noising import NoisedCopies, NoiseModel, quad_penalty_value_grad

log = logging.getLogger(__name__)

Objective = Callable[[np.ndarray], "tuple[float, np.ndarray]"]


class NonFiniteObjectiveError(FloatingPointError):
    """The objective or its gradient was not finite at ``beta``."""

    def __init__(self, beta: np.ndarray, value: float):
        super().__init__(f"non-finite objective {value!r} at beta with norm {np.linalg.norm(beta):g}")
        self.beta = np.array(beta, copy=True)
        self.value = value


@dataclass(frozen=True)
class BatchConfig:
    max_iterations: int = 500
    gradient_tolerance: float = 1e-6
    memory_pairs: int = 10
    multistart: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1 or self.memory_pairs < 1 or self.multistart < 1:
            raise ValueError("max_iterations, memory_pairs and multistart must be positive")
        if not self.gradient_tolerance > 0:
            raise ValueError("gradient_tolerance must be positive")


@dataclass
class FitReport:
    beta_hat: np.ndarray
    objective_trace: list[float]
    converged: bool
    iterations: int
    gradient_norm: float = float("nan")
    message: str = ""

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]


def _evaluate(fun: Objective, beta: np.ndarray) -> tuple[float, np.ndarray]:
    value, grad = fun(beta)
    value = float(value)
    grad = np.asarray(grad, dtype=float)
    if not np.isfinite(value) or not np.all(np.isfinite(grad)):
        raise NonFiniteObjectiveError(beta, value)
    return value, grad


_MAX_STALLED = 10


def _two_loop(grad: np.ndarray, pairs: deque) -> np.ndarray:
    q = grad.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    if pairs:
        s, y, _ = pairs[-1]
        q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return -q


def _wolfe_search(fun, x, f, g, d, step, c1=1e-4, c2=0.9, max_evals=60):
    """Bisection line search for the weak Wolfe conditions.

    Returns ``(t, f_t, g_t)`` for the best sufficient-decrease point found,
    or ``None`` if no trial decreased the objective.
    """
    slope = g @ d
    lo, hi = 0.0, np.inf
    best = None
    t = step
    for _ in range(max_evals):
        x_t = x + t * d
        f_t, g_t = _evaluate(fun, x_t)
        if f_t > f + c1 * t * slope:
            hi = t
        else:
            if best is None or f_t <= best[1]:
                best = (t, f_t, g_t)
            if g_t @ d < c2 * slope:
                lo = t
            else:
                return best
        t = 2.0 * lo if np.isinf(hi) else 0.5 * (lo + hi)
        if hi - lo < 1e-16 * max(1.0, hi):
            break
    return best


def minimize(
    fun: Objective,
    beta0,
    config: BatchConfig = BatchConfig(),
    callback: Callable[[int, np.ndarray, float], None] | None = None,
) -> FitReport:
    """Limited-memory BFGS with a weak-Wolfe line search.

    Stops when the max-norm of the gradient is at most
    ``config.gradient_tolerance`` or after ``config.max_iterations``.
    Every accepted step satisfies sufficient decrease. ``callback`` is
    called with ``(iteration, beta, value)`` for the start point and after
    each accepted step.
    """
    x = np.array(beta0, dtype=float)
    f, g = _evaluate(fun, x)
    trace = [f]
    if callback is not None:
        callback(0, x.copy(), f)
    pairs: deque = deque(maxlen=config.memory_pairs)
    message = "iteration limit"
    it = 0
    stalled = 0
    while True:
        gnorm = float(np.max(np.abs(g))) if g.size else 0.0
        if gnorm <= config.gradient_tolerance:
            message = "gradient tolerance reached"
            break
        if it >= config.max_iterations:
            break
        d = _two_loop(g, pairs)
        if not g @ d < 0:
            pairs.clear()
            d = -g
        step = 1.0 if pairs else min(1.0, 1.0 / gnorm)
        found = _wolfe_search(fun, x, f, g, d, step)
        if found is None and pairs:
            pairs.clear()
            d = -g
            found = _wolfe_search(fun, x, f, g, d, min(1.0, 1.0 / gnorm))
        if found is None:
            message = "line search failed to decrease the objective"
            break
        t, f_new, g_new = found
        # steps below float resolution still pass the decrease test
        stalled = stalled + 1 if f - f_new <= 4 * np.finfo(float).eps * max(1.0, abs(f)) else 0
        if stalled > _MAX_STALLED:
            message = "objective stalled at floating-point resolution"
            break
        s = t * d
        yv = g_new - g
        sy = s @ yv
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(yv):
            pairs.append((s, yv, 1.0 / sy))
        x = x + s
        f, g = f_new, g_new
        it += 1
        trace.append(f)
        if callback is not None:
            callback(it, x.copy(), f)
    gnorm = float(np.max(np.abs(g))) if g.size else 0.0
    converged = gnorm <= config.gradient_tolerance
    if not converged:
        log.debug("minimize stopped without convergence: %s (|g|=%g)", message, gnorm)
    return FitReport(x, trace, converged, it, gnorm, message)


# --------------------------------------------------------------------------
# penalized GLM fits
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PenaltyMode:
    """``none``, ``l2`` (``lam/2 ||beta||^2``), ``quad_noising`` or ``mc_noising``."""

    kind: str = "none"
    lam: float = 0.0
    noise: NoiseModel | None = None
    samples: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("none", "l2", "quad_noising", "mc_noising"):
            raise ValueError(f"unknown penalty mode {self.kind!r}")
        if self.kind == "l2" and not self.lam >= 0:
            raise ValueError("l2 lambda must be non-negative")
        if self.kind in ("quad_noising", "mc_noising") and self.noise is None:
            raise ValueError(f"{self.kind} needs a noise model")
        if self.kind == "mc_noising" and self.samples < 1:
            raise ValueError("mc_noising needs samples >= 1")

    @classmethod
    def none(cls) -> PenaltyMode:
        return cls("none")

    @classmethod
    def l2(cls, lam: float) -> PenaltyMode:
        return cls("l2", lam=lam)

    @classmethod
    def quad_noising(cls, noise: NoiseModel) -> PenaltyMode:
        return cls("quad_noising", noise=noise)

    @classmethod
    def mc_noising(cls, noise: NoiseModel, samples: int, seed: int = 0) -> PenaltyMode:
        return cls("mc_noising", noise=noise, samples=samples, seed=seed)


def glm_objective(family, data: Dataset, mode: PenaltyMode) -> Objective:
    """Penalized negative log-likelihood ``beta -> (value, grad)``."""
    fam = as_family(family)
    fam.check_labels(data.y)
    if mode.kind == "mc_noising":
        copies = NoisedCopies(data.X, mode.noise, mode.samples, mode.seed)
        return lambda beta: copies.objective_grad(fam, data.y, beta)

    def objective(beta):
        value, grad = dataset_nll_grad(fam, data, beta)
        if mode.kind == "l2":
            value += 0.5 * mode.lam * float(beta @ beta)
            grad = grad + mode.lam * beta
        elif mode.kind == "quad_noising":
            pv, pg = quad_penalty_value_grad(fam, data.X, beta, mode.noise)
            value += pv
            grad = grad + pg
        return value, grad

    return objective


def minimize_multistart(fun: Objective, dim: int, config: BatchConfig, beta0=None, callback=None) -> FitReport:
    """Run ``config.multistart`` fits (zero start first, then seeded draws); keep the best."""
    start = np.zeros(dim) if beta0 is None else np.asarray(beta0, dtype=float)
    best = minimize(fun, start, config, callback)
    rng = np.random.default_rng(config.seed)
    for _ in range(config.multistart - 1):
        report = minimize(fun, start + 0.1 * rng.standard_normal(dim), config)
        if report.objective < best.objective:
            best = report
    return best


def fit_glm(family, data: Dataset, mode: PenaltyMode = PenaltyMode(), config: BatchConfig = BatchConfig(),
            beta0=None, callback=None) -> FitReport:
    """Minimize the summed loss plus the penalty selected by ``mode``."""
    return minimize_multistart(glm_objective(family, data, mode), data.dim, config, beta0, callback)


# --------------------------------------------------------------------------
# online rules
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class OnlineRule:
    """``sgd``, ``adagrad`` or ``dropout_descent`` with step size ``eta``.

    ``schedule="inv_sqrt"`` uses ``eta / sqrt(t)`` (sgd only).
    """

    kind: str
    eta: float
    epsilon: float = 1e-8
    schedule: str = "constant"

    def __post_init__(self):
        if self.kind not in ("sgd", "adagrad", "dropout_descent"):
            raise ValueError(f"unknown online rule {self.kind!r}")
        if self.eta < 0 or self.epsilon < 0:
            raise ValueError("eta and epsilon must be non-negative")
        if self.schedule not in ("constant", "inv_sqrt"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.schedule == "inv_sqrt" and self.kind != "sgd":
            raise ValueError("inv_sqrt schedule is only defined for sgd")


@dataclass(frozen=True)
class OnlineState:
    """Iterate, step count and both accumulators.

    ``diag_g`` sums squared gradients, ``diag_h`` sums ``A''(x.beta) x**2``;
    both are tracked whatever the rule, so any run can be compared against
    the other Fisher estimate.
    """

    beta: np.ndarray
    diag_g: np.ndarray
    diag_h: np.ndarray
    t: int = 0

    @classmethod
    def initial(cls, dim: int, beta0=None) -> OnlineState:
        beta = np.zeros(dim) if beta0 is None else np.array(beta0, dtype=float)
        return cls(beta, np.zeros(dim), np.zeros(dim), 0)


def _step_inplace(rule: OnlineRule, fam, beta, diag_g, diag_h, t, x: SparseVector, y: float) -> float:
    """Advance arrays in place by one example; return the loss at the pre-step iterate."""
    cols, vals = x.indices, x.values
    z = float(vals @ beta[cols])
    loss = float(fam.A(z)) - y * z
    g = (float(fam.mean(z)) - y) * vals
    diag_g[cols] += g * g
    diag_h[cols] += float(fam.variance(z)) * vals * vals
    if rule.kind == "sgd":
        eta = rule.eta / np.sqrt(t + 1) if rule.schedule == "inv_sqrt" else rule.eta
        beta[cols] -= eta * g
        return loss
    denom = np.sqrt(diag_g[cols]) if rule.kind == "adagrad" else diag_h[cols]
    denom = denom + rule.epsilon
    step = np.divide(g, denom, out=np.zeros_like(g), where=denom > 0)
    beta[cols] -= rule.eta * step
    return loss


def online_step(rule: OnlineRule, state: OnlineState, example: tuple[SparseVector, float], family) -> OnlineState:
    """One update on ``example = (x, y)``; returns a new state."""
    fam = as_family(family)
    x, y = example
    beta, dg, dh = state.beta.copy(), state.diag_g.copy(), state.diag_h.copy()
    _step_inplace(rule, fam, beta, dg, dh, state.t, x, float(y))
    return OnlineState(beta, dg, dh, state.t + 1)


@dataclass
class OnlineTrajectory:
    betas: np.ndarray
    cumulative_loss: np.ndarray
    diag_g: np.ndarray
    diag_h: np.ndarray
    steps: int

    @property
    def beta(self) -> np.ndarray:
        return self.betas[-1]


def run_online(rule: OnlineRule, data: Dataset, passes: int, family, seed: int, beta0=None,
               snapshot_every: int = 1) -> OnlineTrajectory:
    """Run ``passes`` shuffled passes; each pass uses a fresh seeded permutation.

    ``betas`` holds the start point plus every ``snapshot_every``-th iterate
    (and always the last one).
    """
    if passes < 1:
        raise ValueError("passes must be >= 1")
    fam = as_family(family)
    rng = np.random.default_rng(seed)
    state = OnlineState.initial(data.dim, beta0)
    beta, dg, dh = state.beta, state.diag_g, state.diag_h
    rows = [data.row(i) for i in range(data.n)]
    snaps = [beta.copy()]
    losses = []
    total = 0.0
    t = 0
    for _ in range(passes):
        for i in rng.permutation(data.n):
            total += _step_inplace(rule, fam, beta, dg, dh, t, rows[i], float(data.y[i]))
            t += 1
            losses.append(total)
            if t % snapshot_every == 0:
                snaps.append(beta.copy())
    if t % snapshot_every:
        snaps.append(beta.copy())
    return OnlineTrajectory(np.array(snaps), np.array(losses), dg, dh, t)


__all__ = [
    "BatchConfig", "FitReport", "NonFiniteObjectiveError", "OnlineRule", "OnlineState",
    "OnlineTrajectory", "PenaltyMode", "fit_glm", "glm_objective", "minimize",
    "minimize_multistart", "online_step", "run_online",
]
