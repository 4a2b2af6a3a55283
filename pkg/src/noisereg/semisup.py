"""Noising penalties estimated with the help of unlabelled rows.

The noising penalty never looks at labels, so unlabelled rows ``z_i`` give
extra samples of it. With ``n`` labelled and ``m`` unlabelled rows and a
discount ``alpha`` in (0, 1]::

    R_*(beta) = n / (n + alpha m) * (R_labelled(beta) + alpha R_unlabelled(beta))

which stays on the scale of an n-row penalty.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, UnlabeledSet
from .glm import GlmFamily, as_family, dataset_nll_grad, predict_dataset
from .noising import NoiseModel, PenaltyValue, exact_penalty, quad_penalty_value_grad
from .optim import BatchConfig, FitReport, minimize_multistart

DEFAULT_ALPHA_GRID = (0.1, 0.2, 0.3, 0.4)


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")


def _weights(n: int, m: int, alpha: float) -> tuple[float, float]:
    scale = n / (n + alpha * m)
    return scale, scale * alpha


def semisup_quad_penalty_value_grad(family, labeled: Dataset, unlabeled: UnlabeledSet, beta,
                                    noise: NoiseModel, alpha: float) -> tuple[float, np.ndarray]:
    _check_alpha(alpha)
    if unlabeled.dim != labeled.dim:
        raise ValueError(f"dimension mismatch: labelled d={labeled.dim}, unlabelled d={unlabeled.dim}")
    w_lab, w_unl = _weights(labeled.n, unlabeled.m, alpha)
    v_lab, g_lab = quad_penalty_value_grad(family, labeled.X, beta, noise)
    v_unl, g_unl = quad_penalty_value_grad(family, unlabeled.X, beta, noise)
    return w_lab * v_lab + w_unl * v_unl, w_lab * g_lab + w_unl * g_unl


def semisup_quad_penalty(family, labeled: Dataset, unlabeled: UnlabeledSet, beta, noise: NoiseModel,
                         alpha: float, method: str = "quadratic") -> PenaltyValue:
    """Discounted labelled + unlabelled penalty.

    ``method="exact"`` swaps in :func:`exact_penalty` for both parts; it is
    only practical for tiny supports.
    """
    if method == "quadratic":
        value, _ = semisup_quad_penalty_value_grad(family, labeled, unlabeled, beta, noise, alpha)
        return PenaltyValue(value, "quadratic")
    if method != "exact":
        raise ValueError(f"unknown method {method!r}")
    _check_alpha(alpha)
    w_lab, w_unl = _weights(labeled.n, unlabeled.m, alpha)
    lab = exact_penalty(family, labeled, beta, noise).value
    unl = exact_penalty(family, unlabeled, beta, noise).value if unlabeled.m else 0.0
    return PenaltyValue(w_lab * lab + w_unl * unl, "enumeration" if noise.kind == "dropout" else "quadrature")


def semisup_objective(family, labeled: Dataset, unlabeled: UnlabeledSet, noise: NoiseModel, alpha: float):
    fam = as_family(family)
    fam.check_labels(labeled.y)

    def objective(beta):
        value, grad = dataset_nll_grad(fam, labeled, beta)
        pv, pg = semisup_quad_penalty_value_grad(fam, labeled, unlabeled, beta, noise, alpha)
        return value + pv, grad + pg

    return objective


def fit_semisup(family, labeled: Dataset, unlabeled: UnlabeledSet, noise: NoiseModel, alpha: float,
                config: BatchConfig = BatchConfig(), beta0=None) -> FitReport:
    """Minimize labelled loss plus the semi-supervised surrogate penalty."""
    fun = semisup_objective(family, labeled, unlabeled, noise, alpha)
    return minimize_multistart(fun, labeled.dim, config, beta0)


@dataclass
class AlphaSelection:
    alpha: float
    # alpha -> mean held-out score (accuracy for logistic, negative mean loss otherwise)
    scores: dict = field(default_factory=dict)


def _score(fam: GlmFamily, data: Dataset, beta) -> float:
    mean, label = predict_dataset(fam, data.X, beta)
    if fam is GlmFamily.LOGISTIC:
        return float(np.mean(label == data.y))
    z = data.X @ beta
    return -float(np.mean(fam.A(z) - data.y * z))


def select_alpha(family, labeled: Dataset, unlabeled: UnlabeledSet, noise: NoiseModel,
                 grid=DEFAULT_ALPHA_GRID, folds: int = 5, seed: int = 0,
                 config: BatchConfig = BatchConfig()) -> AlphaSelection:
    """k-fold cross-validation of the discount over ``grid``.

    Higher held-out accuracy wins (lower held-out loss for non-logistic
    families); ties go to the smaller alpha.
    """
    fam = as_family(family)
    grid = sorted(float(a) for a in grid)
    if not grid:
        raise ValueError("alpha grid is empty")
    for a in grid:
        _check_alpha(a)
    if fam is GlmFamily.LOGISTIC and np.unique(labeled.y).size < 2:
        raise ValueError("labelled data contains a single class")
    if len(grid) == 1:
        return AlphaSelection(grid[0], {})
    if folds < 2 or folds > labeled.n:
        raise ValueError(f"folds must lie in [2, n], got {folds}")
    order = np.random.default_rng(seed).permutation(labeled.n)
    parts = np.array_split(order, folds)
    scores = {}
    for a in grid:
        fold_scores = []
        for k in range(folds):
            train = labeled.subset(np.sort(np.concatenate([p for j, p in enumerate(parts) if j != k])))
            held = labeled.subset(np.sort(parts[k]))
            beta = fit_semisup(fam, train, unlabeled, noise, a, config).beta_hat
            fold_scores.append(_score(fam, held, beta))
        scores[a] = float(np.mean(fold_scores))
    best = max(grid, key=lambda a: (scores[a], -a))
    return AlphaSelection(best, scores)
