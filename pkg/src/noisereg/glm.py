"""Exponential-family GLMs with natural parameter ``z = x . beta``.

The per-example loss is ``-y z + A(z)``: the negative log-likelihood with
the beta-independent ``-log h(y)`` term dropped. Logistic labels are
``{0, 1}``.
"""

from __future__ import annotations

import math
from enum import Enum

import numpy as np
from scipy.special import expit

from .data import Dataset, SparseVector

POISSON_MAX_Z = 30.0


class PartitionRangeError(ArithmeticError):
    """Natural parameter beyond the Poisson overflow guard."""


class GlmFamily(str, Enum):
    LINEAR = "linear"
    LOGISTIC = "logistic"
    POISSON = "poisson"

    def A(self, z):
        """Log-partition function, vectorized."""
        z = np.asarray(z, dtype=float)
        if self is GlmFamily.LINEAR:
            return 0.5 * z * z
        if self is GlmFamily.LOGISTIC:
            return np.logaddexp(0.0, z)
        return np.exp(_poisson_guard(z))

    def mean(self, z):
        """A'(z)."""
        z = np.asarray(z, dtype=float)
        if self is GlmFamily.LINEAR:
            return z.copy()
        if self is GlmFamily.LOGISTIC:
            return expit(z)
        return np.exp(_poisson_guard(z))

    def variance(self, z):
        """A''(z)."""
        z = np.asarray(z, dtype=float)
        if self is GlmFamily.LINEAR:
            return np.ones_like(z)
        if self is GlmFamily.LOGISTIC:
            p = expit(z)
            return p * (1.0 - p)
        return np.exp(_poisson_guard(z))

    def third(self, z):
        """A'''(z)."""
        z = np.asarray(z, dtype=float)
        if self is GlmFamily.LINEAR:
            return np.zeros_like(z)
        if self is GlmFamily.LOGISTIC:
            p = expit(z)
            return p * (1.0 - p) * (1.0 - 2.0 * p)
        return np.exp(_poisson_guard(z))

    def check_labels(self, y) -> None:
        y = np.asarray(y, dtype=float)
        if self is GlmFamily.LOGISTIC and not np.all((y == 0) | (y == 1)):
            raise ValueError("logistic labels must be 0 or 1")
        if self is GlmFamily.POISSON and not np.all((y >= 0) & (y == np.floor(y))):
            raise ValueError("poisson labels must be non-negative integers")
        if not np.all(np.isfinite(y)):
            raise ValueError("labels must be finite")


def _poisson_guard(z: np.ndarray) -> np.ndarray:
    if np.any(z > POISSON_MAX_Z):
        worst = float(np.max(z))
        raise PartitionRangeError(f"poisson natural parameter z={worst:g} exceeds guard {POISSON_MAX_Z:g}")
    return z


def as_family(family) -> GlmFamily:
    return family if isinstance(family, GlmFamily) else GlmFamily(family)


def partition_derivatives(family, z: float) -> tuple[float, float, float, float]:
    """Return ``(A(z), A'(z), A''(z), A'''(z))``."""
    fam = as_family(family)
    if not math.isfinite(z):
        raise ValueError(f"z must be finite, got {z}")
    return float(fam.A(z)), float(fam.mean(z)), float(fam.variance(z)), float(fam.third(z))


def _check_beta(beta, dim: int) -> np.ndarray:
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (dim,):
        raise ValueError(f"dimension mismatch: data has d={dim}, beta has shape {beta.shape}")
    return beta


def example_loss(family, x: SparseVector, y: float, beta) -> float:
    fam = as_family(family)
    fam.check_labels([y])
    z = x.dot(beta)
    return float(-y * z + fam.A(z))


def dataset_nll_grad(family, data: Dataset, beta) -> tuple[float, np.ndarray]:
    """Summed loss over the dataset and its gradient ``X^T (A'(X beta) - y)``."""
    fam = as_family(family)
    if data.n == 0:
        raise ValueError("empty dataset")
    beta = _check_beta(beta, data.dim)
    z = data.X @ beta
    value = float(np.sum(fam.A(z) - data.y * z))
    grad = data.X.T @ (fam.mean(z) - data.y)
    return value, np.asarray(grad).ravel()


def predict(family, x: SparseVector, beta) -> tuple[float, float]:
    """Clean-feature prediction: ``(A'(z), point label)``.

    Logistic ties at mean 0.5 go to label 1; Poisson uses ``floor(mean)``.
    """
    fam = as_family(family)
    mean = float(fam.mean(x.dot(beta)))
    if fam is GlmFamily.LOGISTIC:
        return mean, 1.0 if mean >= 0.5 else 0.0
    if fam is GlmFamily.POISSON:
        return mean, float(math.floor(mean))
    return mean, mean


def predict_dataset(family, X, beta) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`predict` over the rows of ``X``."""
    fam = as_family(family)
    mean = fam.mean(X @ np.asarray(beta, dtype=float))
    if fam is GlmFamily.LOGISTIC:
        return mean, (mean >= 0.5).astype(float)
    if fam is GlmFamily.POISSON:
        return mean, np.floor(mean)
    return mean, mean.copy()


def fisher_diagonals(family, data: Dataset, beta) -> tuple[np.ndarray, np.ndarray]:
    """Diagonals of the summed Hessian and of the summed gradient outer products."""
    fam = as_family(family)
    if data.n == 0:
        raise ValueError("empty dataset")
    beta = _check_beta(beta, data.dim)
    z = data.X @ beta
    X2 = data.X.multiply(data.X).tocsr()
    diag_h = np.asarray(X2.T @ fam.variance(z)).ravel()
    diag_g = np.asarray(X2.T @ (fam.mean(z) - data.y) ** 2).ravel()
    return diag_h, diag_g
