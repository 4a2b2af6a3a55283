"""Feature-noising penalties for GLMs.

For a noise model with ``E[x_tilde] = x`` the expected noised loss splits
into the clean loss plus a label-free penalty

    R(beta) = sum_i E[A(x_tilde_i . beta)] - A(x_i . beta),

which is computed here exactly (dropout by enumerating keep/drop patterns
on each row's support, additive noise by Gauss-Hermite quadrature over the
scalar ``x_tilde . beta``), by Monte Carlo, or through the second-order
surrogate ``R_q = 1/2 sum_i A''(x_i . beta) Var[x_tilde_i . beta]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .data import Dataset, SparseVector
from .glm import GlmFamily, as_family

DEFAULT_QUADRATURE_NODES = 50
MAX_ENUMERATION_SUPPORT = 20


class EnumerationCapacityError(ValueError):
    """Row support too large for exact dropout enumeration."""


@dataclass(frozen=True)
class NoiseModel:
    """``kind`` is ``"dropout"`` (param = delta) or ``"additive"`` (param = sigma^2)."""

    kind: str
    param: float

    def __post_init__(self):
        if self.kind == "dropout":
            if not 0.0 <= self.param < 1.0:
                raise ValueError(f"dropout delta must lie in [0, 1), got {self.param}")
        elif self.kind == "additive":
            if not self.param >= 0.0:
                raise ValueError(f"additive sigma2 must be non-negative, got {self.param}")
        else:
            raise ValueError(f"unknown noise kind {self.kind!r}")
        object.__setattr__(self, "param", float(self.param))

    @classmethod
    def dropout(cls, delta: float) -> NoiseModel:
        return cls("dropout", delta)

    @classmethod
    def additive(cls, sigma2: float) -> NoiseModel:
        return cls("additive", sigma2)

    @property
    def is_identity(self) -> bool:
        return self.param == 0.0

    @property
    def dropout_ratio(self) -> float:
        """delta / (1 - delta)."""
        return self.param / (1.0 - self.param)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "param": self.param}


@dataclass(frozen=True)
class PenaltyValue:
    value: float
    method: str
    stderr: float = 0.0

    def __float__(self) -> float:
        return self.value


def _rows(data) -> sp.csr_matrix:
    return data.X if hasattr(data, "X") else sp.csr_matrix(data)


# --------------------------------------------------------------------------
# sampling
# --------------------------------------------------------------------------


def example_rng(seed: int, i: int) -> np.random.Generator:
    """Generator for row ``i`` under master ``seed``.

    Sample ``s`` of row ``i`` is the ``s``-th draw of this stream, so Monte
    Carlo results do not depend on the order in which rows are visited.
    """
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(i,)))


def draw_noised(x: SparseVector, noise: NoiseModel, seed) -> SparseVector:
    """One noised copy of ``x``. Additive noise touches all ``d`` coordinates."""
    if noise.is_identity:
        return x
    rng = np.random.default_rng(seed)
    if noise.kind == "dropout":
        keep = rng.random(x.nnz) >= noise.param
        return SparseVector(x.indices[keep], x.values[keep] / (1.0 - noise.param), x.dim)
    dense = x.to_dense() + np.sqrt(noise.param) * rng.standard_normal(x.dim)
    return SparseVector.from_dense(dense)


class NoisedCopies:
    """A fixed set of ``samples`` noised copies of every row.

    Freezing the draws turns the Monte Carlo objective into a deterministic
    function of ``beta``. Dropout copies are stored as keep-masks on each
    row's support; additive copies store the full d-dimensional noise.
    """

    def __init__(self, X, noise: NoiseModel, samples: int, seed: int):
        if samples < 1:
            raise ValueError("samples must be >= 1")
        self.X = sp.csr_matrix(X)
        self.noise = noise
        self.samples = samples
        self.seed = seed
        self._draws = []
        for i in range(self.X.shape[0]):
            rng = example_rng(seed, i)
            if noise.kind == "dropout":
                k = self.X.indptr[i + 1] - self.X.indptr[i]
                self._draws.append(rng.random((samples, k)) >= noise.param)
            else:
                self._draws.append(rng.standard_normal((samples, self.X.shape[1])))

    def margins(self, i: int, beta: np.ndarray) -> np.ndarray:
        """``x_tilde_is . beta`` for all samples ``s`` of row ``i``."""
        lo, hi = self.X.indptr[i], self.X.indptr[i + 1]
        cols, vals = self.X.indices[lo:hi], self.X.data[lo:hi]
        clean = vals @ beta[cols]
        if self.noise.kind == "dropout":
            if self.noise.is_identity:
                return np.full(self.samples, clean)
            w = vals * beta[cols] / (1.0 - self.noise.param)
            return self._draws[i] @ w
        return clean + np.sqrt(self.noise.param) * (self._draws[i] @ beta)

    def noised_gradient(self, i: int, resid: np.ndarray) -> np.ndarray:
        """``sum_s resid_s * x_tilde_is`` as a dense d-vector."""
        lo, hi = self.X.indptr[i], self.X.indptr[i + 1]
        cols, vals = self.X.indices[lo:hi], self.X.data[lo:hi]
        out = np.zeros(self.X.shape[1])
        if self.noise.kind == "dropout":
            if self.noise.is_identity:
                out[cols] = vals * resid.sum()
            else:
                out[cols] = (resid @ self._draws[i]) * vals / (1.0 - self.noise.param)
            return out
        out[cols] = vals * resid.sum()
        out += np.sqrt(self.noise.param) * (resid @ self._draws[i])
        return out

    def per_sample_losses(self, family, y, beta) -> np.ndarray:
        """Total noised loss over rows, one entry per sample index."""
        fam = as_family(family)
        totals = np.zeros(self.samples)
        for i in range(self.X.shape[0]):
            z = self.margins(i, beta)
            totals += fam.A(z) - y[i] * z
        return totals

    def per_sample_penalties(self, family, beta) -> np.ndarray:
        fam = as_family(family)
        clean = self.X @ beta
        totals = np.zeros(self.samples)
        for i in range(self.X.shape[0]):
            totals += fam.A(self.margins(i, beta)) - fam.A(clean[i])
        return totals

    def objective_grad(self, family, y, beta) -> tuple[float, np.ndarray]:
        """Sample-average noised loss and its gradient."""
        fam = as_family(family)
        value = 0.0
        grad = np.zeros(self.X.shape[1])
        for i in range(self.X.shape[0]):
            z = self.margins(i, beta)
            value += float(np.sum(fam.A(z) - y[i] * z))
            grad += self.noised_gradient(i, fam.mean(z) - y[i])
        return value / self.samples, grad / self.samples


def mc_noised_objective(family, data: Dataset, beta, noise: NoiseModel, samples: int, seed: int) -> float:
    """Monte Carlo estimate of ``sum_i E[loss(x_tilde_i, y_i)]``."""
    beta = np.asarray(beta, dtype=float)
    copies = NoisedCopies(data.X, noise, samples, seed)
    return float(np.mean(copies.per_sample_losses(family, data.y, beta)))


def mc_penalty(family, data, beta, noise: NoiseModel, samples: int, seed: int) -> PenaltyValue:
    """Monte Carlo estimate of R with its standard error over samples."""
    beta = np.asarray(beta, dtype=float)
    totals = NoisedCopies(_rows(data), noise, samples, seed).per_sample_penalties(family, beta)
    stderr = float(np.std(totals, ddof=1) / np.sqrt(samples)) if samples > 1 else float("nan")
    return PenaltyValue(float(np.mean(totals)), "monte_carlo", stderr)


# --------------------------------------------------------------------------
# exact penalty
# --------------------------------------------------------------------------


@lru_cache(maxsize=8)
def gauss_hermite(nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights for ``E[f(Z)] ~ sum_k w_k f(t_k)``, Z ~ N(0, 1)."""
    t, w = np.polynomial.hermite.hermgauss(nodes)
    return np.sqrt(2.0) * t, w / np.sqrt(np.pi)


def gaussian_expected_excess(family, mu, s2: float, nodes: int = DEFAULT_QUADRATURE_NODES) -> np.ndarray:
    """``E[A(mu + s Z)] - A(mu)`` for Z ~ N(0, 1), elementwise in ``mu``."""
    fam = as_family(family)
    mu = np.asarray(mu, dtype=float)
    if s2 == 0.0:
        return np.zeros_like(mu)
    if fam is GlmFamily.POISSON:
        # log-normal moment
        return np.exp(mu) * np.expm1(0.5 * s2)
    t, w = gauss_hermite(nodes)
    shifted = fam.A(mu[..., None] + np.sqrt(s2) * t)
    return (shifted - fam.A(mu)[..., None]) @ w


def _dropout_row_expectation(fam: GlmFamily, contrib: np.ndarray, delta: float) -> float:
    """E[A(sum_j keep_j * contrib_j)] - A(sum_j contrib_j) by pattern enumeration.

    ``contrib`` already carries the 1/(1-delta) scale.
    """
    z = np.zeros(1)
    prob = np.ones(1)
    for c in contrib:
        z = np.concatenate([z, z + c])
        prob = np.concatenate([prob * delta, prob * (1.0 - delta)])
    clean = fam.A(np.array([contrib.sum() * (1.0 - delta)]))[0]
    return float(prob @ (fam.A(z) - clean))


def exact_penalty(family, data, beta, noise: NoiseModel, nodes: int = DEFAULT_QUADRATURE_NODES) -> PenaltyValue:
    """R(beta) by dropout-pattern enumeration or Gaussian quadrature."""
    fam = as_family(family)
    X = _rows(data)
    beta = np.asarray(beta, dtype=float)
    if noise.kind == "additive":
        s2 = noise.param * float(beta @ beta)
        excess = gaussian_expected_excess(fam, X @ beta, s2, nodes)
        return PenaltyValue(float(np.sum(excess)), "quadrature")
    if noise.is_identity:
        return PenaltyValue(0.0, "enumeration")
    support = np.diff(X.indptr)
    if support.size and support.max() > MAX_ENUMERATION_SUPPORT:
        raise EnumerationCapacityError(
            f"row support {support.max()} exceeds {MAX_ENUMERATION_SUPPORT}; "
            "use mc_noised_objective / mc_penalty instead"
        )
    scale = 1.0 / (1.0 - noise.param)
    total = 0.0
    for i in range(X.shape[0]):
        lo, hi = X.indptr[i], X.indptr[i + 1]
        contrib = X.data[lo:hi] * beta[X.indices[lo:hi]] * scale
        total += _dropout_row_expectation(fam, contrib, noise.param)
    return PenaltyValue(total, "enumeration")


# --------------------------------------------------------------------------
# quadratic surrogate
# --------------------------------------------------------------------------


def linearization_variance(x: SparseVector, beta, noise: NoiseModel) -> float:
    """Var[x_tilde . beta] under ``noise``."""
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (x.dim,):
        raise ValueError(f"dimension mismatch: x has {x.dim}, beta has {beta.shape}")
    if noise.kind == "additive":
        return noise.param * float(beta @ beta)
    return noise.dropout_ratio * float(np.sum((x.values * beta[x.indices]) ** 2))


def _row_variances(X: sp.csr_matrix, beta: np.ndarray, noise: NoiseModel) -> np.ndarray:
    if noise.kind == "additive":
        return np.full(X.shape[0], noise.param * float(beta @ beta))
    X2 = X.multiply(X).tocsr()
    return noise.dropout_ratio * (X2 @ (beta * beta))


def quad_penalty_value_grad(family, X, beta, noise: NoiseModel) -> tuple[float, np.ndarray]:
    """Value and analytic gradient of R_q over the rows of ``X``."""
    fam = as_family(family)
    X = sp.csr_matrix(X)
    beta = np.asarray(beta, dtype=float)
    if X.shape[0] == 0 or noise.is_identity:
        return 0.0, np.zeros(X.shape[1])
    z = X @ beta
    a2 = fam.variance(z)
    a3 = fam.third(z)
    if noise.kind == "additive":
        sq = float(beta @ beta)
        value = 0.5 * noise.param * sq * float(a2.sum())
        grad = 0.5 * noise.param * (sq * (X.T @ a3) + 2.0 * float(a2.sum()) * beta)
        return value, np.asarray(grad).ravel()
    X2 = X.multiply(X).tocsr()
    row_var = X2 @ (beta * beta)
    c = noise.dropout_ratio
    value = 0.5 * c * float(a2 @ row_var)
    grad = 0.5 * c * (X.T @ (a3 * row_var) + 2.0 * beta * (X2.T @ a2))
    return value, np.asarray(grad).ravel()


def quad_penalty(family, data, beta, noise: NoiseModel) -> PenaltyValue:
    value, _ = quad_penalty_value_grad(family, _rows(data), beta, noise)
    return PenaltyValue(value, "quadratic")


def quad_penalty_grad(family, data, beta, noise: NoiseModel) -> np.ndarray:
    return quad_penalty_value_grad(family, _rows(data), beta, noise)[1]


def quad_penalty_matrix_form(family, data, beta, noise: NoiseModel) -> float:
    """``1/2 c beta^T diag(X^T V X) beta`` for dropout (V = diag A''(X beta))."""
    fam = as_family(family)
    if noise.kind != "dropout":
        raise ValueError("matrix form is defined for dropout noise")
    X = sp.csr_matrix(_rows(data))
    beta = np.asarray(beta, dtype=float)
    V = sp.diags(fam.variance(X @ beta))
    diag = (X.T @ V @ X).diagonal()
    return 0.5 * noise.dropout_ratio * float(beta @ (diag * beta))


def gaussian_logistic_penalty(p: float, sigma2: float, nodes: int = DEFAULT_QUADRATURE_NODES) -> tuple[float, float]:
    """Exact and quadratic logistic penalties when ``x_tilde . beta - x . beta ~ N(0, sigma2)``.

    ``p`` is the clean mean parameter, so the natural parameter is ``logit(p)``.
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    if sigma2 < 0.0:
        raise ValueError("sigma2 must be non-negative")
    mu = np.log(p) - np.log1p(-p)
    exact = float(gaussian_expected_excess(GlmFamily.LOGISTIC, np.array([mu]), sigma2, nodes)[0])
    return exact, 0.5 * p * (1.0 - p) * sigma2
