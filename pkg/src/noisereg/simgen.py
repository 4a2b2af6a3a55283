"""Synthetic data: the rare-feature simulation and smaller logistic tasks.

Rare-feature design: ``discriminative_groups`` groups of ``group_size``
signal features plus ``nuisance`` always-on N(0, 1) features. Row ``i``
gets group ``g = i mod n_groups + 1`` (rows cycle deterministically); if
``g`` is a signal group, its features are ``sign * Exponential`` draws and
all other signal features are zero. The exponential rate is chosen so every
signal column has marginal second moment 1, matching the nuisance columns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .data import Dataset, UnlabeledSet


@dataclass(frozen=True)
class SimConfig:
    n: int = 75
    n_groups: int = 25
    discriminative_groups: int = 5
    group_size: int = 10
    nuisance: int = 1000
    beta_signal: float = 0.057
    seed: int = 0

    @property
    def n_signal(self) -> int:
        return self.discriminative_groups * self.group_size

    @property
    def dim(self) -> int:
        return self.n_signal + self.nuisance

    @property
    def exponential_rate(self) -> float:
        # conditional E[x^2] = 2 / rate^2, active in 1 / n_groups of rows
        return math.sqrt(2.0 / self.n_groups)


def true_beta(config: SimConfig) -> np.ndarray:
    beta = np.zeros(config.dim)
    beta[: config.n_signal] = config.beta_signal
    return beta


def generate_rare_feature_dataset(config: SimConfig) -> tuple[Dataset, np.ndarray, np.ndarray]:
    """Return ``(data, true_beta, signal_mask)``."""
    rng = np.random.default_rng(config.seed)
    n, k = config.n, config.group_size
    groups = np.arange(n) % config.n_groups  # 0-based g - 1
    signs = rng.choice(np.array([-1.0, 1.0]), size=n)
    magnitudes = rng.exponential(1.0 / config.exponential_rate, size=(n, k))
    nuisance = rng.standard_normal((n, config.nuisance))
    signal_mask = groups < config.discriminative_groups

    signal = np.zeros((n, config.n_signal))
    rows = np.flatnonzero(signal_mask)
    cols = groups[rows, None] * k + np.arange(k)
    signal[rows[:, None], cols] = signs[rows, None] * magnitudes[rows]

    X = sp.hstack([sp.csr_matrix(signal), sp.csr_matrix(nuisance)], format="csr")
    beta = true_beta(config)
    p = expit(X @ beta)
    y = (rng.random(n) < p).astype(float)
    return Dataset(X, y), beta, signal_mask


# --------------------------------------------------------------------------
# smaller logistic tasks
# --------------------------------------------------------------------------


def make_fisher_stream(n: int, seed: int, dense: int = 12, rare: int = 6, rare_rate: float = 0.05,
                       inactive: int = 1) -> tuple[Dataset, np.ndarray]:
    """Logistic stream with ``dense`` Gaussian columns, ``rare`` columns active
    at ``rare_rate``, and ``inactive`` all-zero columns (in that order)."""
    rng = np.random.default_rng(seed)
    X = np.zeros((n, dense + rare + inactive))
    X[:, :dense] = rng.standard_normal((n, dense))
    X[:, dense:dense + rare] = rng.standard_normal((n, rare)) * (rng.random((n, rare)) < rare_rate)
    beta = np.zeros(X.shape[1])
    beta[:dense] = rng.standard_normal(dense) * 2.0 / math.sqrt(dense)
    beta[dense:dense + rare] = rng.standard_normal(rare)
    y = (rng.random(n) < expit(X @ beta)).astype(float)
    return Dataset(sp.csr_matrix(X), y), beta


def make_logistic_task(n: int, d: int, seed: int, density: float = 1.0, scale: float = 1.0,
                       inactive: int = 0) -> tuple[Dataset, np.ndarray]:
    """Gaussian features (each entry present with prob ``density``) and a
    N(0, scale^2 / (d * density)) true weight vector. The last ``inactive``
    columns are identically zero.
    """
    rng = np.random.default_rng(seed)
    beta = rng.standard_normal(d) * scale / math.sqrt(max(d * density, 1.0))
    X = rng.standard_normal((n, d)) * (rng.random((n, d)) < density)
    if inactive:
        X[:, d - inactive:] = 0.0
        beta[d - inactive:] = 0.0
    y = (rng.random(n) < expit(X @ beta)).astype(float)
    return Dataset(sp.csr_matrix(X), y), beta


@dataclass(frozen=True)
class SemisupTask:
    """Sparse text-like task: ``topics`` clusters of rare indicator features.

    Each row picks one topic; topic ``t`` owns ``words_per_topic`` columns and
    the row switches on each of them with probability ``word_rate``. Half of
    the topics lean positive, half negative (``topic_weight``). A block of
    ``noise_words`` columns fires at rate ``noise_rate`` independently of
    the topic.
    """

    topics: int = 20
    words_per_topic: int = 10
    word_rate: float = 0.3
    topic_weight: float = 1.0
    noise_words: int = 200
    noise_rate: float = 0.02

    @property
    def dim(self) -> int:
        return self.topics * self.words_per_topic + self.noise_words

    def beta(self) -> np.ndarray:
        signs = np.where(np.arange(self.topics) % 2 == 0, 1.0, -1.0)
        beta = np.zeros(self.dim)
        beta[: self.topics * self.words_per_topic] = np.repeat(signs * self.topic_weight, self.words_per_topic)
        return beta

    def sample(self, n: int, rng: np.random.Generator) -> Dataset:
        topic = rng.integers(self.topics, size=n)
        words = (rng.random((n, self.words_per_topic)) < self.word_rate).astype(float)
        X = np.zeros((n, self.dim))
        cols = topic[:, None] * self.words_per_topic + np.arange(self.words_per_topic)
        X[np.arange(n)[:, None], cols] = words
        X[:, self.topics * self.words_per_topic:] = rng.random((n, self.noise_words)) < self.noise_rate
        y = (rng.random(n) < expit(X @ self.beta())).astype(float)
        return Dataset(sp.csr_matrix(X), y)


def semisup_split(task: SemisupTask, n: int, m: int, n_test: int, seed: int) -> tuple[Dataset, UnlabeledSet, Dataset]:
    """Labelled, unlabelled and test draws from one seeded stream."""
    rng = np.random.default_rng(seed)
    labeled = task.sample(n, rng)
    unlabeled = UnlabeledSet.from_dataset(task.sample(m, rng))
    test = task.sample(n_test, rng)
    return labeled, unlabeled, test
