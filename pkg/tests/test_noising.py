import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from noisereg.data import Dataset, SparseVector
from noisereg.glm import GlmFamily, dataset_nll_grad
from noisereg.noising import (
    EnumerationCapacityError,
    NoisedCopies,
    NoiseModel,
    draw_noised,
    exact_penalty,
    gaussian_logistic_penalty,
    linearization_variance,
    mc_noised_objective,
    mc_penalty,
    quad_penalty,
    quad_penalty_grad,
    quad_penalty_matrix_form,
)

from .conftest import central_diff, random_dataset, rel_err

NOISES = [NoiseModel.dropout(0.3), NoiseModel.additive(0.5)]


def brute_dropout_penalty(family, X, beta, delta):
    """Independent enumeration over every keep/drop pattern of each row."""
    fam = GlmFamily(family)
    total = 0.0
    for x in X:
        nz = np.flatnonzero(x)
        for keep in itertools.product([0, 1], repeat=nz.size):
            keep = np.array(keep)
            prob = np.prod(np.where(keep == 1, 1 - delta, delta))
            xt = np.zeros_like(x)
            xt[nz] = x[nz] * keep / (1 - delta)
            total += prob * fam.A(xt @ beta)
        total -= fam.A(x @ beta)
    return total


def quad_gaussian_excess(mu, s2):
    f = lambda t: np.logaddexp(0, mu + np.sqrt(s2) * t) * np.exp(-t * t / 2) / np.sqrt(2 * np.pi)
    return integrate.quad(f, -np.inf, np.inf, epsabs=1e-13, epsrel=1e-13)[0] - np.logaddexp(0, mu)


# ---------------------------------------------------------------- noise model


def test_noise_model_validation():
    with pytest.raises(ValueError):
        NoiseModel.dropout(1.0)
    with pytest.raises(ValueError):
        NoiseModel.dropout(-0.1)
    with pytest.raises(ValueError):
        NoiseModel.additive(-1.0)
    assert NoiseModel.dropout(0).is_identity and NoiseModel.additive(0).is_identity


def test_draw_noised_identity():
    x = SparseVector.from_dense([1.0, 0.0, -2.5])
    assert draw_noised(x, NoiseModel.dropout(0.0), 3) == x
    assert draw_noised(x, NoiseModel.additive(0.0), 3) == x


def test_draw_noised_deterministic_and_mean_preserving():
    x = SparseVector.from_dense([1.0, 2.0])
    noise = NoiseModel.dropout(0.5)
    assert draw_noised(x, noise, 11) == draw_noised(x, noise, 11)
    seeds = np.random.SeedSequence(0).spawn(100000)
    total = np.zeros(2)
    for s in seeds:
        total += draw_noised(x, noise, s).to_dense()
    mean = total / len(seeds)
    assert np.all(np.abs(mean / x.to_dense() - 1) < 0.02)


def test_draw_noised_dropout_values():
    x = SparseVector.from_dense([1.0, 2.0, 3.0])
    xt = draw_noised(x, NoiseModel.dropout(0.75), 5)
    assert set(np.round(xt.values / x.to_dense()[xt.indices], 12)) <= {4.0}


def test_draw_noised_additive_densifies():
    x = SparseVector.from_dense([0.0, 0.0, 1.0, 0.0])
    assert draw_noised(x, NoiseModel.additive(1.0), 2).nnz == 4


# ---------------------------------------------------------------- exact penalty


def test_exact_penalty_enumeration_example():
    data = Dataset.from_dense([[1.0]], [1.0])
    r = exact_penalty("logistic", data, np.array([1.0]), NoiseModel.dropout(0.5))
    expected = 0.5 * (np.log1p(np.exp(2)) + np.log(2)) - np.log1p(np.e)
    assert r.method == "enumeration"
    assert r.value == pytest.approx(0.096776, abs=1e-6)
    assert r.value == pytest.approx(expected, abs=1e-14)


@pytest.mark.parametrize("family", ["logistic", "poisson", "linear"])
def test_exact_dropout_matches_brute_force(family, rng):
    data = random_dataset(rng, 6, 5, family, density=0.7, scale=0.5)
    beta = 0.5 * rng.standard_normal(5)
    r = exact_penalty(family, data, beta, NoiseModel.dropout(0.4))
    assert r.value == pytest.approx(brute_dropout_penalty(family, data.X.toarray(), beta, 0.4), abs=1e-12)


def test_exact_additive_logistic_matches_adaptive_quadrature(rng):
    data = random_dataset(rng, 5, 3)
    beta = rng.standard_normal(3)
    s2 = 0.7 * beta @ beta
    expected = sum(quad_gaussian_excess(mu, s2) for mu in data.X @ beta)
    r = exact_penalty("logistic", data, beta, NoiseModel.additive(0.7))
    assert r.method == "quadrature"
    assert r.value == pytest.approx(expected, abs=1e-10)


def test_exact_additive_poisson_closed_form(rng):
    data = random_dataset(rng, 5, 3, "poisson", scale=0.3)
    beta = 0.5 * rng.standard_normal(3)
    z = data.X @ beta
    expected = np.sum(np.exp(z) * (np.exp(0.25 * beta @ beta) - 1))
    assert exact_penalty("poisson", data, beta, NoiseModel.additive(0.5)).value == pytest.approx(expected, rel=1e-12)


def test_linear_additive_is_ridge(rng):
    for _ in range(20):
        n, d = rng.integers(1, 30), rng.integers(1, 10)
        data = random_dataset(rng, n, d, "linear")
        beta = rng.standard_normal(d)
        s2 = rng.uniform(0, 3)
        ridge = 0.5 * s2 * n * (beta @ beta)
        noise = NoiseModel.additive(s2)
        assert abs(exact_penalty("linear", data, beta, noise).value - ridge) <= 1e-10 * max(1, ridge)
        assert abs(quad_penalty("linear", data, beta, noise).value - ridge) <= 1e-10 * max(1, ridge)


@pytest.mark.parametrize("noise", NOISES)
@pytest.mark.parametrize("family", list(GlmFamily))
def test_exact_penalty_zero_at_zero_beta(family, noise, rng):
    data = random_dataset(rng, 4, 3, family.value)
    assert exact_penalty(family, data, np.zeros(3), noise).value == 0.0
    assert quad_penalty(family, data, np.zeros(3), noise).value == 0.0


def test_exact_penalty_capacity_error():
    data = Dataset.from_dense(np.ones((1, 21)), [1.0])
    with pytest.raises(EnumerationCapacityError, match="mc_noised_objective"):
        exact_penalty("logistic", data, np.ones(21) * 0.1, NoiseModel.dropout(0.5))


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.floats(-3, 3), min_size=1, max_size=6),
    st.lists(st.floats(-2, 2), min_size=6, max_size=6),
    st.floats(0.0, 0.95),
    st.sampled_from(["dropout", "additive"]),
)
def test_exact_penalty_non_negative(xs, bs, param, kind):
    x = np.array(xs)
    beta = np.array(bs[: x.size])
    data = Dataset.from_dense(x[None, :], [1.0])
    assert exact_penalty("logistic", data, beta, NoiseModel(kind, param)).value >= -1e-10


@pytest.mark.parametrize("family", ["logistic", "poisson"])
@pytest.mark.parametrize("noise", NOISES)
def test_penalties_label_independent(family, noise, rng):
    data = random_dataset(rng, 8, 4, family, scale=0.4)
    permuted = data.with_labels(rng.permutation(data.y))
    beta = 0.5 * rng.standard_normal(4)
    for fn in (exact_penalty, quad_penalty):
        assert fn(family, data, beta, noise).value == fn(family, permuted, beta, noise).value


# ---------------------------------------------------------------- Monte Carlo


def test_mc_identity_noise_is_clean_nll(rng):
    data = random_dataset(rng, 5, 3)
    beta = rng.standard_normal(3)
    mc = mc_noised_objective("logistic", data, beta, NoiseModel.dropout(0.0), 10, seed=1)
    assert mc == pytest.approx(dataset_nll_grad("logistic", data, beta)[0], abs=1e-12)


def test_mc_deterministic(rng):
    data = random_dataset(rng, 5, 3)
    beta = rng.standard_normal(3)
    noise = NoiseModel.dropout(0.5)
    assert mc_noised_objective("logistic", data, beta, noise, 500, 9) == mc_noised_objective(
        "logistic", data, beta, noise, 500, 9
    )


def test_mc_row_order_independent(rng):
    data = random_dataset(rng, 6, 3)
    beta = rng.standard_normal(3)
    noise = NoiseModel.dropout(0.5)
    copies = NoisedCopies(data.X, noise, 300, 4)
    clean = data.X @ beta
    fam = GlmFamily.LOGISTIC
    # each row owns its stream: visiting rows backwards gives the same draws
    backwards = sum(np.mean(fam.A(copies.margins(i, beta)) - fam.A(clean[i])) for i in reversed(range(3)))
    head = mc_penalty("logistic", data.subset([0, 1, 2]), beta, noise, 300, 4).value
    assert head == pytest.approx(backwards, abs=1e-12)


def test_mc_matches_enumeration_d8():
    rng = np.random.default_rng(8)
    data = random_dataset(rng, 5, 8)
    beta = 0.5 * rng.standard_normal(8)
    noise = NoiseModel.dropout(0.5)
    mc = mc_penalty("logistic", data, beta, noise, 200000, seed=3)
    clean, _ = dataset_nll_grad("logistic", data, beta)
    exact = exact_penalty("logistic", data, beta, noise).value
    assert abs(mc.value - exact) <= 3 * mc.stderr
    losses = NoisedCopies(data.X, noise, 200000, 3).per_sample_losses("logistic", data.y, beta)
    obj = mc_noised_objective("logistic", data, beta, noise, 200000, seed=3)
    assert obj == pytest.approx(np.mean(losses), abs=1e-9)
    assert abs(obj - (clean + exact)) <= 3 * np.std(losses, ddof=1) / np.sqrt(losses.size)


def test_mc_additive_matches_quadrature(rng):
    data = random_dataset(rng, 4, 3)
    beta = 0.5 * rng.standard_normal(3)
    noise = NoiseModel.additive(0.5)
    mc = mc_penalty("logistic", data, beta, noise, 100000, seed=5)
    assert abs(mc.value - exact_penalty("logistic", data, beta, noise).value) <= 3 * mc.stderr


# ---------------------------------------------------------------- surrogate


def test_linearization_variance_examples():
    x = SparseVector.from_dense([1.0, 2.0])
    assert linearization_variance(x, np.array([1.0, 2.0]), NoiseModel.additive(4.0)) == 20.0
    assert linearization_variance(x, np.array([1.0, 1.0]), NoiseModel.dropout(0.5)) == 5.0
    assert linearization_variance(x, np.array([3.0, 1.0]), NoiseModel.dropout(0.0)) == 0.0


def test_linearization_variance_matches_sampling():
    x = np.array([1.0, 2.0])
    beta = np.array([1.0, 1.0])
    rng = np.random.default_rng(0)
    keep = rng.random((1_000_000, 2)) >= 0.5
    z = (keep * x / 0.5) @ beta
    assert np.var(z) == pytest.approx(5.0, rel=0.01)


def test_quad_penalty_examples():
    data = Dataset.from_dense(np.ones((3, 2)), [0.0, 1.0, 2.0])
    assert quad_penalty("linear", data, np.ones(2), NoiseModel.additive(1.0)).value == pytest.approx(3.0)
    one = Dataset.from_dense([[1.0, 1.0]], [1.0])
    p = 1 / (1 + np.exp(-1.0))
    value = quad_penalty("logistic", one, np.array([1.0, 0.0]), NoiseModel.dropout(0.5)).value
    assert value == pytest.approx(0.098305, abs=1e-6)
    assert value == pytest.approx(0.5 * p * (1 - p), abs=1e-15)


def test_quad_penalty_forms_agree(rng):
    data = random_dataset(rng, 12, 5, density=0.6)
    beta = rng.standard_normal(5)
    noise = NoiseModel.dropout(0.3)
    X = data.X.toarray()
    p = 1 / (1 + np.exp(-X @ beta))
    eq13 = 0.5 * (0.3 / 0.7) * np.sum(p * (1 - p) * ((X**2) @ beta**2))
    assert quad_penalty("logistic", data, beta, noise).value == pytest.approx(eq13, rel=1e-12)
    assert quad_penalty_matrix_form("logistic", data, beta, noise) == pytest.approx(eq13, rel=1e-12)
    additive = quad_penalty("logistic", data, beta, NoiseModel.additive(0.8)).value
    assert additive == pytest.approx(0.5 * 0.8 * (beta @ beta) * np.sum(p * (1 - p)), rel=1e-12)


@pytest.mark.parametrize("noise", NOISES)
def test_linear_surrogate_is_exact(noise, rng):
    data = random_dataset(rng, 7, 4, "linear", density=0.8)
    beta = rng.standard_normal(4)
    assert abs(quad_penalty("linear", data, beta, noise).value - exact_penalty("linear", data, beta, noise).value) <= 1e-10


def test_linear_additive_gradient_closed_form(rng):
    data = random_dataset(rng, 9, 4, "linear")
    beta = rng.standard_normal(4)
    np.testing.assert_allclose(quad_penalty_grad("linear", data, beta, NoiseModel.additive(2.0)), 2.0 * 9 * beta)


@pytest.mark.parametrize("noise", NOISES)
@pytest.mark.parametrize("family", list(GlmFamily))
def test_quad_penalty_grad_finite_differences(family, noise):
    rng = np.random.default_rng(6)
    data = random_dataset(rng, 15, 6, family.value, density=0.7, scale=0.5)
    beta = 0.5 * rng.standard_normal(6)
    fd = central_diff(lambda b: quad_penalty(family, data, b, noise).value, beta)
    assert rel_err(quad_penalty_grad(family, data, beta, noise), fd) < 1e-5


def test_quad_penalty_grad_zero_at_origin(rng):
    data = random_dataset(rng, 5, 3)
    assert np.all(quad_penalty_grad("logistic", data, np.zeros(3), NoiseModel.dropout(0.5)) == 0)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 10) | st.floats(-10, -0.1), st.integers(0, 3))
def test_dropout_surrogate_scaling_identity(c, j):
    rng = np.random.default_rng(1)
    X = rng.standard_normal((6, 4))
    beta = rng.standard_normal(4)
    Xs, bs = X.copy(), beta.copy()
    Xs[:, j] *= c
    bs[j] /= c
    noise = NoiseModel.dropout(0.4)
    a = quad_penalty("logistic", Dataset.from_dense(X, np.zeros(6)), beta, noise).value
    b = quad_penalty("logistic", Dataset.from_dense(Xs, np.zeros(6)), bs, noise).value
    assert b == pytest.approx(a, rel=1e-10)


def test_surrogate_within_15_percent_of_exact_when_margins_small(rng):
    checked = 0
    while checked < 10:
        data = random_dataset(rng, 10, 8, density=0.5)
        beta = 0.4 * rng.standard_normal(8)
        if np.max(np.abs(data.X @ beta)) > 2:
            continue
        noise = NoiseModel.dropout(0.5)
        q, e = quad_penalty("logistic", data, beta, noise).value, exact_penalty("logistic", data, beta, noise).value
        assert abs(q - e) <= 0.15 * e
        checked += 1


# ---------------------------------------------------------------- Gaussian logistic penalty


def test_gaussian_logistic_penalty_examples():
    assert gaussian_logistic_penalty(0.3, 0.0) == (0.0, 0.0)
    exact, quad = gaussian_logistic_penalty(0.5, 1.0)
    assert quad == 0.125
    assert quad > exact
    assert exact == pytest.approx(quad_gaussian_excess(0.0, 1.0), abs=1e-10)


@pytest.mark.parametrize("p", [0.05, 0.2, 0.5, 0.7, 0.95])
@pytest.mark.parametrize("s2", [0.25, 1.0, 4.0])
def test_gaussian_logistic_penalty_matches_adaptive_quadrature(p, s2):
    exact, _ = gaussian_logistic_penalty(p, s2)
    # 50 nodes lose a few 1e-10 once the kink of log(1 + e^z) spans several nodes
    tol = 1e-10 if s2 <= 1 else 1e-9
    assert exact == pytest.approx(quad_gaussian_excess(np.log(p / (1 - p)), s2), abs=tol)
    assert gaussian_logistic_penalty(p, s2, nodes=200)[0] == pytest.approx(exact, abs=tol)


@given(st.floats(0.01, 0.99), st.floats(0, 5))
def test_gaussian_logistic_penalty_symmetric(p, s2):
    a, b = gaussian_logistic_penalty(p, s2), gaussian_logistic_penalty(1 - p, s2)
    assert a[0] == pytest.approx(b[0], abs=1e-12)
    assert a[1] == pytest.approx(b[1], abs=1e-12)


def test_gaussian_logistic_sign_pattern():
    for s2 in (0.25, 1.0, 4.0):
        exact, quad = gaussian_logistic_penalty(0.5, s2)
        assert quad >= exact
    exact, quad = gaussian_logistic_penalty(0.95, 4.0)
    assert quad <= exact
