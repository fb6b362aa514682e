import math

import numpy as np
import pytest

from malm.exceptions import DimensionError, FormatError, IllPosedConstraintError
from malm.numerics import RngStream, smallest_nonzero_eigenvalue
from malm.problems import (
    PHI_PRIME_MAX,
    estimate_smoothness,
    full_gradient,
    generate_quadratic,
    generate_regression,
    load_problem,
    make_quadratic,
    make_regression,
    objective,
    per_sample_gradients,
    save_problem,
    stochastic_gradient,
)


@pytest.fixture(scope="module")
def regression():
    return generate_regression(d=30, N=200, m=5, seed=3)


@pytest.fixture(scope="module")
def quadratic():
    return generate_quadratic(d=12, m=4, condition=10.0, sigma=0.7, seed=5)


def single_sample():
    return make_regression(D=[[1.0, 0.0]], y=[0.0], A=[[0.0, 1.0]], b=[0.0])


def test_generate_regression_shapes_and_feasibility(regression):
    p = regression
    assert (p.d, p.N, p.m) == (30, 200, 5)
    assert np.count_nonzero(p.x_gen) == math.ceil(0.05 * 30)
    np.testing.assert_array_equal(p.b - p.A @ p.x_feas, 0.0)
    assert smallest_nonzero_eigenvalue(p.A) > 0
    assert p.f_lower == 0.0 and p.sigma > 0


def test_generate_regression_is_seeded():
    a = generate_regression(10, 20, 3, seed=1, estimate_noise=False)
    b = generate_regression(10, 20, 3, seed=1, estimate_noise=False)
    c = generate_regression(10, 20, 3, seed=2, estimate_noise=False)
    assert np.array_equal(a.D, b.D) and np.array_equal(a.A, b.A)
    assert not np.array_equal(a.D, c.D)


def test_generate_regression_smallest_instance():
    p = generate_regression(d=2, N=1, m=1, label_noise_std=0.0, seed=0, estimate_noise=False)
    assert objective(p, p.x_gen) == 0.0


@pytest.mark.parametrize("m,d", [(5, 5), (6, 5), (0, 3)])
def test_ill_posed_constraints(m, d):
    with pytest.raises(IllPosedConstraintError):
        generate_regression(d=d, N=10, m=m)
    with pytest.raises(IllPosedConstraintError):
        generate_quadratic(d=d, m=m)


def test_objective_and_gradient_single_sample():
    p = single_sample()
    x = np.array([1.0, 0.0])
    assert objective(p, x) == pytest.approx(1 - math.exp(-1), rel=1e-15)
    assert objective(p, x) == pytest.approx(0.6321206, abs=1e-7)
    np.testing.assert_allclose(full_gradient(p, x), [2 * math.exp(-1), 0.0], rtol=1e-15)
    assert full_gradient(p, x)[0] == pytest.approx(0.7357589, abs=1e-7)
    assert estimate_smoothness(p) == pytest.approx(2.0)


def test_zero_noise_ground_truth_is_minimizer():
    p = generate_regression(d=8, N=40, m=2, label_noise_std=0.0, seed=4, estimate_noise=False)
    assert objective(p, p.x_gen) == 0.0
    np.testing.assert_allclose(full_gradient(p, p.x_gen), 0.0, atol=1e-15)


def test_objective_matches_per_sample_mean(regression):
    x = np.random.default_rng(0).standard_normal(regression.d)
    losses = [1 - math.exp(-(a @ x - yi) ** 2) for a, yi in zip(regression.D, regression.y)]
    assert objective(regression, x) == pytest.approx(sum(losses) / len(losses), abs=1e-12)


def test_gradient_matches_finite_differences(regression, quadratic):
    rng = np.random.default_rng(1)
    h = 1e-5
    for p in (regression, quadratic):
        for _ in range(20):
            x = rng.standard_normal(p.d)
            fd = np.array([(objective(p, x + h * e) - objective(p, x - h * e)) / (2 * h)
                           for e in np.eye(p.d)])
            np.testing.assert_allclose(full_gradient(p, x), fd, atol=1e-6)


def test_per_sample_gradients_average_to_full(regression):
    x = np.random.default_rng(2).standard_normal(regression.d)
    G = per_sample_gradients(regression, x)
    np.testing.assert_allclose(G.mean(axis=0), full_gradient(regression, x), atol=1e-14)


def test_lipschitz_bound_on_random_pairs(regression, quadratic):
    rng = np.random.default_rng(3)
    for p in (regression, quadratic):
        L = estimate_smoothness(p)
        assert L == pytest.approx(p.L, rel=1e-9)
        for _ in range(100):
            x, y = rng.standard_normal(p.d) * 2, rng.standard_normal(p.d) * 2
            gap = np.linalg.norm(full_gradient(p, x) - full_gradient(p, y))
            assert gap <= L * np.linalg.norm(x - y) + 1e-9


def test_objective_lower_bound(regression):
    rng = np.random.default_rng(4)
    vals = [objective(regression, rng.standard_normal(regression.d) * s) for s in (0.1, 1, 10)
            for _ in range(20)]
    assert min(vals) >= regression.f_lower - 1e-12
    assert max(vals) < 1.0


def test_quadratic_identity_and_kkt():
    assert estimate_smoothness(make_quadratic(np.eye(3), np.zeros(3), [[1.0, 0, 0]], [0.0])) == 1.0
    p = make_quadratic(np.eye(2), np.zeros(2), [[1.0, 1.0]], [1.0])
    np.testing.assert_allclose(p.x_star, [0.5, 0.5])
    np.testing.assert_allclose(p.mu_star, [-0.5])
    p0 = make_quadratic(np.eye(2), np.zeros(2), [[1.0, 1.0]], [0.0])
    np.testing.assert_allclose(p0.x_star, 0.0, atol=1e-15)
    np.testing.assert_allclose(p0.mu_star, 0.0, atol=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_generated_quadratic_kkt_residuals(seed):
    p = generate_quadratic(20, 5, condition=10, seed=seed)
    ev = np.linalg.eigvalsh(p.Q)
    assert ev[0] == pytest.approx(1.0) and ev[-1] == pytest.approx(10.0)
    assert np.linalg.norm(full_gradient(p, p.x_star) + p.A.T @ p.mu_star) < 1e-10
    assert np.linalg.norm(p.A @ p.x_star - p.b) < 1e-10


def test_noiseless_and_single_sample_oracles_are_exact():
    q = generate_quadratic(6, 2, sigma=0.0, seed=0)
    x = np.ones(6)
    rng = RngStream(0)
    s = stochastic_gradient(q, x, rng)
    assert s.draws_consumed == 1
    np.testing.assert_array_equal(s.value, full_gradient(q, x))
    p = generate_regression(d=4, N=1, m=1, seed=0, estimate_noise=False)
    x = np.random.default_rng(0).standard_normal(4)
    np.testing.assert_allclose(stochastic_gradient(p, x, rng).value, full_gradient(p, x), rtol=1e-15)


def test_oracle_dimension_check(quadratic):
    with pytest.raises(DimensionError):
        stochastic_gradient(quadratic, np.ones(3), RngStream(0))
    with pytest.raises(DimensionError):
        objective(quadratic, np.ones(3))


@pytest.mark.parametrize("family", ["regression", "quadratic"])
def test_unbiased_oracle(family, regression, quadratic):
    p = regression if family == "regression" else quadratic
    rng = RngStream(11)
    x = np.random.default_rng(5).standard_normal(p.d)
    n = 100_000
    G = np.array([stochastic_gradient(p, x, rng).value for _ in range(n)])
    se = G.std(axis=0, ddof=1) / math.sqrt(n)
    dev = np.abs(G.mean(axis=0) - full_gradient(p, x))
    assert np.all(dev <= 4 * se + 1e-15)


def test_oracle_variance_bounds(regression, quadratic):
    rng = RngStream(12)
    pts = np.random.default_rng(6).standard_normal((10, regression.d))
    bound = (PHI_PRIME_MAX * np.linalg.norm(regression.D, axis=1).max()) ** 2
    for x in pts:
        G = per_sample_gradients(regression, x)
        var = np.mean(np.sum((G - G.mean(axis=0)) ** 2, axis=1))
        assert np.isfinite(var) and var <= bound
    x = np.zeros(quadratic.d)
    G = np.array([stochastic_gradient(quadratic, x, rng).value for _ in range(20_000)])
    var = np.mean(np.sum((G - full_gradient(quadratic, x)) ** 2, axis=1))
    assert var == pytest.approx(quadratic.sigma**2, rel=0.05)


@pytest.mark.parametrize("family", ["regression", "quadratic"])
def test_problem_file_round_trip(tmp_path, family, regression, quadratic):
    p = regression if family == "regression" else quadratic
    path = save_problem(p, tmp_path / "p.malmpb")
    assert path.read_bytes().startswith(b"MALMPB1\n")
    q = load_problem(path)
    assert q.family == p.family and q.L == p.L and q.sigma == p.sigma and q.seed == p.seed
    for name in ("A", "b", "D", "y", "x_gen", "Q", "c", "x_star", "mu_star"):
        a, b = getattr(p, name), getattr(q, name)
        assert (a is None) == (b is None)
        if a is not None:
            assert np.array_equal(a, b)


def test_problem_file_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.malmpb"
    bad.write_bytes(b"NOTMALM\n{}\n")
    with pytest.raises(FormatError):
        load_problem(bad)
    p = generate_quadratic(4, 1, seed=0)
    good = save_problem(p, tmp_path / "good.malmpb")
    truncated = tmp_path / "trunc.malmpb"
    truncated.write_bytes(good.read_bytes()[:-8])
    with pytest.raises(FormatError):
        load_problem(truncated)
