import numpy as np
import pytest
from scipy.special import erfc

from glassesbo.acquisitions import expected_loss_1
from glassesbo.global_optimizers import BoxDomain
from glassesbo.gp_surrogate import Dataset, KernelSpec, build_model, predict_diag
from glassesbo.steps_ahead import (
    PenalizerParams,
    estimate_lipschitz,
    lipschitz_floor,
    local_penalizer,
    penalizer_params,
    predict_steps,
    PlanCache,
    predict_steps_cached,
)

from conftest import domain_1d, make_toy_model_1d


# ----------------------------------------------------------- lipschitz


def test_lipschitz_constant_mean_returns_floor():
    # single observation at the prior mean with value 0: posterior mean is
    # identically 0, so only the floor applies
    model = build_model(
        Dataset(np.array([[5.0]]), np.array([0.0])), KernelSpec(1.0, np.array([1.0]), 0.0, 0.0)
    )
    dom = domain_1d()
    assert estimate_lipschitz(model, dom) == lipschitz_floor(model, dom)
    assert estimate_lipschitz(model, dom) > 0.0


def test_lipschitz_linear_mean_recovers_slope():
    # two far-apart observations with a long lengthscale give an
    # approximately linear posterior mean between them
    slope = 0.8
    X = np.array([[0.0], [10.0]])
    y = slope * X[:, 0]
    model = build_model(Dataset(X, y), KernelSpec(100.0, np.array([20.0]), 0.0, 1e-8))
    dom = domain_1d()
    # dense-grid gradient oracle
    grid = np.linspace(0, 10, 2001)[:, None]
    mu = predict_diag(model, grid)[0]
    slope_oracle = np.max(np.abs(np.gradient(mu, grid[:, 0])))
    est = estimate_lipschitz(model, dom)
    assert est == pytest.approx(slope_oracle, rel=0.1)
    assert est == pytest.approx(slope, rel=0.1)


def test_lipschitz_dominates_random_grid():
    model = make_toy_model_1d(seed=21, n_points=8)
    dom = domain_1d()
    est = estimate_lipschitz(model, dom)
    rng = np.random.default_rng(22)
    xs = dom.sample(rng, 1000)
    h = 1e-6
    mu_p = predict_diag(model, xs + h)[0]
    mu_m = predict_diag(model, xs - h)[0]
    fd = np.abs(mu_p - mu_m) / (2 * h)
    assert est >= np.max(fd) * 0.95


# ------------------------------------------------------------ penalizer


def test_penalizer_far_away_is_one():
    p = PenalizerParams(lipschitz=2.0, global_min_estimate=-1.0)
    phi = local_penalizer(np.array([1e9]), np.array([0.0]), 0.5, 0.2, p)
    assert phi == pytest.approx(1.0, abs=1e-12)


def test_penalizer_at_center_half_when_mean_is_min():
    # z = 0 exactly when mu_c equals the global-min estimate at the centre
    p = PenalizerParams(lipschitz=1.0, global_min_estimate=0.5)
    phi = local_penalizer(np.array([0.0]), np.array([0.0]), 0.5, 0.3, p)
    assert phi == pytest.approx(0.5, abs=1e-12)


def test_penalizer_at_center_monte_carlo_cross_check():
    # P(L * ||x-c|| >= f(c) - M) with f(c) ~ N(mu_c, var_c), at x = c
    rng = np.random.default_rng(23)
    p = PenalizerParams(lipschitz=1.0, global_min_estimate=0.5)
    f = rng.normal(0.5, np.sqrt(0.3), size=2_000_000)
    mc = np.mean(0.0 >= f - p.global_min_estimate)
    phi = local_penalizer(np.array([0.0]), np.array([0.0]), 0.5, 0.3, p)
    assert phi == pytest.approx(mc, abs=1e-3)


def test_penalizer_three_sigma_case():
    var_c = 0.4
    mu_c = 3.0 * np.sqrt(2.0 * var_c)  # mu_c - M = 3 sqrt(2 var_c)
    p = PenalizerParams(lipschitz=1.0, global_min_estimate=0.0)
    phi = local_penalizer(np.array([0.0, 0.0]), np.array([0.0, 0.0]), mu_c, var_c, p)
    assert phi == pytest.approx(0.5 * erfc(-3.0), abs=1e-12)
    assert phi == pytest.approx(0.99998, abs=1e-5)


def test_penalizer_in_unit_interval_and_validates():
    p = PenalizerParams(lipschitz=0.5, global_min_estimate=-2.0)
    rng = np.random.default_rng(24)
    X = rng.normal(size=(200, 3))
    phi = local_penalizer(X, np.zeros(3), 0.1, 0.7, p)
    assert np.all((phi >= 0) & (phi <= 1))
    with pytest.raises(ValueError):
        local_penalizer(X, np.zeros(3), 0.1, 0.0, p)
    with pytest.raises(ValueError):
        PenalizerParams(lipschitz=0.0, global_min_estimate=0.0)


# --------------------------------------------------------- predict_steps


def test_predict_steps_n1_is_just_x_star():
    model = make_toy_model_1d(seed=25)
    plan = predict_steps(model, np.array([4.0]), 1, domain_1d())
    assert plan.points.shape == (1, 1)
    assert plan.points[0, 0] == 4.0


def test_predict_steps_second_point_escapes_exclusion_zone():
    model = make_toy_model_1d(seed=26)
    dom = domain_1d()
    params = penalizer_params(model, dom)
    x_star = np.array([5.0])
    plan = predict_steps(model, x_star, 2, dom, params=params, inner_budget=200)
    mu, var = predict_diag(model, x_star[None, :])
    phi = local_penalizer(plan.points[1], x_star, float(mu[0]), float(var[0]), params)
    assert phi > 0.2


def test_predict_steps_lands_in_good_regions(camel_model):
    # all planned points sit where the unpenalised transformed loss is high
    model, fn = camel_model
    dom = fn.domain
    eta = model.incumbent
    plan = predict_steps(model, np.array([0.0, 0.0]), 5, dom, inner_budget=200)

    g1, g2 = np.meshgrid(np.linspace(-2, 2, 50), np.linspace(-1, 1, 50))
    grid = np.column_stack([g1.ravel(), g2.ravel()])
    mu, var = predict_diag(model, grid)
    softplus = np.logaddexp(0.0, -expected_loss_1(mu, var, eta))
    lo, hi = softplus.min(), softplus.max()
    threshold = hi - 0.2 * (hi - lo)  # top 20% of the grid range

    mu_p, var_p = predict_diag(model, plan.points)
    value_p = np.logaddexp(0.0, -expected_loss_1(mu_p, var_p, eta))
    assert np.all(value_p >= threshold - 1e-9)


def test_predict_steps_nested_prefix(camel_model):
    model, fn = camel_model
    x_star = np.array([1.0, 0.5])
    p3 = predict_steps(model, x_star, 3, fn.domain, inner_budget=120)
    p5 = predict_steps(model, x_star, 5, fn.domain, inner_budget=120)
    assert np.array_equal(p3.points, p5.points[:3])


def test_predict_steps_deterministic_and_stable(camel_model):
    model, fn = camel_model
    x_star = np.array([-0.7, 0.3])
    a = predict_steps(model, x_star, 4, fn.domain, inner_budget=120)
    b = predict_steps(model, x_star, 4, fn.domain, inner_budget=120)
    assert np.array_equal(a.points, b.points)
    # moving x_star by less than 1e-12 leaves the plan unchanged
    c = predict_steps(model, x_star + 1e-13, 4, fn.domain, inner_budget=120)
    assert np.array_equal(a.points[1:], c.points[1:])


def test_predict_steps_rows_in_domain_and_distinct(camel_model):
    model, fn = camel_model
    plan = predict_steps(model, np.array([0.3, -0.2]), 6, fn.domain, inner_budget=120)
    for row in plan.points:
        assert fn.domain.contains(row)
    d = np.linalg.norm(plan.points[:, None, :] - plan.points[None, :, :], axis=2)
    np.fill_diagonal(d, np.inf)
    assert d.min() > 1e-9 * fn.domain.diagonal


def test_predict_steps_validation(camel_model):
    model, fn = camel_model
    with pytest.raises(ValueError):
        predict_steps(model, np.array([0.0, 0.0]), 0, fn.domain)
    with pytest.raises(ValueError):
        predict_steps(model, np.array([9.0, 9.0]), 2, fn.domain)


def test_plan_cache_prefix_reuse(camel_model):
    model, fn = camel_model
    cache = PlanCache()
    x_star = np.array([0.5, 0.5])
    p5 = predict_steps_cached(model, x_star, 5, fn.domain, cache, inner_budget=120)
    assert len(cache) == 1
    p3 = predict_steps_cached(model, x_star, 3, fn.domain, cache, inner_budget=120)
    assert np.array_equal(p3.points, p5.points[:3])
    # rounded key: a 1e-8 perturbation hits the same entry
    p5b = predict_steps_cached(model, x_star + 1e-8, 5, fn.domain, cache, inner_budget=120)
    assert np.array_equal(p5b.points, p5.points)
    assert len(cache) == 1
