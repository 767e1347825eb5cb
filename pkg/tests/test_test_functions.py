import numpy as np
import pytest

from glassesbo.test_functions import evaluate, lookup, registry

EXPECTED_DOMAINS = {
    "SinCos": ([0.0], [10.0]),
    "Cosines": ([0.0, 0.0], [1.0, 1.0]),
    "Branin": ([-5.0, -5.0], [10.0, 10.0]),
    "Sixhumpcamel": ([-2.0, -1.0], [2.0, 1.0]),
    "McCormick": ([-1.5, -3.0], [4.0, 4.0]),
    "Dropwave": ([-1.0, -1.0], [1.0, 1.0]),
    "Beale": ([-1.0, -1.0], [1.0, 1.0]),
    "Powers": ([-1.0, -1.0], [1.0, 1.0]),
    "Alpine2-2": ([-10.0] * 2, [10.0] * 2),
    "Alpine2-5": ([-10.0] * 5, [10.0] * 5),
    "Alpine2-10": ([-10.0] * 10, [10.0] * 10),
    "Ackley-2": ([-5.0] * 2, [5.0] * 2),
    "Ackley-5": ([-5.0] * 5, [5.0] * 5),
}


def test_registry_contents_and_domains():
    fns = {fn.name: fn for fn in registry()}
    assert set(fns) == set(EXPECTED_DOMAINS)
    for name, (lo, hi) in EXPECTED_DOMAINS.items():
        assert np.allclose(fns[name].domain.lower, lo), name
        assert np.allclose(fns[name].domain.upper, hi), name
        assert fns[name].dim == len(lo)


def test_lookup_case_insensitive():
    assert lookup("branin").dim == 2
    assert lookup("BRANIN").name == "Branin"
    assert lookup("ackley-5").dim == 5
    with pytest.raises(KeyError):
        lookup("nope")


def test_sincos_values():
    fn = lookup("SinCos")
    assert evaluate(fn, [0.0]) == 0.0  # both terms carry a factor x
    # direct trigonometric evaluation: 5 sin 5 + 5 cos 10
    assert evaluate(fn, [5.0]) == pytest.approx(5 * np.sin(5) + 5 * np.cos(10), abs=1e-12)
    assert evaluate(fn, [5.0]) == pytest.approx(-8.9900, abs=1e-4)


def test_cosines_value():
    # 1.6 x - 0.5 = 0 at x = 0.3125: g = 0, r = 0.3, f = 1 - 2*(0 - 0.3)
    fn = lookup("Cosines")
    assert evaluate(fn, [0.3125, 0.3125]) == pytest.approx(1.6, abs=1e-12)


def test_alpine2_at_origin_and_symmetry():
    fn = lookup("Alpine2-2")
    assert evaluate(fn, [0.0, 0.0]) == 0.0
    # |x| convention makes each factor odd: flipping one sign negates f
    v = evaluate(fn, [3.0, 4.0])
    assert evaluate(fn, [-3.0, 4.0]) == pytest.approx(-v, abs=1e-12)


def test_powers_minimum_at_origin():
    fn = lookup("Powers")
    assert fn.optimum_value == 0.0
    assert evaluate(fn, [0.0, 0.0]) == 0.0
    assert evaluate(fn, [0.5, -0.5]) == pytest.approx(0.5**2 + 0.5**3)


def test_branin_known_minimum_in_domain():
    fn = lookup("Branin")
    assert evaluate(fn, [np.pi, 2.275]) == pytest.approx(0.397887, abs=1e-5)


def test_out_of_domain_rejected():
    fn = lookup("Dropwave")
    with pytest.raises(ValueError):
        evaluate(fn, [1.5, 0.0])
    with pytest.raises(ValueError):
        evaluate(fn, [0.0])  # wrong dimension


def test_evaluators_pure_bitwise():
    rng = np.random.default_rng(5)
    for fn in registry():
        X = fn.domain.sample(rng, 7)
        a = fn.evaluator(X)
        b = fn.evaluator(X.copy())
        assert np.array_equal(a, b), fn.name


def test_optimum_values_regression_guard():
    # stored optimum must lower-bound a fresh 1e5-point random search
    rng = np.random.default_rng(123)
    for fn in registry():
        best = np.inf
        for _ in range(4):
            X = fn.domain.sample(rng, 25_000)
            best = min(best, float(np.min(fn.evaluator(X))))
        assert fn.optimum_value <= best + 1e-9, fn.name
        assert np.isfinite(fn.optimum_value)
