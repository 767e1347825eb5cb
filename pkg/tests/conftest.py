import numpy as np
import pytest

from glassesbo.global_optimizers import BoxDomain
from glassesbo.gp_surrogate import Dataset, KernelSpec, build_model, fit


def make_toy_model_1d(seed=0, n_points=5, noise=1e-6, lengthscale=0.8, bias=0.1):
    """Small deterministic 1-D model on [0, 10] built without fitting."""
    rng = np.random.default_rng(seed)
    X = np.sort(rng.uniform(0.0, 10.0, size=(n_points, 1)), axis=0)
    y = np.sin(X[:, 0]) + 0.1 * rng.standard_normal(n_points)
    spec = KernelSpec(1.0, np.array([lengthscale]), bias, noise)
    return build_model(Dataset(X, y), spec)


def domain_1d(lo=0.0, hi=10.0):
    return BoxDomain(np.array([lo]), np.array([hi]))


@pytest.fixture
def camel_model():
    """Six-Hump Camel with 10 seeded observations, hyperparameters fitted."""
    from glassesbo.test_functions import lookup

    fn = lookup("Sixhumpcamel")
    rng = np.random.default_rng(0)
    X = fn.domain.sample(rng, 10)
    y = fn.evaluator(X)
    model = fit(Dataset(X, y), fn.domain, restarts=3, seed=1)
    return model, fn
