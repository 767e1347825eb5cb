"""Fit the GP surrogate to noisy 1-D data and inspect its predictions.

The surrogate is a zero-mean GP with a squared-exponential kernel plus a
constant bias term; hyperparameters come from restarted marginal-likelihood
descent. Run:  python demos/01_gp_surrogate.py
"""

import numpy as np

from glassesbo import BoxDomain, Dataset, fit, predict

rng = np.random.default_rng(0)

# a wiggly target observed at 12 random sites with a little noise
def target(x):
    return np.sin(x) + 0.4 * np.cos(3 * x)

X = np.sort(rng.uniform(0.0, 10.0, size=(12, 1)), axis=0)
y = target(X[:, 0]) + 0.05 * rng.standard_normal(12)

domain = BoxDomain(np.array([0.0]), np.array([10.0]))
model = fit(Dataset(X, y), domain, restarts=5, seed=0)

k = model.kernel
print("fitted hyperparameters")
print(f"  signal variance : {k.signal_variance:.4f}")
print(f"  lengthscale     : {k.lengthscales[0]:.4f}")
print(f"  bias variance   : {k.bias_variance:.4g}")
print(f"  noise variance  : {k.noise_variance:.4g}")

grid = np.linspace(0, 10, 9)[:, None]
pred = predict(model, grid)
print("\n   x      truth    post.mean  post.sd")
for xi, t, m, v in zip(grid[:, 0], target(grid[:, 0]), pred.mean, pred.variance):
    print(f"  {xi:4.1f}  {t:8.4f}  {m:9.4f}  {np.sqrt(v):7.4f}")

# the joint covariance couples nearby sites: correlation of f(4.0) and f(4.5)
pair = predict(model, np.array([[4.0], [4.5]]))
c = pair.covariance
rho = c[0, 1] / np.sqrt(c[0, 0] * c[1, 1])
print(f"\ncorrelation of f(4.0) and f(4.5) under the posterior: {rho:.3f}")
