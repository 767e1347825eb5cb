"""Gaussian-process regression with a squared-exponential-plus-bias kernel.

Zero-mean GP, Gaussian likelihood.  Hyperparameters are fitted by minimising
the negative log marginal likelihood in log-space with bounded L-BFGS, best
of several seeded random restarts.  A fitted :class:`GpModel` is immutable
(arrays are write-protected) and safe to share across threads; augmenting
the data means building a new model.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg

from .global_optimizers import BoxDomain, lbfgsb_minimize

JITTER_BASE = 1e-8  # relative to signal variance; conditioning safeguard
_LOG_2PI = float(np.log(2.0 * np.pi))


class FittingError(RuntimeError):
    """All restarts produced a non-finite marginal likelihood."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Observed inputs (N, q) and outputs (N,)."""

    inputs: np.ndarray
    outputs: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        y = np.asarray(self.outputs, dtype=float).reshape(-1)
        if X.shape[0] != y.shape[0]:
            raise ValueError("inputs row count must equal outputs length")
        if X.shape[0] < 1:
            raise ValueError("dataset needs at least one observation")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("dataset entries must be finite")
        object.__setattr__(self, "inputs", _readonly(X))
        object.__setattr__(self, "outputs", _readonly(y))

    @property
    def size(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def with_observation(self, x, y: float) -> "Dataset":
        x = np.asarray(x, dtype=float).reshape(1, -1)
        return Dataset(np.vstack([self.inputs, x]), np.append(self.outputs, float(y)))


@dataclass(frozen=True)
class KernelSpec:
    """Squared-exponential kernel with a constant bias term plus iid noise."""

    signal_variance: float
    lengthscales: np.ndarray
    bias_variance: float = 0.0
    noise_variance: float = 0.0

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        if self.signal_variance <= 0.0:
            raise ValueError("signal_variance must be positive")
        if np.any(ls <= 0.0):
            raise ValueError("lengthscales must be positive")
        if self.bias_variance < 0.0 or self.noise_variance < 0.0:
            raise ValueError("variances must be nonnegative")
        object.__setattr__(self, "lengthscales", _readonly(ls))

    @property
    def dim(self) -> int:
        return self.lengthscales.shape[0]


def kernel_eval(spec: KernelSpec, x1, x2) -> float:
    """k(x1, x2) = sv * exp(-0.5 * sum(((x1-x2)/ls)^2)) + bias."""
    x1 = np.asarray(x1, dtype=float).reshape(-1)
    x2 = np.asarray(x2, dtype=float).reshape(-1)
    if x1.shape != x2.shape or x1.shape[0] != spec.dim:
        raise ValueError("points must share the kernel's dimension")
    z = (x1 - x2) / spec.lengthscales
    return float(spec.signal_variance * np.exp(-0.5 * np.dot(z, z)) + spec.bias_variance)


def _scaled_sqdist(X1: np.ndarray, X2: np.ndarray, lengthscales: np.ndarray) -> np.ndarray:
    A = X1 / lengthscales
    B = X2 / lengthscales
    d2 = np.sum(A**2, axis=1)[:, None] + np.sum(B**2, axis=1)[None, :] - 2.0 * (A @ B.T)
    return np.maximum(d2, 0.0)


def kernel_matrix(spec: KernelSpec, X1: np.ndarray, X2: np.ndarray) -> np.ndarray:
    d2 = _scaled_sqdist(X1, X2, spec.lengthscales)
    return spec.signal_variance * np.exp(-0.5 * d2) + spec.bias_variance


@dataclass(frozen=True)
class Prediction:
    """Joint posterior over query points: mean (m,) and full covariance (m, m)."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", _readonly(self.mean))
        object.__setattr__(self, "covariance", _readonly(self.covariance))

    @property
    def variance(self) -> np.ndarray:
        return np.diag(self.covariance)


@dataclass(frozen=True)
class GpModel:
    """Dataset + kernel with the cached Cholesky factor of K + (noise+jitter) I."""

    dataset: Dataset
    kernel: KernelSpec
    chol_factor: np.ndarray
    alpha: np.ndarray
    jitter: float

    def __post_init__(self):
        object.__setattr__(self, "chol_factor", _readonly(self.chol_factor))
        object.__setattr__(self, "alpha", _readonly(self.alpha))

    @cached_property
    def _chol_inverse(self) -> np.ndarray:
        inv = scipy.linalg.solve_triangular(
            self.chol_factor, np.eye(self.dataset.size), lower=True
        )
        inv.setflags(write=False)
        return inv

    @property
    def incumbent(self) -> float:
        return float(np.min(self.dataset.outputs))


def build_model(dataset: Dataset, kernel: KernelSpec) -> GpModel:
    """Factorise the kernel system, escalating jitter x10 up to 3 retries."""
    if kernel.dim != dataset.dim:
        raise ValueError("kernel dimension must match dataset dimension")
    K = kernel_matrix(kernel, dataset.inputs, dataset.inputs)
    base = K + kernel.noise_variance * np.eye(dataset.size)
    jitter = JITTER_BASE * kernel.signal_variance
    last_err = None
    for _ in range(4):
        try:
            L = scipy.linalg.cholesky(base + jitter * np.eye(dataset.size), lower=True)
            alpha = scipy.linalg.cho_solve((L, True), dataset.outputs)
            return GpModel(dataset, kernel, L, alpha, jitter)
        except scipy.linalg.LinAlgError as err:
            last_err = err
            jitter *= 10.0
    raise FittingError(f"Cholesky factorisation failed even with escalated jitter: {last_err}")


def predict(model: GpModel, query) -> Prediction:
    """Joint posterior mean and cross-covariance at the query rows."""
    Q = np.atleast_2d(np.asarray(query, dtype=float))
    if Q.shape[1] != model.dataset.dim:
        raise ValueError("query dimension mismatch")
    Kxq = kernel_matrix(model.kernel, model.dataset.inputs, Q)
    mean = Kxq.T @ model.alpha
    W = scipy.linalg.solve_triangular(model.chol_factor, Kxq, lower=True)
    Kqq = kernel_matrix(model.kernel, Q, Q)
    cov = Kqq - W.T @ W
    cov = 0.5 * (cov + cov.T)
    return Prediction(mean, cov)


def predict_diag(model: GpModel, query) -> tuple[np.ndarray, np.ndarray]:
    """Marginal means and variances at the query rows (cheap path)."""
    Q = np.atleast_2d(np.asarray(query, dtype=float))
    if Q.shape[1] != model.dataset.dim:
        raise ValueError("query dimension mismatch")
    Kxq = kernel_matrix(model.kernel, model.dataset.inputs, Q)
    mean = Kxq.T @ model.alpha
    W = model._chol_inverse @ Kxq
    prior = model.kernel.signal_variance + model.kernel.bias_variance
    var = np.maximum(prior - np.sum(W**2, axis=0), 0.0)
    return mean, var


def posterior_mean_gradients(model: GpModel, query) -> np.ndarray:
    """Gradient of the posterior mean at each query row, shape (m, q)."""
    Q = np.atleast_2d(np.asarray(query, dtype=float))
    ls2 = model.kernel.lengthscales**2
    d2 = _scaled_sqdist(Q, model.dataset.inputs, model.kernel.lengthscales)
    E = model.kernel.signal_variance * np.exp(-0.5 * d2)  # (m, N); bias has zero gradient
    diff = (Q[:, None, :] - model.dataset.inputs[None, :, :]) / ls2  # (m, N, q)
    return -np.einsum("mn,mnq,n->mq", E, diff, model.alpha)


def predictive_gradients(model: GpModel, x) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the posterior mean and of the marginal variance at ``x``."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    ls2 = model.kernel.lengthscales**2
    Kxq = kernel_matrix(model.kernel, model.dataset.inputs, x)  # (N, 1)
    E = (Kxq[:, 0] - model.kernel.bias_variance)  # SE part only
    diff = (x[0][None, :] - model.dataset.inputs) / ls2  # (N, q)
    dk = -E[:, None] * diff  # d k(x, X_n) / dx, (N, q)
    grad_mean = dk.T @ model.alpha
    Kinv_k = scipy.linalg.cho_solve((model.chol_factor, True), Kxq[:, 0])
    grad_var = -2.0 * (dk.T @ Kinv_k)  # d k(x,x)/dx = 0 for SE + bias
    return grad_mean, grad_var


def nlml(dataset: Dataset, kernel: KernelSpec) -> float:
    """Negative log marginal likelihood via the cached-factorisation path."""
    model = build_model(dataset, kernel)
    return 0.5 * float(dataset.outputs @ model.alpha) + float(
        np.sum(np.log(np.diag(model.chol_factor)))
    ) + 0.5 * dataset.size * _LOG_2PI


class _FitProblem:
    """NLML and gradient in log-parameter space.

    Parameter vector: log [signal_variance, lengthscale(s), bias_variance,
    noise_variance]; one lengthscale when isotropic, q when ARD.
    """

    def __init__(self, dataset: Dataset, ard: bool):
        self.X = dataset.inputs
        self.y = dataset.outputs
        self.n = dataset.size
        self.q = dataset.dim
        self.ard = ard
        self.n_ls = self.q if ard else 1
        diff = self.X[:, None, :] - self.X[None, :, :]
        self.sq_diff = diff**2  # (N, N, q)

    def unpack(self, theta: np.ndarray):
        p = np.exp(theta)
        sv = p[0]
        ls = p[1 : 1 + self.n_ls]
        if not self.ard:
            ls = np.full(self.q, ls[0])
        bv = p[1 + self.n_ls]
        nv = p[2 + self.n_ls]
        return sv, ls, bv, nv

    def value_and_grad(self, theta: np.ndarray):
        sv, ls, bv, nv = self.unpack(theta)
        d2 = np.sum(self.sq_diff / ls**2, axis=2)
        E = np.exp(-0.5 * d2)
        jitter = JITTER_BASE * sv
        A = sv * E + bv + (nv + jitter) * np.eye(self.n)
        try:
            L = scipy.linalg.cholesky(A, lower=True)
        except scipy.linalg.LinAlgError:
            return 1e25, np.zeros_like(theta)
        alpha = scipy.linalg.cho_solve((L, True), self.y)
        val = 0.5 * float(self.y @ alpha) + float(np.sum(np.log(np.diag(L)))) + 0.5 * self.n * _LOG_2PI
        if not np.isfinite(val):
            return 1e25, np.zeros_like(theta)

        Ainv = scipy.linalg.cho_solve((L, True), np.eye(self.n))
        W = Ainv - np.outer(alpha, alpha)  # dNLML/dA = W/2

        grad = np.empty_like(theta)
        grad[0] = 0.5 * float(np.sum(W * (sv * (E + JITTER_BASE * np.eye(self.n)))))
        if self.ard:
            for d in range(self.q):
                dK = sv * E * (self.sq_diff[:, :, d] / ls[d] ** 2)
                grad[1 + d] = 0.5 * float(np.sum(W * dK))
        else:
            dK = sv * E * d2
            grad[1] = 0.5 * float(np.sum(W * dK))
        grad[1 + self.n_ls] = 0.5 * float(np.sum(W)) * bv
        grad[2 + self.n_ls] = 0.5 * float(np.trace(W)) * nv
        return val, grad


def _fit_bounds(dataset: Dataset, domain: BoxDomain, ard: bool):
    sides = domain.side_lengths
    y = dataset.outputs
    vscale = max(float(np.var(y)), float(np.mean(y) ** 2), 1e-8)
    if ard:
        ls_lo = 1e-3 * sides
        ls_hi = 10.0 * sides
    else:
        ls_lo = np.array([1e-3 * float(np.min(sides))])
        ls_hi = np.array([10.0 * float(np.max(sides))])
    lo = np.concatenate([[1e-6 * vscale], ls_lo, [1e-6 * vscale], [1e-12 * vscale]])
    hi = np.concatenate([[1e3 * vscale], ls_hi, [1e3 * vscale], [1e3 * vscale]])
    return np.log(lo), np.log(hi)


def fit(
    dataset: Dataset,
    domain: BoxDomain,
    restarts: int = 5,
    *,
    ard: bool = False,
    seed: int | tuple = 0,
    max_iters: int = 1000,
) -> GpModel:
    """Fit kernel hyperparameters by restarted bounded quasi-Newton NLML descent.

    Initial points are log-uniform draws within the hyperparameter bounds,
    seeded for reproducibility; the restart with the lowest NLML wins.
    Raises :class:`FittingError` if every restart is non-finite.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    if domain.dim != dataset.dim:
        raise ValueError("domain dimension must match dataset dimension")
    for row in dataset.inputs:
        if not domain.contains(row, atol=1e-9):
            raise ValueError("dataset contains points outside the declared domain")

    problem = _FitProblem(dataset, ard)
    log_lo, log_hi = _fit_bounds(dataset, domain, ard)
    bounds_box = BoxDomain(log_lo, log_hi)
    rng = np.random.default_rng(seed)

    best_val, best_theta, attempts = np.inf, None, []
    for _ in range(restarts):
        theta0 = rng.uniform(log_lo, log_hi)
        cache = {}

        def value(t, _c=cache):
            key = t.tobytes()
            if key not in _c:
                _c[key] = problem.value_and_grad(t)
            return _c[key][0]

        def grad(t, _c=cache):
            key = t.tobytes()
            if key not in _c:
                _c[key] = problem.value_and_grad(t)
            return _c[key][1]

        report = lbfgsb_minimize(value, bounds_box, theta0, max_iters=max_iters, gradient=grad)
        attempts.append(report.best_value)
        if report.best_value < best_val:
            best_val = report.best_value
            best_theta = report.best_point

    if best_theta is None or not np.isfinite(best_val) or best_val >= 1e25:
        raise FittingError(f"non-finite likelihood at every restart: {attempts}")

    sv, ls, bv, nv = problem.unpack(best_theta)
    spec = KernelSpec(sv, ls, bv, nv)
    return build_model(dataset, spec)
