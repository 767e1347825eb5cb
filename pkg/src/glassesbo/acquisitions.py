"""One-step expected loss (closed form) and baseline acquisition criteria.

All criteria are written for minimisation of the objective: the expected
loss and GP-LCB are minimised directly, while MPI returns a probability
(larger is better) that callers negate for a shared minimise interface.
Functions broadcast over numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from . import gp_surrogate
from .gp_surrogate import GpModel

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _phi(z):
    return _INV_SQRT_2PI * np.exp(-0.5 * z * z)


@dataclass(frozen=True)
class AcquisitionContext:
    """Incumbent (best observed output) paired with the model it came from."""

    incumbent: float
    model: GpModel

    def __post_init__(self):
        lowest = float(np.min(self.model.dataset.outputs))
        if self.incumbent != lowest:
            raise ValueError("incumbent must equal the minimum of the model's outputs")


def expected_loss_1(mu, var, eta):
    """E[min(y, eta)] for y ~ N(mu, var).

    Computed as eta + (mu - eta) * Phi(z) - sigma * phi(z) with
    z = (eta - mu) / sigma, which is the numerically stable form of the
    closed-form one-step loss; var == 0 short-circuits to min(mu, eta).
    """
    mu = np.asarray(mu, dtype=float)
    var = np.asarray(var, dtype=float)
    if np.any(var < 0.0):
        raise ValueError("var must be nonnegative")
    scalar = mu.ndim == 0 and var.ndim == 0
    mu, var = np.atleast_1d(mu), np.atleast_1d(var)
    mu, var = np.broadcast_arrays(mu, var)
    out = np.minimum(mu, eta)
    positive = var > 0.0
    if np.any(positive):
        sigma = np.sqrt(var[positive])
        z = (eta - mu[positive]) / sigma
        out = out.copy()
        out[positive] = eta + (mu[positive] - eta) * ndtr(z) - sigma * _phi(z)
    return float(out[0]) if scalar else out


def expected_loss_1_grad(model: GpModel, x, eta: float) -> np.ndarray:
    """Gradient of the one-step expected loss at ``x`` through the GP.

    Chain rule through the predictive mean and variance:
    Phi(z) * grad_mu - phi(z) * grad_sigma.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    mu, var = gp_surrogate.predict_diag(model, x[None, :])
    mu, var = float(mu[0]), float(var[0])
    grad_mu, grad_var = gp_surrogate.predictive_gradients(model, x)
    sigma = np.sqrt(max(var, 1e-16))
    z = (eta - mu) / sigma
    grad_sigma = grad_var / (2.0 * sigma)
    return ndtr(z) * grad_mu - _phi(z) * grad_sigma


def mpi(mu, var, eta):
    """Probability of improving on ``eta``: Phi((eta - mu)/sigma).

    Larger is better; the benchmark harness negates it to share the
    minimise interface.  var == 0 returns the hard indicator (ties lose).
    """
    mu = np.asarray(mu, dtype=float)
    var = np.asarray(var, dtype=float)
    if np.any(var < 0.0):
        raise ValueError("var must be nonnegative")
    scalar = mu.ndim == 0 and var.ndim == 0
    mu, var = np.broadcast_arrays(np.atleast_1d(mu), np.atleast_1d(var))
    out = np.where(mu < eta, 1.0, 0.0)
    positive = var > 0.0
    if np.any(positive):
        out = out.copy()
        out[positive] = ndtr((eta - mu[positive]) / np.sqrt(var[positive]))
    return float(out[0]) if scalar else out


def gp_lcb(mu, var, beta: float = 1.0):
    """Lower confidence bound mu - beta * sigma (minimisation form)."""
    mu = np.asarray(mu, dtype=float)
    var = np.asarray(var, dtype=float)
    if np.any(var < 0.0):
        raise ValueError("var must be nonnegative")
    if beta < 0.0:
        raise ValueError("beta must be nonnegative")
    out = mu - beta * np.sqrt(var)
    return float(out) if out.ndim == 0 else out
