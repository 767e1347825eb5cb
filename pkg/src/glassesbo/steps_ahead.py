"""Greedy prediction of future evaluation sites by local penalisation.

Given a putative first location, the remaining sites an optimiser would
visit are predicted one at a time: each step maximises the soft-plus of
the negated one-step expected loss, multiplied by [0,1]-valued penalisers
that carve exclusion zones around every site already in the plan.  The
penaliser is the closed-form probability that a point escapes the
Lipschitz exclusion ball of an already-planned site.
"""

from __future__ import annotations

import threading
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc
from scipy.stats import qmc

from . import gp_surrogate
from .acquisitions import expected_loss_1
from .global_optimizers import BoxDomain, direct_minimize, lbfgsb_minimize
from .gp_surrogate import GpModel

LIPSCHITZ_FLOOR_SCALE = 1e-7
MIN_PENALIZER_VARIANCE = 1e-10
DISTINCT_ROW_SCALE = 1e-9


class DegeneratePlanError(RuntimeError):
    """The greedy plan collapsed onto an already-selected site."""


@dataclass(frozen=True)
class PenalizerParams:
    """Lipschitz constant and a conservative global-minimum estimate."""

    lipschitz: float
    global_min_estimate: float

    def __post_init__(self):
        if self.lipschitz <= 0.0:
            raise ValueError("lipschitz must be positive")


@dataclass(frozen=True)
class StepsPlan:
    """Planned evaluation sites, one per row; row 0 is the putative point."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n_steps(self) -> int:
        return self.points.shape[0]


def lipschitz_floor(model: GpModel, domain: BoxDomain) -> float:
    y = model.dataset.outputs
    span = float(np.max(y) - np.min(y))
    return max(LIPSCHITZ_FLOOR_SCALE * span / domain.diagonal, 1e-12)


def estimate_lipschitz(model: GpModel, domain: BoxDomain) -> float:
    """Largest posterior-mean gradient norm found over the domain.

    Scans 200*q low-discrepancy (Sobol) points, then locally refines from
    the best 5; the result is floored so it is always positive.
    """
    q = domain.dim
    sampler = qmc.Sobol(d=q, scramble=False)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)  # 200*q is not a power of two
        unit = sampler.random(200 * q)
    pts = domain.lower + unit * domain.side_lengths
    grads = gp_surrogate.posterior_mean_gradients(model, pts)
    norms = np.linalg.norm(grads, axis=1)
    best = float(np.max(norms))

    def neg_grad_norm(x):
        g = gp_surrogate.posterior_mean_gradients(model, x[None, :])[0]
        return -float(np.linalg.norm(g))

    top = np.argsort(norms)[-5:]
    for i in top:
        report = lbfgsb_minimize(neg_grad_norm, domain, pts[i], max_iters=30)
        best = max(best, -report.best_value)
    return max(best, lipschitz_floor(model, domain))


def local_penalizer(x, center, mu_c: float, var_c: float, params: PenalizerParams):
    """Probability in [0,1] that ``x`` escapes the exclusion ball at ``center``.

    phi(x; center) = erfc(-z)/2 with
    z = (L * ||x - center|| - M + mu_c) / sqrt(2 * var_c),
    the closed form of the Lipschitz exclusion-ball probability under the
    GP marginal at the centre.  Vectorised over rows of ``x``.
    """
    if var_c <= 0.0:
        raise ValueError("var_c must be positive")
    var_c = max(var_c, MIN_PENALIZER_VARIANCE)
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = x[None, :] if single else x
    center = np.asarray(center, dtype=float).reshape(-1)
    dist = np.linalg.norm(pts - center[None, :], axis=1)
    z = (params.lipschitz * dist - params.global_min_estimate + mu_c) / np.sqrt(2.0 * var_c)
    phi = 0.5 * erfc(-z)
    return float(phi[0]) if single else phi


def penalizer_params(model: GpModel, domain: BoxDomain) -> PenalizerParams:
    """Default parameters: estimated Lipschitz constant, observed minimum."""
    return PenalizerParams(
        lipschitz=estimate_lipschitz(model, domain),
        global_min_estimate=float(np.min(model.dataset.outputs)),
    )


def _penalized_objective(model, eta, centers, center_mu, center_var, params):
    """Negated (for minimisation) penalised soft-plus transformed loss."""
    C = np.asarray(centers, dtype=float)  # (k, q)
    mu_c = np.asarray(center_mu, dtype=float)[None, :]
    std2 = np.sqrt(2.0 * np.maximum(np.asarray(center_var, dtype=float), MIN_PENALIZER_VARIANCE))[None, :]

    def objective(X):
        mu, var = gp_surrogate.predict_diag(model, X)
        loss = expected_loss_1(mu, var, eta)
        value = np.logaddexp(0.0, -loss)  # soft-plus of the negated loss
        d2 = np.sum(X**2, axis=1)[:, None] + np.sum(C**2, axis=1)[None, :] - 2.0 * (X @ C.T)
        dist = np.sqrt(np.maximum(d2, 0.0))  # (m, k)
        z = (params.lipschitz * dist - params.global_min_estimate + mu_c) / std2
        value = value * np.prod(0.5 * erfc(-z), axis=1)
        return -value

    return objective


def predict_steps(
    model: GpModel,
    x_star,
    n: int,
    domain: BoxDomain,
    *,
    params: PenalizerParams | None = None,
    inner_budget: int | None = None,
) -> StepsPlan:
    """Predict the n-site plan starting at ``x_star``.

    Row 1 is ``x_star``; each further row maximises the penalised
    soft-plus loss via DIRECT (``inner_budget`` evaluations per step,
    default 500*q).  Deterministic given (model, x_star, n).  Raises
    :class:`DegeneratePlanError` if a step lands on an existing row.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    x_star = np.asarray(x_star, dtype=float).reshape(-1)
    if not domain.contains(x_star, atol=1e-12):
        raise ValueError("x_star must lie inside the domain")
    x_star = domain.clip(x_star)
    rows = [x_star]
    if n == 1:
        return StepsPlan(np.array(rows))

    q = domain.dim
    budget = inner_budget if inner_budget is not None else 500 * q
    if params is None:
        params = penalizer_params(model, domain)
    eta = model.incumbent
    mu0, var0 = gp_surrogate.predict_diag(model, x_star[None, :])
    center_mu = [float(mu0[0])]
    center_var = [max(float(var0[0]), MIN_PENALIZER_VARIANCE)]
    min_dist = DISTINCT_ROW_SCALE * domain.diagonal

    for _ in range(1, n):
        objective = _penalized_objective(model, eta, rows, center_mu, center_var, params)
        report = direct_minimize(objective, domain, budget, batched=True, keep_trace=True)
        new = _best_distinct(report, rows, min_dist)
        if new is None:
            # every candidate the optimiser produced coincides with an
            # already-planned site: distinct optima are exhausted
            raise DegeneratePlanError(
                f"step {len(rows) + 1} found no site distinct from the existing plan"
            )
        mu_c, var_c = gp_surrogate.predict_diag(model, new[None, :])
        rows.append(new)
        center_mu.append(float(mu_c[0]))
        center_var.append(max(float(var_c[0]), MIN_PENALIZER_VARIANCE))

    return StepsPlan(np.array(rows))


def _best_distinct(report, rows, min_dist):
    """Best-valued optimiser candidate farther than ``min_dist`` from all rows.

    A weak penaliser can leave the step objective flat enough that the
    optimiser lands exactly on an already-planned site; the next-best
    distinct candidate is then the remaining "available distinct optimum".
    """
    new = report.best_point
    if min(float(np.linalg.norm(new - r)) for r in rows) > min_dist:
        return new
    order = sorted(range(len(report.trace)), key=lambda i: (report.trace[i][1], i))
    for i in order:
        cand = report.trace[i][0]
        if min(float(np.linalg.norm(cand - r)) for r in rows) > min_dist:
            return cand
    return None


class PlanCache:
    """Thread-safe plan memoisation keyed on the rounded putative point.

    Plans are greedy, so a cached longer plan serves any shorter request
    by prefix; shorter cached plans are extended in place.
    """

    def __init__(self, capacity: int = 10_000, decimals: int = 6):
        self.capacity = capacity
        self.decimals = decimals
        self._lock = threading.Lock()
        self._store: dict = {}

    def key(self, x_star: np.ndarray):
        return tuple(np.round(np.asarray(x_star, dtype=float), self.decimals))

    def get(self, x_star) -> np.ndarray | None:
        with self._lock:
            return self._store.get(self.key(x_star))

    def put(self, x_star, points: np.ndarray):
        with self._lock:
            key = self.key(x_star)
            if key not in self._store and len(self._store) >= self.capacity:
                self._store.pop(next(iter(self._store)))
            self._store[key] = points

    def __len__(self):
        with self._lock:
            return len(self._store)


def predict_steps_cached(
    model: GpModel,
    x_star,
    n: int,
    domain: BoxDomain,
    cache: PlanCache | None,
    *,
    params: PenalizerParams | None = None,
    inner_budget: int | None = None,
) -> StepsPlan:
    """Memoised :func:`predict_steps`; nested-plan structure makes prefix reuse exact."""
    if cache is None:
        return predict_steps(model, x_star, n, domain, params=params, inner_budget=inner_budget)
    cached = cache.get(x_star)
    if cached is not None and cached.shape[0] >= n:
        return StepsPlan(cached[:n])
    plan = predict_steps(model, x_star, n, domain, params=params, inner_budget=inner_budget)
    cache.put(x_star, plan.points)
    return plan
