"""Multi-step lookahead acquisition and the outer decision loop.

The n-step acquisition values a putative point by the expected best value
across the whole predicted future evaluation sequence it sets in motion:
predict the plan, take the joint GP posterior over the planned sites, and
marginalise the minimum against the incumbent with EP.  The decision loop
refits the surrogate each iteration, shrinks the lookahead horizon as the
budget runs down (or clamps it at a fixed k), and finally recommends the
minimiser of the posterior mean.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import ep_polyhedra, gp_surrogate, steps_ahead
from .acquisitions import expected_loss_1
from .ep_polyhedra import EpOptions
from .global_optimizers import BoxDomain, direct_minimize
from .gp_surrogate import Dataset, GpModel
from .steps_ahead import PenalizerParams, PlanCache

HORIZON_MODES = ("full-remaining", "fixed-k")


class ObjectiveError(RuntimeError):
    """Objective evaluation failed; carries the partial run history."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history


@dataclass(frozen=True)
class GlassesConfig:
    horizon_mode: str = "full-remaining"
    fixed_k: int = 1
    acquisition_optimizer_budget: int | None = None  # default 1000 * q
    steps_budget: int | None = None  # default 500 * q per plan step
    memoize_plans: bool = True
    fit_restarts: int = 5
    record_timing: bool = False

    def __post_init__(self):
        if self.horizon_mode not in HORIZON_MODES:
            raise ValueError(f"horizon_mode must be one of {HORIZON_MODES}")
        if self.fixed_k < 1:
            raise ValueError("fixed_k must be >= 1")

    def lookahead(self, remaining: int) -> int:
        if self.horizon_mode == "fixed-k":
            return min(self.fixed_k, remaining)
        return remaining

    def acquisition_budget(self, q: int) -> int:
        return self.acquisition_optimizer_budget or 1000 * q

    def inner_budget(self, q: int) -> int:
        return self.steps_budget or 500 * q


@dataclass
class EvaluationRecord:
    x: np.ndarray
    y: float
    acq: float
    lookahead: int
    time_s: float


@dataclass
class RunHistory:
    evaluations: list
    recommendation: np.ndarray
    best_observed_point: np.ndarray
    best_observed_value: float
    seed: int
    config: dict
    diagnostics: list = field(default_factory=list)

    def to_json(self, *, include_timing: bool = False) -> str:
        """Canonical JSON form; timing is zeroed unless requested so that
        identical (seed, config, objective) runs serialise byte-identically."""
        payload = {
            "evaluations": [
                {
                    "x": [float(v) for v in rec.x],
                    "y": float(rec.y),
                    "acq": float(rec.acq),
                    "lookahead": int(rec.lookahead),
                    "time_s": float(rec.time_s) if include_timing else 0.0,
                }
                for rec in self.evaluations
            ],
            "recommendation": [float(v) for v in self.recommendation],
            "best_observed_point": [float(v) for v in self.best_observed_point],
            "best_observed_value": float(self.best_observed_value),
            "seed": self.seed,
            "config": self.config,
            "diagnostics": list(self.diagnostics),
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def glasses_acquisition(
    model: GpModel,
    x_star,
    n: int,
    eta: float,
    domain: BoxDomain,
    *,
    params: PenalizerParams | None = None,
    cache: PlanCache | None = None,
    inner_budget: int | None = None,
    ep_opts: EpOptions | None = None,
    diagnostics: list | None = None,
) -> float:
    """n-step lookahead expected loss at ``x_star``.

    n = 1 bypasses planning and EP and equals the closed-form one-step
    loss exactly.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    x_star = np.asarray(x_star, dtype=float).reshape(-1)
    if n == 1:
        mu, var = gp_surrogate.predict_diag(model, x_star[None, :])
        return float(expected_loss_1(float(mu[0]), float(var[0]), eta))
    plan = steps_ahead.predict_steps_cached(
        model, x_star, n, domain, cache, params=params, inner_budget=inner_budget
    )
    pred = gp_surrogate.predict(model, plan.points)
    result = ep_polyhedra.expected_min_full(pred.mean, pred.covariance, eta, ep_opts)
    if diagnostics is not None and not result.converged:
        diagnostics.append(f"ep_not_converged at x*={np.round(x_star, 6).tolist()} (n={n})")
    return result.value


def select_next(
    model: GpModel,
    n: int,
    eta: float,
    domain: BoxDomain,
    cfg: GlassesConfig,
    *,
    diagnostics: list | None = None,
):
    """Minimise the n-step acquisition over the domain with DIRECT.

    Returns (point, acquisition value).  Deterministic: DIRECT breaks ties
    by insertion order and the plan predictor is seed-free.
    """
    q = domain.dim
    budget = cfg.acquisition_budget(q)
    if n == 1:
        def batch_objective(X):
            mu, var = gp_surrogate.predict_diag(model, X)
            return expected_loss_1(mu, var, eta)

        report = direct_minimize(batch_objective, domain, budget, batched=True)
        return report.best_point, float(report.best_value)

    params = steps_ahead.penalizer_params(model, domain)
    cache = PlanCache() if cfg.memoize_plans else None
    inner = cfg.inner_budget(q)

    def objective(x):
        return glasses_acquisition(
            model, x, n, eta, domain,
            params=params, cache=cache, inner_budget=inner, diagnostics=diagnostics,
        )

    report = direct_minimize(objective, domain, budget)
    return report.best_point, float(report.best_value)


def recommend(model: GpModel, domain: BoxDomain, budget: int) -> np.ndarray:
    """Minimiser of the posterior mean over the domain."""

    def posterior_mean(X):
        mu, _ = gp_surrogate.predict_diag(model, X)
        return mu

    report = direct_minimize(posterior_mean, domain, budget, batched=True)
    return report.best_point


def run(
    objective,
    initial: Dataset,
    budget: int,
    domain: BoxDomain,
    cfg: GlassesConfig | None = None,
    seed: int = 0,
) -> RunHistory:
    """Run the full decision loop for ``budget`` evaluations.

    Each iteration refits the surrogate, builds the steps-ahead predictor
    for the remaining horizon, selects the acquisition minimiser, evaluates
    the objective and augments the data; afterwards the surrogate is refit
    once more and the posterior-mean minimiser is proposed.
    """
    if budget < 0:
        raise ValueError("budget must be >= 0")
    cfg = cfg or GlassesConfig()
    dataset = initial
    evaluations: list[EvaluationRecord] = []
    diagnostics: list[str] = []

    for j in range(budget):
        remaining = budget - j
        n = cfg.lookahead(remaining)
        model = gp_surrogate.fit(
            dataset, domain, restarts=cfg.fit_restarts, seed=(seed, j)
        )
        eta = model.incumbent
        t0 = time.perf_counter()
        x_next, acq = select_next(model, n, eta, domain, cfg, diagnostics=diagnostics)
        try:
            y_next = float(objective(x_next))
        except Exception as err:
            partial = _finish_history(dataset, budget, domain, cfg, seed, evaluations, diagnostics)
            raise ObjectiveError(f"objective evaluation failed at {x_next}: {err}", partial) from err
        if not np.isfinite(y_next):
            partial = _finish_history(dataset, budget, domain, cfg, seed, evaluations, diagnostics)
            raise ObjectiveError(f"objective returned non-finite value at {x_next}", partial)
        elapsed = time.perf_counter() - t0 if cfg.record_timing else 0.0
        evaluations.append(EvaluationRecord(x_next, y_next, acq, n, elapsed))
        dataset = dataset.with_observation(x_next, y_next)

    return _finish_history(dataset, budget, domain, cfg, seed, evaluations, diagnostics)


def _finish_history(dataset, budget, domain, cfg, seed, evaluations, diagnostics) -> RunHistory:
    model = gp_surrogate.fit(dataset, domain, restarts=cfg.fit_restarts, seed=(seed, budget))
    recommendation = recommend(model, domain, cfg.acquisition_budget(domain.dim))
    i_best = int(np.argmin(dataset.outputs))
    return RunHistory(
        evaluations=evaluations,
        recommendation=recommendation,
        best_observed_point=dataset.inputs[i_best].copy(),
        best_observed_value=float(dataset.outputs[i_best]),
        seed=seed,
        config=asdict(cfg),
        diagnostics=diagnostics,
    )
