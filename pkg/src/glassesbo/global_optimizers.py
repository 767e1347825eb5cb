"""Derivative-free and quasi-Newton optimisers over box domains.

`direct_minimize` is a deterministic implementation of the DIRECT
(DIviding RECTangles) algorithm of Jones, Perttunen and Stuckman, used
throughout the library to optimise acquisition functions and the inner
steps-ahead objectives.  `lbfgsb_minimize` wraps the bound-constrained
limited-memory BFGS routine and is used for hyperparameter fitting and
local polish.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.optimize


class OptimizerError(RuntimeError):
    """Raised when an optimiser cannot produce a usable result."""


@dataclass(frozen=True)
class BoxDomain:
    """Axis-aligned box ``{x : lower <= x <= upper}``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ValueError("lower/upper must be 1-D arrays of equal length")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise ValueError("box bounds must be finite")
        if not np.all(lower < upper):
            raise ValueError("box must satisfy lower < upper componentwise")
        lower.setflags(write=False)
        upper.setflags(write=False)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def side_lengths(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.side_lengths))

    def contains(self, x, atol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - atol) and np.all(x <= self.upper + atol))

    def clip(self, x) -> np.ndarray:
        return np.clip(np.asarray(x, dtype=float), self.lower, self.upper)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw ``n`` uniform points, one per row."""
        return rng.uniform(self.lower, self.upper, size=(n, self.dim))

    def from_unit(self, u: np.ndarray) -> np.ndarray:
        return self.lower + u * self.side_lengths


@dataclass
class OptimizeReport:
    best_point: np.ndarray
    best_value: float
    evaluations_used: int
    trace: list | None = None
    nonfinite_count: int = 0
    diagnostics: dict = field(default_factory=dict)


class _Budget:
    """Evaluation counter with best-so-far tracking and non-finite guarding."""

    def __init__(self, fn, box: BoxDomain, max_evals: int, batched: bool, keep_trace: bool):
        self._fn = fn
        self._box = box
        self.max_evals = int(max_evals)
        self.batched = batched
        self.used = 0
        self.nonfinite = 0
        self.best_x = None
        self.best_f = np.inf
        self.trace = [] if keep_trace else None

    @property
    def remaining(self) -> int:
        return self.max_evals - self.used

    def evaluate(self, unit_points: np.ndarray) -> np.ndarray:
        """Evaluate rows of ``unit_points`` (unit-cube coordinates), at most
        ``remaining`` of them, in row order.  Returns the values obtained."""
        m = min(unit_points.shape[0], self.remaining)
        pts = self._box.from_unit(unit_points[:m])
        if self.batched:
            vals = np.asarray(self._fn(pts), dtype=float).reshape(-1)
            if vals.shape[0] != m:
                raise OptimizerError("batched objective returned wrong number of values")
        else:
            vals = np.array([float(self._fn(p)) for p in pts], dtype=float)
        bad = ~np.isfinite(vals)
        if np.any(bad):
            self.nonfinite += int(bad.sum())
            vals = np.where(bad, np.inf, vals)
        self.used += m
        for i in range(m):
            if vals[i] < self.best_f:
                self.best_f = vals[i]
                self.best_x = pts[i].copy()
            if self.trace is not None:
                self.trace.append((pts[i].copy(), float(vals[i])))
        return vals


class _RectangleStore:
    """Growable arrays holding the DIRECT rectangle tree."""

    def __init__(self, q: int, capacity: int = 256):
        self.q = q
        self.centers = np.empty((capacity, q))
        self.values = np.empty(capacity)
        self.levels = np.zeros((capacity, q), dtype=np.int32)
        self.measures = np.empty(capacity)
        self.count = 0

    def _grow(self, need: int):
        cap = self.centers.shape[0]
        if self.count + need <= cap:
            return
        new_cap = max(2 * cap, self.count + need)
        for name, shape in (
            ("centers", (new_cap, self.q)),
            ("values", (new_cap,)),
            ("levels", (new_cap, self.q)),
            ("measures", (new_cap,)),
        ):
            old = getattr(self, name)
            fresh = np.empty(shape, dtype=old.dtype)
            fresh[: self.count] = old[: self.count]
            setattr(self, name, fresh)

    def add(self, center: np.ndarray, value: float, levels: np.ndarray, measure: float) -> int:
        self._grow(1)
        i = self.count
        self.centers[i] = center
        self.values[i] = value
        self.levels[i] = levels
        self.measures[i] = measure
        self.count += 1
        return i


def _measure(levels: np.ndarray) -> float:
    # half the diagonal of a rectangle with side 3**-level per dimension
    return 0.5 * float(np.sqrt(np.sum(3.0 ** (-2.0 * levels))))


def _potentially_optimal(measures, values, order, eps: float):
    """Indices (into the store) of potentially-optimal rectangles.

    ``order`` lists live rectangle indices in insertion order; ties on equal
    measure are resolved toward the earliest-inserted rectangle.
    """
    d = measures[order]
    f = values[order]
    # representative per distinct measure: lowest value, earliest insertion
    pos = np.arange(order.shape[0])
    ranked = np.lexsort((pos, f, d))
    d_sorted = d[ranked]
    first = np.empty(d_sorted.shape[0], dtype=bool)
    first[0] = True
    first[1:] = d_sorted[1:] != d_sorted[:-1]
    rep = ranked[first]
    rd = d_sorted[first]
    rf = f[rep]

    fmin = float(rf.min())
    # start the hull at the rightmost (largest-measure) representative
    # attaining fmin: smaller rectangles with the same value are dominated
    start = int(np.max(np.nonzero(rf == fmin)[0]))
    hull = []
    for i in range(start, rd.shape[0]):
        while len(hull) >= 2:
            i1, i2 = hull[-2], hull[-1]
            # pop the middle point when it lies strictly above the chord
            lhs = (rf[i2] - rf[i1]) * (rd[i] - rd[i2])
            rhs = (rf[i] - rf[i2]) * (rd[i2] - rd[i1])
            if lhs > rhs:
                hull.pop()
            else:
                break
        hull.append(i)

    selected = []
    for k, i in enumerate(hull):
        if k + 1 < len(hull):
            j = hull[k + 1]
            slope = (rf[j] - rf[i]) / (rd[j] - rd[i])
            if fmin != 0.0:
                ok = fmin - (rf[i] - slope * rd[i]) >= eps * abs(fmin)
            else:
                ok = rf[i] <= slope * rd[i]
            if not ok:
                continue
        selected.append(order[rep[i]])
    return selected


def direct_minimize(
    objective,
    box: BoxDomain,
    max_evals: int,
    *,
    eps: float = 1e-4,
    batched: bool = False,
    keep_trace: bool = False,
) -> OptimizeReport:
    """Global minimisation with the deterministic DIRECT algorithm.

    The box is normalised to the unit cube; each round the potentially
    optimal rectangles (lower convex hull of measure vs. centre value,
    balance parameter ``eps``) are trisected along their longest sides.
    The search stops once exactly ``max_evals`` objective evaluations have
    been spent.  Non-finite objective values are treated as +inf and
    counted in the report.

    Parameters
    ----------
    objective : callable
        Maps a point (q,) to a float, or, when ``batched``, an (m, q)
        array to an (m,) array.
    box : BoxDomain
    max_evals : int
        Total evaluation budget (>= 1).
    """
    if max_evals < 1:
        raise ValueError("max_evals must be >= 1")
    q = box.dim
    budget = _Budget(objective, box, max_evals, batched, keep_trace)
    store = _RectangleStore(q)

    center = np.full(q, 0.5)
    v0 = budget.evaluate(center[None, :])
    zero_levels = np.zeros(q, dtype=np.int32)
    store.add(center, v0[0], zero_levels, _measure(zero_levels))
    alive = [0]

    while budget.remaining > 0:
        order = np.array(alive, dtype=int)
        selected = _potentially_optimal(store.measures[: store.count], store.values[: store.count], order, eps)
        if not selected:
            break

        # geometry of every selected rectangle, then one batched evaluation
        # per round (the candidate set never depends on this round's values)
        plans = []
        blocks = []
        for idx in selected:
            levels = store.levels[idx]
            min_level = levels.min()
            dims = np.nonzero(levels == min_level)[0]
            delta = 3.0 ** (-(min_level + 1.0))
            cand = np.repeat(store.centers[idx][None, :], 2 * dims.shape[0], axis=0)
            for t, dim in enumerate(dims):
                cand[2 * t, dim] += delta
                cand[2 * t + 1, dim] -= delta
            plans.append((idx, dims))
            blocks.append(cand)
        all_cand = np.concatenate(blocks, axis=0)
        vals = budget.evaluate(all_cand)

        offset = 0
        exhausted = vals.shape[0] < all_cand.shape[0]
        for (idx, dims), cand in zip(plans, blocks):
            need = cand.shape[0]
            if offset + need > vals.shape[0]:
                break  # budget ran out mid-round: values counted, no split
            v = vals[offset : offset + need]
            offset += need
            levels = store.levels[idx].copy()
            w = np.minimum(v[0::2], v[1::2])
            split_order = dims[np.argsort(w, kind="stable")]
            measure = None
            for dim in split_order:
                pos = np.nonzero(dims == dim)[0][0]
                levels[dim] += 1
                child_levels = levels.copy()
                measure = _measure(child_levels)
                alive.append(store.add(cand[2 * pos], v[2 * pos], child_levels, measure))
                alive.append(store.add(cand[2 * pos + 1], v[2 * pos + 1], child_levels, measure))
            # parent keeps its centre with all split dimensions refined
            store.levels[idx] = levels
            store.measures[idx] = measure
        if exhausted:
            break

    return OptimizeReport(
        best_point=budget.best_x.copy(),
        best_value=float(budget.best_f),
        evaluations_used=budget.used,
        trace=budget.trace,
        nonfinite_count=budget.nonfinite,
    )


class _NonFiniteGradient(Exception):
    pass


def _central_difference(objective, box: BoxDomain):
    def grad(x):
        g = np.empty_like(x)
        for i in range(x.shape[0]):
            h = 1e-6 * max(1.0, abs(x[i]))
            xp = x.copy()
            xm = x.copy()
            xp[i] += h
            xm[i] -= h
            g[i] = (objective(xp) - objective(xm)) / (2.0 * h)
        return g

    return grad


def lbfgsb_minimize(
    objective,
    box: BoxDomain,
    start,
    max_iters: int = 1000,
    *,
    gradient=None,
) -> OptimizeReport:
    """Bound-constrained limited-memory BFGS descent from ``start``.

    Uses 10 curvature pairs and terminates when the projected-gradient
    infinity norm drops below 1e-8 or after ``max_iters`` iterations.
    When ``gradient`` is None a central finite difference
    (h = 1e-6 * scale) stands in.  A non-finite gradient aborts the
    descent and the best point seen so far is returned.
    """
    start = np.asarray(start, dtype=float)
    if not box.contains(start, atol=1e-12):
        raise ValueError("start point must lie inside the box")
    start = box.clip(start)
    if gradient is None:
        gradient = _central_difference(objective, box)

    state = {"best_x": start.copy(), "best_f": np.inf, "evals": 0}

    def wrapped(x):
        state["evals"] += 1
        f = float(objective(x))
        if np.isfinite(f) and f < state["best_f"]:
            state["best_f"] = f
            state["best_x"] = x.copy()
        return f

    def wrapped_grad(x):
        g = np.asarray(gradient(x), dtype=float)
        if not np.all(np.isfinite(g)):
            raise _NonFiniteGradient
        return g

    aborted = False
    try:
        scipy.optimize.minimize(
            wrapped,
            start,
            jac=wrapped_grad,
            method="L-BFGS-B",
            bounds=list(zip(box.lower, box.upper)),
            options={
                "maxiter": int(max_iters),
                "maxcor": 10,
                "gtol": 1e-8,
                "ftol": 1e-16,
                "maxfun": 10_000_000,
            },
        )
    except _NonFiniteGradient:
        aborted = True

    if not np.isfinite(state["best_f"]):
        state["best_x"] = start.copy()
    return OptimizeReport(
        best_point=box.clip(state["best_x"]),
        best_value=float(state["best_f"]),
        evaluations_used=state["evals"],
        diagnostics={"aborted_on_gradient": aborted},
    )
