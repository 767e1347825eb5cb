"""Benchmark harness: replicated BO runs, gap measure, CSV/JSON reporting.

Every method in a comparison batch consumes identical initial designs per
replicate (the init draw is seeded by ``seed + replicate`` independently of
the method).  Results are written as CSV rows with the fixed header

    function,method,seed,gap,y_first,y_best,y_opt,budget,wall_time_s

plus optional JSON run histories.  ``wall_time_s`` is 0.0 unless timing is
explicitly requested, which keeps repeated runs byte-identical.

The ``bench`` console command exposes ``run``, ``summarize``,
``list-functions`` and ``list-methods``; exit codes are 0 (success),
2 (configuration error), 3 (run failure).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import re
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import glasses_loss, gp_surrogate, test_functions
from .acquisitions import gp_lcb, mpi
from .glasses_loss import EvaluationRecord, GlassesConfig, RunHistory
from .global_optimizers import direct_minimize
from .gp_surrogate import Dataset

CSV_HEADER = "function,method,seed,gap,y_first,y_best,y_opt,budget,wall_time_s"
BASE_METHODS = ("MPI", "GP-LCB", "EL", "GLASSES")
LISTED_METHODS = ("MPI", "GP-LCB", "EL", "EL-2", "EL-3", "EL-5", "EL-10", "GLASSES")
_EL_K = re.compile(r"^EL-(\d+)$")


class ConfigError(ValueError):
    """Invalid experiment configuration."""


class DegenerateRunError(RuntimeError):
    """The best initial point already attains the reference optimum."""


def parse_method(name: str) -> tuple[str, int | None]:
    """Validate a method name; returns (canonical name, k for EL-k)."""
    canon = name.upper().replace("_", "-")
    if canon in ("MPI", "GP-LCB", "EL", "GLASSES"):
        return canon, None
    m = _EL_K.match(canon)
    if m:
        k = int(m.group(1))
        if k < 1:
            raise ConfigError(f"EL-k requires k >= 1, got {name!r}")
        return canon, k
    raise ConfigError(f"unknown method {name!r}; see `bench list-methods`")


@dataclass(frozen=True)
class ExperimentConfig:
    function: str
    method: str
    replicates: int = 5
    init_points: int = 5
    budget: int | None = None  # default 10 * dimension
    seed: int = 0
    acquisition_budget: int | None = None
    steps_budget: int | None = None
    fit_restarts: int = 5
    noise_std: float = 0.0
    workers: int = 1
    record_timing: bool = False
    out: str | None = None
    json_out: str | None = None

    def __post_init__(self):
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        if self.init_points < 1:
            raise ConfigError("init_points must be >= 1")
        if self.budget is not None and self.budget < 1:
            raise ConfigError("budget must be >= 1")
        parse_method(self.method)
        try:
            test_functions.lookup(self.function)
        except KeyError as err:
            raise ConfigError(str(err)) from None


# Desk-scale optimiser budgets: small enough that the full directional
# benchmark finishes on a laptop, large enough for the 1-2 dim suite.
DESK_ACQ_BUDGET_PER_DIM = 120
DESK_STEPS_BUDGET_PER_DIM = 40


@dataclass
class GapRecord:
    function: str
    method: str
    seed: int
    gap: float
    y_first: float
    y_best: float
    y_opt: float
    budget: int
    wall_time_s: float = 0.0
    history: RunHistory | None = None
    error: str | None = None


def gap(y_first: float, y_best: float, y_opt: float) -> float:
    """Normalised progress from the best initial point to the optimum.

    clamp((y_first - y_best) / (y_first - y_opt), 0, 1); raises
    :class:`DegenerateRunError` when the first point is already optimal.
    """
    if y_first == y_opt:
        raise DegenerateRunError("initial point already attains the optimum")
    return float(np.clip((y_first - y_best) / (y_first - y_opt), 0.0, 1.0))


def _glasses_config(cfg: ExperimentConfig, method: str, k: int | None, q: int) -> GlassesConfig:
    if method == "GLASSES":
        horizon, fixed_k = "full-remaining", 1
    else:  # EL or EL-k run through the same loop with a clamped horizon
        horizon, fixed_k = "fixed-k", (k if k is not None else 1)
    return GlassesConfig(
        horizon_mode=horizon,
        fixed_k=fixed_k,
        acquisition_optimizer_budget=cfg.acquisition_budget or DESK_ACQ_BUDGET_PER_DIM * q,
        steps_budget=cfg.steps_budget or DESK_STEPS_BUDGET_PER_DIM * q,
        fit_restarts=cfg.fit_restarts,
        record_timing=cfg.record_timing,
    )


def _run_baseline(objective, initial: Dataset, budget: int, domain, method: str,
                  seed: int, gcfg: GlassesConfig) -> RunHistory:
    """BO loop for the MPI / GP-LCB baselines (same skeleton, myopic score)."""
    dataset = initial
    evaluations = []
    for j in range(budget):
        model = gp_surrogate.fit(dataset, domain, restarts=gcfg.fit_restarts, seed=(seed, j))
        eta = model.incumbent

        if method == "MPI":
            def score(X, _m=model, _eta=eta):
                mu, var = gp_surrogate.predict_diag(_m, X)
                return -mpi(mu, var, _eta)
        else:
            def score(X, _m=model):
                mu, var = gp_surrogate.predict_diag(_m, X)
                return gp_lcb(mu, var, beta=1.0)

        t0 = time.perf_counter()
        report = direct_minimize(score, domain, gcfg.acquisition_budget(domain.dim), batched=True)
        y = float(objective(report.best_point))
        elapsed = time.perf_counter() - t0 if gcfg.record_timing else 0.0
        evaluations.append(EvaluationRecord(report.best_point, y, float(report.best_value), 0, elapsed))
        dataset = dataset.with_observation(report.best_point, y)
    return glasses_loss._finish_history(dataset, budget, domain, gcfg, seed, evaluations, [])


def _run_replicate(cfg: ExperimentConfig, replicate: int) -> GapRecord:
    fn = test_functions.lookup(cfg.function)
    domain = fn.domain
    budget = cfg.budget or 10 * fn.dim
    method, k = parse_method(cfg.method)
    rep_seed = cfg.seed + replicate

    init_rng = np.random.default_rng(rep_seed)  # method-independent init design
    X0 = domain.sample(init_rng, cfg.init_points)
    y0 = fn.evaluator(X0)
    if cfg.noise_std > 0.0:
        noise_rng = np.random.default_rng((rep_seed, 1))
        y0 = y0 + cfg.noise_std * noise_rng.standard_normal(y0.shape)

        def objective(x):
            return float(fn.evaluator(np.asarray(x))[0]) + cfg.noise_std * float(
                noise_rng.standard_normal()
            )
    else:
        def objective(x):
            return float(fn.evaluator(np.asarray(x))[0])

    initial = Dataset(X0, y0)
    y_first = float(np.min(y0))
    started = time.perf_counter()
    try:
        gcfg = _glasses_config(cfg, method, k, fn.dim)
        if method in ("MPI", "GP-LCB"):
            history = _run_baseline(objective, initial, budget, domain, method, rep_seed, gcfg)
        else:
            history = glasses_loss.run(objective, initial, budget, domain, gcfg, seed=rep_seed)
        y_best = min(y_first, min((rec.y for rec in history.evaluations), default=np.inf))
        g = gap(y_first, y_best, fn.optimum_value)
        wall = time.perf_counter() - started if cfg.record_timing else 0.0
        return GapRecord(fn.name, method, rep_seed, g, y_first, y_best,
                         fn.optimum_value, budget, wall, history)
    except Exception as err:  # diagnostic row, not silently dropped
        wall = time.perf_counter() - started if cfg.record_timing else 0.0
        return GapRecord(fn.name, method, rep_seed, float("nan"), y_first, float("nan"),
                         fn.optimum_value, budget, wall, None, error=str(err))


def run_experiment(cfg: ExperimentConfig) -> list[GapRecord]:
    """Replicated runs of one (function, method) cell; canonically sorted."""
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            records = list(pool.map(lambda r: _run_replicate(cfg, r), range(cfg.replicates)))
    else:
        records = [_run_replicate(cfg, r) for r in range(cfg.replicates)]
    records.sort(key=lambda rec: (rec.function, rec.method, rec.seed))
    return records


@dataclass
class SummaryRow:
    function: str
    method: str
    mean_gap: float
    stderr: float
    replicates: int
    best: bool = False


def summarize(records: list[GapRecord], *, normalize: bool = False) -> list[SummaryRow]:
    """Per (function, method) mean gap and standard error.

    With ``normalize`` the gaps are first divided, per (function, seed), by
    the largest gap any method achieved for that seed.  Records carrying an
    error are excluded (they are diagnostics, not measurements).
    """
    records = [r for r in records if r.error is None and np.isfinite(r.gap)]
    if not records:
        raise ValueError("no valid records to summarise")
    gaps = {(r.function, r.method, r.seed): r.gap for r in records}
    if normalize:
        by_cell: dict = {}
        for (fn, method, seed), g in gaps.items():
            by_cell.setdefault((fn, seed), []).append(g)
        norm = {cell: max(vals) for cell, vals in by_cell.items()}
        gaps = {
            key: (g / norm[(key[0], key[2])] if norm[(key[0], key[2])] > 0 else g)
            for key, g in gaps.items()
        }

    grouped: dict = {}
    for (fn, method, _seed), g in gaps.items():
        grouped.setdefault((fn, method), []).append(g)
    rows = []
    for (fn, method), vals in sorted(grouped.items()):
        vals = np.asarray(vals, dtype=float)
        stderr = float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
        rows.append(SummaryRow(fn, method, float(vals.mean()), stderr, len(vals)))
    for fn in {row.function for row in rows}:
        fn_rows = [row for row in rows if row.function == fn]
        best = max(fn_rows, key=lambda row: row.mean_gap)
        best.best = True
    return rows


def render_summary(rows: list[SummaryRow], *, normalized: bool = False) -> str:
    lines = []
    if normalized:
        lines.append("# gaps normalised per (function, seed) by the best method")
    lines.append(f"{'function':<14} {'method':<8} {'mean gap':>9} {'stderr':>8} {'n':>3}  best")
    for row in rows:
        flag = "*" if row.best else ""
        lines.append(
            f"{row.function:<14} {row.method:<8} {row.mean_gap:>9.4f} {row.stderr:>8.4f} "
            f"{row.replicates:>3}  {flag}"
        )
    return "\n".join(lines)


def _format_float(x: float) -> str:
    return repr(float(x))


def records_to_csv(records: list[GapRecord]) -> str:
    buf = io.StringIO()
    buf.write(CSV_HEADER + "\n")
    for r in records:
        buf.write(
            ",".join(
                [
                    r.function,
                    r.method,
                    str(r.seed),
                    _format_float(r.gap),
                    _format_float(r.y_first),
                    _format_float(r.y_best),
                    _format_float(r.y_opt),
                    str(r.budget),
                    _format_float(r.wall_time_s),
                ]
            )
            + "\n"
        )
    return buf.getvalue()


def records_from_csv(text: str) -> list[GapRecord]:
    reader = csv.DictReader(io.StringIO(text))
    expected = CSV_HEADER.split(",")
    if reader.fieldnames != expected:
        raise ConfigError(f"CSV header mismatch: expected {expected}, got {reader.fieldnames}")
    records = []
    for row in reader:
        records.append(
            GapRecord(
                function=row["function"],
                method=row["method"],
                seed=int(row["seed"]),
                gap=float(row["gap"]),
                y_first=float(row["y_first"]),
                y_best=float(row["y_best"]),
                y_opt=float(row["y_opt"]),
                budget=int(row["budget"]),
                wall_time_s=float(row["wall_time_s"]),
            )
        )
    return records


def write_outputs(records: list[GapRecord], cfg: ExperimentConfig):
    csv_text = records_to_csv(records)
    if cfg.out:
        Path(cfg.out).parent.mkdir(parents=True, exist_ok=True)
        Path(cfg.out).write_text(csv_text)
    if cfg.json_out:
        out_dir = Path(cfg.json_out)
        out_dir.mkdir(parents=True, exist_ok=True)
        for r in records:
            if r.history is None:
                continue
            name = f"{r.function}_{r.method}_{r.seed}.json"
            (out_dir / name).write_text(r.history.to_json(include_timing=cfg.record_timing))
    return csv_text


# ----------------------------------------------------------------- CLI


def _add_run_flags(p: argparse.ArgumentParser):
    p.add_argument("--function", help="objective name (see list-functions)")
    p.add_argument("--method", help="method name (see list-methods)")
    p.add_argument("--replicates", type=int)
    p.add_argument("--init-points", type=int, dest="init_points")
    p.add_argument("--budget", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--acquisition-budget", type=int, dest="acquisition_budget")
    p.add_argument("--steps-budget", type=int, dest="steps_budget")
    p.add_argument("--fit-restarts", type=int, dest="fit_restarts")
    p.add_argument("--noise-std", type=float, dest="noise_std")
    p.add_argument("--workers", type=int)
    p.add_argument("--timings", action="store_true", dest="record_timing", default=None,
                   help="record real wall times (breaks byte-determinism of outputs)")
    p.add_argument("--out", help="CSV output path")
    p.add_argument("--json-out", dest="json_out", help="directory for JSON run histories")
    p.add_argument("--config", help="JSON config file; CLI flags override its keys")


def _build_config(args: argparse.Namespace) -> ExperimentConfig:
    values: dict = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            values.update(json.loads(path.read_text()))
        except json.JSONDecodeError as err:
            raise ConfigError(f"config file is not valid JSON: {err}") from err
    for key in (
        "function", "method", "replicates", "init_points", "budget", "seed",
        "acquisition_budget", "steps_budget", "fit_restarts", "noise_std",
        "workers", "record_timing", "out", "json_out",
    ):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    if "function" not in values or "method" not in values:
        raise ConfigError("--function and --method are required (flag or config file)")
    try:
        return ExperimentConfig(**values)
    except TypeError as err:
        raise ConfigError(f"bad config key: {err}") from err
    except KeyError as err:
        raise ConfigError(str(err)) from err


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="bench", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    p_run = sub.add_parser("run", help="run replicated BO experiments")
    _add_run_flags(p_run)

    p_sum = sub.add_parser("summarize", help="summarise result CSVs")
    p_sum.add_argument("--in", dest="inputs", nargs="+", required=True, help="CSV paths")
    p_sum.add_argument("--normalize", action="store_true")

    sub.add_parser("list-functions", help="list benchmark objectives")
    sub.add_parser("list-methods", help="list methods")

    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return 2

    if args.command == "list-functions":
        for fn in test_functions.registry():
            lo = ", ".join(f"{v:g}" for v in fn.domain.lower)
            hi = ", ".join(f"{v:g}" for v in fn.domain.upper)
            print(f"{fn.name:<12} q={fn.dim:<3} domain=[{lo}] .. [{hi}]  min={fn.optimum_value:.6g}")
        return 0

    if args.command == "list-methods":
        for m in LISTED_METHODS:
            print(m)
        return 0

    if args.command == "summarize":
        try:
            records = []
            for path in args.inputs:
                p = Path(path)
                if not p.exists():
                    raise ConfigError(f"input not found: {p}")
                records.extend(records_from_csv(p.read_text()))
            rows = summarize(records, normalize=args.normalize)
        except (ConfigError, ValueError) as err:
            print(f"error: {err}", file=sys.stderr)
            return 2
        print(render_summary(rows, normalized=args.normalize))
        return 0

    # run
    try:
        cfg = _build_config(args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    try:
        records = run_experiment(cfg)
        csv_text = write_outputs(records, cfg)
    except Exception as err:
        print(f"run failure: {err}", file=sys.stderr)
        return 3
    failures = [r for r in records if r.error is not None]
    sys.stdout.write(csv_text)
    for r in failures:
        print(f"diagnostic: replicate seed={r.seed} failed: {r.error}", file=sys.stderr)
    return 3 if len(failures) == len(records) else 0


if __name__ == "__main__":
    sys.exit(main())
