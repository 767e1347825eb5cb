import numpy as np
import pytest

from glassesbo.bench_harness import (
    CSV_HEADER,
    ConfigError,
    DegenerateRunError,
    ExperimentConfig,
    GapRecord,
    gap,
    main,
    parse_method,
    records_from_csv,
    records_to_csv,
    run_experiment,
    summarize,
)
from glassesbo.test_functions import lookup


def tiny_cfg(**kw):
    defaults = dict(
        function="SinCos",
        method="EL",
        replicates=2,
        init_points=4,
        budget=2,
        seed=0,
        acquisition_budget=40,
        steps_budget=40,
        fit_restarts=2,
    )
    defaults.update(kw)
    return ExperimentConfig(**defaults)


# ------------------------------------------------------------------- gap


def test_gap_no_progress():
    assert gap(10.0, 10.0, 0.0) == 0.0


def test_gap_optimum_reached():
    assert gap(10.0, 0.0, 0.0) == 1.0


def test_gap_arithmetic():
    assert gap(10.0, 4.0, 0.0) == pytest.approx(0.6)


def test_gap_clamped():
    assert gap(10.0, -5.0, 0.0) == 1.0  # past the reference optimum
    assert gap(10.0, 12.0, 0.0) == 0.0  # regressions clamp at zero


def test_gap_degenerate():
    with pytest.raises(DegenerateRunError):
        gap(1.0, 0.5, 1.0)


# ----------------------------------------------------------- method names


def test_parse_method():
    assert parse_method("EL") == ("EL", None)
    assert parse_method("el-3") == ("EL-3", 3)
    assert parse_method("glasses") == ("GLASSES", None)
    assert parse_method("gp-lcb") == ("GP-LCB", None)
    with pytest.raises(ConfigError):
        parse_method("EI")


def test_config_validation():
    with pytest.raises(ConfigError):
        tiny_cfg(replicates=0)
    with pytest.raises(ConfigError):
        tiny_cfg(function="nope")
    with pytest.raises(ConfigError):
        tiny_cfg(method="nope")


# -------------------------------------------------------------- experiment


def test_run_experiment_deterministic():
    cfg = tiny_cfg()
    a = run_experiment(cfg)
    b = run_experiment(cfg)
    assert records_to_csv(a) == records_to_csv(b)


def test_el1_identical_to_el():
    a = run_experiment(tiny_cfg(method="EL", replicates=1))
    b = run_experiment(tiny_cfg(method="EL-1", replicates=1))
    ra, rb = a[0], b[0]
    assert ra.gap == rb.gap
    assert ra.y_best == rb.y_best
    assert [e.y for e in ra.history.evaluations] == [e.y for e in rb.history.evaluations]


def test_methods_share_initial_design_per_seed():
    fn = lookup("SinCos")
    recs = {}
    for method in ("EL", "MPI", "GP-LCB", "EL-2"):
        recs[method] = run_experiment(tiny_cfg(method=method, replicates=2))
    # y_first depends only on the init design, which is seeded per replicate
    for r in range(2):
        firsts = {m: recs[m][r].y_first for m in recs}
        assert len(set(firsts.values())) == 1
        # reconstruct the documented init draw
        rng = np.random.default_rng(0 + r)
        X0 = fn.domain.sample(rng, 4)
        assert min(firsts.values()) == pytest.approx(float(np.min(fn.evaluator(X0))))


def test_run_counts_match_budget():
    records = run_experiment(tiny_cfg(method="EL-2", budget=3, replicates=1))
    assert len(records[0].history.evaluations) == 3


def test_failed_replicate_becomes_diagnostic_row():
    # y_first == y_opt is impossible with random init on SinCos, so force a
    # failure through a function whose evaluation domain errors instead:
    # easiest is a method that hits the dimension cap
    cfg = tiny_cfg(function="SinCos", method="GLASSES", budget=80, replicates=1,
                   acquisition_budget=10, steps_budget=10, fit_restarts=1)
    records = run_experiment(cfg)
    assert len(records) == 1
    assert records[0].error is not None
    assert np.isnan(records[0].gap)
    text = records_to_csv(records)
    assert "nan" in text.split("\n")[1]


# --------------------------------------------------------------- summarize


def synth_records():
    rows = []
    for method, gaps in (("A", [0.2, 0.4]), ("B", [0.4, 0.8])):
        for seed, g in enumerate(gaps):
            rows.append(GapRecord("F", method, seed, g, 1.0, 1.0 - g, 0.0, 4))
    return rows


def test_summarize_single_record():
    rows = summarize([GapRecord("F", "A", 0, 0.5, 1.0, 0.5, 0.0, 4)])
    assert rows[0].mean_gap == 0.5
    assert rows[0].stderr == 0.0
    assert rows[0].replicates == 1
    assert rows[0].best


def test_summarize_means_without_normalization():
    rows = {r.method: r for r in summarize(synth_records())}
    assert rows["A"].mean_gap == pytest.approx(0.3)
    assert rows["B"].mean_gap == pytest.approx(0.6)
    assert rows["B"].best and not rows["A"].best


def test_summarize_normalized_per_seed():
    rows = {r.method: r for r in summarize(synth_records(), normalize=True)}
    # per seed the max across methods becomes 1
    assert rows["B"].mean_gap == pytest.approx(1.0)
    assert rows["A"].mean_gap == pytest.approx(0.5)


def test_summarize_roundtrip_idempotent():
    records = run_experiment(tiny_cfg())
    direct = summarize(records)
    reloaded = summarize(records_from_csv(records_to_csv(records)))
    assert [(r.function, r.method, r.mean_gap, r.stderr) for r in direct] == [
        (r.function, r.method, r.mean_gap, r.stderr) for r in reloaded
    ]


def test_csv_header_exact():
    assert CSV_HEADER == "function,method,seed,gap,y_first,y_best,y_opt,budget,wall_time_s"
    records = run_experiment(tiny_cfg(replicates=1))
    assert records_to_csv(records).splitlines()[0] == CSV_HEADER


# --------------------------------------------------------------------- CLI


def test_cli_list_commands(capsys):
    assert main(["list-functions"]) == 0
    out = capsys.readouterr().out
    assert "Branin" in out and "Alpine2-10" in out
    assert main(["list-methods"]) == 0
    out = capsys.readouterr().out
    assert "GLASSES" in out and "EL-10" in out


def test_cli_config_errors(capsys):
    assert main(["run", "--function", "SinCos", "--method", "EI"]) == 2
    assert main(["run", "--method", "EL"]) == 2
    assert main(["summarize", "--in", "/nonexistent.csv"]) == 2
    assert main([]) == 2


def test_cli_run_and_summarize_roundtrip(tmp_path, capsys):
    out = tmp_path / "res.csv"
    args = [
        "run", "--function", "SinCos", "--method", "EL", "--replicates", "1",
        "--budget", "2", "--seed", "1", "--init-points", "4",
        "--acquisition-budget", "40", "--fit-restarts", "2",
        "--out", str(out),
    ]
    assert main(args) == 0
    captured = capsys.readouterr().out
    assert captured.splitlines()[0] == CSV_HEADER
    assert out.exists()
    assert main(["summarize", "--in", str(out)]) == 0
    text = capsys.readouterr().out
    assert "SinCos" in text and "EL" in text


def test_cli_config_file_with_overrides(tmp_path, capsys):
    import json

    cfgfile = tmp_path / "cfg.json"
    cfgfile.write_text(json.dumps({
        "function": "SinCos", "method": "EL", "replicates": 1, "budget": 2,
        "init_points": 4, "acquisition_budget": 40, "fit_restarts": 2, "seed": 3,
    }))
    out = tmp_path / "a.csv"
    assert main(["run", "--config", str(cfgfile), "--out", str(out)]) == 0
    capsys.readouterr()
    # CLI flag overrides the file
    out2 = tmp_path / "b.csv"
    assert main(["run", "--config", str(cfgfile), "--seed", "4", "--out", str(out2)]) == 0
    capsys.readouterr()
    a = records_from_csv(out.read_text())
    b = records_from_csv(out2.read_text())
    assert a[0].seed == 3 and b[0].seed == 4


def test_cli_json_histories(tmp_path, capsys):
    out_dir = tmp_path / "hist"
    args = [
        "run", "--function", "SinCos", "--method", "EL", "--replicates", "1",
        "--budget", "2", "--seed", "1", "--init-points", "4",
        "--acquisition-budget", "40", "--fit-restarts", "2",
        "--json-out", str(out_dir),
    ]
    assert main(args) == 0
    capsys.readouterr()
    import json

    files = list(out_dir.glob("*.json"))
    assert len(files) == 1
    payload = json.loads(files[0].read_text())
    assert len(payload["evaluations"]) == 2
