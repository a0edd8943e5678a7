import json
import math
import shutil

import pytest
from click.testing import CliRunner

from inversor.cli import main
from inversor.errors import ConfigurationError
from inversor.harness import (ExperimentConfig, InversionInstance, TrialResult, load_dataset,
                              mean_stderr, read_results, report, run_experiment, save_dataset,
                              summarize, validate_dataset)
from inversor.ngram import data_path, toy_model

SMALL = {"generations": 3, "ga": {"population_size": 12, "tournament_size": 3}}


@pytest.fixture()
def dataset(tmp_path):
    insts = load_dataset(data_path("toy_benchmark.jsonl"))[:2]
    path = tmp_path / "ds.jsonl"
    save_dataset(path, insts)
    return path


def config(dataset, **kw):
    return ExperimentConfig(dataset=str(dataset), **{**SMALL, **kw})


def lines(path):
    return [json.loads(l) for l in open(path)]


def test_one_line_per_instance_and_trial(dataset, tmp_path, toy):
    out = tmp_path / "r.jsonl"
    run_experiment(config(dataset, trials=3), out, model=toy)
    recs = lines(out)
    assert len(recs) == 6
    assert {(r["instance_id"], r["trial"]) for r in recs} == \
        {(i, k) for i in ("toy-00", "toy-01") for k in range(3)}
    assert all(TrialResult.from_json(r).status == "ok" for r in recs)


@pytest.mark.parametrize("algorithm", ["ga", "pso"])
def test_zero_iterations_before_equals_after(dataset, tmp_path, toy, algorithm):
    out = tmp_path / "r.jsonl"
    cfg = config(dataset, trials=1, algorithm=algorithm, max_iterations=0,
                 pso={"swarm_size": 6, "dimension": 16, "max_sample_len": 8})
    for r in run_experiment(cfg, out, model=toy):
        before = {k: v for k, v in r.before.items()}
        assert before == r.after and r.iterations == 0


def test_results_round_trip(dataset, tmp_path, toy):
    out = tmp_path / "r.jsonl"
    results = run_experiment(config(dataset, trials=1), out, model=toy)
    assert read_results([out]) == results


def test_failures_recorded_and_run_continues(tmp_path, toy):
    path = tmp_path / "ds.jsonl"
    save_dataset(path, [InversionInstance("bad", "the fox", "zzz unknown"),
                        InversionInstance("good", "the fox", "ran to the river")])
    out = tmp_path / "r.jsonl"
    results = run_experiment(config(path, trials=1), out, model=toy)
    assert [r.status for r in results] == ["failed", "ok"]
    assert "vocabulary" in results[0].failure
    assert len(lines(out)) == 2


def test_zero_baseline_trial_fails(tmp_path):
    m = toy_model(hard_zero_tokens=["river"])
    path = tmp_path / "ds.jsonl"
    save_dataset(path, [InversionInstance("z", "the fox", "ran to the river")])
    r = run_experiment(config(path, trials=1), tmp_path / "r.jsonl", model=m)[0]
    assert r.status == "failed" and "zero baseline" in r.failure


def test_deterministic_results(dataset, tmp_path, toy):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    for out in (a, b):
        run_experiment(config(dataset, trials=2, objective="progressive"), out, model=toy)
    strip = lambda p: [{k: v for k, v in r.items() if k != "timestamp"} for r in lines(p)]
    assert strip(a) == strip(b)


def test_config_validation(dataset):
    for bad in [dict(trials=0), dict(timeout=0.0), dict(algorithm="sa"), dict(objective="half"),
                dict(init="magic"), dict(ga={"population_size": 1}), dict(ga={"bogus": 1})]:
        with pytest.raises(ConfigurationError):
            config(dataset, **bad).validate()
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict({"dataset": "x", "colour": "red"})


def test_missing_provider_fails_fast(dataset, tmp_path, toy):
    with pytest.raises(ConfigurationError, match="inverter"):
        run_experiment(config(dataset, init="inversion"), tmp_path / "r.jsonl", model=toy)


def test_echo_inverter_and_injection(dataset, tmp_path, toy):
    cfg = config(dataset, trials=1, init="inversion_sample", inverter="echo:the,a",
                 inject_original=12, max_iterations=0)
    for r in run_experiment(cfg, tmp_path / "r.jsonl", model=toy):
        assert r.before["exact"] and r.before["weak"]


# -- validation -------------------------------------------------------------

def test_validate_records_baseline(tmp_path, toy):
    path = tmp_path / "ds.jsonl"
    save_dataset(path, [InversionInstance("p", "the fox", "ran to the river")])
    checks = validate_dataset(path, toy)
    assert checks[0].valid
    stored = load_dataset(path)[0].baseline_logprob
    x, y = toy.vocab.encode("the fox"), toy.vocab.encode("ran to the river")
    assert stored == toy.score(x, y).log_likelihood == checks[0].baseline_logprob


def test_validate_flags_problems(tmp_path):
    m = toy_model(hard_zero_tokens=["river"])
    path = tmp_path / "ds.jsonl"
    long_input = " ".join(["the"] * 16)
    save_dataset(path, [
        InversionInstance("zero", "the fox", "ran to the river"),
        InversionInstance("long", long_input, "fox"),
        InversionInstance("ok15", " ".join(["the"] * 15), "fox"),
        InversionInstance("oov", "the fox", "qwerty"),
        InversionInstance("stale", "the fox", "ran", -0.5),
    ])
    checks = {c.id: c for c in validate_dataset(path, m)}
    assert checks["zero"].problems == ["zero baseline probability"]
    assert "16 tokens" in checks["long"].problems[0]
    assert checks["ok15"].valid
    assert not checks["oov"].valid
    assert "differs" in checks["stale"].problems[0]


def test_shipped_benchmark_is_valid(toy, tmp_path):
    path = tmp_path / "bench.jsonl"
    shutil.copy(data_path("toy_benchmark.jsonl"), path)
    checks = validate_dataset(path, toy, write=False)
    assert len(checks) == 30 and all(c.valid for c in checks)


# -- reporting --------------------------------------------------------------

def fake(trial, weak, inst="i0", bench="b", **kw):
    side = {"text": "t", "log_likelihood": -1.0, "weak": weak, "exact": False, "bleu": 0.5,
            "token_f1": 0.25, "cos_sim": None}
    base = dict(instance_id=inst, trial=trial, seed=0, benchmark=bench, model="m",
                algorithm="ga", objective="full", init="random", status="ok",
                baseline_logprob=-1.0, before=dict(side, weak=False), after=side,
                objective_calls=10 * (trial + 1), history=[[0, -2.0], [5, -1.0]])
    base.update(kw)
    return TrialResult(**base)


def test_mean_stderr_hand_values():
    mean, se = mean_stderr([20.0, 40.0, 30.0])
    assert mean == 30.0
    assert se == math.sqrt(((20 - 30) ** 2 + (40 - 30) ** 2 + 0) / 2) / math.sqrt(3)
    assert mean_stderr([7.0]) == (7.0, 0.0)


def test_report_benchmark_means():
    # weak-after rates 0.2, 0.4, 0.3 over ten instances per trial
    recs = [fake(trial, k < hits, inst=f"i{k}")
            for trial, hits in enumerate([2, 4, 3]) for k in range(10)]
    row = summarize(recs)["rows"][0]
    weak = row["metrics"]["weak_after"]
    assert row["trials"] == 3
    assert weak["mean"] == pytest.approx(30.0, abs=1e-12)
    assert weak["stderr"] == pytest.approx(10.0 / math.sqrt(3), abs=1e-12)
    assert row["metrics"]["bleu_after"] == {"mean": 50.0, "stderr": 0.0}
    assert row["metrics"]["cos_sim_after"] is None


def test_single_trial_annotated():
    s = summarize([fake(0, True)])
    row = s["rows"][0]
    assert row["metrics"]["weak_after"] == {"mean": 100.0, "stderr": 0.0}
    assert "single trial" in row["note"]


def test_duplicate_files_identical_summary(dataset, tmp_path, toy):
    out = tmp_path / "r.jsonl"
    run_experiment(config(dataset, trials=2), out, model=toy)
    copy = tmp_path / "copy.jsonl"
    shutil.copy(out, copy)
    assert report([out]) == report([copy]) == report([out, copy])


def test_mixed_benchmarks_refused(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    a.write_text(json.dumps(fake(0, True, bench="one").to_json()) + "\n")
    b.write_text(json.dumps(fake(0, True, bench="two").to_json()) + "\n")
    with pytest.raises(ConfigurationError, match="different benchmarks"):
        report([a, b])


def test_failed_trials_excluded():
    recs = [fake(0, True), fake(0, False, inst="i1", status="failed", before=None, after=None)]
    row = summarize(recs)["rows"][0]
    assert row["failed"] == 1 and row["metrics"]["weak_after"]["mean"] == 100.0


def test_series_output(dataset, tmp_path, toy):
    out = tmp_path / "r.jsonl"
    run_experiment(config(dataset, trials=1), out, model=toy)
    series_path = tmp_path / "series.json"
    report([out], series_path)
    series = json.loads(series_path.read_text())
    points = series["ga/full/random"]
    assert len(points) == 5  # initial, 3 generations, final
    rates = [p["weak_rate"] for p in points]
    assert rates == sorted(rates)


# -- command line -----------------------------------------------------------

def test_cli_end_to_end(dataset, tmp_path):
    runner = CliRunner()
    out = tmp_path / "r.jsonl"
    res = runner.invoke(main, ["validate", str(dataset)])
    assert res.exit_code == 0, res.output
    res = runner.invoke(main, ["invert", "--dataset", str(dataset), "--out", str(out),
                               "--trials", "2", "--generations", "2",
                               "--ga", "population_size=10", "--ga", "tournament_size=2"])
    assert res.exit_code == 0, res.output
    assert len(lines(out)) == 4
    summary = tmp_path / "s.json"
    res = runner.invoke(main, ["report", str(out), "--json", str(summary)])
    assert res.exit_code == 0 and "GA" in res.output
    assert json.loads(summary.read_text())["rows"][0]["trials"] == 2


def test_cli_config_file_overrides_flags(dataset, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"dataset": str(dataset), "trials": 1, "algorithm": "pso",
                               "generations": 2,
                               "pso": {"swarm_size": 4, "dimension": 8, "max_sample_len": 5}}))
    out = tmp_path / "r.jsonl"
    res = CliRunner().invoke(main, ["invert", "--config", str(cfg), "--out", str(out),
                                    "--trials", "3", "--algorithm", "ga"])
    assert res.exit_code == 0, res.output
    recs = lines(out)
    assert len(recs) == 2 and {r["algorithm"] for r in recs} == {"pso"}


def test_cli_validate_nonzero_on_invalid(tmp_path):
    path = tmp_path / "ds.jsonl"
    save_dataset(path, [InversionInstance("long", " ".join(["the"] * 16), "fox")])
    res = CliRunner().invoke(main, ["validate", str(path)])
    assert res.exit_code == 1 and "INVALID long" in res.output


def test_cli_reports_configuration_errors(dataset, tmp_path):
    res = CliRunner().invoke(main, ["invert", "--dataset", str(dataset), "--out",
                                    str(tmp_path / "r.jsonl"), "--init", "inversion"])
    assert res.exit_code == 1 and "inverter" in res.output


def test_cli_build_benchmark(tmp_path):
    out = tmp_path / "b.jsonl"
    res = CliRunner().invoke(main, ["build-benchmark", str(out), "-n", "30"])
    assert res.exit_code == 0
    assert out.read_text() == data_path("toy_benchmark.jsonl").read_text()
