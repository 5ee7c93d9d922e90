"""Scenario driver, cost report, and CLI surface."""

import json

from mpsim import cli, harness


# --- cycle report ---------------------------------------------------------

def test_report_zero_weights_zero_total(corpus_runs):
    metrics = corpus_runs["hello_sealed"].metrics
    zero = {k: 0 for k in harness.DEFAULT_WEIGHTS}
    rep = harness.cycle_report(metrics, zero)
    assert rep["total_cycles"] == 0
    assert all(row["cycles"] == 0 for row in rep["rows"])


def test_report_is_linear_in_counts(corpus_runs):
    metrics = corpus_runs["hello_sealed"].metrics
    doubled = dict(metrics)
    doubled["guardian_entries"] = {
        k: 2 * v for k, v in metrics["guardian_entries"].items()}
    doubled["context_switches"] = 2 * metrics["context_switches"]
    one = harness.cycle_report(metrics)
    two = harness.cycle_report(doubled)
    assert two["total_cycles"] == 2 * one["total_cycles"]


def test_report_rows_decompose_by_leg(corpus_runs):
    metrics = corpus_runs["hello_sealed"].metrics
    rep = harness.cycle_report(metrics)
    w = harness.DEFAULT_WEIGHTS
    by_event = {row["event"]: row for row in rep["rows"]}
    for name, count in metrics["guardian_entries"].items():
        row = by_event[name]
        assert row["count"] == count
        assert row["cycles_each"] == sum(w[leg] for leg in harness.ENTRY_LEGS[name])
        assert row["cycles"] == row["count"] * row["cycles_each"]
    eret = by_event["switch_eret"]
    assert eret["count"] == metrics["context_switches"]
    assert eret["cycles_each"] == w["kernel_to_user"]
    assert rep["total_cycles"] == sum(row["cycles"] for row in rep["rows"])


def _entry_cost_per_switch(run):
    first, last = run.snapshots[0], run.snapshots[-1]
    entries = lambda snap: sum(snap["metrics"]["guardian_entries"].values())
    de = entries(last) - entries(first)
    ds = (last["metrics"]["context_switches"]
          - first["metrics"]["context_switches"])
    return de / ds


def test_switch_entry_ratios(corpus_runs):
    assert _entry_cost_per_switch(corpus_runs["switch_pair_sealed"]) == 3.0
    assert _entry_cost_per_switch(corpus_runs["switch_pair_plain"]) == 1.0


# --- result plumbing ------------------------------------------------------

def test_result_to_dict_is_json_clean(corpus_runs):
    for run in corpus_runs.values():
        payload = json.dumps(run.to_dict())
        back = json.loads(payload)
        assert back["steps"] == run.steps
        assert back["deadlocked"] == run.deadlocked


def test_corpus_size_and_names_unique():
    names = list(harness.corpus())
    assert len(names) >= 20
    assert len(set(names)) == len(names)


def test_bad_scenario_rejected():
    import pytest
    with pytest.raises(harness.ScenarioError):
        harness.run_scenario({"programs": [{"prog": "no_such_prog"}]}, "bad")


# --- CLI ------------------------------------------------------------------

def test_cli_adapt_verify_roundtrip(tmp_path, capsys):
    plain = tmp_path / "hello.mpel"
    sealed = tmp_path / "hello.sealed"
    plain.write_bytes(harness._program_blob({"prog": "hello"}))

    assert cli.main(["adapt", "--in", str(plain), "--out", str(sealed),
                     "--seed", "7"]) == 0
    assert cli.main(["verify", "--in", str(sealed)]) == 0
    out = capsys.readouterr().out
    assert "OK: entry=0x" in out

    blob = bytearray(sealed.read_bytes())
    blob[len(blob) // 2] ^= 0x40
    sealed.write_bytes(bytes(blob))
    assert cli.main(["verify", "--in", str(sealed)]) == 1
    assert "REJECTED" in capsys.readouterr().out


def test_cli_verify_rejects_plain(tmp_path, capsys):
    plain = tmp_path / "p.mpel"
    plain.write_bytes(harness._program_blob({"prog": "hello"}))
    assert cli.main(["verify", "--in", str(plain)]) == 1


def test_cli_run_by_corpus_name(tmp_path, capsys):
    out = tmp_path / "run.json"
    assert cli.main(["run", "--scenario", "hello_sealed",
                     "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "hello_sealed" in text and "exit=0" in text
    payload = json.loads(out.read_text())
    assert payload["processes"]["1"]["exit_code"] == 0


def test_cli_run_scenario_file(tmp_path, capsys):
    sc = harness._sc([{"prog": "hello", "sensitive": False}])
    path = tmp_path / "sc.json"
    path.write_text(json.dumps(sc))
    assert cli.main(["run", "--scenario", str(path), "--json"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["processes"]["1"]["exit_code"] == 0


def test_cli_report_totals(tmp_path, capsys):
    run = harness.run_scenario(harness.corpus()["hello_sealed"], "hello_sealed")
    metrics_file = tmp_path / "metrics.json"
    metrics_file.write_text(json.dumps(run.to_dict()))
    assert cli.main(["report", "--metrics", str(metrics_file)]) == 0
    text = capsys.readouterr().out
    expected = harness.cycle_report(run.metrics)["total_cycles"]
    assert f"{expected} cycles" in text


def test_cli_explore_exit_codes(capsys):
    assert cli.main(["explore", "--scenario", "exhaustive_futex",
                     "--depth", "4"]) == 0
    assert "no lost wakeups" in capsys.readouterr().out
