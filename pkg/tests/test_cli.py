import csv
import json
import subprocess
import sys

import pytest

from hasl_osc.cli import EXIT_ESTIMATION, EXIT_INVALID, EXIT_OK, EXIT_USAGE, main
from hasl_osc.desp import GspnModel, Transition, save_model

ERLANG = ["--model", "builtin:erlang,rate=2", "--lha", "builtin:count,N=3,event=T,observed=P"]


def run_json(tmp_path, *extra):
    out = tmp_path / "r.json"
    assert main(["run", *ERLANG, "--out", str(out), "--no-plot", *extra]) == EXIT_OK
    return json.loads(out.read_text())


def test_run_reports_the_erlang_mean(tmp_path):
    doc = run_json(tmp_path, "--expr", "E[last(t)]", "--halfwidth", "0.03", "--seed", "42")
    (r,) = doc["reports"]
    assert r["ci_low"] <= 1.5 <= r["ci_high"] and r["halfwidth"] <= 0.03
    assert doc["experiment"]["seed"] == 42 and r["stop"] == "halfwidth"


def test_histogram_side_outputs(tmp_path):
    out = tmp_path / "h.json"
    code = main(["run", *ERLANG, "--expr", "PDF(last(t),0.1,0,5)", "--samples", "300", "--out", str(out)])
    assert code == EXIT_OK
    rows = list(csv.reader(open(tmp_path / "h.hist.csv")))
    assert rows[0] == ["bin_low", "bin_high", "frequency", "count"] and len(rows) == 51
    assert sum(int(r[3]) for r in rows[1:]) <= 300
    assert (tmp_path / "h.hist.png").stat().st_size > 0


def test_csv_summary_keeps_the_full_report(tmp_path):
    out = tmp_path / "s.csv"
    assert main(["run", *ERLANG, "--samples", "50", "--format", "csv", "--out", str(out), "--no-plot"]) == 0
    rows = list(csv.reader(open(out)))
    assert rows[0][:2] == ["expression", "estimate"] and rows[1][0] == "E[last(t)]"
    assert json.loads((tmp_path / "s.json").read_text())["reports"][0]["samples_used"] == 50


def test_seed_from_environment(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("OSC_SEED", "17")
    doc = run_json(tmp_path, "--samples", "20")
    assert doc["experiment"]["seed"] == 17 and doc["reports"][0]["seed"] == 17


def test_malformed_expression_exits_with_position(capsys):
    assert main(["run", *ERLANG, "--expr", "E[last(t) +]"]) == EXIT_INVALID
    assert "position" in capsys.readouterr().err


def test_unknown_name_is_invalid(capsys):
    assert main(["run", *ERLANG, "--expr", "E[last(zz)]", "--samples", "5"]) == EXIT_INVALID
    assert "zz" in capsys.readouterr().err


def test_all_rejected_is_an_estimation_failure(capsys):
    assert main(["run", *ERLANG, "--samples", "10", "--max-time", "1e-6"]) == EXIT_ESTIMATION
    assert "no usable trajectory" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["run", "--model", "builtin:erlang"],
    ["run", "--model", "builtin:nosuch", "--lha", "builtin:count"],
    ["run", "--model", "builtin:erlang,rate=x", "--lha", "builtin:count"],
    ["sweep", *ERLANG, "--sweep", "N="],
    ["sweep", *ERLANG, "--sweep", "gamma=1,2"],
])
def test_usage_errors(argv, capsys):
    assert main(argv) == EXIT_USAGE


def test_export_and_reload_give_the_same_report(tmp_path):
    mpath, apath = tmp_path / "m.json", tmp_path / "a.json"
    assert main(["export", "--model", "builtin:gene", "--out", str(mpath)]) == 0
    assert main(["export", "--model", "builtin:gene", "--lha", "builtin:count,N=3", "--out", str(apath)]) == 0
    common = ["--expr", "E[last(t)]", "--expr", "E[max(a)]", "--samples", "200", "--seed", "5", "--no-plot"]
    a, b = tmp_path / "a.out.json", tmp_path / "b.out.json"
    assert main(["run", "--model", "builtin:gene", "--lha", "builtin:count,N=3", *common, "--out", str(a)]) == 0
    assert main(["run", "--model", str(mpath), "--lha", str(apath), *common, "--out", str(b)]) == 0
    ra, rb = (json.loads(p.read_text())["reports"] for p in (a, b))
    for x, y in zip(ra, rb):
        assert (x["point_estimate"], x["ci_low"], x["ci_high"]) == (y["point_estimate"], y["ci_low"], y["ci_high"])


def test_nondeterministic_automaton_file_is_rejected(tmp_path, capsys):
    bad = {"variables": [], "locations": [{"name": "a"}, {"name": "b"}], "initial": ["a", "b"],
           "final": ["b"], "edges": []}
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(bad))
    assert main(["run", "--model", "builtin:erlang", "--lha", str(path), "--expr", "P"]) == EXIT_INVALID
    assert "c1" in capsys.readouterr().err


def test_sweep_writes_csv_json_and_png(tmp_path):
    out = tmp_path / "sw.csv"
    code = main(["sweep", *ERLANG, "--sweep", "N=1,2,4", "--expr", "E[last(t)]", "--expr", "P",
                 "--halfwidth", "0.05", "--out", str(out)])
    assert code == EXIT_OK
    rows = list(csv.DictReader(open(out)))
    assert [r["param"] for r in rows] == ["1", "2", "4"]
    means = [float(r["estimate"]) for r in rows]
    assert means == sorted(means)
    # a loose check: coverage of the interval itself is measured in the acceptance suite
    for n, m, r in zip((1, 2, 4), means, rows):
        assert abs(m - n / 2) <= 2 * (float(r["ci_high"]) - m)
    assert (tmp_path / "sw.expr1.csv").exists() and (tmp_path / "sw.png").exists()
    doc = json.loads((tmp_path / "sw.json").read_text())
    assert [p["seed"] for p in doc["points"]] == [0, 1, 2]


def test_trace_command(tmp_path):
    out = tmp_path / "c.tsv"
    assert main(["trace", "--model", "builtin:circadian", "--horizon", "20", "--out", str(out), "--seed", "1"]) == 0
    header = open(tmp_path / "c.csv").readline().strip()
    assert header == "time,D_A,D'_A,D_R,D'_R,M_A,M_R,A,R,C"
    assert (tmp_path / "c.png").stat().st_size > 0
    assert main(["trace", "--model", "builtin:circadian", "--horizon", "0", "--out", str(out), "--no-plot"]) == 0
    assert open(tmp_path / "c.csv").read().splitlines() == ["time,D_A,D'_A,D_R,D'_R,M_A,M_R,A,R,C"]
    assert main(["trace", "--model", "builtin:circadian", "--horizon", "-1", "--out", str(out)]) == EXIT_USAGE


def test_trace_of_a_deadlocking_net(tmp_path):
    mpath = tmp_path / "death.json"
    save_model(GspnModel(["P"], [Transition.make("die", {"P": 1}, {}, "P")], {"P": 4}), mpath)
    out = tmp_path / "d.tsv"
    assert main(["trace", "--model", str(mpath), "--horizon", "1000", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[-1].startswith("# deadlock at") and len([x for x in lines if not x.startswith("#")]) == 4


def test_run_trace_out_has_a_verdict_footer(tmp_path):
    trace = tmp_path / "run.tsv"
    assert main(["run", *ERLANG, "--samples", "5", "--no-plot", "--out", str(tmp_path / "r.json"),
                 "--trace-out", str(trace)]) == 0
    lines = trace.read_text().splitlines()
    assert lines[-1] == "# verdict: accepted (final)"
    assert len([x for x in lines if not x.startswith("#")]) == 3


def test_peaks_run_writes_the_peak_table(tmp_path):
    out = tmp_path / "p.json"
    code = main(["run", "--model", "builtin:circadian", "--lha", "builtin:peaks,species=A,delta=150,N=3,bound=4000",
                 "--samples", "3", "--out", str(out)])
    assert code == EXIT_OK
    rows = list(csv.reader(open(tmp_path / "p.peaks.csv")))
    assert rows[0] == ["level", "frequency_max", "frequency_min"]
    assert sum(float(r[1]) for r in rows[1:]) == pytest.approx(1.0)
    assert (tmp_path / "p.peaks.png").exists()


def test_console_script_is_installed():
    done = subprocess.run([sys.executable, "-m", "hasl_osc.cli", "--help"], capture_output=True, text=True)
    assert done.returncode == 0 and "run" in done.stdout
    done = subprocess.run(["hasl-osc", "export", "--help"], capture_output=True, text=True)
    assert done.returncode == 0
