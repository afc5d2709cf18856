import numpy as np
import pytest

from hasl_osc.desp import GspnModel, Transition
from hasl_osc.models import circadian
from hasl_osc.traceio import read_series_csv, read_trace, record, write_series_csv, write_trace


def test_round_trip_is_exact(tmp_path):
    tr = record(circadian(), horizon=5.0, seed=1)
    assert len(tr) > 100 and tr.times[-1] < 5.0 and tr.deadlock is None
    path = tmp_path / "t.tsv"
    write_trace(tr, path)
    back = read_trace(path)
    assert back.places == tr.places and back.events == tr.events and back.horizon == 5.0
    assert np.array_equal(back.times, tr.times) and np.array_equal(back.markings, tr.markings)


def test_markings_follow_the_net():
    m = circadian()
    tr = record(m, horizon=2.0, seed=4)
    prev = np.asarray(m.initial_marking)
    for e, row in zip(tr.events, tr.markings):
        assert np.array_equal(row - prev, m.delta[m.transition_index[e]])
        prev = row


def test_deadlock_footer(tmp_path):
    m = GspnModel(["P"], [Transition.make("die", {"P": 1}, {}, "P")], {"P": 3})
    tr = record(m, horizon=100.0)
    assert len(tr) == 3 and tr.deadlock == tr.times[-1]
    path = tmp_path / "d.tsv"
    write_trace(tr, path)
    assert path.read_text().splitlines()[-1].startswith("# deadlock at")
    assert read_trace(path).deadlock == tr.deadlock


def test_series_csv(tmp_path):
    tr = record(circadian(), horizon=3.0, seed=2)
    path = tmp_path / "s.csv"
    write_series_csv(tr, path, ["A", "R"])
    lines = path.read_text().splitlines()
    assert lines[0] == "time,A,R" and lines[1] == "0.0,0,0"
    assert len(lines) == len(tr) + 2
    assert read_series_csv(path)[-1] == (tr.times[-1], tr.markings[-1, circadian().place_index["A"]])


def test_zero_horizon_gives_a_header_only_csv(tmp_path):
    tr = record(circadian(), horizon=0.0)
    path = tmp_path / "z.csv"
    write_series_csv(tr, path, ["A"])
    assert path.read_text().splitlines() == ["time,A"]


@pytest.mark.parametrize("body, message", [
    ("# places: A\n# initial: 0\n1.0\tinc\n", ":3:"),
    ("# places: A\n# initial: 0\n1.0\tinc\t1,2\n", "entries"),
    ("# places: A\n# initial: 0\n2.0\tinc\t1\n1.0\tdec\t0\n", "backwards"),
    ("# initial: 0\n", "places"),
])
def test_malformed_trace_files(tmp_path, body, message):
    path = tmp_path / "bad.tsv"
    path.write_text(body)
    with pytest.raises(ValueError, match=message):
        read_trace(path)
