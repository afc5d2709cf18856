"""Acceptance criteria: one PASS/FAIL line per criterion, printed at the end of the run.

The circadian experiments are the slow part (several minutes on one core).
"""

import math
import random
from collections import Counter

import pytest

from hasl_osc import expr
from hasl_osc.hasl import CiPolicy, estimate, estimate_joint
from hasl_osc.lha import AUTONOMOUS, Edge, EventSet, Lha, Location, check_determinism
from hasl_osc.models import CircadianRates, circadian, erlang, gene_expression, transcription_counter
from hasl_osc.oscillation import (
    PeaksParams, PeriodParams, batch_statistics, build_Apeaks, build_Aper, classify_events,
    offline_peaks, offline_periods, online_statistics, pilot_peaks,
)
from hasl_osc.sync import ResourceBudget

from conftest import ACCEPTANCE_LINES, as_trace, noisy_periodic, random_times, replay_single, to_events

DELTA_R = (0.1, 0.2, 2.0)
PARTITION = (frozenset(["inc"]), frozenset(["dec"]), frozenset(["nop"]))

pytestmark = pytest.mark.slow


def verdict(name: str, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    assert ok, detail


def circadian_with(delta_R: float):
    return circadian(CircadianRates().with_overrides(delta_R=delta_R))


# ---------------------------------------------------------------------------
# shared circadian runs


@pytest.fixture(scope="module")
def period_runs():
    """Period mean, fluctuation and period PDF for each degradation rate of R."""
    a = build_Aper(PeriodParams(L=1, H=1000, initT=0, N=100))
    zs = ["E[last(tbar_p)]", "E[last(s2_tp)]", "PDF(last(tbar_p),0.1,0,50)"]
    policy = CiPolicy(confidence=0.99, halfwidth=0.5, min_samples=30, batch=8, max_samples=400)
    return {d: estimate_joint(zs, circadian_with(d), a, policy, seed=100 + k, stop_on=[0])
            for k, d in enumerate(DELTA_R)}


@pytest.fixture(scope="module")
def peak_runs():
    """Mean committed maximum and minimum of A and R, with delta from a per-configuration pilot."""
    out = {}
    for k, d in enumerate(DELTA_R):
        model = circadian_with(d)
        names = [t.name for t in model.transitions]
        for species in ("A", "R"):
            pilot = pilot_peaks(model, species, seed=200 + k, trajectories=10, horizon=500.0)
            p = PeaksParams(species, pilot.delta, classify_events(model, species), N=100, bound=pilot.bound)
            mx, mn = estimate_joint(["E[last(Smax/n_M)]", "E[last(Smin/n_m)]"], model,
                                    build_Apeaks(p, names), CiPolicy(halfwidth=None, max_samples=10),
                                    seed=300 + k)
            out[d, species] = (pilot, mx, mn)
    return out


# ---------------------------------------------------------------------------
# criteria


def test_baseline_period(period_runs):
    r = period_runs[0.2][0]
    ok = 23.5 <= r.point_estimate <= 26.5 and r.accepted_count >= 30 and r.confidence == 0.99
    verdict("baseline period", ok,
            f"E[last(tbar_p)] = {r.point_estimate:.3f} [{r.ci_low:.3f}, {r.ci_high:.3f}] "
            f"from {r.accepted_count} accepted trajectories (target [23.5, 26.5])")


def test_period_scaling(period_runs):
    est = {d: period_runs[d][0].point_estimate for d in DELTA_R}
    ok = 10.0 <= est[2.0] <= 11.6 and 38.0 <= est[0.1] <= 43.5 and est[0.1] > est[0.2] > est[2.0]
    verdict("period scaling", ok,
            "delta_R 0.1/0.2/2 -> " + " / ".join(f"{est[d]:.3f}" for d in DELTA_R)
            + " (targets [38, 43.5] and [10, 11.6], strictly decreasing)")


def test_fluctuation_trend(period_runs):
    s2 = [period_runs[d][1].point_estimate for d in DELTA_R]
    ok = s2[0] > s2[1] > s2[2]
    verdict("fluctuation trend", ok,
            "E[last(s2_tp)] at delta_R 0.1/0.2/2 = " + " / ".join(f"{x:.3f}" for x in s2))


def test_peaks(peak_runs):
    a_max = [peak_runs[d, "A"][1].point_estimate for d in DELTA_R]
    r_max = [peak_runs[d, "R"][1].point_estimate for d in DELTA_R]
    r_min = [peak_runs[d, "R"][2].point_estimate for d in DELTA_R]
    spread = (max(a_max) - min(a_max)) / (sum(a_max) / len(a_max))
    checks = {
        "A max varies < 10%": spread < 0.10,
        "R max decreasing": r_max[0] > r_max[1] > r_max[2],
        "R min < 1": all(x < 1 for x in r_min),
    }
    deltas = ", ".join(f"{s}@{d}: {peak_runs[d, s][0].delta}" for d in DELTA_R for s in ("A", "R"))
    failed = [k for k, ok in checks.items() if not ok]
    verdict("peaks", not failed,
            f"A max {' / '.join(f'{x:.1f}' for x in a_max)} (spread {100 * spread:.1f}%); "
            f"R max {' / '.join(f'{x:.1f}' for x in r_max)}; "
            f"R min {' / '.join(f'{x:.2f}' for x in r_min)}; deltas {deltas}"
            + (f"; failing: {', '.join(failed)}" if failed else ""))


def test_erlang_oracle():
    model, a = erlang(2.0), transcription_counter(3, event="T", observed="P")
    covered = sum(
        r.ci_low <= 1.5 <= r.ci_high
        for r in (estimate("E[last(t)]", model, a, CiPolicy(0.99, 0.05), seed=1000 + i) for i in range(100)))
    fine = estimate("E[last(t)]", model, a, CiPolicy(0.99, 0.01, max_samples=200_000), seed=7)
    rel = abs(fine.point_estimate - 1.5) / 1.5
    ok = covered >= 95 and rel <= 0.01 and fine.halfwidth <= 0.01
    verdict("Erlang oracle", ok,
            f"99% CI covered 1.5 in {covered}/100 runs; half-width {fine.halfwidth:.4f} run gave "
            f"{fine.point_estimate:.4f} ({100 * rel:.2f}% off, {fine.samples_used} samples)")


def test_online_statistics_oracle():
    rng = random.Random(2024)
    worst = 0.0
    for _ in range(1000):
        n = int(math.exp(rng.uniform(math.log(2), math.log(10**4))))
        periods = [rng.uniform(5.0, 50.0) * rng.choice([1.0, 1.0, 0.5, 2.0]) for _ in range(n)]
        m1, v1 = online_statistics(periods)
        m2, v2 = batch_statistics(periods)
        worst = max(worst, abs(m1 - m2) / abs(m2), abs(v1 - v2) / max(abs(v2), 1e-300))
    verdict("online statistics oracle", worst <= 1e-9,
            f"largest relative deviation {worst:.2e} over 1000 sequences")


def _periods_from_moves(out):
    marks, prev = [], None
    for m in out.moves:
        n = m.valuation["n"]
        if prev is not None and n != prev and n >= 0:
            marks.append(m.time)
        prev = n
    return [b - a for a, b in zip(marks, marks[1:])]


def _peaks_from_moves(out):
    maxima, minima, prev = [], [], {"Smax": 0.0, "Smin": 0.0, "n_M": 0.0, "n_m": 0.0}
    for m in out.moves:
        v = m.valuation
        if v["n_M"] != prev["n_M"]:
            maxima.append(v["Smax"] - prev["Smax"])
        if v["n_m"] != prev["n_m"]:
            minima.append(v["Smin"] - prev["Smin"])
        prev = v
    return maxima, minima


def test_automaton_oracle_equivalence():
    rng = random.Random(77)
    mismatches = []
    for i in range(500):
        L, H = rng.choice([(1, 10), (2, 30), (0, 6), (5, 100)])
        values = noisy_periodic(rng, L, H, crossings=rng.randint(2, 8), noise=rng.randint(1, 4))
        times = random_times(rng, len(values))
        initT = rng.choice([0.0, 0.0, times[len(times) // 3]])
        events = to_events(values, times)
        trace = as_trace(events)
        # periods
        expected = offline_periods(trace, L, H, initT)
        out = replay_single(events, build_Aper(PeriodParams(L=L, H=H, initT=initT, N=max(1, len(expected)))))
        got = _periods_from_moves(out) if out.accepted else []
        if got != expected or (expected and not math.isclose(
                out.valuation["tbar_p"], batch_statistics(expected)[0], rel_tol=1e-9)):
            mismatches.append(f"periods #{i}")
        # peaks
        delta = (1, 2, 5, 10)[i % 4]
        maxima, _ = offline_peaks(trace, delta, initT)
        N = max(1, len(maxima))
        exp_max, exp_min = offline_peaks(trace, delta, initT, N)
        out = replay_single(events, build_Apeaks(PeaksParams("A", delta, PARTITION, N=N, initT=initT)))
        got_max, got_min = _peaks_from_moves(out)
        if Counter(got_max) != Counter(exp_max) or Counter(got_min) != Counter(exp_min):
            mismatches.append(f"peaks #{i} (delta {delta})")
    verdict("automaton/oracle equivalence", not mismatches,
            f"500 traces, periods and delta in {{1, 2, 5, 10}} peaks; mismatches: {mismatches[:5] or 'none'}")


def test_theorem_one():
    rng = random.Random(5)
    accepted = 0
    for _ in range(200):
        L, H = rng.choice([(1, 10), (1, 1000), (3, 50)])
        crossings = rng.randint(2, 9)
        values = noisy_periodic(rng, L, H, crossings=crossings, start=rng.randint(0, L))
        events = to_events(values, random_times(rng, len(values)))
        out = replay_single(events, build_Aper(PeriodParams(L=L, H=H, N=crossings - 1)), record_valuations=False)
        accepted += out.accepted
    never = 0
    for _ in range(200):
        L, H = rng.choice([(1, 10), (1, 1000), (3, 50)])
        v, values = rng.randint(0, H - 1), []
        for _ in range(rng.randint(1, 400)):
            v = min(H - 1, max(0, v + rng.randint(-H // 3 - 1, H // 3 + 1)))
            values.append(v)
        events = to_events(values, random_times(rng, len(values)))
        out = replay_single(events, build_Aper(PeriodParams(L=L, H=H, N=1)),
                            budget=ResourceBudget(max_events=len(values)), record_valuations=False)
        never += not out.accepted
    verdict("Theorem 1 property", accepted == 200 and never == 200,
            f"{accepted}/200 noisy-periodic traces accepted; {never}/200 traces below H not accepted")


def test_determinism_validation():
    m = circadian()
    names = [t.name for t in m.transitions]
    generated = [build_Aper(PeriodParams(L=1, H=1000, initT=t, N=100, measure=k))
                 for t in (0, 100) for k in ("low", "high")]
    generated += [build_Apeaks(PeaksParams(s, 100, classify_events(m, s)), names) for s in ("A", "R")]
    clean = all(check_determinism(a) == [] for a in generated)
    top = Lha([Location("a"), Location("b")], ["a", "b"], ["b"], [], [])
    ev = EventSet(frozenset(["R1"]))
    guards = Lha([Location("a"), Location("b"), Location("c")], ["a"], ["b"], ["x"], [
        Edge("a", "b", ev, tuple(expr.parse_condition("x >= 1"))),
        Edge("a", "c", ev, tuple(expr.parse_condition("x <= 2")))])
    cycle = Lha([Location("a"), Location("b"), Location("f")], ["a"], ["f"], [], [
        Edge("a", "b", AUTONOMOUS), Edge("b", "a", AUTONOMOUS)])
    named = [[v.condition for v in check_determinism(a)] for a in (top, guards, cycle)]
    ok = clean and named == [["c1"], ["c2"], ["c4"]]
    verdict("determinism validation", ok,
            f"{len(generated)} generated automata clean: {clean}; crafted violations named {named}")


def test_histogram_integrity(period_runs):
    runs = [period_runs[d][2] for d in DELTA_R]
    runs.append(estimate("PDF(last(t),0.1,0,10)", gene_expression(), transcription_counter(3),
                         CiPolicy(halfwidth=None, max_samples=2000), seed=1))
    runs.append(estimate("PDF(last(t),0.05,0,3)", erlang(2.0), transcription_counter(3, "T", "P"),
                         CiPolicy(halfwidth=None, max_samples=2000), seed=2))
    balanced = all(sum(r.histogram.counts) + r.histogram.outside == r.accepted_count for r in runs)
    low, high = period_runs[0.2][2].histogram.mode_bin()
    ok = balanced and 23.5 <= low and high <= 26.5
    verdict("histogram integrity", ok,
            f"bin mass + outside = accepted in {sum(1 for _ in runs)} PDF runs: {balanced}; "
            f"baseline mode bin [{low:.1f}, {high:.1f})")
