"""Command-line front end ``hasl-osc``.

Subcommands
-----------
run      estimate one or more HASL targets and write the report
sweep    repeat an estimation over values of one model or automaton parameter
trace    record one trajectory in the replay format plus a CSV time series
export   write a built-in model or automaton to a JSON file

Exit codes: 0 success, 2 usage, 3 parse or validation error, 4 estimation failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import models, oscillation
from .desp import GspnModel, load_model, save_model
from .hasl import CiPolicy, EstimationFailure, EstimationReport, estimate_joint, parse_expression
from .lha import DeterminismFault, Lha, check_determinism, load_lha, save_lha
from .sync import EVENT_AVERAGE, TIME_AVERAGE, ResourceBudget

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_ESTIMATION = 0, 2, 3, 4


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# Source specifications: "builtin:name,key=value,..." or a JSON file path


@dataclass
class Source:
    """A model or automaton source: a built-in name with overrides, or a file."""

    builtin: Optional[str] = None
    params: dict = field(default_factory=dict)
    path: Optional[str] = None

    @staticmethod
    def parse(text: str) -> "Source":
        if not text.startswith("builtin:"):
            return Source(path=text)
        name, *pairs = text[len("builtin:"):].split(",")
        params = {}
        for pair in pairs:
            if not pair.strip():
                continue
            if "=" not in pair:
                raise UsageError(f"expected key=value in {text!r}, got {pair!r}")
            k, v = pair.split("=", 1)
            params[k.strip()] = v.strip()
        return Source(name.strip(), params)

    def with_param(self, key: str, value: str) -> "Source":
        return Source(self.builtin, {**self.params, key: value}, self.path)

    def __str__(self) -> str:
        if self.path:
            return self.path
        extra = "".join(f",{k}={v}" for k, v in self.params.items())
        return f"builtin:{self.builtin}{extra}"


def _num(key: str, value: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise UsageError(f"parameter {key} expects a number, got {value!r}") from None


def _int(key: str, value: str) -> int:
    x = _num(key, value)
    if x != int(x):
        raise UsageError(f"parameter {key} expects an integer, got {value!r}")
    return int(x)


MODEL_PARAMS = {
    "circadian": set(models.CircadianRates().as_dict()),
    "gene": set(models.GENE_DEFAULT_RATES),
    "gene_expression": set(models.GENE_DEFAULT_RATES),
    "erlang": {"rate"},
}
LHA_PARAMS = {
    "per": {"species", "L", "H", "initT", "N", "measure"},
    "peaks": {"species", "delta", "N", "initT", "bound"},
    "count": {"N", "event", "observed"},
    "max": {"species", "horizon"},
}
DEFAULT_EXPRS = {
    "per": ["E[last(tbar_p)]", "E[last(s2_tp)]"],
    "peaks": ["E[last(Smax/n_M)]", "E[last(Smin/n_m)]"],
    "count": ["E[last(t)]"],
    "max": ["E[max(a)]"],
}


def build_model(src: Source) -> GspnModel:
    if src.path:
        return load_model(src.path)
    name = src.builtin
    if name not in MODEL_PARAMS:
        raise UsageError(f"unknown built-in model {name!r}; choose from {sorted(MODEL_PARAMS)}")
    unknown = set(src.params) - MODEL_PARAMS[name]
    if unknown:
        raise UsageError(f"unknown parameter(s) {sorted(unknown)} for model {name}")
    vals = {k: _num(k, v) for k, v in src.params.items()}
    if name == "circadian":
        return models.circadian(models.CircadianRates().with_overrides(**vals))
    if name in ("gene", "gene_expression"):
        return models.gene_expression(vals)
    return models.erlang(vals.get("rate", 2.0))


@dataclass
class PilotOptions:
    trajectories: int = 10
    horizon: float = 500.0
    seed: int = 0


def build_lha(src: Source, model: GspnModel, pilot: PilotOptions) -> tuple[Lha, dict]:
    """The automaton and a dict of derived settings (the pilot result for ``delta=auto``)."""
    if src.path:
        return load_lha(src.path), {}
    name = src.builtin
    if name not in LHA_PARAMS:
        raise UsageError(f"unknown built-in automaton {name!r}; choose from {sorted(LHA_PARAMS)}")
    unknown = set(src.params) - LHA_PARAMS[name]
    if unknown:
        raise UsageError(f"unknown parameter(s) {sorted(unknown)} for automaton {name}")
    p = src.params
    if name == "per":
        return oscillation.build_Aper(oscillation.PeriodParams(
            species=p.get("species", "A"), L=_num("L", p.get("L", "1")), H=_num("H", p.get("H", "1000")),
            initT=_num("initT", p.get("initT", "0")), N=_int("N", p.get("N", "100")),
            measure=p.get("measure", "low"))), {}
    if name == "peaks":
        species = p.get("species", "A")
        if species not in model.places:
            raise ValueError(f"species {species!r} is not a place of {model.name}")
        derived = {}
        delta, bound = p.get("delta", "auto"), p.get("bound", "auto")
        if "auto" in (delta, bound):
            pr = oscillation.pilot_peaks(model, species, pilot.seed, pilot.trajectories, pilot.horizon)
            derived = {"pilot": asdict(pr)}
            delta = pr.delta if delta == "auto" else _num("delta", delta)
            bound = pr.bound if bound == "auto" else _int("bound", bound)
        else:
            delta, bound = _num("delta", delta), _int("bound", bound)
        params = oscillation.PeaksParams(
            species, delta, oscillation.classify_events(model, species), N=_int("N", p.get("N", "100")),
            initT=_num("initT", p.get("initT", "0")), bound=bound)
        derived.update(delta=delta, bound=bound)
        return oscillation.build_Apeaks(params, [t.name for t in model.transitions]), derived
    if name == "count":
        return models.transcription_counter(_int("N", p.get("N", "3")), p.get("event", "transc"),
                                            p.get("observed", "protA")), {}
    return oscillation.build_Amax(p.get("species", "A"), _num("horizon", p.get("horizon", "500"))), {}


# ---------------------------------------------------------------------------
# Argument parsing


def _env_seed() -> int:
    raw = os.environ.get("OSC_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"OSC_SEED must be an integer, got {raw!r}") from None


def _estimation_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", required=True, help="builtin:NAME[,k=v...] or a model JSON file")
    p.add_argument("--lha", required=True, help="builtin:NAME[,k=v...] or an automaton JSON file")
    p.add_argument("--expr", action="append", help="HASL target; repeat for several (same trajectories)")
    p.add_argument("--conf", type=float, default=0.99, help="confidence level (default 0.99)")
    width = p.add_mutually_exclusive_group()
    width.add_argument("--halfwidth", type=float, help="absolute CI half-width target (default 0.5)")
    width.add_argument("--relwidth", type=float, help="CI half-width target relative to the estimate")
    width.add_argument("--samples", type=int, help="run exactly this many trajectories, no stopping rule")
    p.add_argument("--min-samples", type=int, default=30)
    p.add_argument("--max-samples", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=None, help="master seed (default $OSC_SEED or 0)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--max-events", type=int, default=10**9, help="per-trajectory event budget")
    p.add_argument("--max-time", type=float, default=1e6, help="per-trajectory model-time budget")
    p.add_argument("--avg", choices=(TIME_AVERAGE, EVENT_AVERAGE), default=TIME_AVERAGE,
                   help="avg(y) as a time average or an average over events")
    p.add_argument("--engine", choices=("kernel", "python"), default="kernel")
    p.add_argument("--pilot-trajectories", type=int, default=10)
    p.add_argument("--pilot-horizon", type=float, default=500.0)
    p.add_argument("--out", help="output file; JSON or CSV per --format (default stdout)")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--no-plot", action="store_true", help="skip PNG figures next to CSV outputs")


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hasl-osc", description="Statistical model checking of oscillators")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="estimate HASL targets")
    _estimation_args(run)
    run.add_argument("--trace-out", help="also record trajectory 0 in the replay format")
    sw = sub.add_parser("sweep", help="estimate over values of one parameter")
    _estimation_args(sw)
    sw.add_argument("--sweep", required=True, help="PARAM=v1,v2,...")
    tr = sub.add_parser("trace", help="record one trajectory")
    tr.add_argument("--model", required=True)
    tr.add_argument("--horizon", type=float, required=True)
    tr.add_argument("--seed", type=int, default=None)
    tr.add_argument("--index", type=int, default=0, help="trajectory index under the master seed")
    tr.add_argument("--out", required=True, help="replay-format trace file")
    tr.add_argument("--csv", help="time series CSV (default: OUT with a .csv suffix)")
    tr.add_argument("--species", help="comma-separated places to plot (default A,R when present)")
    tr.add_argument("--max-events", type=int, default=50_000_000)
    tr.add_argument("--no-plot", action="store_true")
    ex = sub.add_parser("export", help="write a model or automaton as JSON")
    ex.add_argument("--model", required=True)
    ex.add_argument("--lha", help="export this automaton instead of the model")
    ex.add_argument("--seed", type=int, default=None)
    ex.add_argument("--pilot-trajectories", type=int, default=10)
    ex.add_argument("--pilot-horizon", type=float, default=500.0)
    ex.add_argument("--out", required=True)
    return ap


def _policy(args) -> CiPolicy:
    if args.samples is not None:
        if args.samples < 1:
            raise UsageError("--samples must be >= 1")
        return CiPolicy(args.conf, None, False, args.min_samples, args.samples)
    if args.relwidth is not None:
        return CiPolicy(args.conf, args.relwidth, True, args.min_samples, args.max_samples)
    hw = 0.5 if args.halfwidth is None else args.halfwidth
    return CiPolicy(args.conf, hw, False, args.min_samples, args.max_samples)


def _exprs(args, lha_src: Source) -> list[str]:
    if args.expr:
        return list(args.expr)
    if lha_src.builtin in DEFAULT_EXPRS:
        return DEFAULT_EXPRS[lha_src.builtin]
    raise UsageError("--expr is required with an automaton file")


# ---------------------------------------------------------------------------
# Commands


def _validate(a: Lha) -> None:
    bad = check_determinism(a)
    if bad:
        raise ValueError("automaton is not deterministic:\n  " + "\n  ".join(map(str, bad)))


def _estimate(args, model_src: Source, lha_src: Source, seed: int) -> tuple[list[EstimationReport], dict]:
    exprs = _exprs(args, lha_src)
    for e in exprs:
        parse_expression(e)
    model = build_model(model_src)
    a, derived = build_lha(lha_src, model, PilotOptions(args.pilot_trajectories, args.pilot_horizon, seed))
    _validate(a)
    reports = estimate_joint(exprs, model, a, _policy(args), seed, args.workers,
                             budget=ResourceBudget(args.max_events, args.max_time),
                             avg_mode=args.avg, engine=args.engine)
    return reports, derived


def _stem(out: str) -> Path:
    p = Path(out)
    return p.with_suffix("") if p.suffix else p


def _suffixed(out: str, tag: str, ext: str) -> Path:
    s = _stem(out)
    return s.with_name(f"{s.name}{tag}{ext}")


SUMMARY_FIELDS = ["expression", "estimate", "ci_low", "ci_high", "halfwidth", "samples_used",
                  "accepted_count", "rejected_count", "discarded_count", "seed"]


def _summary_row(r: EstimationReport) -> list:
    return [r.expression, r.point_estimate, r.ci_low, r.ci_high, r.halfwidth, r.samples_used,
            r.accepted_count, r.rejected_count, r.discarded_count, r.seed]


def _write_side_outputs(args, reports: Sequence[EstimationReport], base: str) -> list[Path]:
    """Histogram and peak CSVs (with PNGs) next to ``base``."""
    written = []
    hists = [r for r in reports if r.histogram is not None]
    for k, r in enumerate(hists):
        tag = ".hist" if len(hists) == 1 else f".hist{k}"
        path = _suffixed(base, tag, ".csv")
        r.histogram.write_csv(path)
        written.append(path)
        if not args.no_plot:
            from .plotting import plot_histogram

            h = r.histogram
            written.append(plot_histogram(h.edges, h.frequency, path.with_suffix(".png"), r.expression,
                                          cumulative=h.cumulative))
    arrays = reports[0].arrays if reports else {}
    if "Lmax" in arrays and "Lmin" in arrays:
        path = _suffixed(base, ".peaks", ".csv")
        levels, fmax, fmin = peak_table(arrays["Lmax"], arrays["Lmin"])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["level", "frequency_max", "frequency_min"])
            for row in zip(levels, fmax, fmin):
                w.writerow([int(row[0]), repr(float(row[1])), repr(float(row[2]))])
        written.append(path)
        if not args.no_plot:
            from .plotting import plot_peaks

            written.append(plot_peaks(levels, fmax, fmin, path.with_suffix(".png"), reports[0].automaton))
    return written


def peak_table(lmax, lmin) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Levels up to the highest committed peak, with each array normalised to frequencies."""
    lmax, lmin = np.asarray(lmax), np.asarray(lmin)
    nz = np.nonzero(lmax + lmin)[0]
    top = int(nz[-1]) + 1 if len(nz) else 0
    levels = np.arange(top)
    fm = lmax[:top] / lmax.sum() if lmax.sum() else np.zeros(top)
    fn = lmin[:top] / lmin.sum() if lmin.sum() else np.zeros(top)
    return levels, fm, fn


def cmd_run(args) -> int:
    seed = _env_seed() if args.seed is None else args.seed
    model_src, lha_src = Source.parse(args.model), Source.parse(args.lha)
    reports, derived = _estimate(args, model_src, lha_src, seed)
    doc = {"experiment": {"model": str(model_src), "lha": str(lha_src), "seed": seed,
                          "workers": args.workers, **derived},
           "reports": [r.to_dict() for r in reports]}
    if args.format == "csv":
        rows = [SUMMARY_FIELDS] + [_summary_row(r) for r in reports]
        text = "\n".join(",".join(_csv_cell(c) for c in row) for row in rows) + "\n"
    else:
        text = json.dumps(doc, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        for p in _write_side_outputs(args, reports, args.out):
            print(f"wrote {p}", file=sys.stderr)
        if args.format == "csv":
            # the full report always goes next to the summary
            full = _suffixed(args.out, "", ".json")
            full.write_text(json.dumps(doc, indent=2) + "\n")
            print(f"wrote {full}", file=sys.stderr)
    else:
        sys.stdout.write(text)
    if args.trace_out:
        _trace_for_run(args, model_src, lha_src, seed)
    for r in reports:
        print(f"{r.expression}: {r.point_estimate:.6g} [{r.ci_low:.6g}, {r.ci_high:.6g}] "
              f"accepted {r.accepted_count}/{r.samples_used}", file=sys.stderr)
    return EXIT_OK


def _csv_cell(x) -> str:
    if isinstance(x, float):
        return repr(x)
    s = str(x)
    return f'"{s}"' if "," in s else s


def _trace_for_run(args, model_src: Source, lha_src: Source, seed: int) -> None:
    """Write the event trace of trajectory 0 of the estimation, as synchronised with the automaton."""
    from .kernel import CompiledProduct, trajectory_seed
    from .traceio import RecordedTrace, write_trace

    model = build_model(model_src)
    a, _ = build_lha(lha_src, model, PilotOptions(args.pilot_trajectories, args.pilot_horizon, seed))
    prod = CompiledProduct(model, a)
    limit = min(args.max_events, 50_000_000)
    res, idx, times = prod.run_one(trajectory_seed(seed, 0), ResourceBudget(limit, args.max_time), limit)
    m0 = np.asarray(model.initial_marking, dtype=np.int64)
    marks = m0 + np.cumsum(np.asarray(model.delta)[idx], axis=0) if len(idx) else np.zeros((0, len(m0)), int)
    verdict, reason = prod.verdict_text(res, 0)
    dead = float(res.time[0]) if reason == "deadlock" else None
    write_trace(RecordedTrace(tuple(model.places), m0, times, [model.transitions[j].name for j in idx],
                              marks, dead), args.trace_out)
    with open(args.trace_out, "a") as fh:
        fh.write(f"# verdict: {verdict} ({reason})\n")


def _sweep_values(text: str) -> tuple[str, list[str]]:
    if "=" not in text:
        raise UsageError(f"--sweep expects PARAM=v1,v2,..., got {text!r}")
    name, raw = text.split("=", 1)
    values = [v.strip() for v in raw.split(",") if v.strip()]
    if not name.strip() or not values:
        raise UsageError("--sweep needs a parameter name and at least one value")
    return name.strip(), values


def cmd_sweep(args) -> int:
    seed = _env_seed() if args.seed is None else args.seed
    model_src, lha_src = Source.parse(args.model), Source.parse(args.lha)
    name, values = _sweep_values(args.sweep)
    in_model = model_src.builtin is not None and name in MODEL_PARAMS.get(model_src.builtin, ())
    in_lha = lha_src.builtin is not None and name in LHA_PARAMS.get(lha_src.builtin, ())
    if not (in_model or in_lha):
        raise UsageError(f"sweep parameter {name!r} is not a parameter of {model_src} or {lha_src}")
    for v in values:
        if v != "auto":
            _num(name, v)
    exprs = _exprs(args, lha_src)
    rows: list[list[list]] = [[] for _ in exprs]
    docs = []
    for k, v in enumerate(values):
        ms = model_src.with_param(name, v) if in_model else model_src
        ls = lha_src.with_param(name, v) if in_lha and not in_model else lha_src
        reports, derived = _estimate(args, ms, ls, seed + k)
        docs.append({"param": v, "seed": seed + k, **derived, "reports": [r.to_dict() for r in reports]})
        for i, r in enumerate(reports):
            rows[i].append([v, r.point_estimate, r.ci_low, r.ci_high])
            print(f"{name}={v} {r.expression}: {r.point_estimate:.6g} [{r.ci_low:.6g}, {r.ci_high:.6g}]",
                  file=sys.stderr)
    header = ["param", "estimate", "ci_low", "ci_high"]
    if not args.out:
        for i, e in enumerate(exprs):
            if len(exprs) > 1:
                sys.stdout.write(f"# {e}\n")
            sys.stdout.write(",".join(header) + "\n")
            for row in rows[i]:
                sys.stdout.write(",".join(_csv_cell(c) for c in row) + "\n")
        return EXIT_OK
    for i, e in enumerate(exprs):
        path = Path(args.out) if i == 0 else _suffixed(args.out, f".expr{i}", ".csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows[i]:
                w.writerow([row[0], *(repr(float(x)) for x in row[1:])])
        print(f"wrote {path} ({e})", file=sys.stderr)
        if not args.no_plot:
            from .plotting import plot_sweep

            xs = [float(r[0]) for r in rows[i]]
            png = plot_sweep(xs, [r[1] for r in rows[i]], [r[2] for r in rows[i]], [r[3] for r in rows[i]],
                             path.with_suffix(".png"), name, e)
            print(f"wrote {png}", file=sys.stderr)
    _suffixed(args.out, "", ".json").write_text(
        json.dumps({"experiment": {"model": str(model_src), "lha": str(lha_src), "sweep": name,
                                   "seed": seed}, "points": docs}, indent=2) + "\n")
    return EXIT_OK


def cmd_trace(args) -> int:
    from .traceio import record, write_series_csv, write_trace

    seed = _env_seed() if args.seed is None else args.seed
    if not args.horizon >= 0:
        raise UsageError("--horizon must be >= 0")
    model = build_model(Source.parse(args.model))
    t = record(model, args.horizon, seed, args.index, args.max_events)
    write_trace(t, args.out)
    series = Path(args.csv) if args.csv else _suffixed(args.out, "", ".csv")
    if series == Path(args.out):
        series = _suffixed(args.out, ".series", ".csv")
    write_series_csv(t, series)
    print(f"wrote {args.out} ({len(t)} events{', deadlock' if t.deadlock is not None else ''})",
          file=sys.stderr)
    print(f"wrote {series}", file=sys.stderr)
    if not args.no_plot and len(t):
        from .plotting import plot_series

        species = args.species.split(",") if args.species else \
            [p for p in ("A", "R") if p in model.places] or list(model.places)
        for s in species:
            if s not in model.places:
                raise UsageError(f"unknown species {s!r}")
        cols = [model.places.index(s) for s in species]
        times = np.concatenate([[0.0], t.times])
        vals = {s: np.concatenate([[t.initial[c]], t.markings[:, c]]) for s, c in zip(species, cols)}
        png = plot_series(times, vals, series.with_suffix(".png"), model.name)
        print(f"wrote {png}", file=sys.stderr)
    return EXIT_OK


def cmd_export(args) -> int:
    seed = _env_seed() if args.seed is None else args.seed
    model = build_model(Source.parse(args.model))
    if args.lha:
        a, _ = build_lha(Source.parse(args.lha), model,
                         PilotOptions(args.pilot_trajectories, args.pilot_horizon, seed))
        save_lha(a, args.out)
    else:
        save_model(model, args.out)
    print(f"wrote {args.out}", file=sys.stderr)
    return EXIT_OK


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "trace": cmd_trace, "export": cmd_export}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except EstimationFailure as exc:
        print(f"estimation failed: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except (ValueError, KeyError, OSError, DeterminismFault) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
