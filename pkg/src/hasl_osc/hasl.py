"""HASL target expressions and their statistical estimation.

A target is ``E[Y]``, ``P``, ``PDF(Y, s, l, h)`` or ``CDF(Y, s, l, h)``
where ``Y`` is arithmetic over constants and path operators
``last(y)``, ``min(y)``, ``max(y)`` and ``avg(y)``; ``y`` ranges over
automaton variables and model places. ``AVG(Y)`` is accepted as a synonym
of ``E[Y]``. A bare name in ``Y`` means ``last`` of it, and a ``Y`` built
only from ``last`` operators and constants is merged into a single
``last(...)``, so ``E[last(Smax)/n_M]`` reads as ``E[last(Smax/n_M)]``.

Estimation samples synchronised trajectories with per-trajectory seeds
derived from ``(seed, index)`` and reduces them strictly in index order:
the report depends on the seed and the policy, never on the worker count.
"""

from __future__ import annotations

import csv
import json
import math
import multiprocessing
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence, Union

import numpy as np
from scipy import stats as _st

from . import expr
from .desp import GspnModel
from .expr import ExpressionError, Node
from .kernel import (
    S_EAVG, S_LAST, S_MAX, S_MIN, S_TAVG, BatchResult, CompiledProduct, REASONS, trajectory_seed,
)
from .lha import Lha
from .sync import EVENT_AVERAGE, TIME_AVERAGE, ResourceBudget, SyncOutcome, synchronize

PATH_OPS = ("last", "min", "max", "avg")


class EstimationFailure(RuntimeError):
    """No usable trajectory was produced within the sampling budget."""


# ---------------------------------------------------------------------------
# Expression types


@dataclass(frozen=True)
class PathFormula:
    """``op(y)`` with ``op`` one of last/min/max/avg."""

    op: str
    y: Node

    def __str__(self) -> str:
        return f"{self.op}({expr.to_text(self.y)})"


@dataclass(frozen=True)
class Measure:
    """Arithmetic over path formulas: ``node`` refers to ``leaves[k]`` as the name ``$k``."""

    node: Node
    leaves: tuple[PathFormula, ...]

    def __str__(self) -> str:
        if isinstance(self.node, expr.Name) and self.node.id == "$0":
            return str(self.leaves[0])
        text = expr.to_text(self.node)
        for k in reversed(range(len(self.leaves))):
            text = text.replace(f"${k}", str(self.leaves[k]))
        return text

    @staticmethod
    def of(f: PathFormula) -> "Measure":
        return Measure(expr.Name("$0"), (f,))

    def names(self) -> set[str]:
        out: set[str] = set()
        for leaf in self.leaves:
            out |= expr.names(leaf.y)
        return out


@dataclass(frozen=True)
class Expectation:
    y: Measure

    def __str__(self) -> str:
        return f"E[{self.y}]"


@dataclass(frozen=True)
class Probability:
    def __str__(self) -> str:
        return "P"


@dataclass(frozen=True)
class Pdf:
    y: Measure
    s: float
    l: float
    h: float

    def __post_init__(self):
        _check_support(self.s, self.l, self.h)

    @property
    def n_bins(self) -> int:
        return n_bins(self.s, self.l, self.h)

    def __str__(self) -> str:
        return f"PDF({self.y}, {_g(self.s)}, {_g(self.l)}, {_g(self.h)})"


@dataclass(frozen=True)
class Cdf(Pdf):
    def __str__(self) -> str:
        return f"CDF({self.y}, {_g(self.s)}, {_g(self.l)}, {_g(self.h)})"


HaslExpression = Union[Expectation, Probability, Pdf, Cdf]


def _g(x: float) -> str:
    return f"{x:g}"


def _check_support(s: float, l: float, h: float) -> None:
    if not s > 0:
        raise ValueError(f"bin width must be > 0, got {s}")
    if not l < h:
        raise ValueError(f"need l < h, got l={l}, h={h}")


# ---------------------------------------------------------------------------
# Parsing


class _HaslParser(expr.Parser):
    """Expression parser whose atoms include path operators."""

    def __init__(self, text: str):
        super().__init__(text)
        self.leaves: list[PathFormula] = []

    def atom(self) -> Node:
        kind, value, _ = self.tok
        nxt = self.tokens[self.i + 1]
        if kind == "name" and value in PATH_OPS and nxt[1] == "(":
            self.i += 2
            inner = _Plain(self).arith()
            self.expect(")")
            return self._leaf(PathFormula(value, inner))
        if kind == "name" and value != "true" and not value.startswith("$"):
            self.i += 1
            return self._leaf(PathFormula("last", expr.Name(value)))
        return super().atom()

    def _leaf(self, f: PathFormula) -> Node:
        self.leaves.append(f)
        return expr.Name(f"${len(self.leaves) - 1}")

    def measure(self) -> Measure:
        self.leaves = []
        node = self.arith()
        return _merge_last(Measure(node, tuple(self.leaves)))

    def number(self) -> float:
        sign = -1.0 if self.accept("-") else 1.0
        kind, value, _ = self.tok
        if kind != "num":
            raise self.error("expected a number")
        self.i += 1
        return sign * float(value)


class _Plain(expr.Parser):
    """Plain arithmetic sharing the token stream of a HASL parser (no nested path operators)."""

    def __init__(self, outer: _HaslParser):
        self.__dict__ = outer.__dict__

    def atom(self) -> Node:
        kind, value, _ = self.tok
        if kind == "name" and value in PATH_OPS and self.tokens[self.i + 1][1] == "(":
            raise self.error(f"path operator {value!r} cannot be nested")
        return expr.Parser.atom(self)


def _substitute(node: Node, leaves: Sequence[PathFormula]) -> Node:
    if isinstance(node, expr.Name) and node.id.startswith("$"):
        return leaves[int(node.id[1:])].y
    if isinstance(node, expr.Neg):
        return expr.Neg(_substitute(node.operand, leaves))
    if isinstance(node, expr.Bin):
        return expr.Bin(node.op, _substitute(node.left, leaves), _substitute(node.right, leaves))
    return node


def _merge_last(m: Measure) -> Measure:
    if m.leaves and all(f.op == "last" for f in m.leaves):
        if len(m.leaves) == 1 and isinstance(m.node, expr.Name):
            return m
        return Measure.of(PathFormula("last", _substitute(m.node, m.leaves)))
    if not m.leaves:
        # a constant target: last(c)
        return Measure.of(PathFormula("last", m.node))
    return m


def parse_expression(text: str) -> HaslExpression:
    """Parse a HASL target expression.

    Raises
    ------
    ExpressionError
        On malformed text; the message carries the character position.
    """
    p = _HaslParser(str(text).strip())
    kind, value, _ = p.tok
    if kind == "name" and value == "P" and p.tokens[1][0] == "end":
        p.i += 1
        return Probability()
    if kind == "name" and value in ("E", "AVG"):
        p.i += 1
        close = "]" if p.accept("[") else None
        if close is None:
            p.expect("(")
            close = ")"
        y = p.measure()
        p.expect(close)
        p.done()
        return Expectation(y)
    if kind == "name" and value in ("PDF", "CDF"):
        p.i += 1
        p.expect("(")
        y = p.measure()
        args = []
        for _ in range(3):
            p.expect(",")
            args.append(p.number())
        p.expect(")")
        p.done()
        try:
            return (Pdf if value == "PDF" else Cdf)(y, *args)
        except ValueError as exc:
            raise ExpressionError(str(exc), p.text, 0) from None
    raise p.error("expected E[...], P, PDF(...) or CDF(...)")


def as_expression(value: Union[str, HaslExpression]) -> HaslExpression:
    return parse_expression(value) if isinstance(value, str) else value


def measure_of(z: HaslExpression) -> Optional[Measure]:
    return None if isinstance(z, Probability) else z.y


def bind(z: HaslExpression, model: GspnModel, a: Lha) -> None:
    """Check that every name in ``z`` is an automaton variable or a model place."""
    m = measure_of(z)
    if m is None:
        return
    unknown = m.names() - set(a.variables) - set(model.places)
    if unknown:
        raise ExpressionError(
            f"{z}: unknown name(s) {sorted(unknown)} for automaton {a.name} and model {model.name}")


# ---------------------------------------------------------------------------
# Path evaluation


def tracked_expressions(zs: Sequence[HaslExpression], variables: Sequence[str]) -> list[str]:
    """Expressions the engines must follow along the path, as canonical text.

    min/max/avg operands always need tracking; ``last`` operands only when
    they mention places, since the final valuation already covers variables.
    """
    out: list[str] = []
    vs = set(variables)
    for z in zs:
        m = measure_of(z)
        if m is None:
            continue
        for leaf in m.leaves:
            if leaf.op != "last" or not expr.names(leaf.y) <= vs:
                text = expr.to_text(leaf.y)
                if text not in out:
                    out.append(text)
    return out


def _combine(m: Measure, values: Sequence[float]) -> float:
    return expr.evaluate(m.node, {f"${k}": v for k, v in enumerate(values)})


def evaluate_path(z: Union[HaslExpression, Measure, PathFormula], outcome: SyncOutcome,
                  avg_mode: str = TIME_AVERAGE) -> float:
    """Value of ``Y`` on one accepted synchronisation outcome; nan when undefined.

    ``min``, ``max`` and ``avg`` read the statistics the engine accumulated,
    so their operands must have been tracked (see :func:`tracked_expressions`).
    """
    if isinstance(z, PathFormula):
        z = Measure.of(z)
    m = z if isinstance(z, Measure) else measure_of(z)
    if m is None:
        return 1.0 if outcome.accepted else 0.0
    env = outcome.marking
    env.update(outcome.valuation)
    values = []
    for leaf in m.leaves:
        if leaf.op == "last":
            names = expr.names(leaf.y)
            if names <= set(env):
                values.append(expr.evaluate(leaf.y, env))
                continue
            values.append(outcome.statistics.last[expr.to_text(leaf.y)])
        else:
            values.append(outcome.statistics.value(leaf.op, expr.to_text(leaf.y), avg_mode))
    return _combine(m, values)


def bin_index(value: float, s: float, l: float, h: float) -> Optional[int]:
    """Bin ``k`` covering ``[l + k s, l + (k+1) s)``, the last bin closed at ``h``.

    Returns None outside ``[l, h]``. A quotient within 1e-9 of the next
    integer is snapped up, so decimal edges such as ``0.3`` with ``s = 0.1``
    land in the bin they name.
    """
    _check_support(s, l, h)
    if not l <= value <= h:
        return None
    q = (value - l) / s
    k = math.floor(q)
    if k + 1 - q < 1e-9 * max(1.0, abs(q)):
        k += 1
    return min(k, n_bins(s, l, h) - 1)


def n_bins(s: float, l: float, h: float) -> int:
    """Number of bins, ``ceil((h - l) / s)`` with the same snapping as :func:`bin_index`."""
    q = (h - l) / s
    return max(1, math.ceil(q - 1e-9 * max(1.0, abs(q))))


# ---------------------------------------------------------------------------
# Policy and reports


@dataclass(frozen=True)
class CiPolicy:
    """When to stop sampling.

    Parameters
    ----------
    confidence : float
        Level of the Student-t interval, in (0, 1).
    halfwidth : float or None
        Target half-width. None disables the stopping rule and runs
        ``max_samples`` trajectories.
    relative : bool
        Read ``halfwidth`` relative to ``|estimate|``.
    min_samples : int
        Usable samples required before the first check.
    max_samples : int
        Cap on generated trajectories, accepted or not.
    batch : int
        The interval is checked every ``batch`` usable samples.
    """

    confidence: float = 0.99
    halfwidth: Optional[float] = 0.5
    relative: bool = False
    min_samples: int = 30
    max_samples: int = 10_000
    batch: int = 64

    def __post_init__(self):
        if not 0 < self.confidence < 1:
            raise ValueError(f"confidence must be in (0, 1), got {self.confidence}")
        if self.halfwidth is not None and not self.halfwidth > 0:
            raise ValueError(f"halfwidth must be > 0, got {self.halfwidth}")
        if self.min_samples < 2:
            raise ValueError(f"min_samples must be >= 2, got {self.min_samples}")
        if self.max_samples < 1:
            raise ValueError(f"max_samples must be >= 1, got {self.max_samples}")
        if self.batch < 1:
            raise ValueError(f"batch must be >= 1, got {self.batch}")


@dataclass
class Histogram:
    """Bin counts of a PDF/CDF target with both normalisations."""

    s: float
    l: float
    h: float
    counts: list[int]
    underflow: int
    overflow: int
    total: int
    accepted: int
    cumulative: bool = False

    @property
    def edges(self) -> np.ndarray:
        k = np.arange(len(self.counts) + 1)
        return np.minimum(self.l + k * self.s, self.h)

    @property
    def outside(self) -> int:
        return self.underflow + self.overflow

    def _norm(self, denom: int) -> list[float]:
        if denom == 0:
            return [math.nan] * len(self.counts)
        c = np.asarray(self.counts, dtype=float)
        if self.cumulative:
            c = self.underflow + np.cumsum(c)
        return list(c / denom)

    @property
    def frequency(self) -> list[float]:
        """Counts over all generated trajectories."""
        return self._norm(self.total)

    @property
    def frequency_accepted(self) -> list[float]:
        """Counts over accepted trajectories with a defined value."""
        return self._norm(self.accepted)

    def mode_bin(self) -> tuple[float, float]:
        k = int(np.argmax(self.counts))
        e = self.edges
        return float(e[k]), float(e[k + 1])

    def to_dict(self) -> dict:
        return {
            "s": self.s, "l": self.l, "h": self.h, "cumulative": self.cumulative,
            "counts": list(map(int, self.counts)), "underflow": self.underflow,
            "overflow": self.overflow, "total": self.total, "accepted": self.accepted,
            "frequency": self.frequency, "frequency_accepted": self.frequency_accepted,
        }

    def write_csv(self, path: Union[str, Path]) -> None:
        """Write ``bin_low,bin_high,frequency,count`` rows."""
        e = self.edges
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_low", "bin_high", "frequency", "count"])
            counts = np.asarray(self.counts)
            if self.cumulative:
                counts = self.underflow + np.cumsum(counts)
            for k, (f, c) in enumerate(zip(self.frequency, counts)):
                w.writerow([repr(float(e[k])), repr(float(e[k + 1])), repr(float(f)), int(c)])


@dataclass
class EstimationReport:
    """Outcome of one estimation.

    ``accepted_count`` counts accepted trajectories with a defined value;
    accepted ones whose value was undefined (division by zero) are
    ``discarded_count``. ``samples_used`` counts every generated trajectory.
    """

    expression: str
    point_estimate: float
    ci_low: float
    ci_high: float
    halfwidth: float
    confidence: float
    samples_used: int
    accepted_count: int
    rejected_count: int
    discarded_count: int
    budget_exhausted: int
    std: float
    stop: str
    seed: int
    workers: int
    elapsed: float
    model: str = ""
    automaton: str = ""
    rejections: dict = field(default_factory=dict)
    histogram: Optional[Histogram] = None
    arrays: dict = field(default_factory=dict)
    array_overflow: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["histogram"] = self.histogram.to_dict() if self.histogram else None
        # frequency arrays without their all-zero tail
        d["arrays"] = {k: list(map(int, np.trim_zeros(np.asarray(v), "b"))) for k, v in self.arrays.items()}
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), allow_nan=True, **kw)

    def write_json(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_json(indent=2) + "\n")


class _Welford:
    def __init__(self):
        self.n = 0
        self.mean = 0.0
        self.m2 = 0.0

    def add(self, x: float) -> None:
        self.n += 1
        d = x - self.mean
        self.mean += d / self.n
        self.m2 += d * (x - self.mean)

    @property
    def var(self) -> float:
        return self.m2 / (self.n - 1) if self.n > 1 else math.nan


def _halfwidth(w: _Welford, confidence: float) -> float:
    if w.n < 2:
        return math.inf
    q = _st.t.ppf(0.5 + confidence / 2, w.n - 1)
    return float(q * math.sqrt(w.var / w.n))


def _narrow(w: _Welford, policy: CiPolicy) -> bool:
    hw = _halfwidth(w, policy.confidence)
    target = policy.halfwidth * abs(w.mean) if policy.relative else policy.halfwidth
    return hw <= target


# ---------------------------------------------------------------------------
# Trajectory sources


@dataclass
class _Chunk:
    """Per-trajectory samples of one contiguous index range: verdict, reason and one value per target."""

    accepted: np.ndarray
    reason: np.ndarray
    values: np.ndarray  # (n, targets)
    counts: np.ndarray  # (n, array cells), automaton frequency arrays
    overflow: np.ndarray  # (n, arrays)


def _leaf_values(prod: CompiledProduct, res: BatchResult, m: Measure, avg_mode: str) -> np.ndarray:
    n = len(res)
    cols = []
    vidx = {x: i for i, x in enumerate(prod.lha.variables)}
    tidx = {t: i for i, t in enumerate(prod.tracked_names)}
    for leaf in m.leaves:
        text = expr.to_text(leaf.y)
        if leaf.op == "last" and expr.names(leaf.y) <= set(vidx):
            cols.append(np.array([expr.evaluate(leaf.y, dict(zip(prod.lha.variables, res.valuation[i])))
                                  for i in range(n)]))
            continue
        col = {"last": S_LAST, "min": S_MIN, "max": S_MAX,
               "avg": S_EAVG if avg_mode == EVENT_AVERAGE else S_TAVG}[leaf.op]
        cols.append(res.stats[:, tidx[text], col])
    return np.array([_combine(m, [c[i] for c in cols]) for i in range(n)], dtype=float)


def _values(prod: CompiledProduct, res: BatchResult, zs, avg_mode: str) -> np.ndarray:
    out = np.empty((len(res), len(zs)))
    for k, z in enumerate(zs):
        m = measure_of(z)
        out[:, k] = res.verdict.astype(float) if m is None else _leaf_values(prod, res, m, avg_mode)
    return out


# forked workers find their product here instead of unpickling it
_WORKER: dict = {}


def _kernel_chunk(start: int, stop: int) -> _Chunk:
    w = _WORKER
    seeds = [trajectory_seed(w["seed"], i) for i in range(start, stop)]
    res = w["product"].run_batch(seeds, w["budget"])
    return _Chunk(res.verdict.copy(), res.reason.copy(), _values(w["product"], res, w["zs"], w["avg_mode"]),
                  res.counts, res.overflow)


def _python_chunk(start: int, stop: int) -> _Chunk:
    w = _WORKER
    model, a, zs = w["model"], w["lha"], w["zs"]
    acc, reason, vals, counts, over = [], [], [], [], []
    for i in range(start, stop):
        rng = np.random.default_rng(trajectory_seed(w["seed"], i))
        out = synchronize(model, a, rng, w["budget"], tracked=w["tracked"])
        acc.append(out.accepted)
        reason.append(REASONS.index(out.reason))
        vals.append([evaluate_path(z, out, w["avg_mode"]) if out.accepted else math.nan for z in zs])
        counts.append(np.concatenate([out.arrays[k] for k in a.arrays] or [np.zeros(0, np.int64)]))
        over.append([out.overflow[k] for k in a.arrays])
    n = len(acc)
    return _Chunk(np.array(acc, dtype=bool), np.array(reason, dtype=np.int64),
                  np.array(vals, dtype=float).reshape(n, len(zs)),
                  np.array(counts, dtype=np.int64).reshape(n, -1),
                  np.array(over, dtype=np.int64).reshape(n, len(a.arrays)))


def _chunks(policy: CiPolicy, workers: int) -> Iterator[list[tuple[int, int]]]:
    """Rounds of index ranges; each round holds one range per worker."""
    size = max(1, min(policy.batch, policy.max_samples))
    start = 0
    while start < policy.max_samples:
        rnd = []
        for _ in range(workers):
            if start >= policy.max_samples:
                break
            stop = min(start + size, policy.max_samples)
            rnd.append((start, stop))
            start = stop
        yield rnd


def estimate_joint(
    zs: Sequence[Union[str, HaslExpression]],
    model: GspnModel,
    a: Lha,
    policy: CiPolicy = CiPolicy(),
    seed: int = 0,
    workers: int = 1,
    budget: ResourceBudget = ResourceBudget(),
    avg_mode: str = TIME_AVERAGE,
    engine: str = "kernel",
    product: Optional[CompiledProduct] = None,
    stop_on: Optional[Sequence[int]] = None,
) -> list[EstimationReport]:
    """Estimate several targets from the same trajectories.

    Trajectory ``i`` uses the seed ``trajectory_seed(seed, i)``. Samples are
    folded in index order. Intervals are checked each time the first watched
    target's usable sample count reaches ``min_samples + k * batch``, and
    sampling stops once every watched target is narrow enough.

    Parameters
    ----------
    engine : {"kernel", "python"}
        Compiled sampler or the reference engine.
    product : CompiledProduct, optional
        Reuse an already lowered model/automaton pair; its tracked list must
        cover the targets.
    stop_on : sequence of int, optional
        Indices of the targets whose intervals drive the stopping rule;
        by default every E[...] and P target.

    Raises
    ------
    EstimationFailure
        When no trajectory yields a usable sample within ``max_samples``.
    """
    t0 = time.perf_counter()
    zs = [as_expression(z) for z in zs]
    if not zs:
        raise ValueError("no target expression")
    for z in zs:
        bind(z, model, a)
    a.check_places(model.places)
    tracked = tracked_expressions(zs, a.variables)
    if engine == "kernel":
        if product is None or not set(tracked) <= set(product.tracked_names):
            product = CompiledProduct(model, a, tracked)
        _WORKER.update(product=product, zs=zs, seed=int(seed), budget=budget, avg_mode=avg_mode)
        run = _kernel_chunk
    elif engine == "python":
        _WORKER.update(model=model, lha=a, zs=zs, seed=int(seed), budget=budget, avg_mode=avg_mode,
                       tracked=tracked or ())
        run = _python_chunk
    else:
        raise ValueError(f"unknown engine {engine!r}")

    k = len(zs)
    acc_w = [_Welford() for _ in zs]
    hists = [Histogram(z.s, z.l, z.h, [0] * z.n_bins, 0, 0, 0, 0, isinstance(z, Cdf))
             if isinstance(z, Pdf) else None for z in zs]
    discarded = [0] * k
    rejected = 0
    exhausted = 0
    rejections: dict[str, int] = {}
    used = 0
    stop = "max_samples"
    sizes = dict(a.arrays)
    cells = np.zeros(sum(sizes.values()), dtype=np.int64)
    cell_over = np.zeros(len(sizes), dtype=np.int64)
    # targets the stopping rule watches: expectations and probabilities
    watch = list(stop_on) if stop_on is not None else \
        [i for i, z in enumerate(zs) if not isinstance(z, Pdf)] or [0]
    if not watch or any(not 0 <= i < len(zs) for i in watch):
        raise ValueError(f"stop_on must index the {len(zs)} targets, got {stop_on}")

    def fold(ch: _Chunk) -> bool:
        nonlocal rejected, exhausted, used, stop
        for r in range(len(ch.accepted)):
            used += 1
            if not ch.accepted[r]:
                rejected += 1
                why = REASONS[int(ch.reason[r])]
                rejections[why] = rejections.get(why, 0) + 1
                exhausted += why in ("event-budget", "time-budget")
                for i, z in enumerate(zs):
                    if isinstance(z, Probability):
                        acc_w[i].add(0.0)
                continue
            cells[:] += ch.counts[r]
            cell_over[:] += ch.overflow[r]
            for i, z in enumerate(zs):
                y = float(ch.values[r, i])
                if math.isnan(y):
                    discarded[i] += 1
                    continue
                acc_w[i].add(y)
                if hists[i] is not None:
                    b = bin_index(y, z.s, z.l, z.h)
                    if b is not None:
                        hists[i].counts[b] += 1
                    elif y < z.l:
                        hists[i].underflow += 1
                    else:
                        hists[i].overflow += 1
            if policy.halfwidth is not None:
                lead = acc_w[watch[0]]
                if lead.n >= policy.min_samples and (lead.n - policy.min_samples) % policy.batch == 0:
                    if all(acc_w[i].n >= 2 and _narrow(acc_w[i], policy) for i in watch):
                        stop = "halfwidth"
                        return True
        return False

    finished = False
    if workers > 1 and multiprocessing.get_start_method(allow_none=True) in (None, "fork") \
            and os.name == "posix":
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            for rnd in _chunks(policy, workers):
                for ch in pool.map(run, *zip(*rnd)):
                    if fold(ch):
                        finished = True
                        break
                if finished:
                    break
    else:
        workers = 1
        for rnd in _chunks(policy, 1):
            if fold(run(*rnd[0])):
                break

    arrays, array_overflow, off = {}, {}, 0
    for j, (name, size) in enumerate(sizes.items()):
        arrays[name] = cells[off:off + size].copy()
        array_overflow[name] = int(cell_over[j])
        off += size
    reports = []
    for i, z in enumerate(zs):
        w = acc_w[i]
        if w.n == 0:
            raise EstimationFailure(
                f"{z}: no usable trajectory for automaton {a.name} on model {model.name} "
                f"within max_samples={policy.max_samples} ({rejected} rejected, "
                f"{discarded[i]} undefined)")
        hw = _halfwidth(w, policy.confidence)
        accepted = used - rejected - discarded[i]
        if isinstance(z, Probability):
            accepted = used - rejected
        if hists[i] is not None:
            hists[i].total = used
            hists[i].accepted = accepted
        reports.append(EstimationReport(
            expression=str(z), point_estimate=w.mean, ci_low=w.mean - hw, ci_high=w.mean + hw,
            halfwidth=hw, confidence=policy.confidence, samples_used=used,
            accepted_count=accepted, rejected_count=rejected, discarded_count=discarded[i],
            budget_exhausted=exhausted, std=math.sqrt(w.var) if w.n > 1 else math.nan,
            stop=stop, seed=int(seed), workers=workers, elapsed=time.perf_counter() - t0,
            model=model.name, automaton=a.name, rejections=dict(rejections), histogram=hists[i],
            arrays=arrays, array_overflow=array_overflow,
        ))
    return reports


def estimate(z: Union[str, HaslExpression], model: GspnModel, a: Lha,
             policy: CiPolicy = CiPolicy(), seed: int = 0, workers: int = 1, **kw) -> EstimationReport:
    """Estimate one HASL target; see :func:`estimate_joint` for the sampling contract.

    ``E[Y]`` averages ``Y`` over accepted trajectories, ``P`` is the fraction
    of accepted trajectories, and ``PDF``/``CDF`` add a histogram of ``Y``
    whose point estimate is the mean of ``Y``.
    """
    return estimate_joint([z], model, a, policy, seed, workers, **kw)[0]
