"""Compiled batch sampler for the product D x A.

A model and an automaton are lowered to flat arrays: every expression
becomes a short postfix program run by a stack interpreter, and edges are
indexed by (location, event). The decision procedure is the one of
:mod:`hasl_osc.sync`, written out in numba so that trajectories of millions
of events take about a second. Arithmetic is performed in the same order
as the reference engine, so a recorded kernel trace replayed through
:func:`hasl_osc.sync.replay` reproduces the verdict and final valuation
bit for bit.

Random numbers come from numba's global generator, reseeded per trajectory
from a counter-based Philox stream keyed on ``(master seed, index)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numba as nb
import numpy as np

from . import expr
from .desp import DET, EXP, GspnModel
from .expr import Cmp, Node
from .lha import DeterminismFault, Lha
from .sync import (
    ACCEPTED, DEADLOCK, END_OF_TRACE, EVENT_BUDGET, FINAL, NO_EDGE, NO_INITIAL, REJECTED,
    TIME_BUDGET, ResourceBudget,
)

# opcodes
CONST, PLACE, VAR, ADD, SUB, MUL, DIV, NEG, EQ, LT, GT, LE, GE, AND = range(14)
_BINOP = {"+": ADD, "-": SUB, "*": MUL, "/": DIV}
_CMPOP = {"=": EQ, "<": LT, ">": GT, "<=": LE, ">=": GE}

# reason codes returned by the kernel
R_FINAL, R_NO_INITIAL, R_NO_EDGE, R_DEADLOCK, R_END, R_EVENTS, R_TIME, R_FAULT = range(8)
REASONS = (FINAL, NO_INITIAL, NO_EDGE, DEADLOCK, END_OF_TRACE, EVENT_BUDGET, TIME_BUDGET,
           "determinism-fault")

# stats columns
S_LAST, S_MIN, S_MAX, S_TAVG, S_EAVG = range(5)


def trajectory_seed(master: int, index: int) -> int:
    """32-bit seed of trajectory ``index``: first Philox output keyed on (master, index)."""
    bg = np.random.Philox(key=[int(master) & 0xFFFFFFFFFFFFFFFF, int(index)])
    return int(bg.random_raw() & 0xFFFFFFFF)


class _Programs:
    """Accumulates postfix programs into shared opcode/argument arrays."""

    def __init__(self, places: Mapping[str, int], variables: Mapping[str, int]):
        self.places = places
        self.variables = variables
        self.ops: list[int] = []
        self.args: list[float] = []
        self.bounds: list[tuple[int, int]] = []
        self.depth = 1

    def _emit(self, node: Node, depth: int) -> None:
        self.depth = max(self.depth, depth)
        if isinstance(node, expr.Num):
            self.ops.append(CONST)
            self.args.append(node.value)
        elif isinstance(node, expr.Name):
            if node.id in self.variables:
                self.ops.append(VAR)
                self.args.append(float(self.variables[node.id]))
            elif node.id in self.places:
                self.ops.append(PLACE)
                self.args.append(float(self.places[node.id]))
            else:
                raise KeyError(node.id)
        elif isinstance(node, expr.Neg):
            self._emit(node.operand, depth)
            self.ops.append(NEG)
            self.args.append(0.0)
        else:
            self._emit(node.left, depth)
            self._emit(node.right, depth + 1)
            self.ops.append(_BINOP[node.op])
            self.args.append(0.0)

    def add(self, node: Node) -> int:
        start = len(self.ops)
        self._emit(node, 1)
        self.bounds.append((start, len(self.ops)))
        return len(self.bounds) - 1

    def add_condition(self, atoms: Sequence[Cmp]) -> int:
        start = len(self.ops)
        if not atoms:
            self.ops.append(CONST)
            self.args.append(1.0)
        for k, atom in enumerate(atoms):
            self._emit(atom.left, 1 + (k > 0))
            self._emit(atom.right, 2 + (k > 0))
            self.ops.append(_CMPOP[atom.op])
            self.args.append(0.0)
            if k > 0:
                self.ops.append(AND)
                self.args.append(0.0)
        self.bounds.append((start, len(self.ops)))
        return len(self.bounds) - 1

    def arrays(self):
        return (
            np.array(self.ops, dtype=np.int64),
            np.array(self.args, dtype=np.float64),
            np.array(self.bounds, dtype=np.int64).reshape(-1, 2),
        )


def _csr(rows: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    ptr = np.zeros(len(rows) + 1, dtype=np.int64)
    for i, r in enumerate(rows):
        ptr[i + 1] = ptr[i] + len(r)
    flat = np.array([x for r in rows for x in r], dtype=np.int64)
    return ptr, flat


@dataclass
class BatchResult:
    """Per-trajectory outputs of :meth:`CompiledProduct.run_batch`, in seed order."""

    verdict: np.ndarray  # bool, accepted
    reason: np.ndarray  # int codes into REASONS
    events: np.ndarray
    time: np.ndarray
    location: np.ndarray
    valuation: np.ndarray  # (n, variables)
    stats: np.ndarray  # (n, tracked, 5): last, min, max, time-avg, event-avg
    counts: np.ndarray  # (n, total array cells)
    overflow: np.ndarray  # (n, arrays)

    def __len__(self) -> int:
        return len(self.verdict)

    @staticmethod
    def concat(parts: Sequence["BatchResult"]) -> "BatchResult":
        return BatchResult(*(np.concatenate([getattr(p, f) for p in parts])
                             for f in BatchResult.__dataclass_fields__))


class CompiledProduct:
    """A model and an automaton lowered for the compiled sampler.

    Parameters
    ----------
    model : GspnModel
    a : Lha
    tracked : sequence of str or Node, optional
        Expressions over places and variables whose min/max/avg are kept.
        ``last`` of any expression can be recovered from the final state,
        so only min/max/avg operands need tracking.
    """

    def __init__(self, model: GspnModel, a: Lha, tracked: Sequence = ()):
        a.check_places(model.places)
        self.model = model
        self.lha = a
        self.tracked = [expr.as_node(t) for t in tracked]
        self.tracked_names = [expr.to_text(t) for t in self.tracked]
        places = model.place_index
        variables = {x: i for i, x in enumerate(a.variables)}
        progs = _Programs(places, variables)
        n_t = len(model.transitions)

        law_kind = np.zeros(n_t, dtype=np.int64)
        law_a = np.zeros(n_t)
        law_b = np.zeros(n_t)
        rate_prog = np.zeros(n_t, dtype=np.int64)
        tguard_prog = np.full(n_t, -1, dtype=np.int64)
        for j, t in enumerate(model.transitions):
            law_kind[j] = 0 if t.law.kind == EXP else 1 if t.law.kind == DET else 2
            law_a[j] = t.law.duration if t.law.kind == DET else t.law.lo
            law_b[j] = t.law.hi
            rate_prog[j] = progs.add(t.rate)
            if t.guard:
                tguard_prog[j] = progs.add_condition(t.guard)
        aff_ptr, aff_idx = _csr(model.affected)
        # sparse input arcs and marking changes
        in_rows = [list(np.nonzero(model.pre[j])[0]) for j in range(n_t)]
        pin_ptr, pin_place = _csr(in_rows)
        pin_mult = np.array([model.pre[j, q] for j in range(n_t) for q in in_rows[j]], dtype=np.int64)
        d_rows = [list(np.nonzero(model.delta[j])[0]) for j in range(n_t)]
        dl_ptr, dl_place = _csr(d_rows)
        dl_val = np.array([model.delta[j, q] for j in range(n_t) for q in d_rows[j]], dtype=np.int64)

        locs = a.locations
        loc_index = a.location_index
        n_l = len(locs)
        loc_inv = np.array([progs.add_condition(l.invariant) for l in locs], dtype=np.int64)
        flow = np.full((n_l, len(a.variables)), -1, dtype=np.int64)
        for i, l in enumerate(locs):
            for x, node in l.flow:
                flow[i, variables[x]] = progs.add(node)
        final = np.array([l.name in a.final for l in locs], dtype=np.bool_)
        initial = np.array([loc_index[l] for l in a.initial], dtype=np.int64)

        edges = a.edges
        target = np.array([loc_index[e.target] for e in edges], dtype=np.int64)
        guard = np.array([progs.add_condition(e.guard) for e in edges], dtype=np.int64)
        sync_rows = []
        for l in locs:
            for t in model.transitions:
                sync_rows.append([k for k, e in enumerate(edges)
                                  if e.source == l.name and not e.autonomous and t.name in e.trigger])
        se_ptr, se_idx = _csr(sync_rows)
        ae_ptr, ae_idx = _csr([[k for k, e in enumerate(edges) if e.source == l.name and e.autonomous]
                               for l in locs])
        # autonomous guards as linear atoms: rest + sum coef_i * x_i  op  0
        atom_rows, atom_op, atom_rest, coef_rows = [], [], [], []
        vs = set(a.variables)
        for e in edges:
            row = []
            if e.autonomous:
                for atom in e.guard:
                    coefs, rest = expr.linear_form(expr.Bin("-", atom.left, atom.right), vs)
                    row.append(len(atom_op))
                    atom_op.append(_CMPOP[atom.op])
                    atom_rest.append(progs.add(rest))
                    coef_rows.append([(variables[x], progs.add(c)) for x, c in coefs.items()])
            atom_rows.append(row)
        at_ptr, _ = _csr(atom_rows)
        co_ptr = np.zeros(len(coef_rows) + 1, dtype=np.int64)
        for i, r in enumerate(coef_rows):
            co_ptr[i + 1] = co_ptr[i] + len(r)
        co_var = np.array([v for r in coef_rows for v, _ in r], dtype=np.int64)
        co_prog = np.array([p for r in coef_rows for _, p in r], dtype=np.int64)

        upd_rows = [[(variables[x], progs.add(n)) for x, n in e.update.assignments] for e in edges]
        up_ptr, _ = _csr(upd_rows)
        up_var = np.array([v for r in upd_rows for v, _ in r], dtype=np.int64)
        up_prog = np.array([p for r in upd_rows for _, p in r], dtype=np.int64)
        self.array_names = list(a.arrays)
        arr_index = {k: i for i, k in enumerate(self.array_names)}
        arr_off = np.zeros(len(self.array_names) + 1, dtype=np.int64)
        for i, k in enumerate(self.array_names):
            arr_off[i + 1] = arr_off[i] + a.arrays[k]
        inc_rows = [[(arr_index[k], progs.add(n)) for k, n in e.update.increments] for e in edges]
        in_ptr, _ = _csr(inc_rows)
        in_arr = np.array([v for r in inc_rows for v, _ in r], dtype=np.int64)
        in_prog = np.array([p for r in inc_rows for _, p in r], dtype=np.int64)
        trk = np.array([progs.add(t) for t in self.tracked], dtype=np.int64)

        ops, args, bounds = progs.arrays()
        self.stack_size = progs.depth + 4
        self._M = ((pin_ptr, pin_place, pin_mult), (dl_ptr, dl_place, dl_val),
                   law_kind, law_a, law_b, rate_prog, tguard_prog, aff_ptr, aff_idx,
                   np.array(model.initial_marking, dtype=np.int64))
        self._A = (loc_inv, flow, final, initial, target, guard, se_ptr, se_idx, ae_ptr, ae_idx,
                   at_ptr, np.array(atom_op, dtype=np.int64), np.array(atom_rest, dtype=np.int64),
                   co_ptr, co_var, co_prog, up_ptr, up_var, up_prog, arr_off, in_ptr, in_arr,
                   in_prog, trk)
        self._P = (ops, args, bounds)

    @property
    def n_cells(self) -> int:
        return int(self._A[19][-1])

    def run_batch(self, seeds: Sequence[int], budget: ResourceBudget = ResourceBudget()) -> BatchResult:
        """Run one trajectory per 32-bit seed, sequentially, in this process."""
        seeds = np.asarray(seeds, dtype=np.int64)
        n = len(seeds)
        out = BatchResult(
            np.zeros(n, dtype=np.bool_), np.zeros(n, dtype=np.int64), np.zeros(n, dtype=np.int64),
            np.zeros(n), np.zeros(n, dtype=np.int64), np.zeros((n, len(self.lha.variables))),
            np.zeros((n, len(self.tracked), 5)), np.zeros((n, self.n_cells), dtype=np.int64),
            np.zeros((n, len(self.array_names)), dtype=np.int64),
        )
        rec_idx = np.zeros(0, dtype=np.int64)
        rec_time = np.zeros(0)
        _batch(self._M, self._A, self._P, self.stack_size, seeds, int(budget.max_events),
               float(budget.max_time), rec_idx, rec_time,
               out.verdict, out.reason, out.events, out.time, out.location, out.valuation,
               out.stats, out.counts, out.overflow)
        if np.any(out.reason == R_FAULT):
            k = int(np.argmax(out.reason == R_FAULT))
            raise DeterminismFault(
                f"determinism fault in {self.lha.name} on trajectory seed {int(seeds[k])}")
        return out

    def run_one(self, seed: int, budget: ResourceBudget = ResourceBudget(),
                max_record: int = 10**6) -> tuple[BatchResult, np.ndarray, np.ndarray]:
        """One trajectory with its event trace: (result, transition indices, event times).

        At most ``max_record`` events are kept.
        """
        out = BatchResult(
            np.zeros(1, dtype=np.bool_), np.zeros(1, dtype=np.int64), np.zeros(1, dtype=np.int64),
            np.zeros(1), np.zeros(1, dtype=np.int64), np.zeros((1, len(self.lha.variables))),
            np.zeros((1, len(self.tracked), 5)), np.zeros((1, self.n_cells), dtype=np.int64),
            np.zeros((1, len(self.array_names)), dtype=np.int64),
        )
        rec_idx = np.zeros(max_record, dtype=np.int64)
        rec_time = np.zeros(max_record)
        _batch(self._M, self._A, self._P, self.stack_size, np.array([seed], dtype=np.int64),
               int(budget.max_events), float(budget.max_time), rec_idx, rec_time,
               out.verdict, out.reason, out.events, out.time, out.location, out.valuation,
               out.stats, out.counts, out.overflow)
        k = min(int(out.events[0]), max_record)
        return out, rec_idx[:k].copy(), rec_time[:k].copy()

    def verdict_text(self, result: BatchResult, i: int) -> tuple[str, str]:
        return (ACCEPTED if result.verdict[i] else REJECTED), REASONS[int(result.reason[i])]

    def arrays_of(self, result: BatchResult, i: int) -> dict[str, np.ndarray]:
        off = self._A[19]
        return {k: result.counts[i, off[j]:off[j + 1]] for j, k in enumerate(self.array_names)}


# ---------------------------------------------------------------------------
# numba kernels


@nb.njit(cache=True, nogil=True, inline="always")
def _eval(ops, args, bounds, p, m, v, stack):
    sp = 0
    for i in range(bounds[p, 0], bounds[p, 1]):
        op = ops[i]
        if op == CONST:
            stack[sp] = args[i]
            sp += 1
        elif op == PLACE:
            stack[sp] = float(m[int(args[i])])
            sp += 1
        elif op == VAR:
            stack[sp] = v[int(args[i])]
            sp += 1
        elif op == NEG:
            stack[sp - 1] = -stack[sp - 1]
        else:
            sp -= 1
            a = stack[sp - 1]
            b = stack[sp]
            if op == ADD:
                r = a + b
            elif op == SUB:
                r = a - b
            elif op == MUL:
                r = a * b
            elif op == DIV:
                if b == 0.0:
                    r = np.nan
                else:
                    r = a / b
            elif op == EQ:
                r = 1.0 if a == b else 0.0
            elif op == LT:
                r = 1.0 if a < b else 0.0
            elif op == GT:
                r = 1.0 if a > b else 0.0
            elif op == LE:
                r = 1.0 if a <= b else 0.0
            elif op == GE:
                r = 1.0 if a >= b else 0.0
            else:  # AND
                r = 1.0 if (a != 0.0 and b != 0.0) else 0.0
            stack[sp - 1] = r
    return stack[0]


@nb.njit(cache=True, nogil=True)
def _cmp(op, a, b):
    if op == EQ:
        return a == b
    if op == LT:
        return a < b
    if op == GT:
        return a > b
    if op == LE:
        return a <= b
    return a >= b


@nb.njit(cache=True, nogil=True)
def _enabled(pin_ptr, pin_place, pin_mult, tguard, ops, args, bounds, j, m, stack):
    for q in range(pin_ptr[j], pin_ptr[j + 1]):
        if m[pin_place[q]] < pin_mult[q]:
            return False
    g = tguard[j]
    if g >= 0:
        return _eval(ops, args, bounds, g, m, m, stack) != 0.0
    return True


@nb.njit(cache=True, nogil=True)
def _sample(law_kind, law_a, law_b, rate_prog, ops, args, bounds, j, m, stack):
    kind = law_kind[j]
    if kind == 0:
        rate = _eval(ops, args, bounds, rate_prog[j], m, m, stack)
        return np.random.exponential(1.0 / rate)
    if kind == 1:
        return law_a[j]
    return np.random.uniform(law_a[j], law_b[j])


@nb.njit(cache=True, nogil=True)
def _direct_next(prop, now):
    total = 0.0
    for k in range(prop.shape[0]):
        total += prop[k]
    if not total > 0.0:
        return 0, np.inf
    when = now + np.random.exponential(1.0 / total)
    u = np.random.random() * total
    j = 0
    acc = prop[0]
    last = 0
    for k in range(prop.shape[0]):
        if prop[k] > 0.0:
            last = k
    while (acc <= u or prop[j] == 0.0) and j < last:
        j += 1
        acc += prop[j]
    return j, when


@nb.njit(cache=True, nogil=True)
def _observe(trk, ops, args, bounds, m, v, stack, st, integral, dt, discrete):
    for k in range(trk.shape[0]):
        y = _eval(ops, args, bounds, trk[k], m, v, stack)
        if dt > 0:
            integral[k] += 0.5 * (st[k, S_LAST] + y) * dt
        if np.isnan(y):
            st[k, S_MIN] = np.nan
            st[k, S_MAX] = np.nan
        elif not np.isnan(st[k, S_MIN]):
            if y < st[k, S_MIN]:
                st[k, S_MIN] = y
            if y > st[k, S_MAX]:
                st[k, S_MAX] = y
        st[k, S_LAST] = y
        if discrete:
            st[k, S_EAVG] += y


@nb.njit(cache=True, nogil=True)
def _take(up_ptr, up_var, up_prog, arr_off, in_ptr, in_arr, in_prog, ops, args, bounds,
          e, m, v, tmp, stack, counts, overflow):
    for i in range(in_ptr[e], in_ptr[e + 1]):
        x = _eval(ops, args, bounds, in_prog[i], m, v, stack)
        r = in_arr[i]
        size = arr_off[r + 1] - arr_off[r]
        if np.isnan(x) or np.isinf(x):
            overflow[r] += 1
            continue
        k = int(math.floor(x))
        if 0 <= k < size:
            counts[arr_off[r] + k] += 1
        else:
            overflow[r] += 1
    for i in range(up_ptr[e], up_ptr[e + 1]):
        tmp[i - up_ptr[e]] = _eval(ops, args, bounds, up_prog[i], m, v, stack)
    for i in range(up_ptr[e], up_ptr[e + 1]):
        v[up_var[i]] = tmp[i - up_ptr[e]]


@nb.njit(cache=True, nogil=True)
def _next_auto(loc_inv, target, ae_ptr, ae_idx, at_ptr, atom_op, atom_rest, co_ptr, co_var,
               co_prog, ops, args, bounds, loc, m, v, rates, stack):
    """(delay, edge); edge -1 when none can fire, -2 on a tie."""
    best_d = np.inf
    best = -1
    tie = False
    for q in range(ae_ptr[loc], ae_ptr[loc + 1]):
        e = ae_idx[q]
        if _eval(ops, args, bounds, loc_inv[target[e]], m, v, stack) == 0.0:
            continue
        lo = 0.0
        hi = np.inf
        ok = True
        for at in range(at_ptr[e], at_ptr[e + 1]):
            a = _eval(ops, args, bounds, atom_rest[at], m, v, stack)
            b = 0.0
            for c in range(co_ptr[at], co_ptr[at + 1]):
                cv = _eval(ops, args, bounds, co_prog[c], m, v, stack)
                a += cv * v[co_var[c]]
                b += cv * rates[co_var[c]]
            op = atom_op[at]
            w0 = 0.0
            w1 = np.inf
            if b == 0.0:
                if not _cmp(op, a, 0.0):
                    ok = False
                    break
            else:
                root = -a / b
                if op == EQ:
                    if root >= 0:
                        w0 = root
                        w1 = root
                    else:
                        ok = False
                        break
                elif (op == GE) == (b > 0):
                    w0 = root if not (0.0 > root) else 0.0
                elif root >= 0:
                    w1 = root
                else:
                    ok = False
                    break
            if w0 > lo:
                lo = w0
            if w1 < hi:
                hi = w1
            if lo > hi:
                ok = False
                break
        if not ok:
            continue
        if best == -1 or lo < best_d:
            best_d = lo
            best = e
            tie = False
        elif lo == best_d:
            tie = True
    if tie:
        return best_d, -2
    return best_d, best


@nb.njit(cache=True, nogil=True)
def _trajectory(M, A, P, stack_size, seed, max_events, max_time, rec_idx, rec_time,
                v, st, counts, overflow):
    pins, dels, law_kind, law_a, law_b, rate_prog, tguard, aff_ptr, aff_idx, m0 = M
    pin_ptr, pin_place, pin_mult = pins
    dl_ptr, dl_place, dl_val = dels
    (loc_inv, flow, final, initial, target, guard, se_ptr, se_idx, ae_ptr, ae_idx,
     at_ptr, atom_op, atom_rest, co_ptr, co_var, co_prog, up_ptr, up_var, up_prog,
     arr_off, in_ptr, in_arr, in_prog, trk) = A
    ops, args, bounds = P
    n_t = law_kind.shape[0]
    n_v = v.shape[0]
    n_l = loc_inv.shape[0]
    stack = np.empty(stack_size)
    tmp = np.empty(max(n_v, 1))
    rates = np.zeros(n_v)
    integral = np.zeros(st.shape[0])
    has_auto = np.zeros(n_l, dtype=np.bool_)
    for l in range(n_l):
        has_auto[l] = ae_ptr[l + 1] > ae_ptr[l]
    np.random.seed(seed)

    m = m0.copy()
    sched = np.full(n_t, np.inf)
    # all-exponential nets race with the direct method: one draw for the
    # holding time, one for the winner, same law as per-transition clocks
    direct = True
    for j in range(n_t):
        if law_kind[j] != 0:
            direct = False
    prop = np.zeros(n_t)
    j_next = 0
    t_next = np.inf
    if direct:
        for j in range(n_t):
            if _enabled(pin_ptr, pin_place, pin_mult, tguard, ops, args, bounds, j, m, stack):
                prop[j] = _eval(ops, args, bounds, rate_prog[j], m, m, stack)
        j_next, t_next = _direct_next(prop, 0.0)
    else:
        for j in range(n_t):
            if _enabled(pin_ptr, pin_place, pin_mult, tguard, ops, args, bounds, j, m, stack):
                sched[j] = _sample(law_kind, law_a, law_b, rate_prog, ops, args, bounds, j, m, stack)
    for k in range(n_v):
        v[k] = 0.0
    for k in range(st.shape[0]):
        st[k, S_LAST] = np.nan
        st[k, S_MIN] = np.inf
        st[k, S_MAX] = -np.inf
        st[k, S_EAVG] = 0.0
    tau = 0.0
    duration = 0.0
    n_disc = 0
    events = 0
    chain = 0
    cap = n_l * n_l
    n_rec = rec_idx.shape[0]

    loc = -1
    n_start = 0
    for i in range(initial.shape[0]):
        if _eval(ops, args, bounds, loc_inv[initial[i]], m, v, stack) != 0.0:
            if loc == -1:
                loc = initial[i]
            n_start += 1
    _observe(trk, ops, args, bounds, m, v, stack, st, integral, 0.0, True)
    n_disc += 1
    reason = R_FINAL
    if n_start > 1:
        reason = R_FAULT
    elif n_start == 0:
        reason = R_NO_INITIAL
        loc = initial[0] if initial.shape[0] > 0 else 0
    else:
        while True:
            if final[loc]:
                reason = R_FINAL
                break
            # next model event, without firing it yet
            if direct:
                j = j_next
                t_event = t_next
            else:
                j = 0
                t_event = sched[0]
                for k in range(1, n_t):
                    if sched[k] < t_event:
                        t_event = sched[k]
                        j = k
            for x in range(n_v):
                f = flow[loc, x]
                rates[x] = _eval(ops, args, bounds, f, m, v, stack) if f >= 0 else 0.0
            if has_auto[loc]:
                d, e = _next_auto(loc_inv, target, ae_ptr, ae_idx, at_ptr, atom_op, atom_rest,
                                  co_ptr, co_var, co_prog, ops, args, bounds, loc, m, v, rates,
                                  stack)
                if e == -2:
                    reason = R_FAULT
                    break
                if e >= 0:
                    when = tau + d
                    if when <= t_event and when <= max_time:
                        if d == 0:
                            chain += 1
                        else:
                            chain = 1
                        if chain > cap:
                            reason = R_FAULT
                            break
                        if d > 0:
                            for x in range(n_v):
                                v[x] = v[x] + rates[x] * d
                            tau = when
                            _observe(trk, ops, args, bounds, m, v, stack, st, integral, d, False)
                            duration += d
                        _take(up_ptr, up_var, up_prog, arr_off, in_ptr, in_arr, in_prog, ops,
                              args, bounds, e, m, v, tmp, stack, counts, overflow)
                        loc = target[e]
                        _observe(trk, ops, args, bounds, m, v, stack, st, integral, 0.0, True)
                        n_disc += 1
                        continue
            if np.isinf(t_event):
                reason = R_DEADLOCK
                break
            if t_event > max_time:
                reason = R_TIME
                break
            if events >= max_events:
                reason = R_EVENTS
                break
            dt = t_event - tau
            if dt > 0:
                for x in range(n_v):
                    v[x] = v[x] + rates[x] * dt
                tau = t_event
                _observe(trk, ops, args, bounds, m, v, stack, st, integral, dt, False)
                duration += dt
            # fire j and reschedule what it affected
            for q in range(dl_ptr[j], dl_ptr[j + 1]):
                m[dl_place[q]] += dl_val[q]
            if direct:
                for a in range(aff_ptr[j], aff_ptr[j + 1]):
                    k = aff_idx[a]
                    if _enabled(pin_ptr, pin_place, pin_mult, tguard, ops, args, bounds, k, m, stack):
                        prop[k] = _eval(ops, args, bounds, rate_prog[k], m, m, stack)
                    else:
                        prop[k] = 0.0
                j_next, t_next = _direct_next(prop, t_event)
            else:
                for a in range(aff_ptr[j], aff_ptr[j + 1]):
                    k = aff_idx[a]
                    if not _enabled(pin_ptr, pin_place, pin_mult, tguard, ops, args, bounds, k, m, stack):
                        sched[k] = np.inf
                    elif law_kind[k] == 0:
                        sched[k] = t_event + _sample(law_kind, law_a, law_b, rate_prog, ops, args,
                                                     bounds, k, m, stack)
                    elif k == j or np.isinf(sched[k]):
                        sched[k] = t_event + _sample(law_kind, law_a, law_b, rate_prog, ops, args,
                                                     bounds, k, m, stack)
            if events < n_rec:
                rec_idx[events] = j
                rec_time[events] = t_event
            events += 1
            chain = 0
            found = -1
            n_found = 0
            base = loc * n_t + j
            for q in range(se_ptr[base], se_ptr[base + 1]):
                ed = se_idx[q]
                if _eval(ops, args, bounds, guard[ed], m, v, stack) == 0.0:
                    continue
                if _eval(ops, args, bounds, loc_inv[target[ed]], m, v, stack) == 0.0:
                    continue
                if found == -1:
                    found = ed
                n_found += 1
            if n_found == 0:
                _observe(trk, ops, args, bounds, m, v, stack, st, integral, 0.0, True)
                n_disc += 1
                reason = R_NO_EDGE
                break
            if n_found > 1:
                reason = R_FAULT
                break
            _take(up_ptr, up_var, up_prog, arr_off, in_ptr, in_arr, in_prog, ops, args, bounds,
                  found, m, v, tmp, stack, counts, overflow)
            loc = target[found]
            _observe(trk, ops, args, bounds, m, v, stack, st, integral, 0.0, True)
            n_disc += 1

    for k in range(st.shape[0]):
        st[k, S_TAVG] = integral[k] / duration if duration > 0 else st[k, S_LAST]
        st[k, S_EAVG] = st[k, S_EAVG] / n_disc if n_disc > 0 else np.nan
    return reason == R_FINAL, reason, events, tau, loc


@nb.njit(cache=True, nogil=True)
def _batch(M, A, P, stack_size, seeds, max_events, max_time, rec_idx, rec_time,
           verdict, reason, events, time, location, valuation, stats, counts, overflow):
    for i in range(seeds.shape[0]):
        ok, r, ev, tau, loc = _trajectory(M, A, P, stack_size, seeds[i], max_events, max_time,
                                          rec_idx, rec_time, valuation[i], stats[i], counts[i],
                                          overflow[i])
        verdict[i] = ok
        reason[i] = r
        events[i] = ev
        time[i] = tau
        location[i] = loc
