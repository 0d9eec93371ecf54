"""Stochastic semantics of a Network and exact monitoring of queries.

One simulation step is a race: every instance that can act draws a delay
(uniform on ``[0, d_max]`` when its invariant bounds time, exponential with
rate ``i/j`` otherwise), the smallest delay wins (ties broken uniformly), all
clocks advance at their location rates, and the winner fires one enabled edge
chosen with probability proportional to the edge weights.

If the winner has no enabled edge at its sampled delay it redraws once,
uniformly over the sub-intervals of ``[0, D]`` where one of its edges is
enabled (``D`` being the earliest moment some invariant forces a move), and
the race is re-run with the new value.  An instance whose enabled set is
empty sits this step out; if nobody can move the run is deadlocked.

All randomness goes through :class:`RngStream` and is consumed in a fixed
order, so a run is a pure function of the network, the query and the seed.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from itertools import count as _count

from .expr import Binary, Lit, Unary, c_div
from .model import ClockRef, ConstElem, LocIs, Network, VarElem, VarRef
from .query import CmpAtom, Formula, LocAtom, linearize

INF = math.inf
DEFAULT_STEP_LIMIT = 10_000_000
SNAP = 1e-9
MASK64 = (1 << 64) - 1

_INTERNAL, _SEND, _RECEIVE = 0, 1, 2


class SimulationError(RuntimeError):
    pass


class RngStream:
    """Seeded uniform stream: MT19937 with 53-bit doubles (Python's ``random``).

    Seeding an integer ``s`` initialises the generator by ``init_by_array``
    over the 32-bit words of ``s``, least significant first, so the stream is
    reproducible on every platform.
    """

    algorithm = "mt19937-res53"
    __slots__ = ("seed", "draws", "_next")

    def __init__(self, seed: int):
        self.seed = seed & MASK64
        self._next = random.Random(self.seed).random
        self.draws = 0

    def random(self) -> float:
        self.draws += 1
        return self._next()


@dataclass
class SimState:
    locations: list
    clocks: list
    variables: list

    def copy(self) -> "SimState":
        return SimState(list(self.locations), list(self.clocks), list(self.variables))


@dataclass
class RunOutcome:
    satisfied: bool
    steps: int
    observer: float
    deadlock: bool = False
    step_limit_hit: bool = False


@dataclass
class Segment:
    """A state together with the delay spent in it before the next transition."""

    locations: tuple
    clocks: tuple
    rates: tuple
    variables: tuple
    delay: float


# --------------------------------------------------------------------------
# code generation


class _Codegen:
    def __init__(self, net: Network):
        self.net = net
        self.ns = {"_div": c_div, "_chk": _chk, "_range": _range_error, "INF": INF}
        self._ids = _count()

    def bind(self, value) -> str:
        name = f"_k{next(self._ids)}"
        self.ns[name] = value
        return name

    def src(self, e) -> str:
        if isinstance(e, Lit):
            return repr(e.value)
        if isinstance(e, VarRef):
            return f"V[{e.slot}]"
        if isinstance(e, ClockRef):
            return f"X[{e.index}]"
        if isinstance(e, LocIs):
            return f"(L[{e.instance}] == {e.location})"
        if isinstance(e, VarElem):
            if len(e.indices) != len(e.dims):
                raise SimulationError(f"array {e.name} used without all indices")
            return f"V[{self.elem_index(e)}]"
        if isinstance(e, ConstElem):
            out = self.bind(e.table)
            for i in e.indices:
                out = f"{out}[_chk({self.src(i)}, {2**62})]"
            return out
        if isinstance(e, Unary):
            if e.op == "-":
                return f"(-{self.src(e.operand)})"
            return f"(not {self.src(e.operand)})"
        if isinstance(e, Binary):
            a, b = self.src(e.left), self.src(e.right)
            if e.op == "/":
                return f"_div({a}, {b})"
            if e.op == "&&":
                return f"(True if ({a} and {b}) else False)"
            if e.op == "||":
                return f"(True if ({a} or {b}) else False)"
            return f"({a} {e.op} {b})"
        raise SimulationError(f"cannot compile {e!r}")

    def elem_index(self, e: VarElem) -> str:
        parts = []
        stride = 1
        for i, d in reversed(list(zip(e.indices, e.dims))):
            term = f"_chk({self.src(i)}, {d})"
            parts.append(term if stride == 1 else f"{term} * {stride}")
            stride *= d
        return f"{e.base} + " + " + ".join(reversed(parts))

    def function(self, args: str, body: list[str], name: str = "_f"):
        text = f"def {name}({args}):\n" + "\n".join("    " + line for line in body)
        exec(compile(text, f"<dpsmc:{name}>", "exec"), self.ns)
        return self.ns[name]

    def lambda_(self, args: str, expr: str):
        return eval(compile(f"lambda {args}: {expr}", "<dpsmc>", "eval"), self.ns)


def _chk(i, n):
    if i < 0 or i >= n:
        raise SimulationError(f"array index {i} out of bounds")
    return i


def _range_error(name, value):
    raise SimulationError(f"value {value} outside the declared range of {name}")


def _threshold_src(c: int, b: int, r: int) -> str:
    return f"({b} - X[{c}])" if r == 1 else f"({b} - X[{c}]) / {r}"


# --------------------------------------------------------------------------
# compiled network


class _CEdge:
    __slots__ = ("target", "kind", "chan", "chan_fn", "guard", "clock_ok", "interval",
                 "resets", "update", "weight", "source")


class _CLoc:
    __slots__ = ("upper", "adv", "inv_exp", "initiating", "receiving", "passive", "name")


class Simulator:
    """A Network compiled into closures; holds one mutable state."""

    def __init__(self, net: Network):
        self.net = net
        gen = _Codegen(net)
        self.n = len(net.instances)
        self.global_clocks = tuple(net.global_clocks)
        self.bcast = tuple(k == "broadcast" for k in net.channel_kinds)
        self.locs: list[list[_CLoc]] = []
        self.owner = [None] * len(net.clock_names)
        for k, inst in enumerate(net.instances):
            for c in inst.clocks:
                self.owner[c] = k
            compiled = []
            for li, loc in enumerate(inst.locations):
                rate = dict(loc.rates)
                for c in net.global_clocks:
                    rate[c] = 1
                cl = _CLoc()
                cl.name = f"{inst.name}.{loc.name}"
                cl.upper = tuple((c, b, rate.get(c, 1)) for c, op, b in loc.invariant
                                 if op in ("<", "<=") and rate.get(c, 1) > 0)
                cl.adv = tuple((c, r) for c, r in loc.rates if r != 0)
                cl.inv_exp = None if loc.exp_rate is None else loc.exp_rate[1] / loc.exp_rate[0]
                edges = [self._edge(gen, e, rate, inst.name) for e in loc.edges]
                cl.initiating = tuple(e for e in edges if e.kind != _RECEIVE)
                cl.receiving = tuple(e for e in edges if e.kind == _RECEIVE)
                cl.passive = not cl.initiating
                compiled.append(cl)
            self.locs.append(compiled)
        # rate of each clock as a function of its owner's location
        self.rate_table = []
        for c in range(len(net.clock_names)):
            k = self.owner[c]
            if k is None:
                self.rate_table.append(None)
            else:
                self.rate_table.append(tuple(dict(loc.rates).get(c, 1) for loc in net.instances[k].locations))
        self.var_lo = net.var_lo
        self.var_hi = net.var_hi
        self._gen = gen
        self.reset()

    def _edge(self, gen: _Codegen, e, rate: dict, inst_name: str) -> _CEdge:
        ce = _CEdge()
        ce.target = e.target
        ce.source = e.source
        ce.weight = e.weight
        ce.resets = e.resets
        ce.guard = None if e.guard is None else gen.lambda_("V", gen.src(e.guard))
        if e.sync is None:
            ce.kind, ce.chan, ce.chan_fn = _INTERNAL, None, None
        else:
            kind, chan = e.sync
            ce.kind = _RECEIVE if kind == "?" else _SEND
            if isinstance(chan, Lit):
                ce.chan, ce.chan_fn = chan.value, None
            else:
                total = len(self.net.channel_kinds)
                ce.chan, ce.chan_fn = None, gen.lambda_("V", f"_chk({gen.src(chan)}, {total})")
        # clock guard as a check on the delay d, with thresholds shared by the interval code
        lowers, uppers, consts = [], [], []
        for c, op, b in e.clock_guard:
            r = rate.get(c, 1)
            if r == 0:
                consts.append(f"(X[{c}] {op} {b})")
            elif op in (">", ">="):
                lowers.append((op, _threshold_src(c, b, r)))
            else:
                uppers.append((op, _threshold_src(c, b, r)))
        checks = consts + [f"(d {op} {t})" for op, t in lowers + uppers]
        ce.clock_ok = gen.lambda_("X, d", " and ".join(checks) if checks else "True")
        lo = ["0.0"] + [t for _, t in lowers]
        hi = ["D"] + [t for _, t in uppers]
        const = " and ".join(consts) if consts else "True"
        lo_s = lo[0] if len(lo) == 1 else f"max({', '.join(lo)})"
        hi_s = hi[0] if len(hi) == 1 else f"min({', '.join(hi)})"
        ce.interval = gen.lambda_("X, D", f"({lo_s}, {hi_s}) if {const} else None")
        body = []
        for lhs, rhs in e.updates:
            if isinstance(lhs, VarRef):
                slot = str(lhs.slot)
                lo_v, hi_v = self.net.var_lo[lhs.slot], self.net.var_hi[lhs.slot]
            else:
                slot = gen.elem_index(lhs)
                lo_v, hi_v = self.net.var_lo[lhs.base], self.net.var_hi[lhs.base]
            body.append(f"v = +({gen.src(rhs)})")
            body.append(f"if v < {lo_v} or v > {hi_v}: _range({lhs.name!r}, v)")
            body.append(f"V[{slot}] = v")
        ce.update = gen.function("V", body) if body else None
        return ce

    # -- state ------------------------------------------------------------

    def reset(self) -> None:
        net = self.net
        self.L = [inst.initial for inst in net.instances]
        self.X = [0.0] * len(net.clock_names)
        self.V = list(net.var_init)

    def load(self, s: SimState) -> None:
        self.L, self.X, self.V = list(s.locations), list(s.clocks), list(s.variables)

    def state(self) -> SimState:
        return SimState(list(self.L), list(self.X), list(self.V))

    def rates(self) -> tuple:
        L = self.L
        return tuple(1 if t is None else t[L[self.owner[c]]] for c, t in enumerate(self.rate_table))

    # -- delays -----------------------------------------------------------

    def delay_interval(self, i: int) -> float:
        X = self.X
        dmax = INF
        for c, b, r in self.locs[i][self.L[i]].upper:
            t = (b - X[c]) / r
            if t < dmax:
                dmax = t
        return dmax if dmax > 0.0 else 0.0

    def _race(self, rng: RngStream):
        """Return (delay, winner, options); winner is None if nobody can move."""
        X, L = self.X, self.L
        u = rng.random
        D = INF
        cand = {}
        for i in range(self.n):
            loc = self.locs[i][L[i]]
            dmax = INF
            for c, b, r in loc.upper:
                t = (b - X[c]) / r
                if t < dmax:
                    dmax = t
            if dmax < 0.0:
                dmax = 0.0
            if dmax < D:
                D = dmax
            if loc.passive:
                continue
            if dmax == INF:
                cand[i] = -math.log(1.0 - u()) * loc.inv_exp
            elif dmax == 0.0:
                cand[i] = 0.0
            else:
                cand[i] = u() * dmax
        resampled = set()
        while cand:
            best = min(cand.values())
            ties = [i for i, d in cand.items() if d == best]
            w = ties[0] if len(ties) == 1 else ties[int(u() * len(ties))]
            if best > D:
                break
            opts = self._options(w, best)
            if opts:
                return best, w, opts
            if w in resampled:
                del cand[w]
                continue
            resampled.add(w)
            d2 = self._resample(w, D, rng)
            if d2 is None:
                del cand[w]
            else:
                cand[w] = d2
        return D, None, None

    def _receivers(self, w: int, ch: int, d: float, V, X, L) -> list:
        out = []
        for j in range(self.n):
            if j == w:
                continue
            for e in self.locs[j][L[j]].receiving:
                if (e.chan if e.chan_fn is None else e.chan_fn(V)) != ch:
                    continue
                if e.guard is not None and not e.guard(V):
                    continue
                if e.clock_ok(X, d):
                    out.append((j, e))
        return out

    def _options(self, w: int, d: float) -> list:
        V, X, L = self.V, self.X, self.L
        opts = []
        for e in self.locs[w][L[w]].initiating:
            if e.guard is not None and not e.guard(V):
                continue
            if not e.clock_ok(X, d):
                continue
            if e.kind == _SEND:
                ch = e.chan if e.chan_fn is None else e.chan_fn(V)
                if self.bcast[ch]:
                    opts.append((e, None, ch))
                    continue
                recv = self._receivers(w, ch, d, V, X, L)
                if recv:
                    opts.append((e, recv, ch))
            else:
                opts.append((e, None, None))
        return opts

    def _resample(self, w: int, D: float, rng: RngStream):
        V, X, L = self.V, self.X, self.L
        pieces = []
        for e in self.locs[w][L[w]].initiating:
            if e.guard is not None and not e.guard(V):
                continue
            iv = e.interval(X, D)
            if iv is None or iv[0] > iv[1]:
                continue
            ch = e.chan if e.kind != _SEND or e.chan_fn is None else e.chan_fn(V)
            if e.kind == _SEND and not self.bcast[ch]:
                for j in range(self.n):
                    if j == w:
                        continue
                    for re_ in self.locs[j][L[j]].receiving:
                        if (re_.chan if re_.chan_fn is None else re_.chan_fn(V)) != ch:
                            continue
                        if re_.guard is not None and not re_.guard(V):
                            continue
                        riv = re_.interval(X, D)
                        if riv is None:
                            continue
                        lo, hi = max(iv[0], riv[0]), min(iv[1], riv[1])
                        if lo <= hi:
                            pieces.append((lo, hi))
            else:
                pieces.append(iv)
        if not pieces:
            return None
        pieces.sort()
        merged = [list(pieces[0])]
        for lo, hi in pieces[1:]:
            if lo <= merged[-1][1]:
                if hi > merged[-1][1]:
                    merged[-1][1] = hi
            else:
                merged.append([lo, hi])
        total = sum(hi - lo for lo, hi in merged)
        if total <= 0.0 or total == INF:
            return merged[0][0]
        x = rng.random() * total
        for lo, hi in merged:
            width = hi - lo
            if x <= width:
                return lo + x
            x -= width
        return merged[-1][1]

    # -- transitions ------------------------------------------------------

    def _advance(self, d: float) -> None:
        if d == 0.0:
            return
        X, L = self.X, self.L
        touched = list(self.global_clocks)
        for c in self.global_clocks:
            X[c] += d
        for i in range(self.n):
            for c, r in self.locs[i][L[i]].adv:
                X[c] += r * d
                touched.append(c)
        for c in touched:
            v = X[c]
            rv = round(v)
            if v != rv and abs(v - rv) < SNAP:
                X[c] = float(rv)

    @staticmethod
    def _pick(items, weights, rng: RngStream):
        if len(items) == 1:
            return items[0]
        total = sum(weights)
        x = rng.random() * total
        for item, wgt in zip(items, weights):
            if x < wgt:
                return item
            x -= wgt
        return items[-1]

    def _fire(self, d: float, w: int, opts: list, rng: RngStream) -> None:
        V, X, L = self.V, self.X, self.L
        edge, recv, ch = self._pick(opts, [o[0].weight for o in opts], rng)
        movers = []
        if recv is not None:
            j, re_ = self._pick(recv, [r[1].weight for r in recv], rng)
            movers.append((j, re_))
        elif ch is not None:
            ready = self._receivers(w, ch, d, V, X, L)
            by_inst: dict[int, list] = {}
            for j, re_ in ready:
                by_inst.setdefault(j, []).append(re_)
            for j in sorted(by_inst):
                es = by_inst[j]
                movers.append((j, self._pick(es, [e.weight for e in es], rng)))
        self._advance(d)
        self._take(w, edge)
        for j, re_ in movers:
            self._take(j, re_)

    def _take(self, i: int, e: _CEdge) -> None:
        X = self.X
        for c in e.resets:
            X[c] = 0.0
        if e.update is not None:
            e.update(self.V)
        self.L[i] = e.target

    def step(self, rng: RngStream):
        """One race and transition; returns (winner, delay); winner None on deadlock."""
        d, w, opts = self._race(rng)
        if w is None:
            return None, d
        self._fire(d, w, opts, rng)
        return w, d

    # -- runs -------------------------------------------------------------

    def check_run(self, mon: "Monitor", rng: RngStream, step_limit: int = DEFAULT_STEP_LIMIT) -> RunOutcome:
        self.reset()
        X = self.X
        obs, C = mon.observer, mon.bound
        steps = 0
        while True:
            d, w, opts = self._race(rng)
            o = X[obs]
            horizon = C - o
            T = d if d <= horizon else horizon
            if T >= 0.0:
                hit = mon.first_hit(X, self.V, self.L, T)
                if hit is not None:
                    return RunOutcome(True, steps, o + hit)
            if d > horizon:
                return RunOutcome(False, steps, C)
            if w is None:
                return RunOutcome(False, steps, o + d, deadlock=True)
            self._fire(d, w, opts, rng)
            steps += 1
            if steps >= step_limit:
                return RunOutcome(False, steps, X[obs], step_limit_hit=True)

    def trace(self, rng: RngStream, observer: int, bound: float, step_limit: int = DEFAULT_STEP_LIMIT):
        """Segments of a run up to the point where ``observer`` exceeds ``bound``.

        Consumes the stream exactly like :meth:`check_run`, so a trace and a
        check with the same seed describe the same run.
        """
        self.reset()
        X = self.X
        out = []
        for _ in range(step_limit):
            d, w, opts = self._race(rng)
            horizon = INF if observer is None else bound - X[observer]
            seg_d = d if d <= horizon else horizon
            out.append(Segment(tuple(self.L), tuple(X), self.rates(), tuple(self.V), seg_d))
            if d > horizon or w is None:
                break
            self._fire(d, w, opts, rng)
        return out


# --------------------------------------------------------------------------
# monitoring


class Monitor:
    """Interval-exact evaluation of a query predicate over a delay."""

    def __init__(self, sim: Simulator, formula: Formula):
        self.observer = formula.observer
        self.bound = formula.bound
        gen = sim._gen
        self.conjuncts = []
        for conj in formula.dnf:
            disc, timed = [], []
            for atom in conj:
                if isinstance(atom, LocAtom):
                    disc.append(f"(L[{atom.instance}] {'==' if atom.positive else '!='} {atom.location})")
                elif not atom.timed:
                    disc.append(gen.src(Binary(atom.op, atom.left, atom.right)))
                else:
                    timed.append(self._linear(gen, sim, atom))
            check = gen.lambda_("V, L", " and ".join(disc) if disc else "True")
            self.conjuncts.append((check, tuple(timed)))

    @staticmethod
    def _linear(gen: _Codegen, sim: Simulator, atom: CmpAtom):
        const, coefs = linearize(Binary("-", atom.left, atom.right))
        a_terms = [gen.src(const)] + [f"{k} * X[{c}]" for c, k in coefs.items() if k]
        b_terms = []
        for c, k in coefs.items():
            if not k:
                continue
            table = sim.rate_table[c]
            if table is None:
                b_terms.append(str(k))
            else:
                b_terms.append(f"{k} * {gen.bind(table)}[L[{sim.owner[c]}]]")
        fn = gen.lambda_("X, V, L", f"({' + '.join(a_terms)}, {' + '.join(b_terms) if b_terms else '0'})")
        return fn, atom.op

    def first_hit(self, X, V, L, T: float):
        """Earliest t in [0, T] at which the predicate holds, or None."""
        best = None
        for check, timed in self.conjuncts:
            if not check(V, L):
                continue
            lo, lo_open, hi, hi_open = 0.0, False, T, False
            ok = True
            for fn, op in timed:
                a, b = fn(X, V, L)
                if b == 0:
                    if not _holds(a, op):
                        ok = False
                        break
                    continue
                thr = -a / b
                if b < 0:
                    op = _REVERSE[op]
                if op != "<" and op != "<=":  # lower end: >, >=, ==
                    opened = op == ">"
                    if thr > lo:
                        lo, lo_open = thr, opened
                    elif thr == lo:
                        lo_open = lo_open or opened
                if op != ">" and op != ">=":  # upper end: <, <=, ==
                    opened = op == "<"
                    if thr < hi:
                        hi, hi_open = thr, opened
                    elif thr == hi:
                        hi_open = hi_open or opened
                if lo > hi or (lo == hi and (lo_open or hi_open)):
                    ok = False
                    break
            if ok and (best is None or lo < best):
                best = lo
        return best


_REVERSE = {"<": ">", "<=": ">=", ">": "<", ">=": "<=", "==": "=="}


def _holds(a: float, op: str) -> bool:
    if op == "<":
        return a < 0
    if op == "<=":
        return a <= 0
    if op == ">":
        return a > 0
    if op == ">=":
        return a >= 0
    if op == "==":
        return a == 0
    return a != 0


# --------------------------------------------------------------------------
# module-level API

_CACHE: dict[int, tuple] = {}


def compiled(net: Network) -> Simulator:
    hit = _CACHE.get(id(net))
    if hit is not None and hit[0] is net:
        return hit[1]
    sim = Simulator(net)
    if len(_CACHE) > 64:
        _CACHE.clear()
    _CACHE[id(net)] = (net, sim)
    return sim


def initial_state(net: Network) -> SimState:
    return SimState([i.initial for i in net.instances], [0.0] * len(net.clock_names), list(net.var_init))


def delay_interval(net: Network, s: SimState, inst: int) -> float:
    sim = compiled(net)
    sim.load(s)
    return sim.delay_interval(inst)


def sample_delay(d_max: float, rng: RngStream, exp_rate: tuple | None = None) -> float:
    """Uniform on [0, d_max] when bounded, else exponential with rate i/j."""
    if d_max == INF:
        if exp_rate is None:
            raise SimulationError("unbounded delay without an exponential rate")
        i, j = exp_rate
        return -math.log(1.0 - rng.random()) * (j / i)
    if d_max <= 0.0:
        return 0.0
    return rng.random() * d_max


def step(net: Network, s: SimState, rng: RngStream):
    """Returns (next state, winner instance or None on deadlock, delay)."""
    sim = compiled(net)
    sim.load(s)
    w, d = sim.step(rng)
    return sim.state(), w, d


class Checker:
    """Run generator for a (network, formula) pair; picklable."""

    def __init__(self, net: Network, formula: Formula, step_limit: int = DEFAULT_STEP_LIMIT):
        self.net = net
        self.formula = formula
        self.step_limit = step_limit
        self._sim = None
        self._mon = None

    def __getstate__(self):
        return {"net": self.net, "formula": self.formula, "step_limit": self.step_limit}

    def __setstate__(self, state):
        self.__init__(state["net"], state["formula"], state["step_limit"])

    def _ready(self):
        if self._sim is None:
            self._sim = Simulator(self.net)
            self._mon = Monitor(self._sim, self.formula)

    def outcome(self, rng: RngStream) -> RunOutcome:
        self._ready()
        return self._sim.check_run(self._mon, rng, self.step_limit)

    def run(self, rng: RngStream) -> bool:
        return self.outcome(rng).satisfied

    def batch(self, rng: RngStream, count: int) -> int:
        self._ready()
        sim, mon, limit = self._sim, self._mon, self.step_limit
        return sum(1 for _ in range(count) if sim.check_run(mon, rng, limit).satisfied)


@dataclass
class BernoulliEngine:
    """Synthetic run source: each run succeeds with probability ``p``."""

    p: float

    def run(self, rng: RngStream) -> bool:
        return rng.random() < self.p

    def batch(self, rng: RngStream, count: int) -> int:
        p = self.p
        u = rng.random
        return sum(1 for _ in range(count) if u() < p)


def check_run(net: Network, f: Formula, rng: RngStream, step_limit: int = DEFAULT_STEP_LIMIT) -> RunOutcome:
    sim = compiled(net)
    return sim.check_run(Monitor(sim, f), rng, step_limit)
