"""Parametric sweeps, symmetric Nash search and topology generation."""

from __future__ import annotations

import csv
import io
import math
import multiprocessing
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .model import BooleanMatrix, IntRange, ModelError, ParametrizedModel, enumerate_assignments, instantiate, parameter_space
from .query import QueryError, parse_query
from .semantics import Checker, SimulationError
from .smc.drivers import DEFAULT_BATCH, run_estimation
from .smc.estimate import chernoff_runs
from .smc.sprt import EstimationTask

CSV_TAIL = ("p_hat", "eps", "alpha", "runs", "wall_ms", "status")


@dataclass(frozen=True)
class SweepConfig:
    jobs: int = 1
    seed: int = 0
    batch: int = DEFAULT_BATCH
    step_limit: int | None = None


@dataclass(frozen=True)
class SweepRow:
    assignment: dict
    p_hat: float
    eps: float
    alpha: float
    runs: int
    wall_time: float
    status: str = "ok"
    index: int = 0  # position in enumeration order


@dataclass
class SweepResult:
    names: tuple
    rows: list = field(default_factory=list)

    def column(self, name: str) -> list:
        return [r.assignment[name] for r in self.rows]

    @property
    def p_hats(self) -> list:
        return [r.p_hat for r in self.rows]


def _estimate_one(args) -> SweepRow:
    pm, query, task, assignment, cfg, index = args
    t0 = time.perf_counter()
    n = chernoff_runs(task.eps, task.alpha)
    try:
        net = instantiate(pm, assignment)
        f = parse_query(query, net)
        engine = Checker(net, f) if cfg.step_limit is None else Checker(net, f, cfg.step_limit)
        v = run_estimation(engine, None, task, seed=cfg.seed, jobs=1, batch=cfg.batch)
        return SweepRow(assignment, v.p_hat, task.eps, task.alpha, v.runs_used, time.perf_counter() - t0,
                        index=index)
    except (ModelError, QueryError, SimulationError, ZeroDivisionError) as e:
        return SweepRow(assignment, math.nan, task.eps, task.alpha, n, time.perf_counter() - t0,
                        f"error: {e}".replace("\n", " "), index)


def _pool(jobs: int):
    methods = multiprocessing.get_all_start_methods()
    ctx = multiprocessing.get_context("fork" if "fork" in methods else "spawn")
    return ProcessPoolExecutor(max_workers=jobs, mp_context=ctx)


def _run_all(items: list, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [_estimate_one(it) for it in items]
    with _pool(min(jobs, len(items))) as ex:
        return list(ex.map(_estimate_one, items, chunksize=1))


def sweep(pm: ParametrizedModel, query: str, task: EstimationTask, cfg: SweepConfig = SweepConfig(),
          assignments: Iterable[Mapping] | None = None, fixed: Mapping | None = None) -> SweepResult:
    """One estimation per assignment, all with the same seed, in enumeration order.

    ``assignments`` restricts the sweep to an explicit list; ``fixed`` pins
    some parameters and enumerates the rest.
    """
    space = parameter_space(pm)
    fixed = dict(fixed or {})
    if assignments is None:
        free = type(space)(tuple((n, d) for n, d in space.domains if n not in fixed))
        points = [{**fixed, **a} for a in enumerate_assignments(free)]
    else:
        points = [{**fixed, **dict(a)} for a in assignments]
    items = [(pm, query, task, a, cfg, k) for k, a in enumerate(points)]
    return SweepResult(space.names, _run_all(items, cfg.jobs))


# --------------------------------------------------------------------------
# CSV


def _cell(v) -> str:
    if isinstance(v, tuple):
        return "/".join("".join("1" if x else "0" for x in row) for row in v)
    return str(v)


def sweep_csv(result: SweepResult, extra: Sequence[str] = ()) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([*extra, *result.names, *CSV_TAIL])
    for r in result.rows:
        lead = [getattr(r, x) for x in extra]
        p = "nan" if math.isnan(r.p_hat) else f"{r.p_hat:.6f}"
        w.writerow([*lead, *(_cell(r.assignment[n]) for n in result.names), p, f"{r.eps:g}", f"{r.alpha:g}",
                    r.runs, f"{r.wall_time * 1000:.1f}", r.status])
    return buf.getvalue()


def write_csv(text: str, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


# --------------------------------------------------------------------------
# symmetric games


@dataclass(frozen=True)
class SymmetricGame:
    """Player 0's strategy is ``self_param``; every other player uses ``other_param``."""

    pm: ParametrizedModel
    grid: tuple
    query: str
    task: EstimationTask
    self_param: str = "P_SELF"
    other_param: str = "P_OTHER"
    fixed: tuple = ()  # ((name, value), ...) for the remaining parameters, e.g. the player count
    scale: float = 1.0  # grid value times scale is the strategy as a probability, for reporting

    def __post_init__(self):
        if len(self.grid) < 2:
            raise ValueError("a strategy grid needs at least two values")
        space = parameter_space(self.pm)
        for name in (self.self_param, self.other_param):
            dom = space[name]
            bad = [g for g in self.grid if g not in dom]
            if bad:
                raise ValueError(f"grid values {bad} outside the domain of {name}")

    def assignment(self, mine, others) -> dict:
        return {**dict(self.fixed), self.self_param: mine, self.other_param: others}


@dataclass(frozen=True)
class UtilityMatrix:
    grid: tuple
    values: tuple  # values[i][j] = U(p' = grid[i], p = grid[j])
    scale: float = 1.0

    def __post_init__(self):
        n = len(self.grid)
        if len(self.values) != n or any(len(r) != n for r in self.values):
            raise ValueError("utility matrix must be |G| x |G|")

    def diagonal(self) -> list:
        return [self.values[i][i] for i in range(len(self.grid))]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["p_dev\\p_all", *(_label(g, self.scale) for g in self.grid)])
        for g, row in zip(self.grid, self.values):
            w.writerow([_label(g, self.scale), *(f"{u:.6f}" for u in row)])
        return buf.getvalue()


def _label(g, scale: float) -> str:
    return f"{g * scale:g}" if scale != 1.0 else str(g)


def utility_matrix(g: SymmetricGame, seed: int = 0, cfg: SweepConfig | None = None) -> UtilityMatrix:
    cfg = cfg or SweepConfig(seed=seed)
    cfg = SweepConfig(cfg.jobs, seed, cfg.batch, cfg.step_limit)
    items = []
    for i, mine in enumerate(g.grid):
        for j, others in enumerate(g.grid):
            items.append((g.pm, g.query, g.task, g.assignment(mine, others), cfg, i * len(g.grid) + j))
    rows = _run_all(items, cfg.jobs)
    for r in rows:
        if r.status != "ok":
            raise ModelError(f"utility cell {r.assignment}: {r.status}")
    n = len(g.grid)
    vals = tuple(tuple(rows[i * n + j].p_hat for j in range(n)) for i in range(n))
    return UtilityMatrix(tuple(g.grid), vals, g.scale)


@dataclass(frozen=True)
class NashResult:
    equilibria: tuple  # grid values, ascending
    optimum: object  # grid value maximising the diagonal
    tol: float

    def summary(self, scale: float = 1.0) -> str:
        ne = ",".join(_label(p, scale) for p in self.equilibria) or "none"
        return f"nash={ne} opt={_label(self.optimum, scale)}"


def find_nash(U: UtilityMatrix, tol: float = 0.0) -> NashResult:
    """Grid points p where no deviation p' beats U(p, p) by more than ``tol``."""
    m = np.asarray(U.values, dtype=float)
    best = m.max(axis=0)
    diag = np.diag(m)
    order = sorted(range(len(U.grid)), key=lambda k: U.grid[k])
    ne = tuple(U.grid[k] for k in order if diag[k] >= best[k] - tol)
    return NashResult(ne, U.grid[int(np.argmax(diag))], tol)


# --------------------------------------------------------------------------
# topologies


@dataclass(frozen=True)
class Topology:
    adjacency: tuple  # tuple of tuples of bool
    gateway: int = 0

    @property
    def n(self) -> int:
        return len(self.adjacency)

    def degree(self, node: int) -> int:
        return sum(1 for j, x in enumerate(self.adjacency[node]) if x and j != node)

    def is_symmetric(self) -> bool:
        a = self.adjacency
        return all(a[i][j] == a[j][i] for i in range(self.n) for j in range(self.n))

    def canonical(self) -> str:
        rows = "\n".join("".join("1" if x else "0" for x in row) for row in self.adjacency)
        return f"{self.n} {self.gateway}\n{rows}\n"

    @classmethod
    def parse(cls, text: str) -> "Topology":
        lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
        try:
            n, gw = (int(x) for x in lines[0].split())
        except (ValueError, IndexError):
            raise ValueError("topology must start with 'n gateway'") from None
        rows = lines[1:]
        if len(rows) != n or any(len(r) != n or set(r) - {"0", "1"} for r in rows):
            raise ValueError(f"topology needs {n} rows of {n} characters 0/1")
        if not 0 <= gw < n:
            raise ValueError(f"gateway {gw} out of range")
        return cls(tuple(tuple(c == "1" for c in r) for r in rows), gw)


@dataclass(frozen=True)
class DuplicateReport:
    total: int
    distinct: int

    @property
    def duplicates(self) -> int:
        return self.total - self.distinct


def duplicate_report(tops: Sequence[Topology]) -> DuplicateReport:
    return DuplicateReport(len(tops), len({t.canonical() for t in tops}))


def random_topologies(n: int, count: int, density: float, seed: int,
                      symmetric: bool = True) -> tuple[list, DuplicateReport]:
    """Independent Bernoulli(density) off-diagonal entries; gateway is node 0."""
    if n < 1 or count < 1 or not 0.0 <= density <= 1.0:
        raise ValueError("need n >= 1, count >= 1 and density in [0, 1]")
    rng = np.random.default_rng(seed)
    draws = rng.random((count, n, n)) < density
    out = []
    for m in draws:
        if symmetric:
            upper = np.triu(m, 1)
            m = upper | upper.T
        else:
            np.fill_diagonal(m, False)
        out.append(Topology(tuple(tuple(bool(x) for x in row) for row in m), 0))
    return out, duplicate_report(out)


def base_graphs(n: int) -> list:
    """The 2^(n-1) graphs grown by adding nodes joined to all or to none of the others."""
    if n < 1:
        raise ValueError("n must be >= 1")
    graphs = [[[False]]]
    for k in range(1, n):
        nxt = []
        for g in graphs:
            for joined in (True, False):
                h = [row + [joined] for row in g]
                h.append([joined] * k + [False])
                nxt.append(h)
        graphs = nxt
    return [tuple(tuple(r) for r in g) for g in graphs]


def generate_topologies(n: int) -> list:
    """Every base graph with every gateway, minus gateways left without neighbours."""
    out = []
    for g in base_graphs(n):
        for gw in range(n):
            t = Topology(g, gw)
            if n == 1 or t.degree(gw) > 0:
                out.append(t)
    return out


def write_topologies(tops: Sequence[Topology], directory) -> list:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    width = max(4, len(str(len(tops))))
    paths = []
    for k, t in enumerate(tops):
        p = d / f"topology_{k:0{width}d}.txt"
        p.write_text(t.canonical(), encoding="utf-8")
        paths.append(p)
    return paths


def read_topologies(directory) -> list:
    return [Topology.parse(p.read_text(encoding="utf-8")) for p in sorted(Path(directory).glob("*.txt"))]


def _matrix_param(pm: ParametrizedModel, name: str | None) -> tuple[str, BooleanMatrix]:
    space = parameter_space(pm)
    mats = [(n, d) for n, d in space.domains if isinstance(d, BooleanMatrix)]
    if name is not None:
        mats = [(n, d) for n, d in mats if n == name]
    if len(mats) != 1:
        raise ModelError("topology sweeps need exactly one boolean-matrix parameter")
    return mats[0]


def topology_sweep(pm: ParametrizedModel, query: str, task: EstimationTask, topologies: Sequence[Topology],
                   cfg: SweepConfig = SweepConfig(), gateway_param: str | None = "GW",
                   fixed: Mapping | None = None, matrix_param: str | None = None) -> SweepResult:
    """Estimate per topology; rows come back sorted by p_hat, highest first."""
    name, dom = _matrix_param(pm, matrix_param)
    space = parameter_space(pm)
    has_gw = gateway_param is not None and gateway_param in space.names
    points = []
    for t in topologies:
        if t.n != dom.n:
            raise ModelError(f"topology has {t.n} nodes but {name} is {dom.n}x{dom.n}")
        a = {**dict(fixed or {}), name: t.adjacency}
        if has_gw:
            if isinstance(space[gateway_param], IntRange) and t.gateway not in space[gateway_param]:
                raise ModelError(f"gateway {t.gateway} outside the domain of {gateway_param}")
            a[gateway_param] = t.gateway
        points.append(a)
    items = [(pm, query, task, a, cfg, k) for k, a in enumerate(points)]
    rows = _run_all(items, cfg.jobs)
    rows.sort(key=lambda r: (-(r.p_hat if not math.isnan(r.p_hat) else -1.0), r.index))
    return SweepResult(space.names, rows)
