"""Local drivers: hypothesis testing and estimation on ``jobs`` executors.

``jobs == 1`` runs inline; more jobs start worker processes that speak the
same protocol as remote workers, so the result never depends on ``jobs``
for estimation, and depends only on ``(seed, jobs, batch)`` for testing.
"""

from __future__ import annotations

import time
from dataclasses import replace

from ..model import Network
from ..query import Formula
from ..semantics import Checker
from .estimate import chernoff_runs
from .sprt import EstimationTask, HypothesisTask
from .verdict import Verdict

DEFAULT_BATCH = 32
DEFAULT_BUFFER = 4


def engine_for(source, formula: Formula | None = None, step_limit: int | None = None):
    if isinstance(source, Network):
        if formula is None:
            raise ValueError("a Network needs a Formula")
        return Checker(source, formula) if step_limit is None else Checker(source, formula, step_limit)
    if not hasattr(source, "batch"):
        raise TypeError(f"cannot simulate {type(source).__name__}")
    return source


def run_hypothesis(source, formula: Formula | None, task: HypothesisTask, seed: int = 0, jobs: int = 1,
                   batch: int = DEFAULT_BATCH, buffer: int = DEFAULT_BUFFER, safe_bounds: bool = False,
                   jitter: float = 0.0) -> Verdict:
    """Wald test on runs of ``source`` (a Network with its Formula, or any engine)."""
    from ..dist.ledger import DistConfig
    from ..dist.session import Job, LocalListener, master_session, simulate_ledger

    engine = engine_for(source, formula)
    t0 = time.perf_counter()
    if jobs == 1 and not safe_bounds and jitter == 0.0:
        v = simulate_ledger(engine, task, seed, 1, batch)
        return replace(v, wall_time=time.perf_counter() - t0)
    cfg = DistConfig(jobs, batch, buffer, seed, safe_bounds)
    with LocalListener(engine, jitter=jitter, jitter_seed=seed) as listener:
        return master_session(cfg, Job(), task, listener)


def run_estimation(source, formula: Formula | None, task: EstimationTask, seed: int = 0, jobs: int = 1,
                   batch: int = DEFAULT_BATCH, buffer: int = DEFAULT_BUFFER, runs: int | None = None) -> Verdict:
    """Chernoff-Hoeffding estimate from exactly ``chernoff_runs(eps, alpha)`` runs.

    ``runs`` overrides the count (used for benchmarking); the estimate is
    identical for every ``jobs``.
    """
    from ..dist.ledger import DistConfig
    from ..dist.session import Job, LocalListener, estimate_sequential, master_session

    engine = engine_for(source, formula)
    n = chernoff_runs(task.eps, task.alpha) if runs is None else runs
    t0 = time.perf_counter()
    if jobs == 1:
        v = estimate_sequential(engine, n, seed, batch)
        v = replace(v, eps=task.eps, alpha=task.alpha)
    else:
        cfg = DistConfig(jobs, batch, buffer, seed)
        with LocalListener(engine) as listener:
            v = master_session(cfg, Job(), task, listener, runs=n)
    if v.runs_used != n:
        raise AssertionError(f"estimation used {v.runs_used} runs instead of {n}")
    return replace(v, wall_time=time.perf_counter() - t0)
