"""Wald's sequential probability ratio test with an indifference region.

H0: p >= p0 = theta + delta0 against H1: p <= p1 = theta - delta1.  The
statistic is the log-likelihood ratio ln(L(p1)/L(p0)) in nats; it moves up
on failures and down on successes.  Crossing ``A = ln((1-beta)/alpha)``
accepts H1, crossing ``B = ln(beta/(1-alpha))`` accepts H0.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace


class Status(enum.Enum):
    CONTINUE = "continue"
    ACCEPT_H0 = "H0"
    ACCEPT_H1 = "H1"

    @property
    def terminal(self) -> bool:
        return self is not Status.CONTINUE


def _unit(name: str, v: float) -> None:
    if not (0.0 < v < 1.0):
        raise ValueError(f"{name} must lie strictly between 0 and 1, got {v}")


@dataclass(frozen=True)
class HypothesisTask:
    theta: float
    delta0: float
    delta1: float
    alpha: float
    beta: float

    def __post_init__(self):
        _unit("alpha", self.alpha)
        _unit("beta", self.beta)
        if self.delta0 < 0 or self.delta1 < 0:
            raise ValueError("indifference half-widths must be non-negative")
        if not (0.0 <= self.p1 < self.p0 <= 1.0):
            raise ValueError(f"need 0 <= theta-delta1 < theta+delta0 <= 1, got p1={self.p1}, p0={self.p0}")

    @classmethod
    def symmetric(cls, theta: float, delta: float, alpha: float, beta: float) -> "HypothesisTask":
        return cls(theta, delta, delta, alpha, beta)

    @property
    def p0(self) -> float:
        return self.theta + self.delta0

    @property
    def p1(self) -> float:
        return self.theta - self.delta1

    def increments(self) -> tuple[float, float]:
        """(added on success, added on failure)."""
        p0, p1 = self.p0, self.p1
        up = math.inf if p0 == 1.0 else math.log((1.0 - p1) / (1.0 - p0))
        down = -math.inf if p1 == 0.0 else math.log(p1 / p0)
        return down, up

    def to_dict(self) -> dict:
        return {"kind": "hypothesis", "theta": self.theta, "delta0": self.delta0, "delta1": self.delta1,
                "alpha": self.alpha, "beta": self.beta}


@dataclass(frozen=True)
class EstimationTask:
    eps: float
    alpha: float

    def __post_init__(self):
        _unit("eps", self.eps)
        _unit("alpha", self.alpha)

    def to_dict(self) -> dict:
        return {"kind": "estimation", "eps": self.eps, "alpha": self.alpha}


def task_from_dict(d: dict):
    kind = d.get("kind")
    if kind == "hypothesis":
        return HypothesisTask(d["theta"], d["delta0"], d["delta1"], d["alpha"], d["beta"])
    if kind == "estimation":
        return EstimationTask(d["eps"], d["alpha"])
    raise ValueError(f"unknown task kind {kind!r}")


def sprt_thresholds(alpha: float, beta: float) -> tuple[float, float]:
    """(A, B): accept H1 when llr >= A, accept H0 when llr <= B."""
    _unit("alpha", alpha)
    _unit("beta", beta)
    return math.log((1.0 - beta) / alpha), math.log(beta / (1.0 - alpha))


@dataclass(frozen=True)
class SprtState:
    llr: float
    n: int
    successes: int
    accept_h1_at: float
    accept_h0_at: float
    status: Status = Status.CONTINUE

    @classmethod
    def start(cls, task: HypothesisTask) -> "SprtState":
        a, b = sprt_thresholds(task.alpha, task.beta)
        return cls(0.0, 0, 0, a, b)

    def recompute(self, task: HypothesisTask) -> float:
        down, up = task.increments()
        return _combine(self.successes, down, self.n - self.successes, up)

    def classify(self, llr: float | None = None) -> Status:
        v = self.llr if llr is None else llr
        if v >= self.accept_h1_at:
            return Status.ACCEPT_H1
        if v <= self.accept_h0_at:
            return Status.ACCEPT_H0
        return Status.CONTINUE


def _combine(s: int, down: float, f: int, up: float) -> float:
    # 0 * inf must stay 0: a degenerate increment only counts when it occurs
    return (s * down if s else 0.0) + (f * up if f else 0.0)


def sprt_update(st: SprtState, task: HypothesisTask, outcome: bool) -> tuple[SprtState, Status]:
    if st.status.terminal:
        raise RuntimeError("SPRT already decided; no further observations accepted")
    down, up = task.increments()
    llr = st.llr + (down if outcome else up)
    nxt = replace(st, llr=llr, n=st.n + 1, successes=st.successes + bool(outcome))
    status = nxt.classify()
    return replace(nxt, status=status), status


def batch_increment(task: HypothesisTask, size: int, successes: int) -> float:
    down, up = task.increments()
    return _combine(successes, down, size - successes, up)


def sprt_batch_update(st: SprtState, task: HypothesisTask, size: int, successes: int) -> tuple[SprtState, Status]:
    """Apply a whole batch, checking the thresholds only at its end."""
    if st.status.terminal:
        raise RuntimeError("SPRT already decided; no further observations accepted")
    if size < 0 or not 0 <= successes <= size:
        raise ValueError(f"invalid batch: {successes} successes out of {size}")
    if size == 0:
        return st, st.status
    llr = st.llr + batch_increment(task, size, successes)
    nxt = replace(st, llr=llr, n=st.n + size, successes=st.successes + successes)
    status = nxt.classify()
    return replace(nxt, status=status), status
