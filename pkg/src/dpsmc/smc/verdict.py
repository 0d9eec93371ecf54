from __future__ import annotations

from dataclasses import dataclass

from .. import __version__


@dataclass(frozen=True)
class Verdict:
    kind: str  # "H0", "H1" or "estimate"
    runs_used: int
    seed: int
    wall_time: float = 0.0
    llr: float | None = None
    p_hat: float | None = None
    eps: float | None = None
    alpha: float | None = None
    successes: int | None = None
    batches: int | None = None  # committed batches (hypothesis) or batches aggregated (estimation)
    early: bool = False  # decided through safe Binomial bounds

    @property
    def is_estimate(self) -> bool:
        return self.kind == "estimate"

    def line(self) -> str:
        """Machine-readable record; contains no timing, so reruns are byte-identical."""
        if self.is_estimate:
            return (f"estimate p={self.p_hat:.6f} eps={self.eps:g} alpha={self.alpha:g} "
                    f"runs={self.runs_used} seed={self.seed} version={__version__}")
        return f"verdict={self.kind} runs={self.runs_used} llr={self.llr:.6f} seed={self.seed} version={__version__}"

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "runs_used": self.runs_used, "seed": self.seed}
        for k in ("llr", "p_hat", "eps", "alpha", "successes", "batches"):
            v = getattr(self, k)
            if v is not None:
                d[k] = v
        if self.early:
            d["early"] = True
        return d
