from .estimate import chernoff_runs
from .sprt import (
    EstimationTask,
    HypothesisTask,
    SprtState,
    Status,
    sprt_batch_update,
    sprt_thresholds,
    sprt_update,
)
from .verdict import Verdict

__all__ = [
    "EstimationTask", "HypothesisTask", "SprtState", "Status", "Verdict", "chernoff_runs",
    "sprt_batch_update", "sprt_thresholds", "sprt_update", "run_hypothesis", "run_estimation",
]


def __getattr__(name):
    if name in ("run_hypothesis", "run_estimation"):
        from . import drivers

        return getattr(drivers, name)
    raise AttributeError(name)
