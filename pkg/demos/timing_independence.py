"""Same seed, same verdict, however slow the workers are.

Runs one hypothesis test with four in-process workers, first with no delay
and then with random 0-50 ms pauses before every worker message, and prints
the committed batch counts side by side.
"""

from dpsmc import models_dir
from dpsmc.dist import DistConfig, Job, ThreadListener, master_session
from dpsmc.model import instantiate, parse_model
from dpsmc.query import parse_query
from dpsmc.semantics import Checker
from dpsmc.smc import HypothesisTask


def session(engine, task, jitter):
    lst = ThreadListener(engine, jitter=jitter, jitter_seed=99)
    try:
        return master_session(DistConfig(4, 8, 4, 2024), Job(), task, lst)
    finally:
        lst.close()


def main():
    net = instantiate(parse_model((models_dir() / "exp.json").read_text()))
    engine = Checker(net, parse_query("Pr[time<=1](<> M.B)", net))
    task = HypothesisTask.symmetric(0.6, 0.02, 0.01, 0.01)
    for jitter in (0.0, 0.05):
        v = session(engine, task, jitter)
        print(f"jitter<= {jitter * 1000:3.0f} ms  {v.line()}  batches={v.batches}")


if __name__ == "__main__":
    main()
