"""Chance that the first train crosses within 50 time units, for 2..10 trains.

More trains queue at the gate, so the first one waits longer and the
estimate drops as the count grows.
"""

import sys

from dpsmc import models_dir
from dpsmc.model import parse_model
from dpsmc.smc import EstimationTask
from dpsmc.sweep import SweepConfig, sweep

QUERY = "Pr[time<=50](<> Train(0).Cross)"


def main(eps=0.02, seed=1):
    pm = parse_model((models_dir() / "traingate.json").read_text())
    res = sweep(pm, QUERY, EstimationTask(eps, 0.05), SweepConfig(seed=seed),
                assignments=[{"TRAINS": n} for n in (2, 4, 6, 8, 10)], fixed={"RATE": 10})
    print(f"{'trains':>6}  p_hat   (+/- {eps})")
    for row in res.rows:
        bar = "#" * round(40 * row.p_hat)
        print(f"{row.assignment['TRAINS']:>6}  {row.p_hat:.3f}  {bar}")


if __name__ == "__main__":
    main(*(float(a) for a in sys.argv[1:2]))
