"""Rank 5-node topologies by collision probability at the gateway.

Generates the heuristic family (every "joined to all / isolated" growth
with every connected gateway) and a batch of random graphs, then prints the
worst few of each.
"""

from dpsmc import models_dir
from dpsmc.model import parse_model
from dpsmc.smc import EstimationTask
from dpsmc.sweep import SweepConfig, generate_topologies, random_topologies, topology_sweep

QUERY = "Pr[time<=20](<> col_count >= 1)"


def show(title, res, k=3):
    print(title)
    for row in res.rows[:k]:
        m = row.assignment["can_hear"]
        rows = " ".join("".join("1" if x else "0" for x in r) for r in m)
        print(f"  p={row.p_hat:.3f}  gw={row.assignment.get('GW', 0)}  {rows}")


def main():
    pm = parse_model((models_dir() / "lmac_topology.json").read_text())
    task = EstimationTask(0.1, 0.1)
    gen = generate_topologies(5)
    show(f"heuristic ({len(gen)} topologies)", topology_sweep(pm, QUERY, task, gen, SweepConfig(seed=1)))
    rnd, rep = random_topologies(5, 40, 0.5, seed=2)
    print(f"random: {rep.total} drawn, {rep.duplicates} duplicates")
    show("random", topology_sweep(pm, QUERY, task, rnd, SweepConfig(seed=1)))


if __name__ == "__main__":
    main()
