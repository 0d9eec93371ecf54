"""Symmetric equilibrium of a small random-access game.

Two players share three slots. In each slot a player transmits with its
strategy probability and scores if it is alone on the channel. Raising
your own probability always helps you, so the equilibrium sits at the top
of the grid while the shared optimum is much lower.
"""

from dpsmc import models_dir
from dpsmc.model import parse_model
from dpsmc.smc import EstimationTask
from dpsmc.sweep import SymmetricGame, find_nash, utility_matrix

WIN = " || ".join(f"(mine[{k}] == 1 && cnt[{k}] == 1)" for k in range(3))
QUERY = f"Pr[time<=10](<> P0.Done && ({WIN}))"


def main():
    pm = parse_model((models_dir() / "game.json").read_text())
    eps = 0.03
    game = SymmetricGame(pm, tuple(range(1, 10, 2)), QUERY, EstimationTask(eps, 0.05), fixed=(("N", 2),),
                         scale=0.1)
    U = utility_matrix(game, seed=3)
    print(U.to_csv())
    print(find_nash(U, 2 * eps).summary(0.1))


if __name__ == "__main__":
    main()
