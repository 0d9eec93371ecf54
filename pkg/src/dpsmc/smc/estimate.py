from __future__ import annotations

import math


def chernoff_runs(eps: float, alpha: float) -> int:
    """Two-sided Hoeffding sample count: ceil(ln(2/alpha) / (2 eps^2)).

    With that many runs, Pr(|p_hat - p| > eps) <= alpha.
    """
    if not (0.0 < eps < 1.0 and 0.0 < alpha < 1.0):
        raise ValueError(f"eps and alpha must lie in (0, 1), got eps={eps}, alpha={alpha}")
    x = math.log(2.0 / alpha) / (2.0 * eps * eps)
    n = math.ceil(x)
    # guard the ceiling against a product that lands a hair above an integer
    if n - x > 1.0 - 1e-9 and abs(round(x) - x) < 1e-9:
        n = round(x)
    return n


def split_evenly(total: int, parts: int) -> list[int]:
    q, r = divmod(total, parts)
    return [q + (1 if k < r else 0) for k in range(parts)]
