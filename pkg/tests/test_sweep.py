import csv
import io
import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import bundled, doc
from dpsmc.model import ModelError, parse_model
from dpsmc.smc import EstimationTask
from dpsmc.sweep import (
    CSV_TAIL,
    SweepConfig,
    SymmetricGame,
    Topology,
    UtilityMatrix,
    base_graphs,
    duplicate_report,
    find_nash,
    generate_topologies,
    random_topologies,
    read_topologies,
    sweep,
    sweep_csv,
    topology_sweep,
    utility_matrix,
    write_topologies,
)

# -- heuristic generator --------------------------------------------------------


def _brute_force(n):
    """Graphs where every added node is joined to all or none of the earlier ones."""
    out = set()
    for bits in itertools.product([True, False], repeat=n - 1):
        a = [[False] * n for _ in range(n)]
        for k, joined in enumerate(bits, start=1):
            for j in range(k):
                a[k][j] = a[j][k] = joined
        out.add(tuple(tuple(r) for r in a))
    return out


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_base_graphs_match_brute_force(n):
    got = base_graphs(n)
    assert len(got) == 2 ** (n - 1)
    assert set(got) == _brute_force(n)


@pytest.mark.parametrize("n", range(1, 13))
def test_base_graph_count(n):
    graphs = base_graphs(n)
    assert len(graphs) == 2 ** (n - 1)
    for g in graphs[:64]:
        t = Topology(g)
        assert t.is_symmetric() and not any(g[i][i] for i in range(n))


@pytest.mark.parametrize("n", [1, 2, 3, 4, 6])
def test_generated_gateways(n):
    tops = generate_topologies(n)
    expected = [Topology(g, gw) for g in base_graphs(n) for gw in range(n)
                if n == 1 or Topology(g, gw).degree(gw) > 0]
    assert tops == expected
    if n >= 2:
        assert all(t.degree(t.gateway) >= 1 for t in tops)
    assert duplicate_report(tops).duplicates == 0


def test_single_node_kept():
    assert generate_topologies(1) == [Topology(((False,),), 0)]


def test_generation_order_n3():
    # every graph branches into "joined to all" then "isolated"
    g = base_graphs(3)
    assert g[0] == ((False, True, True), (True, False, True), (True, True, False))
    assert g[-1] == ((False,) * 3,) * 3


# -- random topologies ----------------------------------------------------------


def test_random_topologies_shape_and_determinism():
    a, rep = random_topologies(5, 50, 0.4, seed=3)
    b, _ = random_topologies(5, 50, 0.4, seed=3)
    assert a == b and rep.total == 50
    assert all(t.is_symmetric() and t.gateway == 0 for t in a)
    assert all(not t.adjacency[i][i] for t in a for i in range(5))


def test_random_density_extremes():
    tops, rep = random_topologies(4, 10, 1.0, seed=0)
    assert rep.distinct == 1 and rep.duplicates == 9
    assert all(t.degree(i) == 3 for t in tops for i in range(4))
    tops, rep = random_topologies(1, 7, 0.5, seed=0)
    assert rep.distinct == 1 and rep.duplicates == 6


def test_random_directed():
    tops, _ = random_topologies(6, 30, 0.5, seed=1, symmetric=False)
    assert any(not t.is_symmetric() for t in tops)


def test_random_density_is_respected():
    tops, _ = random_topologies(10, 200, 0.3, seed=8)
    share = np.mean([t.adjacency[i][j] for t in tops for i in range(10) for j in range(10) if i != j])
    assert abs(share - 0.3) < 0.02


@pytest.mark.parametrize("args", [(0, 1, 0.5), (3, 0, 0.5), (3, 1, 1.5)])
def test_random_rejects_bad_arguments(args):
    with pytest.raises(ValueError):
        random_topologies(*args, seed=0)


def test_topology_files_round_trip(tmp_path):
    tops = generate_topologies(3)
    paths = write_topologies(tops, tmp_path)
    assert len(paths) == len(tops)
    assert read_topologies(tmp_path) == tops
    assert Topology.parse("2 1\n01\n10\n") == Topology(((False, True), (True, False)), 1)


@pytest.mark.parametrize("text", ["", "2\n01\n10", "2 0\n01\n1", "2 5\n01\n10", "2 0\n02\n10"])
def test_topology_parse_errors(text):
    with pytest.raises(ValueError):
        Topology.parse(text)


# -- Nash -----------------------------------------------------------------------


def _matrix(values, grid=None):
    grid = tuple(grid or range(1, len(values) + 1))
    return UtilityMatrix(grid, tuple(tuple(float(x) for x in r) for r in values))


def _brute_nash(m, tol):
    n = len(m)
    return [i for i in range(n) if all(m[k][i] <= m[i][i] + tol for k in range(n))]


def test_identity_game():
    res = find_nash(_matrix(np.eye(3)))
    assert res.equilibria == (1, 2, 3)
    assert res.optimum == 1


def test_dominant_strategy():
    # the last strategy beats everything: only it is an equilibrium
    m = [[0.1 * i + 0.01 * j for j in range(4)] for i in range(4)]
    res = find_nash(_matrix(m))
    assert res.equilibria == (4,)
    assert res.summary() == "nash=4 opt=4"
    assert find_nash(_matrix(m, grid=(1, 2, 3, 4)), tol=1.0).equilibria == (1, 2, 3, 4)


def test_summary_scale():
    res = find_nash(_matrix([[0.2, 0.0], [0.3, 0.1]], grid=(1, 9)))
    assert res.summary(0.1) == "nash=0.9 opt=0.1"


@settings(max_examples=200)
@given(st.integers(2, 6).flatmap(lambda n: st.lists(
    st.lists(st.floats(0, 1), min_size=n, max_size=n), min_size=n, max_size=n)),
    st.floats(0, 0.2), st.floats(-5, 5))
def test_nash_properties(m, tol, shift):
    U = _matrix(m)
    res = find_nash(U, tol)
    assert [U.grid[i] for i in _brute_nash(m, tol)] == list(res.equilibria)
    shifted = find_nash(_matrix([[x + shift for x in r] for r in m]), tol)
    # a constant shift changes nothing (up to rounding at the tolerance edge)
    if all(abs(m[k][i] - m[i][i] - tol) > 1e-9 for i in range(len(m)) for k in range(len(m))):
        assert shifted.equilibria == res.equilibria
    # relabelling the grid permutes the answer
    perm = list(reversed(range(len(m))))
    pm = [[m[perm[i]][perm[j]] for j in perm] for i in perm]
    again = find_nash(UtilityMatrix(tuple(U.grid[p] for p in perm), tuple(tuple(r) for r in
                                   [[m[perm[i]][perm[j]] for j in range(len(m))] for i in range(len(m))])), tol)
    assert again.equilibria == res.equilibria
    assert len(pm) == len(m)
    assert res.optimum == U.grid[int(np.argmax(np.diag(np.asarray(m))))]


def test_matrix_shape_checked():
    with pytest.raises(ValueError):
        UtilityMatrix((1, 2), ((0.0, 1.0),))


def test_utility_matrix_csv():
    text = _matrix([[0.5, 0.25], [1.0, 0.0]], grid=(1, 9)).to_csv()
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == ["p_dev\\p_all", "1", "9"]
    assert rows[2] == ["9", "1.000000", "0.000000"]


# -- sweeps --------------------------------------------------------------------

TASK = EstimationTask(0.1, 0.1)  # 150 runs per point


def test_sweep_rows_and_csv():
    pm = parse_model(bundled("coin"))
    res = sweep(pm, "Pr[time<=2](<> Coin.Heads)", TASK, SweepConfig(seed=4),
                assignments=[{"K": k} for k in (1, 50, 99)])
    assert [r.assignment["K"] for r in res.rows] == [1, 50, 99]
    assert res.p_hats[0] < 0.1 and res.p_hats[2] > 0.9 and abs(res.p_hats[1] - 0.5) < 0.15
    rows = list(csv.reader(io.StringIO(sweep_csv(res))))
    assert rows[0] == ["K", *CSV_TAIL]
    assert len(rows) == 4 and all(r[-1] == "ok" for r in rows[1:])
    assert rows[1][3] == "0.1" and rows[1][4] == "150"


def test_sweep_full_space_and_seed():
    pm = parse_model(doc({
        "constants": {"A": "#range(1,3)", "B": "#range(1,2)"},
        "templates": [{"name": "T", "locations": [{"name": "S", "invariant": "x <= 1"}, {"name": "H"}, {"name": "L"}],
                       "clocks": ["x"], "initial": "S",
                       "edges": [{"from": "S", "to": "H", "weight": "A"}, {"from": "S", "to": "L", "weight": "B"}]}],
        "instances": [{"template": "T"}]}))
    a = sweep(pm, "Pr[time<=2](<> T.H)", TASK, SweepConfig(seed=9))
    b = sweep(pm, "Pr[time<=2](<> T.H)", TASK, SweepConfig(seed=9, jobs=2))
    assert [r.assignment for r in a.rows] == [{"A": x, "B": y} for x in (1, 2, 3) for y in (1, 2)]
    assert a.p_hats == b.p_hats
    # more weight on H, higher estimate; B = A gives one half
    assert a.p_hats[0] == a.p_hats[3] and a.p_hats[4] > a.p_hats[1]
    fixed = sweep(pm, "Pr[time<=2](<> T.H)", TASK, SweepConfig(seed=9), fixed={"B": 2})
    assert fixed.column("A") == [1, 2, 3] and fixed.column("B") == [2, 2, 2]
    assert fixed.p_hats == [a.p_hats[1], a.p_hats[3], a.p_hats[5]]


def test_out_of_domain_point_is_an_error_row():
    pm = parse_model(bundled("coin"))
    res = sweep(pm, "Pr[time<=2](<> Coin.Heads)", TASK, assignments=[{"K": 100}])
    assert res.rows[0].status == "error: value 100 outside the domain of K"


def test_sweep_reports_failing_points():
    pm = parse_model(doc({
        "constants": {"Z": "#range(0,1)", "Q": "10 / Z"},
        "templates": [{"name": "T", "locations": [{"name": "S", "invariant": "x <= Q"}], "clocks": ["x"],
                       "initial": "S", "edges": []}],
        "instances": [{"template": "T"}]}))
    res = sweep(pm, "Pr[time<=1](<> T.S)", TASK, SweepConfig(seed=1))
    assert res.rows[0].status.startswith("error") and math.isnan(res.p_hats[0])
    assert res.rows[1].status == "ok" and res.p_hats[1] == 1.0
    assert "nan" in sweep_csv(res)


# -- games -----------------------------------------------------------------------

COIN_GAME = {
    # the "utility" of the deviator is its own bias, whatever the others do
    "constants": {"P_SELF": "#range(1,9)", "P_OTHER": "#range(1,9)", "N": "#range(2,3)"},
    "templates": [{"name": "T", "clocks": ["x"], "locations": [{"name": "S", "invariant": "x <= 1"}, {"name": "W"},
                                                              {"name": "L"}],
                   "initial": "S", "edges": [{"from": "S", "to": "W", "weight": "P_SELF"},
                                             {"from": "S", "to": "L", "weight": "10 - P_SELF"}]}],
    "instances": [{"template": "T"}],
}


def test_utility_matrix_and_nash():
    pm = parse_model(doc(COIN_GAME))
    g = SymmetricGame(pm, (1, 5, 9), "Pr[time<=2](<> T.W)", EstimationTask(0.05, 0.05), fixed=(("N", 2),),
                      scale=0.1)
    U = utility_matrix(g, seed=2)
    assert len(U.values) == 3 and all(len(r) == 3 for r in U.values)
    assert all(abs(U.values[i][j] - 0.1 * g.grid[i]) < 0.05 for i in range(3) for j in range(3))
    # each row uses the same seed for all columns, so columns agree exactly
    assert all(len(set(r)) == 1 for r in U.values)
    res = find_nash(U, tol=0.1)
    assert res.equilibria == (9,) and res.optimum == 9
    assert U.diagonal() == [U.values[i][i] for i in range(3)]


def test_game_grid_checked():
    pm = parse_model(doc(COIN_GAME))
    with pytest.raises(ValueError):
        SymmetricGame(pm, (1, 10), "Pr[time<=2](<> T.W)", TASK)
    with pytest.raises(ValueError):
        SymmetricGame(pm, (1,), "Pr[time<=2](<> T.W)", TASK)


# -- topology sweeps ---------------------------------------------------------------

STAR = {
    # heads weight = gateway degree, so p = deg / (deg + 1)
    "constants": {"M": "#booleanmatrix(3, symmetric, zerodiag)", "GW": "#range(0,2)"},
    "templates": [{"name": "T", "clocks": ["x"], "locations": [{"name": "S", "invariant": "x <= 1"}, {"name": "H"},
                                                              {"name": "L"}],
                   "initial": "S", "edges": [{"from": "S", "to": "H", "weight": "M[GW][0] + M[GW][1] + M[GW][2]"},
                                             {"from": "S", "to": "L", "weight": "1"}]}],
    "instances": [{"template": "T"}],
}


def test_topology_sweep_ranks():
    pm = parse_model(doc(STAR))
    tops = generate_topologies(3)
    cfg = SweepConfig(seed=5)
    res = topology_sweep(pm, "Pr[time<=2](<> T.H)", EstimationTask(0.05, 0.05), tops, cfg)
    assert len(res.rows) == len(tops)
    assert res.p_hats == sorted(res.p_hats, reverse=True)
    top = res.rows[0]
    deg = sum(top.assignment["M"][top.assignment["GW"]])
    assert deg == 2
    again = topology_sweep(pm, "Pr[time<=2](<> T.H)", EstimationTask(0.05, 0.05), tops, SweepConfig(seed=5, jobs=2))
    assert [r.assignment for r in again.rows] == [r.assignment for r in res.rows]
    assert again.p_hats == res.p_hats
    # ties keep generation order
    for a, b in zip(res.rows, res.rows[1:]):
        if a.p_hat == b.p_hat:
            assert a.index < b.index


def test_topology_sweep_size_mismatch():
    pm = parse_model(doc(STAR))
    with pytest.raises(ModelError):
        topology_sweep(pm, "Pr[time<=2](<> T.H)", TASK, generate_topologies(4))


def test_bundled_lmac_topology_sweep_runs():
    pm = parse_model(bundled("lmac_topology"))
    tops = [t for t in generate_topologies(5)][:3]
    res = topology_sweep(pm, "Pr[time<=100](<> col_count >= 1)", EstimationTask(0.2, 0.2), tops, SweepConfig(seed=1))
    assert len(res.rows) == 3 and all(r.status == "ok" for r in res.rows)
