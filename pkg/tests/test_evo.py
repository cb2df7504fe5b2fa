import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybrid_infill.evo import (
    Candidate,
    HvConfig,
    Population,
    PopulationExtinct,
    append_ledger,
    check_convergence,
    crowding_distance,
    filter_anomalies,
    hypervolume_2d,
    load_population,
    nondominated_sort,
    population_hypervolume,
    read_ledger,
    save_population,
    select_next_population,
)
from hybrid_infill.evo.selection import ledger_row
from hybrid_infill.fields import GridSpec

G = GridSpec(4, 3)


def cand(i, obj=None, **kw):
    rng = np.random.default_rng(i)
    return Candidate(f"c{i:03d}", G, rng.random(G.shape), rng.random(G.shape), rng.random(G.shape), obj, **kw)


def pop_of(points, m=None, **kw):
    members = [cand(i, tuple(p)) for i, p in enumerate(points)]
    return Population(0, tuple(members), m or len(members), **kw)


def brute_fronts(F):
    """Peel Pareto sets with an explicit double loop."""
    left = list(range(len(F)))
    out = []
    while left:
        front = []
        for i in left:
            dominated = False
            for j in left:
                if j != i and all(F[j][k] <= F[i][k] for k in range(2)) and any(F[j][k] < F[i][k] for k in range(2)):
                    dominated = True
                    break
            if not dominated:
                front.append(i)
        out.append(sorted(front))
        left = [i for i in left if i not in front]
    return out


def mc_hypervolume(F, ref, n=10_000_000, seed=0):
    rng = np.random.default_rng(seed)
    F = F[brute_fronts(F.tolist())[0]]  # dominated points add nothing to the union
    lo = F.min(axis=0)
    box = np.prod(ref - lo)
    hit = 0
    for s in range(0, n, 100_000):
        u = lo + rng.random((min(100_000, n - s), 2)) * (ref - lo)
        hit += np.any(np.all(F[None] <= u[:, None], axis=2), axis=1).sum()
    return box * hit / n


# ---------------------------------------------------------------- filter

def test_filter_identity_without_anomalies():
    p = pop_of([(0.5, 1.0), (0.4, 2.0), (0.3, 3.0)])
    assert filter_anomalies(p).ids == p.ids


def test_filter_drops_nonfinite_member():
    p = pop_of([(0.5, 1.0), (0.4, np.inf), (0.3, 3.0)])
    assert filter_anomalies(p).ids == ["c000", "c002"]


def test_filter_drops_flagged_member(caplog):
    members = [cand(0, (0.5, 1.0)), cand(1, None, anomaly=True, reason="no mesh"), cand(2, (0.3, 3.0))]
    with caplog.at_level(logging.INFO):
        out = filter_anomalies(Population(0, tuple(members), 3))
    assert out.ids == ["c000", "c002"]
    assert "no mesh" in caplog.text


def test_filter_outlier_threshold():
    pts = [(0.5, 1.0)] * 5 + [(0.4, 100.0), (0.45, 9.0)]
    out = filter_anomalies(pop_of(pts))
    # median of the seven is 1.0
    assert "c005" not in out.ids and "c006" in out.ids and len(out) == 6


def test_filter_extinct():
    members = [cand(0, None, anomaly=True, reason="no mesh")]
    with pytest.raises(PopulationExtinct, match="population extinct"):
        filter_anomalies(Population(0, tuple(members), 1))


# ---------------------------------------------------------------- sorting

def test_single_candidate():
    r, d = nondominated_sort(np.array([[0.3, 1.0]]))
    assert r.tolist() == [1] and np.isinf(d[0])


def test_two_candidates_dominance():
    r, _ = nondominated_sort(np.array([[0.1, 1.0], [0.2, 2.0]]))
    assert r.tolist() == [1, 2]


@pytest.mark.parametrize("seed", range(25))
def test_fronts_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 65))
    # a coarse lattice makes ties and duplicates likely
    F = rng.integers(0, 8, size=(n, 2)).astype(float) if seed % 2 else rng.random((n, 2))
    rank, _ = nondominated_sort(F)
    got = [sorted(np.flatnonzero(rank == r).tolist()) for r in range(1, rank.max() + 1)]
    assert got == brute_fronts(F.tolist())


def test_crowding_hand_values():
    F = np.array([[0.0, 4.0], [1.0, 2.0], [3.0, 1.0], [4.0, 0.0]])
    d = crowding_distance(F)
    assert np.isinf(d[0]) and np.isinf(d[3])
    assert d[1] == pytest.approx(3 / 4 + 3 / 4)
    assert d[2] == pytest.approx(3 / 4 + 2 / 4)


def test_sort_is_deterministic_under_id_ties():
    F = np.array([[1.0, 1.0], [1.0, 1.0], [0.0, 2.0]])
    a = nondominated_sort(F, ["b", "a", "c"])
    b = nondominated_sort(F, ["b", "a", "c"])
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


# ---------------------------------------------------------------- selection

def test_select_identity_when_size_is_m():
    p = pop_of([(1, 1), (2, 2), (0, 3)])
    assert select_next_population(p, 3).ids == p.ids


def test_select_hand_example():
    p = pop_of([(1, 1), (2, 2), (0, 3), (3, 0)], m=2)
    out = select_next_population(p, 2)
    assert sorted(c.objectives for c in out) == [(0.0, 3.0), (3.0, 0.0)]


def test_select_idempotent():
    rng = np.random.default_rng(3)
    p = pop_of(rng.random((20, 2)), m=10)
    once = select_next_population(p, 10)
    twice = select_next_population(once, 10)
    assert once.ids == twice.ids


def test_select_keeps_rank1_parents():
    rng = np.random.default_rng(5)
    parents = rng.random((8, 2))
    offspring = parents + 0.05  # each offspring is dominated by its parent
    p = pop_of(np.vstack([parents, offspring]), m=8)
    out = select_next_population(p, 8)
    rank1 = {f"c{i:03d}" for i in np.flatnonzero(nondominated_sort(parents)[0] == 1)}
    assert rank1 <= set(out.ids)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=2, max_size=30), st.data())
def test_select_fills_by_rank(points, data):
    m = data.draw(st.integers(1, len(points)))
    p = pop_of(points, m=max(m, (len(points) + 1) // 2))
    out = select_next_population(p, m)
    assert len(out) == m
    rank = dict(zip(p.ids, nondominated_sort(p.objectives(), p.ids)[0]))
    kept = max(rank[i] for i in out.ids)
    # every member of a better front than the worst kept front is kept
    assert all(i in out.ids for i in p.ids if rank[i] < kept)


# ---------------------------------------------------------------- hypervolume

def test_hypervolume_trivial():
    assert hypervolume_2d([[0, 0]], (1, 1)) == 1.0
    assert hypervolume_2d([[0.5, 0.5]], (1, 1)) == 0.25
    assert hypervolume_2d(np.zeros((0, 2)), (1, 1)) == 0.0


def test_hypervolume_staircase_by_hand():
    F = np.array([[1, 3], [2, 2], [3, 1], [2.5, 2.5]])
    assert hypervolume_2d(F, (4, 4)) == pytest.approx(3 * 1 + 2 * 1 + 1 * 1)


def test_hypervolume_rejects_outside_point():
    with pytest.raises(ValueError, match=r"\(2, 0\.5\)"):
        hypervolume_2d([[0.5, 0.5], [2, 0.5]], (1, 1))
    assert population_hypervolume([[0.5, 0.5], [2, 0.5]], (1, 1)) == 0.25


def test_hypervolume_matches_monte_carlo():
    rng = np.random.default_rng(11)
    F = rng.random((200, 2))
    F[:, 1] = 1 - F[:, 0] ** 0.5 + 0.3 * rng.random(200)
    ref = np.array([1.1, 1.4])
    assert hypervolume_2d(F, ref) == pytest.approx(mc_hypervolume(F, ref), rel=5e-3)


def test_reference_from_points():
    h = HvConfig.from_points([[0.2, 3.0], [0.5, 1.0]])
    assert (h.ref_vf, h.ref_opt) == pytest.approx((0.55, 3.3))


# ---------------------------------------------------------------- convergence

def test_convergence_plateau():
    c = check_convergence([1.0] * 6, 6)
    assert c.stop and c.reason == "plateau"
    assert not check_convergence([1.0] * 5, 5).stop


def test_convergence_max_iterations():
    h = list(np.linspace(1, 3, 250))
    c = check_convergence(h, 250)
    assert c.stop and c.reason == "max-iterations"
    assert not check_convergence(h, 249).stop


def test_convergence_continue():
    assert not check_convergence([1, 1.02, 1.03], 3).stop


def test_convergence_needs_all_five_steps_small():
    h = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0015, 1.0015]
    assert not check_convergence(h, 7).stop  # step 5 of the window changed by 0.15%
    assert check_convergence(h + [1.0015] * 4, 11).stop


# ---------------------------------------------------------------- ledger and snapshots

def test_ledger_round_trip(tmp_path):
    p = select_next_population(pop_of([(1, 1), (2, 2), (0, 3), (3, 0)], m=2), 2)
    path = tmp_path / "ledger.csv"
    append_ledger(path, ledger_row(0, 1.2345678901234567, p))
    append_ledger(path, ledger_row(1, 2.0, p))
    rows = read_ledger(path)
    assert [r["generation"] for r in rows] == [0, 1]
    assert rows[0]["hv"] == 1.2345678901234567
    assert rows[0]["rank1_count"] == 2
    assert rows[0]["population_ids"] == p.ids


def test_population_snapshot_round_trip(tmp_path):
    p = select_next_population(pop_of([(1, 1), (2, 2), (0, 3), (3, 0)], m=2), 2)
    save_population(tmp_path / "g.npz", p)
    q = load_population(tmp_path / "g.npz")
    assert q.ids == p.ids and q.generation == p.generation and q.m == p.m
    for a, b in zip(p, q):
        np.testing.assert_array_equal(a.rho, b.rho)
        np.testing.assert_array_equal(a.theta, b.theta)
        assert (a.objectives, a.rank, a.crowding) == (b.objectives, b.rank, b.crowding)


def test_candidate_validation():
    with pytest.raises(ValueError):
        Candidate("x", G, np.zeros((2, 2)), np.zeros(G.shape), np.zeros(G.shape))
    with pytest.raises(ValueError):
        Candidate("x", G, np.full(G.shape, 1.5), np.zeros(G.shape), np.zeros(G.shape))
    with pytest.raises(ValueError):
        Population(0, (cand(0), cand(0)), 1)
