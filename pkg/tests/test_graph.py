import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from byzopt.graph import (
    AdversarySet,
    GraphError,
    PlacementError,
    RobustnessCapExceeded,
    Topology,
    generate_robust_graph,
    is_f_local,
    is_r_reachable,
    is_r_robust,
    is_rooted,
    required_robustness,
    select_f_local_adversaries,
)


def brute_force_robust(topo: Topology, r: int) -> bool:
    """Direct enumeration of disjoint subset pairs (3^n labellings)."""
    n = topo.n
    for labels in itertools.product((0, 1, 2), repeat=n):
        s1 = {i for i in range(n) if labels[i] == 1}
        s2 = {i for i in range(n) if labels[i] == 2}
        if not s1 or not s2:
            continue
        if not (is_r_reachable(topo, s1, r) or is_r_reachable(topo, s2, r)):
            return False
    return True


@st.composite
def digraphs(draw, max_n=6):
    n = draw(st.integers(1, max_n))
    pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
    chosen = draw(st.lists(st.sampled_from(pairs), unique=True) if pairs else st.just([]))
    return Topology(n, frozenset(chosen))


# ---------------------------------------------------------------- topology

def test_neighbourhoods_are_consistent():
    topo = generate_robust_graph(12, 3, seed=4)
    for j in range(topo.n):
        for i in topo.in_neighbors(j):
            assert j in topo.out_neighbors(i)
    assert sum(topo.in_degree(j) for j in range(topo.n)) == len(topo.edges)


def test_rejects_self_loops_and_out_of_range():
    with pytest.raises(GraphError):
        Topology(3, frozenset({(1, 1)}))
    with pytest.raises(GraphError):
        Topology(3, frozenset({(0, 3)}))


def test_text_roundtrip(tmp_path):
    topo = generate_robust_graph(9, 2, seed=2)
    path = tmp_path / "g.txt"
    topo.save(path)
    assert path.read_text().splitlines()[0] == "n 9"
    assert Topology.load(path) == topo


def test_bad_header():
    with pytest.raises(GraphError, match="header"):
        Topology.from_text("0 1\n")


def test_undirected_ingestion_is_symmetric():
    topo = Topology.from_undirected(3, [(0, 1), (1, 2)])
    assert topo.edges == {(0, 1), (1, 0), (1, 2), (2, 1)}


# ---------------------------------------------------------------- reachability

def test_reachable_examples():
    k4 = Topology.complete(4)
    assert is_r_reachable(k4, {0}, 3)
    assert not is_r_reachable(k4, {0, 1, 2, 3}, 1)
    assert not is_r_reachable(Topology.cycle(4), {0, 1}, 2)


def test_reachable_rejects_empty_subset():
    with pytest.raises(GraphError):
        is_r_reachable(Topology.complete(3), set(), 1)


# ---------------------------------------------------------------- robustness

def test_robust_examples():
    assert is_r_robust(Topology(1, frozenset()), 5)
    k8 = Topology.complete(8)
    assert is_r_robust(k8, 4)
    assert not is_r_robust(k8, 5)
    path = Topology.from_undirected(3, [(0, 1), (1, 2)])
    assert is_r_robust(path, 1)
    assert not is_r_robust(path, 2)


def test_robust_cap():
    with pytest.raises(RobustnessCapExceeded, match="construction"):
        is_r_robust(Topology.complete(21), 2)


@settings(max_examples=60, deadline=None)
@given(digraphs(max_n=5), st.integers(1, 3))
def test_robust_matches_brute_force(topo, r):
    assert is_r_robust(topo, r) == brute_force_robust(topo, r)


@settings(max_examples=40, deadline=None)
@given(digraphs(), st.integers(2, 4))
def test_robustness_is_monotone_in_r(topo, r):
    if is_r_robust(topo, r):
        assert is_r_robust(topo, r - 1)


@settings(max_examples=40, deadline=None)
@given(digraphs(), st.integers(1, 3), st.data())
def test_adding_edges_keeps_robustness(topo, r, data):
    if not is_r_robust(topo, r) or topo.n < 2:
        return
    pairs = [(i, j) for i in range(topo.n) for j in range(topo.n) if i != j]
    extra = data.draw(st.lists(st.sampled_from(pairs), max_size=4))
    assert is_r_robust(topo.with_edges(extra), r)


# ---------------------------------------------------------------- generator

def test_generator_preset_shape():
    n, r = 25, 11
    topo = generate_robust_graph(n, r, seed=7)
    core = 2 * r - 1
    for i in range(core):
        assert set(topo.in_neighbors(i)) >= set(range(core)) - {i}
    for v in range(core, n):
        assert topo.in_degree(v) >= core
        assert len(topo.out_neighbors(v)) >= core


def test_generator_base_case_is_complete():
    assert generate_robust_graph(5, 3, seed=0) == Topology.complete(5)


def test_generator_small_instance_verified():
    assert is_r_robust(generate_robust_graph(7, 2, seed=1), 2)


def test_generator_deterministic():
    assert generate_robust_graph(15, 3, seed=9) == generate_robust_graph(15, 3, seed=9)


def test_generator_infeasible():
    with pytest.raises(GraphError):
        generate_robust_graph(4, 3, seed=0)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(0, 8), st.integers(0, 10_000))
def test_generator_output_is_robust(r, extra, seed):
    n = min(2 * r - 1 + extra, 15)
    assert is_r_robust(generate_robust_graph(n, r, seed=seed), r)


# ---------------------------------------------------------------- adversaries

def test_any_pair_is_two_local_in_k8():
    k8 = Topology.complete(8)
    for seed in range(5):
        adv = select_f_local_adversaries(k8, 2, 2, seed=seed)
        assert len(adv) == 2 and is_f_local(k8, adv.members, 2)
    for pair in itertools.combinations(range(8), 2):
        assert is_f_local(k8, pair, 2)


def test_zero_adversaries():
    assert select_f_local_adversaries(Topology.complete(4), 1, 0, seed=0) == AdversarySet(frozenset(), 1)


def test_star_rejects_two_leaves():
    star = Topology(4, frozenset({(1, 0), (2, 0), (3, 0)}))
    assert not is_f_local(star, {1, 2}, 1)
    with pytest.raises(PlacementError):
        select_f_local_adversaries(Topology.complete(4), 0, 1, seed=0, attempts=50)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 3), st.integers(0, 4), st.integers(0, 1000))
def test_placement_is_f_local(f, count, seed):
    topo = generate_robust_graph(11, 3, seed=seed)
    try:
        adv = select_f_local_adversaries(topo, f, count, seed=seed, attempts=200)
    except PlacementError:
        return
    assert len(adv) == count
    for j in adv.regular(topo.n):
        assert sum(1 for i in topo.in_neighbors(j) if i in adv) <= f


# ---------------------------------------------------------------- rootedness

def test_rooted_examples():
    assert is_rooted(Topology.cycle(5))
    assert not is_rooted(Topology(2, frozenset()))


def test_removing_in_edges_keeps_graph_rooted():
    """Deleting up to (2d+1)F in-edges per node from a ((2d+1)F+1)-robust graph
    leaves a rooted graph (d=1, F=1)."""
    d, f = 1, 1
    r = required_robustness("dist-minmax", d, f)
    budget = (2 * d + 1) * f
    rng = np.random.default_rng(0)
    for g in range(50):
        topo = generate_robust_graph(int(rng.integers(2 * r - 1, 12)), r, seed=g)
        for _ in range(50):
            removed = []
            for j in range(topo.n):
                ins = topo.in_neighbors(j)
                k = int(rng.integers(0, min(budget, len(ins)) + 1))
                removed += [(int(i), j) for i in rng.choice(ins, size=k, replace=False)]
            assert is_rooted(topo.without_edges(removed))


def test_required_robustness():
    assert required_robustness("dist-minmax", 2, 2) == 11
    assert required_robustness("dist-only", 2, 5) == 11
