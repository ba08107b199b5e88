import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geounet import gwl
from geounet.chains import make_k_chain_pair, pool_chain
from geounet.geometry import GeometricGraph, apply_motion, knn_edges, random_motion
from geounet.gwl import (
    GroupSpec,
    check_theorem1_conditions,
    demonstrate_increase,
    distinguishable,
    empirical_maintains,
    gwl_refine,
    igwl_refine,
)
from geounet.pooling import fps_select, point_pool_assign, sparse_pool_assign

from oracles import isometric


def complete(n):
    return [(i, j) for i in range(n) for j in range(i + 1, n)]


@pytest.fixture
def chiral_pair():
    x = np.array([[0.0, 0, 0], [1, 0, 0], [0, 2, 0], [0, 0, 3]])
    mirror = x * np.array([1, 1, -1])
    return (GeometricGraph(coords=x, edges=complete(4), vectors=np.zeros((4, 0, 3))),
            GeometricGraph(coords=mirror, edges=complete(4), vectors=np.zeros((4, 0, 3))))


def test_k4_chain_iteration_counts():
    g1, g2 = make_k_chain_pair(4)
    r = distinguishable(g1, g2, "gwl", k=5)
    assert r.first_iteration == 3
    assert r.per_iteration == [False, False, True, True, True]
    assert not r.currently_distinguishable(2) and r.currently_distinguishable(3)
    assert not distinguishable(g1, g2, "igwl", k=10)


def test_k6_chain_needs_four_iterations():
    g1, g2 = make_k_chain_pair(6)
    assert distinguishable(g1, g2, "gwl", k=6).first_iteration == 4
    assert not distinguishable(g1, g2, "igwl", k=8)


def test_pooled_chain_pair_separates_immediately():
    g1, g2 = make_k_chain_pair(4)
    p1, p2 = pool_chain(g1, 3), pool_chain(g2, 3)
    assert distinguishable(p1, p2, "gwl", k=3).first_iteration == 1


def test_chirality_needs_the_special_orthogonal_group(chiral_pair):
    a, b = chiral_pair
    assert isometric(a, b, proper_only=False)
    assert not isometric(a, b, proper_only=True)
    assert not distinguishable(a, b, "gwl", 3, GroupSpec("O", 3))
    assert distinguishable(a, b, "gwl", 3, GroupSpec("SO", 3)).first_iteration == 1
    assert not distinguishable(a, b, "igwl", 3)


def test_group_spec_validation():
    with pytest.raises(ValueError):
        GroupSpec("E", 3)
    with pytest.raises(ValueError):
        GroupSpec("O", 4)
    g = GeometricGraph(coords=np.zeros((2, 3)) + [[0], [1]], edges=[(0, 1)])
    with pytest.raises(ValueError):
        gwl_refine(g, 2, GroupSpec("O", 2))
    with pytest.raises(ValueError):
        igwl_refine(g, 0)
    with pytest.raises(ValueError):
        distinguishable(g, g, "fwl")


def random_graph(seed, n=8):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-2, 2, size=(n, 3))
    return GeometricGraph(coords=x, edges=knn_edges(x, 3), vectors=rng.normal(size=(n, 1, 3)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.booleans())
def test_colours_are_invariant_to_motion_and_relabelling(seed, proper):
    g = random_graph(seed)
    rng = np.random.default_rng(seed + 7)
    m = random_motion(rng, proper=proper)
    h = apply_motion(g, m)
    perm = rng.permutation(g.num_nodes)
    inv = np.argsort(perm)
    h = GeometricGraph(coords=h.coords[perm], edges=inv[h.edges], scalars=h.scalars[perm], vectors=h.vectors[perm])
    assert not distinguishable(g, h, "igwl", 3)
    assert not distinguishable(g, h, "gwl", 3, GroupSpec("O", 3))
    if proper:
        assert not distinguishable(g, h, "gwl", 3, GroupSpec("SO", 3))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_gwl_refines_at_least_as_much_as_igwl(seed):
    g1, g2 = random_graph(seed), random_graph(seed + 1)
    a = distinguishable(g1, g2, "igwl", 3)
    b = distinguishable(g1, g2, "gwl", 3)
    for i in range(3):
        assert b.per_iteration[i] or not a.per_iteration[i]


def test_igwl_halts_once_partition_is_stable():
    x = np.array([[np.cos(t), np.sin(t), 0.0] for t in np.linspace(0, 2 * np.pi, 6, endpoint=False)])
    ring = GeometricGraph(coords=x, edges=[(i, (i + 1) % 6) for i in range(6)])
    assert len(igwl_refine(ring, 10, halt=True)) == 1
    assert len(igwl_refine(ring, 10, halt=False)) == 10


def test_payload_cap(monkeypatch):
    g1, _ = make_k_chain_pair(4)
    monkeypatch.setattr(gwl, "PAYLOAD_CAP", 3)
    with pytest.raises(ValueError, match="cap"):
        gwl_refine(g1, 3)


def test_conditions_certify_sparse_pooling():
    rng = np.random.default_rng(0)
    for _ in range(20):
        x1, x2 = rng.normal(size=(10, 3)), rng.normal(size=(10, 3))
        a1 = sparse_pool_assign(x1, fps_select(x1))
        a2 = sparse_pool_assign(x2, fps_select(x2))
        s1, s2 = rng.normal(size=(10, 2)), rng.normal(size=(10, 2))
        r = check_theorem1_conditions(s1, s2, None, None, a1, a2, "linear")
        assert r.verdict == "maintains" and r.cond2_lambda == 1.0 and r.cond3_linear


def test_conditions_fail_for_each_broken_premise():
    C = np.eye(3)
    s = np.ones((3, 1))
    assert check_theorem1_conditions(s, s, None, None, C, C, "linear").verdict == "cannot_certify"
    r = check_theorem1_conditions(s, 2 * s, None, None, C, C, "mlp")
    assert r.cond1_scalar and not r.cond3_linear and r.verdict == "cannot_certify"
    uneven = np.array([[1.0, 1, 0], [0, 1, 1]])
    r = check_theorem1_conditions(s, 2 * s, None, None, uneven, uneven, "linear")
    assert r.cond2_lambda is None and r.verdict == "cannot_certify"
    # lambda must be common to both matrices
    r = check_theorem1_conditions(s, 2 * s, None, None, C, 2 * C, "linear")
    assert r.cond2_lambda is None
    # vector sums alone can satisfy the first premise
    v1, v2 = np.zeros((3, 1, 3)), np.zeros((3, 1, 3))
    v2[0, 0, 0] = 1.0
    r = check_theorem1_conditions(s, s, v1, v2, 2 * C, 2 * C, "linear")
    assert r.cond1_vector and r.cond2_lambda == 2.0 and r.verdict == "maintains"
    assert set(r.to_dict()) == {"cond1_scalar", "cond1_vector", "cond2_lambda", "cond3_linear", "verdict"}


def test_point_pool_matrices_are_not_stochastic_in_general():
    g1, g2 = make_k_chain_pair(4)
    a = point_pool_assign(g1, fps_select(g1.coords))
    assert len(set(a.column_sums().tolist())) > 1


def test_empirical_census_small():
    r = empirical_maintains("sparse", trials=60, seed=3)
    assert r["checked"] == 60 and r["violation_count"] == 0
    assert r["certified"] == 60
    assert r["draws"] == r["checked"] + r["vacuous"] + r["orphan_skips"]


def test_demonstrate_increase_report():
    rep = demonstrate_increase(4)
    assert rep["original_first_distinguishing_iteration"] == 3
    assert rep["pooled_first_distinguishing_iteration"] == 1
    assert rep["increases"] and not rep["original_igwl_distinguishable"]
    with pytest.raises(ValueError):
        demonstrate_increase(5)


def test_point_pool_overlap_breaks_common_lambda():
    g = GeometricGraph(coords=np.array([[0.0, 0, 0], [1, 0, 0], [2, 0, 0]]), edges=[(0, 1), (1, 2)])
    a = point_pool_assign(g, [0, 2])
    assert a.column_sums().tolist() == [1, 2, 1]
    r = check_theorem1_conditions(np.ones((3, 1)), 2 * np.ones((3, 1)), None, None, a, a, "mlp")
    assert r.cond2_lambda is None and not r.cond3_linear


def test_igwl_sees_a_changed_scalar_at_once():
    g = random_graph(11)
    h = g.replace(scalars=g.scalars + np.eye(g.num_nodes, 1))
    assert distinguishable(g, h, "igwl", 3).first_iteration == 1


def test_congruent_triangles_match_every_iteration():
    x = np.array([[0.0, 0, 0], [1, 0, 0], [0, 2, 0]])
    a = GeometricGraph(coords=x, edges=complete(3))
    b = apply_motion(a, random_motion(np.random.default_rng(0)))
    assert igwl_refine(a, 4, halt=False) == igwl_refine(b, 4, halt=False)
    assert not distinguishable(a, a, "gwl", 3)


def test_partitions_never_coarsen():
    g = random_graph(21, n=10)
    seq = gwl_refine(g, 5, halt=False)
    counts = [len(set(m)) for m in seq]
    assert counts == sorted(counts)


def test_k4_gwl_two_iterations_is_not_enough():
    g1, g2 = make_k_chain_pair(4)
    assert not distinguishable(g1, g2, "gwl", 2)


def test_point_pool_census_runs():
    r = empirical_maintains("point", trials=30, seed=1)
    assert r["checked"] + r["orphan_skips"] + r["vacuous"] == r["draws"]
    assert isinstance(r["violations"], list)
