import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from geounet.geometry import (
    GeometricGraph,
    RigidMotion,
    apply_motion,
    canonical_edges,
    distance_matrix,
    edge_geometry,
    knn_edges,
    random_motion,
)


def brute_knn(x, k):
    """Reference: for each i, scan j in index order and keep the k smallest (strict <)."""
    n = len(x)
    out = set()
    for i in range(n):
        cand = []
        for j in range(n):
            if j != i:
                cand.append((float(np.linalg.norm(x[i] - x[j])), j))
        cand.sort()  # ties fall back to j ascending
        for _, j in cand[: min(k, n - 1)]:
            out.add((min(i, j), max(i, j)))
    return sorted(out)


coords_strategy = st.integers(2, 12).flatmap(
    lambda n: arrays(np.float64, (n, 3), elements=st.floats(-10, 10, allow_nan=False, width=64))
)


@settings(max_examples=60, deadline=None)
@given(coords_strategy, st.integers(0, 6))
def test_knn_matches_brute_force(x, k):
    got = [tuple(e) for e in knn_edges(x, k).tolist()]
    assert got == brute_knn(x, k)


def test_knn_tie_breaks_toward_lower_index():
    # node 0 is equidistant from 1, 2, 3; with k=1 it must pick node 1
    x = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]])
    e = knn_edges(x, 1).tolist()
    # 0 -> 1 by tie-break; 1, 2, 3 each pick node 0 (distance 1 beats sqrt 2)
    assert e == [[0, 1], [0, 2], [0, 3]]


def test_knn_small_graph_is_complete():
    x = np.random.default_rng(0).normal(size=(5, 3))
    assert len(knn_edges(x, 16)) == 10


def test_knn_rejects_bad_input():
    with pytest.raises(ValueError):
        knn_edges(np.array([[0, 0, np.nan]]), 2)
    with pytest.raises(ValueError):
        knn_edges(np.zeros((3, 3)), -1)


def test_canonical_edges_sorts_and_dedups():
    e = canonical_edges([(2, 1), (1, 2), (0, 3)], 4)
    assert e.tolist() == [[0, 3], [1, 2]]
    with pytest.raises(ValueError):
        canonical_edges([(1, 1)], 3)
    with pytest.raises(ValueError):
        canonical_edges([(0, 5)], 3)


def test_graph_defaults_and_immutability():
    g = GeometricGraph(coords=np.zeros((3, 3)) + np.arange(3)[:, None], edges=[(0, 1)])
    assert g.scalars.shape == (3, 1) and np.all(g.scalars == 1)
    assert g.vectors.shape == (3, 1, 3) and np.all(g.vectors == 0)
    with pytest.raises(ValueError):
        g.coords[0, 0] = 5.0
    with pytest.raises(AttributeError):
        g.coords = np.zeros((3, 3))


def test_graph_validation():
    with pytest.raises(ValueError):
        GeometricGraph(coords=np.zeros((3, 4)), edges=[])
    with pytest.raises(ValueError):
        GeometricGraph(coords=np.zeros((3, 3)), edges=[], scalars=np.zeros((2, 1)))
    with pytest.raises(ValueError):
        GeometricGraph(coords=np.zeros((3, 3)), edges=[], vectors=np.zeros((3, 1, 2)))


def test_directed_and_neighbors():
    g = GeometricGraph(coords=np.eye(3), edges=[(0, 1), (1, 2)])
    recv, send = g.directed
    assert sorted(zip(recv.tolist(), send.tolist())) == [(0, 1), (1, 0), (1, 2), (2, 1)]
    assert [n.tolist() for n in g.neighbors] == [[1], [0, 2], [1]]
    A = g.adjacency()
    assert np.array_equal(A, A.T) and A.sum() == 4


def test_json_round_trip_is_exact(rng):
    x = rng.normal(size=(7, 3)) * 1e3
    g = GeometricGraph(coords=x, edges=knn_edges(x, 3), scalars=rng.normal(size=(7, 2)), vectors=rng.normal(size=(7, 2, 3)))
    h = GeometricGraph.from_json(g.to_json())
    assert np.array_equal(g.coords, h.coords)
    assert np.array_equal(g.edges, h.edges)
    assert np.array_equal(g.vectors, h.vectors)
    assert set(json.loads(g.to_json())) >= {"n", "d", "edges", "coords", "scalars", "vectors"}


def test_rigid_motion_validation():
    with pytest.raises(ValueError):
        RigidMotion(np.array([[1.0, 0.1, 0], [0, 1, 0], [0, 0, 1]]), np.zeros(3))
    m = RigidMotion.identity(3)
    assert m.proper


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.booleans())
def test_motion_preserves_distances_and_rotates_vectors(seed, proper):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(6, 3))
    g = GeometricGraph(coords=x, edges=knn_edges(x, 2), vectors=rng.normal(size=(6, 2, 3)))
    m = random_motion(rng, 3, proper=proper)
    assert m.proper == proper
    h = apply_motion(g, m)
    assert np.allclose(distance_matrix(g.coords), distance_matrix(h.coords), atol=1e-12)
    assert np.allclose(h.vectors, g.vectors @ m.rotation.T, atol=1e-12)
    # translation does not touch vectors
    assert np.allclose(np.linalg.norm(h.vectors, axis=-1), np.linalg.norm(g.vectors, axis=-1))


def test_compose_matches_sequential_application(rng):
    a, b = random_motion(rng), random_motion(rng)
    x = rng.normal(size=(4, 3))
    g = GeometricGraph(coords=x, edges=[])
    two = apply_motion(apply_motion(g, a), b)
    one = apply_motion(g, b.compose(a))
    assert np.allclose(two.coords, one.coords, atol=1e-12)


def test_edge_geometry_orientation():
    g = GeometricGraph(coords=np.array([[0.0, 0, 0], [3, 4, 0]]), edges=[(0, 1)])
    eg = edge_geometry(g)
    assert len(eg) == 2
    for e in eg:
        assert e.distance == pytest.approx(5.0)
        assert np.allclose(e.relative_position, g.coords[e.source] - g.coords[e.target])


def test_knn_small_examples():
    x = np.array([[0.0, 0], [1, 0], [5, 0]])
    assert knn_edges(x, 1).tolist() == [[0, 1], [1, 2]]
    square = np.array([[0.0, 0], [1, 0], [1, 1], [0, 1]])
    assert knn_edges(square, 2).tolist() == [[0, 1], [0, 3], [1, 2], [2, 3]]


def test_identity_motion_is_exact(rng):
    x = rng.normal(size=(5, 3))
    g = GeometricGraph(coords=x, edges=[(0, 1)], vectors=rng.normal(size=(5, 1, 3)))
    h = apply_motion(g, RigidMotion.identity(3))
    assert np.array_equal(h.coords, g.coords) and np.array_equal(h.vectors, g.vectors)


def test_edge_geometry_example_and_antisymmetry(rng):
    g = GeometricGraph(coords=np.array([[0.0, 0, 0], [1, 0, 0]]), edges=[(0, 1)])
    rec = {(e.source, e.target): e for e in edge_geometry(g)}
    assert rec[(0, 1)].relative_position.tolist() == [-1.0, 0.0, 0.0]
    assert np.array_equal(rec[(1, 0)].relative_position, -rec[(0, 1)].relative_position)
    x = rng.normal(size=(6, 3))
    g = GeometricGraph(coords=x, edges=knn_edges(x, 2))
    m = random_motion(rng)
    moved = {(e.source, e.target): e for e in edge_geometry(apply_motion(g, m))}
    for e in edge_geometry(g):
        assert np.allclose(m.rotation @ e.relative_position, moved[(e.source, e.target)].relative_position, atol=1e-12)
