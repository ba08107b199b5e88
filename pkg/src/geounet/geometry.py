"""Geometric graphs, rigid motions and k-nearest-neighbour edges."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "GeometricGraph",
    "RigidMotion",
    "EdgeGeometry",
    "apply_motion",
    "knn_edges",
    "edge_geometry",
    "random_motion",
    "distance_matrix",
    "canonical_edges",
]


def canonical_edges(edges, num_nodes: int) -> np.ndarray:
    """Undirected edge list as a sorted (E, 2) int array with i < j.

    Rejects self-loops and out-of-range endpoints; duplicate and reversed
    pairs are merged.
    """
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if e.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    if e.min() < 0 or e.max() >= num_nodes:
        raise ValueError(f"edge endpoint out of range for {num_nodes} nodes")
    if np.any(e[:, 0] == e[:, 1]):
        raise ValueError("self-loops are not allowed")
    e = np.sort(e, axis=1)
    e = np.unique(e, axis=0)
    return e


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class GeometricGraph:
    """Attributed graph with node coordinates and optional vector features.

    ``scalars`` is (N, f), ``vectors`` is (N, v, d) and ``coords`` is (N, d).
    ``edges`` holds each undirected edge once as (i, j) with i < j.
    """

    coords: np.ndarray
    edges: np.ndarray
    scalars: np.ndarray | None = None
    vectors: np.ndarray | None = None

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64)
        if coords.ndim != 2 or coords.shape[1] not in (2, 3):
            raise ValueError(f"coords must be (N, d) with d in {{2, 3}}, got {coords.shape}")
        if not np.all(np.isfinite(coords)):
            raise ValueError("coords must be finite")
        n, d = coords.shape
        scalars = np.ones((n, 1)) if self.scalars is None else np.asarray(self.scalars, dtype=np.float64)
        if scalars.ndim == 1:
            scalars = scalars[:, None]
        vectors = (
            np.zeros((n, 1, d)) if self.vectors is None else np.asarray(self.vectors, dtype=np.float64)
        )
        if scalars.shape[0] != n or vectors.shape[0] != n:
            raise ValueError("scalars, vectors and coords must share the node count")
        if vectors.ndim != 3 or vectors.shape[2] != d:
            raise ValueError(f"vectors must be (N, v, {d}), got {vectors.shape}")
        object.__setattr__(self, "coords", _frozen(coords))
        object.__setattr__(self, "scalars", _frozen(scalars))
        object.__setattr__(self, "vectors", _frozen(vectors))
        e = canonical_edges(self.edges, n)
        e.setflags(write=False)
        object.__setattr__(self, "edges", e)

    @property
    def num_nodes(self) -> int:
        return self.coords.shape[0]

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    @cached_property
    def directed(self) -> tuple[np.ndarray, np.ndarray]:
        """(receivers, senders) with both orientations of every edge, receiver-sorted."""
        e = self.edges
        recv = np.concatenate([e[:, 0], e[:, 1]])
        send = np.concatenate([e[:, 1], e[:, 0]])
        order = np.lexsort((send, recv))
        return recv[order], send[order]

    @cached_property
    def neighbors(self) -> list[np.ndarray]:
        recv, send = self.directed
        bounds = np.searchsorted(recv, np.arange(self.num_nodes + 1))
        return [send[bounds[i] : bounds[i + 1]] for i in range(self.num_nodes)]

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.num_nodes, self.num_nodes), dtype=bool)
        a[self.edges[:, 0], self.edges[:, 1]] = True
        a[self.edges[:, 1], self.edges[:, 0]] = True
        return a

    def replace(self, **changes) -> "GeometricGraph":
        fields = dict(coords=self.coords, edges=self.edges, scalars=self.scalars, vectors=self.vectors)
        fields.update(changes)
        return GeometricGraph(**fields)

    def to_dict(self) -> dict:
        return {
            "n": self.num_nodes,
            "d": self.dim,
            "edges": self.edges.tolist(),
            "coords": self.coords.tolist(),
            "scalars": self.scalars.tolist(),
            "vectors": self.vectors.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, blob: dict) -> "GeometricGraph":
        n, d = int(blob["n"]), int(blob["d"])
        coords = np.asarray(blob["coords"], dtype=np.float64).reshape(n, d)
        scalars = blob.get("scalars")
        vectors = blob.get("vectors")
        if scalars is not None:
            scalars = np.asarray(scalars, dtype=np.float64).reshape(n, -1)
        if vectors is not None:
            vectors = np.asarray(vectors, dtype=np.float64).reshape(n, -1, d)
        return cls(coords=coords, edges=blob.get("edges", []), scalars=scalars, vectors=vectors)

    @classmethod
    def from_json(cls, text: str) -> "GeometricGraph":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class RigidMotion:
    """x -> R x + t.  ``proper`` is True iff det(R) = +1."""

    rotation: np.ndarray
    translation: np.ndarray = field(default=None)

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        if R.ndim != 2 or R.shape[0] != R.shape[1]:
            raise ValueError("rotation must be a square matrix")
        d = R.shape[0]
        if not np.allclose(R.T @ R, np.eye(d), atol=1e-12, rtol=0):
            raise ValueError("rotation is not orthogonal")
        t = np.zeros(d) if self.translation is None else np.asarray(self.translation, dtype=np.float64)
        if t.shape != (d,):
            raise ValueError(f"translation must have shape ({d},)")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @property
    def dim(self) -> int:
        return self.rotation.shape[0]

    @property
    def proper(self) -> bool:
        return bool(np.linalg.det(self.rotation) > 0)

    def compose(self, other: "RigidMotion") -> "RigidMotion":
        """The motion ``self ∘ other`` (apply ``other`` first)."""
        return RigidMotion(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    @classmethod
    def identity(cls, d: int = 3) -> "RigidMotion":
        return cls(np.eye(d), np.zeros(d))


@dataclass(frozen=True)
class EdgeGeometry:
    source: int
    target: int
    relative_position: np.ndarray
    distance: float


def random_motion(rng: np.random.Generator, d: int = 3, proper: bool | None = None, shift: float = 5.0) -> RigidMotion:
    """Haar-random orthogonal matrix (QR with sign fix) plus a Gaussian translation.

    ``proper=None`` keeps whatever determinant the draw produced.
    """
    q, r = np.linalg.qr(rng.normal(size=(d, d)))
    q = q * np.sign(np.diag(r))
    if proper is not None and (np.linalg.det(q) > 0) != proper:
        q[:, 0] = -q[:, 0]
    return RigidMotion(q, rng.normal(scale=shift, size=d))


def apply_motion(g: GeometricGraph, m: RigidMotion) -> GeometricGraph:
    if m.dim != g.dim:
        raise ValueError(f"motion dimension {m.dim} does not match graph dimension {g.dim}")
    R = m.rotation
    coords = g.coords @ R.T + m.translation
    vectors = g.vectors @ R.T
    return GeometricGraph(coords=coords, edges=g.edges, scalars=g.scalars, vectors=vectors)


def distance_matrix(coords: np.ndarray) -> np.ndarray:
    x = np.asarray(coords, dtype=np.float64)
    diff = x[:, None, :] - x[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def knn_edges(coords, k: int) -> np.ndarray:
    """Symmetrised k-nearest-neighbour edges, canonical (E, 2) form.

    Each node links to its ``min(k, N-1)`` nearest other nodes; equal
    distances are resolved in favour of the lower node index.
    """
    x = np.asarray(coords, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("coords must be a 2-D array")
    if not np.all(np.isfinite(x)):
        raise ValueError("coords must be finite")
    if k < 0:
        raise ValueError("k must be non-negative")
    n = x.shape[0]
    kk = min(k, n - 1)
    if kk <= 0:
        return np.zeros((0, 2), dtype=np.int64)
    dist = distance_matrix(x)
    np.fill_diagonal(dist, np.inf)
    # stable sort keeps ascending index order among equal distances
    order = np.argsort(dist, axis=1, kind="stable")[:, :kk]
    src = np.repeat(np.arange(n), kk)
    return canonical_edges(np.stack([src, order.ravel()], axis=1), n)


def edge_geometry(g: GeometricGraph) -> list[EdgeGeometry]:
    recv, send = g.directed
    rel = g.coords[recv] - g.coords[send]
    dist = np.linalg.norm(rel, axis=1)
    return [
        EdgeGeometry(int(i), int(j), rel[e], float(dist[e]))
        for e, (i, j) in enumerate(zip(recv, send))
    ]
