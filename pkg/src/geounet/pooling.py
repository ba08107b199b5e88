"""Select / reduce / connect pooling on geometric graphs.

Selection is farthest point sampling.  Two assignment rules are provided:

* point pooling: a supernode owns its centre and the centre's 1-hop
  neighbours, so clusters may overlap;
* sparse pooling: every node joins its single nearest centre.

Reductions act on :class:`~geounet.autodiff.Tensor` features so the same
code serves structural coarsening and trainable models.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from . import autodiff as ad
from .geometry import GeometricGraph, knn_edges

__all__ = [
    "ClusterAssignment",
    "PoolResult",
    "OrphanNodeError",
    "canonical_start",
    "fps_select",
    "point_pool_assign",
    "sparse_pool_assign",
    "point_pool_reduce",
    "sparse_pool_reduce",
    "connect",
    "UnpoolFill",
    "unpool",
    "unpool_graph",
    "select_assign",
    "pool_graph",
    "DEFAULT_RATIO",
    "DEFAULT_K",
]

DEFAULT_RATIO = 0.6
DEFAULT_K = 16


class OrphanNodeError(ValueError):
    def __init__(self, nodes):
        self.nodes = [int(i) for i in nodes]
        super().__init__(
            f"orphan nodes {self.nodes}: not a centre and not adjacent to any centre; "
            "raise the sampling ratio or densify the graph"
        )


@dataclass(frozen=True, eq=False)
class ClusterAssignment:
    """Supernode-major membership matrix: ``matrix[j, i]`` is node i in supernode j."""

    matrix: np.ndarray
    centers: np.ndarray

    def __post_init__(self):
        C = np.asarray(self.matrix, dtype=np.float64)
        centers = np.asarray(self.centers, dtype=np.int64)
        if C.ndim != 2 or C.shape[0] != centers.shape[0]:
            raise ValueError("matrix must be (K, N) with one row per centre")
        if len(set(centers.tolist())) != len(centers):
            raise ValueError("centres must be distinct")
        if np.any(C[np.arange(len(centers)), centers] != 1):
            raise ValueError("each centre must belong to its own supernode")
        C.setflags(write=False)
        centers.setflags(write=False)
        object.__setattr__(self, "matrix", C)
        object.__setattr__(self, "centers", centers)

    @property
    def num_supernodes(self) -> int:
        return self.matrix.shape[0]

    @property
    def num_nodes(self) -> int:
        return self.matrix.shape[1]

    def column_sums(self) -> np.ndarray:
        return self.matrix.sum(axis=0)

    def owner(self) -> np.ndarray:
        """Lowest-index supernode containing each node."""
        return np.argmax(self.matrix > 0, axis=0)

    def to_triplets(self) -> list[list[float]]:
        j, i = np.nonzero(self.matrix)
        return [[int(a), int(b), float(self.matrix[a, b])] for a, b in zip(j, i)]


@dataclass(eq=False)
class PoolResult:
    """Pooled graph plus everything the matching unpool step needs."""

    pooled: GeometricGraph
    assignment: ClusterAssignment
    cached_scalars: Any
    cached_vectors: Any
    original: GeometricGraph

    @property
    def original_coords(self) -> np.ndarray:
        return self.original.coords

    @property
    def original_edges(self) -> np.ndarray:
        return self.original.edges

    @property
    def num_original(self) -> int:
        return self.original.num_nodes

    def to_dict(self) -> dict:
        blob = self.pooled.to_dict()
        blob["centers"] = self.assignment.centers.tolist()
        blob["C"] = self.assignment.to_triplets()
        return blob

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


# -- SEL ---------------------------------------------------------------------


def canonical_start(coords) -> int:
    """Node farthest from the centroid (lowest index on ties).

    Depends only on distances, so the choice is unchanged by rigid motions
    and by relabelling nodes.
    """
    x = np.asarray(coords, dtype=np.float64)
    c = x.mean(axis=0)
    d2 = np.sum((x - c) ** 2, axis=1)
    return int(np.argmax(d2))


def fps_select(
    coords, ratio: float = DEFAULT_RATIO, start: int | None = None, count: int | None = None
) -> list[int]:
    """Greedy farthest point sampling of ``ceil(ratio * N)`` nodes (or exactly ``count``)."""
    x = np.asarray(coords, dtype=np.float64)
    n = x.shape[0]
    if n < 1:
        raise ValueError("cannot sample from an empty point set")
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"ratio must lie in (0, 1], got {ratio}")
    if start is None:
        start = canonical_start(x)
    if not 0 <= start < n:
        raise ValueError(f"start {start} out of range for {n} nodes")
    if count is None:
        count = min(n, math.ceil(ratio * n - 1e-12))
    elif not 1 <= count <= n:
        raise ValueError(f"count must lie in [1, {n}], got {count}")
    picked = [int(start)]
    mind = np.linalg.norm(x - x[start], axis=1)
    mind[start] = -np.inf
    while len(picked) < count:
        nxt = int(np.argmax(mind))  # first maximum -> lowest index
        picked.append(nxt)
        mind = np.minimum(mind, np.linalg.norm(x - x[nxt], axis=1))
        mind[picked] = -np.inf
    return picked


def point_pool_assign(g: GeometricGraph, centers) -> ClusterAssignment:
    centers = np.asarray(centers, dtype=np.int64)
    n = g.num_nodes
    if centers.size == 0 or centers.min() < 0 or centers.max() >= n:
        raise ValueError("centres must be a non-empty subset of the nodes")
    C = np.zeros((len(centers), n))
    nbrs = g.neighbors
    for j, c in enumerate(centers):
        C[j, c] = 1.0
        C[j, nbrs[c]] = 1.0
    orphans = np.flatnonzero(C.sum(axis=0) == 0)
    if orphans.size:
        raise OrphanNodeError(orphans)
    return ClusterAssignment(C, centers)


def sparse_pool_assign(g_or_coords, centers) -> ClusterAssignment:
    """Each node goes to its nearest centre (lowest centre position on ties)."""
    x = g_or_coords.coords if isinstance(g_or_coords, GeometricGraph) else np.asarray(g_or_coords, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.int64)
    if centers.size == 0:
        raise ValueError("need at least one centre")
    n = x.shape[0]
    diff = x[None, :, :] - x[centers][:, None, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))  # (K, N)
    owner = np.argmin(dist, axis=0)
    owner[centers] = np.arange(len(centers))
    C = np.zeros((len(centers), n))
    C[owner, np.arange(n)] = 1.0
    return ClusterAssignment(C, centers)


# -- RED ---------------------------------------------------------------------


def _apply_assignment(C: np.ndarray, scalars, vectors) -> tuple[ad.Tensor, ad.Tensor]:
    s = ad.as_tensor(scalars)
    v = ad.as_tensor(vectors)
    n, c, d = v.shape
    ps = ad.matmul(C, s)
    pv = ad.reshape(ad.matmul(C, ad.reshape(v, (n, c * d))), (C.shape[0], c, d))
    return ps, pv


def point_pool_reduce(
    assignment: ClusterAssignment, scalars, vectors, mlp, norm: float = 1.0
) -> tuple[ad.Tensor, ad.Tensor]:
    """Scalars: MLP of the cluster sum (divided by ``norm``).  Vectors: plain cluster sum."""
    s = ad.as_tensor(scalars)
    if mlp is not None and getattr(mlp, "n_in", s.shape[1]) != s.shape[1]:
        raise ValueError(f"pool MLP expects width {mlp.n_in}, features have {s.shape[1]}")
    ps, pv = _apply_assignment(assignment.matrix, s, vectors)
    if mlp is None:
        return ps, pv
    return mlp(ps if norm == 1.0 else ad.scale(ps, 1.0 / norm)), pv


def sparse_pool_reduce(assignment: ClusterAssignment, scalars, vectors) -> tuple[ad.Tensor, ad.Tensor]:
    return _apply_assignment(assignment.matrix, scalars, vectors)


# -- CON ---------------------------------------------------------------------


def connect(pool_coords, k: int = DEFAULT_K) -> np.ndarray:
    return knn_edges(pool_coords, k)


# -- full pool / unpool -------------------------------------------------------


def select_assign(g: GeometricGraph, kind: str, ratio: float = DEFAULT_RATIO) -> ClusterAssignment:
    centers = fps_select(g.coords, ratio)
    if kind == "point":
        return point_pool_assign(g, centers)
    if kind == "sparse":
        return sparse_pool_assign(g, centers)
    raise ValueError(f"unknown pool kind {kind!r}")


def pool_graph(
    g: GeometricGraph,
    kind: str,
    ratio: float = DEFAULT_RATIO,
    k: int = DEFAULT_K,
    scalars=None,
    vectors=None,
    mlp=None,
    norm: float = 1.0,
) -> tuple[PoolResult, ad.Tensor, ad.Tensor]:
    """SEL + RED + CON.  Features default to the graph's own arrays.

    Returns the cache record and the pooled feature tensors.  The pooled
    graph inside the record carries plain-array copies of those features.
    """
    scalars = g.scalars if scalars is None else scalars
    vectors = g.vectors if vectors is None else vectors
    assignment = select_assign(g, kind, ratio)
    if kind == "point" and mlp is not None:
        ps, pv = point_pool_reduce(assignment, scalars, vectors, mlp, norm)
    else:
        ps, pv = sparse_pool_reduce(assignment, scalars, vectors)
    pcoords = g.coords[assignment.centers]
    pooled = GeometricGraph(coords=pcoords, edges=connect(pcoords, k), scalars=ps.data, vectors=pv.data)
    rec = PoolResult(
        pooled=pooled,
        assignment=assignment,
        cached_scalars=scalars,
        cached_vectors=vectors,
        original=g,
    )
    return rec, ps, pv


class UnpoolFill:
    """Trainable features for nodes re-inserted by unpooling.

    Scalars: one shared row.  Vectors: one weight per channel multiplying the
    node's offset from its owning supernode, which keeps the fill
    rotation-equivariant.  Both start at zero.
    """

    def __init__(self, store: ad.ParamStore, name: str, width: int, channels: int):
        self.width, self.channels = width, channels
        self.scalar = store.add(f"{name}.scalar", np.zeros((1, width)))
        self.vector = store.add(f"{name}.vector", np.zeros((1, channels, 1)))


def unpool(current_scalars, current_vectors, cache: PoolResult, fill: UnpoolFill) -> tuple[ad.Tensor, ad.Tensor]:
    """Scatter supernode features back to the original nodes and concatenate skips.

    Row j of the current features belongs to ``cache.assignment.centers[j]``.
    """
    s = ad.as_tensor(current_scalars)
    v = ad.as_tensor(current_vectors)
    centers = cache.assignment.centers
    K = len(centers)
    N = cache.num_original
    if s.shape[0] != K or v.shape[0] != K:
        raise ValueError(f"unpool: got {s.shape[0]} supernode rows for {K} centres")
    if s.shape[1] != fill.width or v.shape[1] != fill.channels:
        raise ValueError("unpool: fill parameters do not match feature widths")
    index = np.full(N, K, dtype=np.int64)
    index[centers] = np.arange(K)
    placed_s = ad.gather_rows(ad.concat([s, fill.scalar], axis=0), index)
    zero_v = np.zeros((1,) + v.shape[1:])
    placed_v = ad.gather_rows(ad.concat([v, zero_v], axis=0), index)
    owner = cache.assignment.owner()
    offset = cache.original_coords - cache.original_coords[centers[owner]]
    offset[centers] = 0.0
    placed_v = ad.add(placed_v, ad.hadamard(fill.vector, offset[:, None, :]))
    out_s = ad.concat([placed_s, cache.cached_scalars], axis=1)
    out_v = ad.concat([placed_v, cache.cached_vectors], axis=1)
    return out_s, out_v


def unpool_graph(current: GeometricGraph, cache: PoolResult, fill: UnpoolFill) -> GeometricGraph:
    """Array-level :func:`unpool`: restores the original node set and edges."""
    centers = cache.assignment.centers
    if current.num_nodes != len(centers) or not np.array_equal(
        current.coords, cache.original_coords[centers]
    ):
        raise ValueError("unpool: current graph does not sit on the cached centres")
    s, v = unpool(current.scalars, current.vectors, cache, fill)
    return cache.original.replace(scalars=s.data, vectors=v.data)
