"""Geometric Weisfeiler-Leman refinement and pooling-expressivity checks.

Two colour-refinement tests are implemented:

* ``igwl_refine``: each node hashes its colour with the multiset of
  (neighbour colour, edge length, angles to the other neighbours).  No
  geometry is carried between iterations.
* ``gwl_refine``: each node also keeps a payload of relative positions of
  every node reachable in ``t`` hops (with walk multiplicities).  The payload
  is summarised by a quantised Gram matrix, plus signed volumes when the
  group is SO(d), and that summary goes into the hash.

Real numbers are quantised to 1e-6 before hashing, so congruent inputs hash
identically despite roundoff.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .geometry import GeometricGraph, knn_edges, random_motion, apply_motion
from .pooling import (
    ClusterAssignment,
    OrphanNodeError,
    connect,
    select_assign,
)

__all__ = [
    "GroupSpec",
    "ColorState",
    "ColorMultiset",
    "ConditionReport",
    "DistinguishResult",
    "igwl_refine",
    "gwl_refine",
    "distinguishable",
    "check_theorem1_conditions",
    "empirical_maintains",
    "demonstrate_increase",
    "QUANTUM",
    "PAYLOAD_CAP",
]

# Sorted node colours of one graph at one iteration.
ColorMultiset = tuple[int, ...]

QUANTUM = 1e-6
PAYLOAD_CAP = 4096


@dataclass(frozen=True)
class GroupSpec:
    group: str = "O"  # "O" or "SO"
    dim: int = 3

    def __post_init__(self):
        if self.group not in ("O", "SO"):
            raise ValueError(f"group must be 'O' or 'SO', got {self.group!r}")
        if self.dim not in (2, 3):
            raise ValueError("dim must be 2 or 3")


@dataclass
class ColorState:
    colors: list[int]
    payload: list[dict[int, int]] | None
    iteration: int = 0

    def multiset(self) -> ColorMultiset:
        return tuple(sorted(self.colors))

    def num_classes(self) -> int:
        return len(set(self.colors))


def _q(x) -> int:
    return int(round(float(x) / QUANTUM))


def _qa(a: np.ndarray) -> np.ndarray:
    return np.rint(np.asarray(a) / QUANTUM).astype(np.int64)


class _Hasher:
    """Content hash with a collision guard shared across one comparison."""

    def __init__(self):
        self.seen: dict[int, str] = {}

    def __call__(self, obj) -> int:
        text = repr(obj)
        h = int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8).digest(), "little")
        prev = self.seen.setdefault(h, text)
        if prev != text:
            raise RuntimeError("64-bit colour hash collision")
        return h


def _initial_colors(g: GeometricGraph, hasher: _Hasher) -> list[int]:
    out = []
    for i in range(g.num_nodes):
        v = g.vectors[i]
        out.append(hasher(("init", tuple(_qa(g.scalars[i]).tolist()), tuple(_qa(v @ v.T).ravel().tolist()))))
    return out


def _local_tuple(g: GeometricGraph, i: int, colors: Sequence[int]) -> tuple:
    """Invariant summary of node i's 1-hop neighbourhood under the given colours."""
    nb = g.neighbors[i]
    if len(nb) == 0:
        return ()
    rel = g.coords[i] - g.coords[nb]
    inner = _qa(rel @ rel.T)
    lengths = _qa(np.sqrt(np.sum(rel * rel, axis=1)))
    proj_j = _qa(np.einsum("ad,acd->ac", rel, g.vectors[nb]))
    proj_i = _qa(rel @ g.vectors[i].T)
    nb_colors = [colors[j] for j in nb]
    items = []
    for a, j in enumerate(nb):
        ang = tuple(sorted(zip(nb_colors, inner[a].tolist())))
        items.append(
            (colors[j], int(lengths[a]), tuple(proj_j[a].tolist()), tuple(proj_i[a].tolist()), ang)
        )
    return tuple(sorted(items))


def _refine_loop(step, g: GeometricGraph, iters: int, halt: bool, hasher: _Hasher, state: ColorState):
    if iters < 1:
        raise ValueError("iters must be >= 1")
    seq = []
    prev_classes = state.num_classes()
    for _ in range(iters):
        state = step(state)
        seq.append(state.multiset())
        classes = state.num_classes()
        if halt and classes == prev_classes:
            break
        prev_classes = classes
    return seq, state


def igwl_refine(
    g: GeometricGraph, iters: int, halt: bool = True, hasher: _Hasher | None = None
) -> list[ColorMultiset]:
    """Colour multisets after iterations 1..iters (fewer if the partition settles and ``halt``)."""
    hasher = hasher or _Hasher()
    state = ColorState(_initial_colors(g, hasher), None, 0)

    def step(st: ColorState) -> ColorState:
        c = st.colors
        new = [hasher(("igwl", c[i], _local_tuple(g, i, c))) for i in range(g.num_nodes)]
        return ColorState(new, None, st.iteration + 1)

    return _refine_loop(step, g, iters, halt, hasher, state)[0]


def _payload_form(
    g: GeometricGraph, i: int, payload: dict[int, int], colors: Sequence[int], group: GroupSpec
) -> tuple:
    """Orbit-invariant canonical form of one node's payload."""
    origins = sorted(payload)
    vecs = [g.coords[u] - g.coords[i] for u in origins]
    keys = [("p", colors[u], payload[u]) for u in origins]
    nchan = g.vectors.shape[1]
    for u in origins:
        for ch in range(nchan):
            vecs.append(g.vectors[u, ch])
            keys.append(("v", colors[u], payload[u], ch))
    if len(vecs) > PAYLOAD_CAP:
        raise ValueError(
            f"payload of node {i} holds {len(vecs)} vectors (cap {PAYLOAD_CAP}); lower iters"
        )
    P = np.array(vecs)
    G = _qa(P @ P.T)
    keys = [k + (int(G[e, e]),) for e, k in enumerate(keys)]
    profiles = []
    for e in range(len(keys)):
        row = tuple(sorted(zip(keys, G[e].tolist())))
        profiles.append((keys[e], row))
    form: tuple = (tuple(sorted(profiles)),)
    if group.group == "SO":
        form = form + (_signed_volumes(P, keys, group.dim),)
    return form


def _signed_volumes(P: np.ndarray, keys: list, d: int) -> tuple:
    n = len(keys)
    if n < d:
        return ()
    if d == 2:
        vol = P[:, None, 0] * P[None, :, 1] - P[:, None, 1] * P[None, :, 0]
    else:
        cross = np.cross(P[:, None, :], P[None, :, :])  # (n, n, 3)
        vol = np.einsum("ad,bcd->abc", P, cross)
    qv = _qa(vol)
    idx = np.argwhere(qv != 0)
    return tuple(sorted((tuple(keys[t] for t in tup), int(qv[tuple(tup)])) for tup in idx))


def gwl_refine(
    g: GeometricGraph,
    iters: int,
    group: GroupSpec | None = None,
    halt: bool = True,
    hasher: _Hasher | None = None,
) -> list[ColorMultiset]:
    group = group or GroupSpec("O", g.dim)
    if group.dim != g.dim:
        raise ValueError("group dimension does not match the graph")
    hasher = hasher or _Hasher()
    n = g.num_nodes
    state = ColorState(_initial_colors(g, hasher), [{i: 1} for i in range(n)], 0)

    def step(st: ColorState) -> ColorState:
        c = st.colors
        payload = []
        for i in range(n):
            acc = {i: 1}
            for j in g.neighbors[i]:
                for u, cnt in st.payload[j].items():
                    acc[u] = acc.get(u, 0) + cnt
            payload.append(acc)
        new = [
            hasher(("gwl", c[i], _local_tuple(g, i, c), _payload_form(g, i, payload[i], c, group)))
            for i in range(n)
        ]
        return ColorState(new, payload, st.iteration + 1)

    return _refine_loop(step, g, iters, halt, hasher, state)[0]


@dataclass
class DistinguishResult:
    distinguishable: bool
    first_iteration: int | None
    per_iteration: list[bool] = field(default_factory=list)

    def currently_distinguishable(self, i: int) -> bool:
        """Multisets differ at iteration ``i`` (1-based)."""
        return self.per_iteration[i - 1]

    def __bool__(self) -> bool:
        return self.distinguishable


def distinguishable(
    g1: GeometricGraph,
    g2: GeometricGraph,
    test: str = "gwl",
    k: int = 3,
    group: GroupSpec | None = None,
) -> DistinguishResult:
    hasher = _Hasher()
    if test == "gwl":
        s1 = gwl_refine(g1, k, group, halt=False, hasher=hasher)
        s2 = gwl_refine(g2, k, group, halt=False, hasher=hasher)
    elif test == "igwl":
        s1 = igwl_refine(g1, k, halt=False, hasher=hasher)
        s2 = igwl_refine(g2, k, halt=False, hasher=hasher)
    else:
        raise ValueError(f"unknown test {test!r}")
    per = [a != b for a, b in zip(s1, s2)]
    first = next((i + 1 for i, d in enumerate(per) if d), None)
    return DistinguishResult(first is not None, first, per)


# -- pooling conditions ---------------------------------------------------------


@dataclass
class ConditionReport:
    cond1_scalar: bool
    cond1_vector: bool
    cond2_lambda: float | None
    cond3_linear: bool
    verdict: str

    def to_dict(self) -> dict:
        return asdict(self)


LINEAR_REDUCTIONS = ("linear", "sum", "sparse")


def _matrix(C) -> np.ndarray:
    return C.matrix if isinstance(C, ClusterAssignment) else np.asarray(C, dtype=np.float64)


def check_theorem1_conditions(
    pre_s1,
    pre_s2,
    pre_v1,
    pre_v2,
    C1,
    C2,
    red_kind: str,
    tol_sum: float = 1e-9,
    tol_lambda: float = 1e-12,
) -> ConditionReport:
    """Audit the sufficient conditions for pooling to keep a pair apart.

    ``pre_*`` are the pre-pooling feature arrays (or their column sums);
    ``C1``/``C2`` are supernode-major membership matrices; ``red_kind`` names
    the reduction (``"linear"`` for a plain C-weighted sum, anything else is
    treated as non-linear).
    """

    def total(a):
        a = np.asarray(a, dtype=np.float64)
        return a.sum(axis=0) if a.ndim >= 2 else a

    ds = total(pre_s1) - total(pre_s2)
    cond1_s = bool(ds.size and np.max(np.abs(ds)) > tol_sum)
    cond1_v = False
    if pre_v1 is not None and pre_v2 is not None:
        dv = total(pre_v1) - total(pre_v2)
        cond1_v = bool(dv.size and np.max(np.abs(dv)) > tol_sum)
    lam = None
    sums = np.concatenate([_matrix(C1).sum(axis=0), _matrix(C2).sum(axis=0)])
    if sums.size and sums[0] > 0 and np.all(np.abs(sums - sums[0]) <= tol_lambda):
        lam = float(sums[0])
    cond3 = red_kind in LINEAR_REDUCTIONS
    ok = (cond1_s or cond1_v) and lam is not None and cond3
    return ConditionReport(cond1_s, cond1_v, lam, cond3, "maintains" if ok else "cannot_certify")


# -- empirical census -------------------------------------------------------------


def _random_pair(rng: np.random.Generator, knn: int = 3):
    n = int(rng.integers(6, 13))
    x1 = rng.uniform(-2.0, 2.0, size=(n, 3))
    kind = rng.choice(["copy", "moved", "jitter", "fresh"], p=[0.05, 0.05, 0.45, 0.45])
    if kind == "copy":
        x2 = x1.copy()
    elif kind == "moved":
        g = GeometricGraph(coords=x1, edges=[])
        x2 = apply_motion(g, random_motion(rng, 3)).coords
    elif kind == "jitter":
        x2 = x1.copy()
        x2[rng.integers(n)] += rng.normal(scale=0.5, size=3)
    else:
        x2 = rng.uniform(-2.0, 2.0, size=(n, 3))
    mk = lambda x: GeometricGraph(coords=x, edges=knn_edges(x, knn), vectors=np.zeros((n, 0, 3)))
    return mk(x1), mk(x2), str(kind)


def _one_hot_colors(colors1, colors2):
    vocab = {c: a for a, c in enumerate(sorted(set(colors1) | set(colors2)))}

    def enc(cs):
        s = np.zeros((len(cs), len(vocab)))
        s[np.arange(len(cs)), [vocab[c] for c in cs]] = 1.0
        return s

    return enc(colors1), enc(colors2)


def _colors_at(g: GeometricGraph, i: int, hasher: _Hasher) -> list[int]:
    state = ColorState(_initial_colors(g, hasher), None, 0)
    for _ in range(i):
        c = state.colors
        state = ColorState(
            [hasher(("igwl", c[a], _local_tuple(g, a, c))) for a in range(g.num_nodes)], None, state.iteration + 1
        )
    return state.colors


def empirical_maintains(
    pool_kind: str = "sparse",
    trials: int = 1000,
    seed: int = 0,
    max_iteration: int = 3,
    ratio: float = 0.6,
    knn: int = 16,
    max_draws: int | None = None,
) -> dict:
    """Census of pooled pairs that lose IGWL-distinguishability.

    Pairs of random KNN point-cloud graphs with equal node count are drawn
    until ``trials`` of them are currently IGWL-distinguishable at a randomly
    chosen iteration ``i``.  Each such pair gets one-hot IGWL colours as
    features and goes through SEL, a plain membership-sum RED and KNN CON.
    The pooled pair must still be IGWL-distinguishable.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    max_draws = 20 * trials if max_draws is None else max_draws
    rng = np.random.default_rng(seed)
    report = {
        "pool_kind": pool_kind,
        "trials": trials,
        "seed": seed,
        "draws": 0,
        "checked": 0,
        "vacuous": 0,
        "orphan_skips": 0,
        "certified": 0,
        "violations": [],
    }
    while report["checked"] < trials and report["draws"] < max_draws:
        t = report["draws"]
        report["draws"] += 1
        g1, g2, kind = _random_pair(rng)
        it = int(rng.integers(1, max_iteration + 1))
        hasher = _Hasher()
        c1 = _colors_at(g1, it, hasher)
        c2 = _colors_at(g2, it, hasher)
        if sorted(c1) == sorted(c2):
            report["vacuous"] += 1
            continue
        s1, s2 = _one_hot_colors(c1, c2)
        try:
            a1 = select_assign(g1, pool_kind, ratio)
            a2 = select_assign(g2, pool_kind, ratio)
        except OrphanNodeError:
            report["orphan_skips"] += 1
            continue
        report["checked"] += 1
        cond = check_theorem1_conditions(s1, s2, None, None, a1, a2, "linear")
        report["certified"] += cond.verdict == "maintains"
        p1 = _pooled(g1, a1, s1, knn)
        p2 = _pooled(g2, a2, s2, knn)
        res = distinguishable(p1, p2, "igwl", k=max_iteration)
        if not res:
            report["violations"].append(
                {"draw": t, "pair": kind, "nodes": g1.num_nodes, "iteration": it, "lambda": cond.cond2_lambda}
            )
    report["violation_count"] = len(report["violations"])
    return report


def _pooled(g: GeometricGraph, a: ClusterAssignment, s: np.ndarray, knn: int) -> GeometricGraph:
    pc = g.coords[a.centers]
    return GeometricGraph(
        coords=pc, edges=connect(pc, knn), scalars=a.matrix @ s, vectors=np.zeros((len(pc), 0, g.dim))
    )


def demonstrate_increase(k: int = 4, target_nodes: int = 3, max_iters: int | None = None) -> dict:
    """Show pooling separates a k-chain pair in fewer GWL iterations."""
    from .chains import ChainSpec, make_k_chain_pair, pool_chain

    if k < 4 or k % 2:
        raise ValueError("k must be an even number >= 4")
    max_iters = max_iters or (k // 2 + 2)
    g1, g2 = make_k_chain_pair(ChainSpec(k))
    p1, p2 = pool_chain(g1, target_nodes), pool_chain(g2, target_nodes)
    orig = distinguishable(g1, g2, "gwl", max_iters)
    pooled = distinguishable(p1, p2, "gwl", max_iters)
    pooled_igwl = distinguishable(p1, p2, "igwl", max_iters)
    orig_igwl = distinguishable(g1, g2, "igwl", max_iters)
    return {
        "k": k,
        "target_nodes": target_nodes,
        "expected_original_iteration": k // 2 + 1,
        "original_first_distinguishing_iteration": orig.first_iteration,
        "pooled_first_distinguishing_iteration": pooled.first_iteration,
        "pooled_igwl_first_distinguishing_iteration": pooled_igwl.first_iteration,
        "original_igwl_distinguishable": orig_igwl.distinguishable,
        "increases": (
            pooled.first_iteration is not None
            and (orig.first_iteration is None or pooled.first_iteration < orig.first_iteration)
        ),
    }
