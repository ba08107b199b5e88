"""Invariant (SchNet-style) and equivariant (EGNN-style) message passing.

Both layers read geometry from the graph's coordinates, which are never
modified.  The equivariant layer writes its geometric update into the
vector feature channels instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .geometry import GeometricGraph

__all__ = [
    "LayerState",
    "InvariantLayerParams",
    "EquivariantLayerParams",
    "invariant_pass",
    "equivariant_pass",
    "readout",
    "ReadoutHead",
    "rbf_expand",
    "graph_diameter",
    "make_layer",
    "apply_layer",
]


@dataclass
class LayerState:
    scalars: ad.Tensor  # (N, f)
    vectors: ad.Tensor  # (N, v, d)

    @classmethod
    def from_graph(cls, g: GeometricGraph) -> "LayerState":
        return cls(ad.Tensor(g.scalars), ad.Tensor(g.vectors))

    @property
    def width(self) -> int:
        return self.scalars.shape[1]

    @property
    def channels(self) -> int:
        return self.vectors.shape[1]


def graph_diameter(*graphs: GeometricGraph) -> float:
    """Largest pairwise node distance over all given graphs."""
    best = 0.0
    for g in graphs:
        x = g.coords
        diff = x[:, None, :] - x[None, :, :]
        best = max(best, float(np.sqrt(np.max(np.sum(diff * diff, axis=-1)))))
    return best


def rbf_expand(dist: np.ndarray, centers: np.ndarray, gamma: float) -> np.ndarray:
    return np.exp(-gamma * (dist[:, None] - centers[None, :]) ** 2)


def _relative(g: GeometricGraph):
    recv, send = g.directed
    rel = g.coords[recv] - g.coords[send]
    return recv, send, rel


class _VectorMix:
    """Bias-free channel map, only present when channel counts change."""

    def __init__(self, store, name, c_in, c_out):
        self.weight = None
        if c_in != c_out:
            std = np.sqrt(1.0 / max(c_in, 1))
            self.weight = store.add(f"{name}.vector_mix", store.rng.normal(0.0, std, size=(c_in, c_out)))

    def __call__(self, v):
        return v if self.weight is None else ad.channel_mix(v, self.weight)


class InvariantLayerParams:
    """Continuous-filter convolution on RBF-expanded edge lengths.

    ``cutoff`` sets the RBF range: 16 centres on [0, cutoff] with width
    ``10 / cutoff**2``.
    """

    def __init__(
        self,
        store: ad.ParamStore,
        name: str,
        f_in: int,
        f_out: int,
        cutoff: float,
        num_rbf: int = 16,
        hidden: int = 64,
        c_in: int = 1,
        c_out: int | None = None,
        aggr_norm: float = 1.0,
    ):
        if num_rbf < 1 or cutoff <= 0:
            raise ValueError("need at least one RBF centre and a positive cutoff")
        self.f_in, self.f_out = f_in, f_out
        self.c_in, self.c_out = c_in, c_in if c_out is None else c_out
        self.rbf_centers = np.linspace(0.0, cutoff, num_rbf)
        self.rbf_gamma = 10.0 / cutoff**2
        self.aggr_norm = float(aggr_norm)
        self.filter_mlp = ad.MLP(store, f"{name}.filter", num_rbf, f_in, hidden)
        self.update_mlp = ad.MLP(store, f"{name}.update", 2 * f_in, f_out, hidden)
        self.vector_mix = _VectorMix(store, name, self.c_in, self.c_out)


class EquivariantLayerParams:
    def __init__(
        self,
        store: ad.ParamStore,
        name: str,
        f_in: int,
        f_out: int,
        c_in: int = 1,
        c_out: int | None = None,
        message_width: int = 64,
        hidden: int = 64,
        aggr_norm: float = 1.0,
        length_scale: float = 1.0,
    ):
        self.f_in, self.f_out = f_in, f_out
        self.aggr_norm = float(aggr_norm)
        self.length_scale = float(length_scale)
        self.c_in, self.c_out = c_in, c_in if c_out is None else c_out
        self.message_mlp = ad.MLP(store, f"{name}.message", 2 * f_in + 1, message_width, hidden)
        self.scalar_update_mlp = ad.MLP(store, f"{name}.update", f_in + message_width, f_out, hidden)
        self.vector_gate_mlp = ad.MLP(store, f"{name}.gate", message_width, self.c_out, hidden)
        self.vector_mix = _VectorMix(store, name, self.c_in, self.c_out)


def _check_dims(g: GeometricGraph, state: LayerState, f_in: int, c_in: int) -> None:
    n = g.num_nodes
    if state.scalars.shape != (n, f_in):
        raise ValueError(f"expected scalars of shape {(n, f_in)}, got {state.scalars.shape}")
    if state.vectors.shape != (n, c_in, g.dim):
        raise ValueError(f"expected vectors of shape {(n, c_in, g.dim)}, got {state.vectors.shape}")


def invariant_pass(g: GeometricGraph, state: LayerState, p: InvariantLayerParams) -> LayerState:
    """s_i <- update([s_i, sum_j filter(rbf(|x_ij|)) * s_j]); vectors pass through."""
    _check_dims(g, state, p.f_in, p.c_in)
    recv, send, rel = _relative(g)
    dist = np.sqrt(np.sum(rel * rel, axis=1))
    w = p.filter_mlp(rbf_expand(dist, p.rbf_centers, p.rbf_gamma))
    msg = ad.hadamard(w, ad.gather_rows(state.scalars, send))
    agg = ad.segment_sum(msg, recv, g.num_nodes)
    if p.aggr_norm != 1.0:
        agg = ad.scale(agg, 1.0 / p.aggr_norm)
    s = p.update_mlp(ad.concat([state.scalars, agg], axis=1))
    return LayerState(s, p.vector_mix(state.vectors))


def equivariant_pass(g: GeometricGraph, state: LayerState, p: EquivariantLayerParams) -> LayerState:
    """EGNN update with the coordinate step redirected into the vector channels.

    Messages see |x_ij|^2 in units of ``length_scale``; both the scalar and
    vector sums are divided by the constant ``aggr_norm``.
    """
    _check_dims(g, state, p.f_in, p.c_in)
    recv, send, rel = _relative(g)
    n, e = g.num_nodes, len(recv)
    rel = rel / p.length_scale
    d2 = np.sum(rel * rel, axis=1, keepdims=True)
    m = p.message_mlp(
        ad.concat([ad.gather_rows(state.scalars, recv), ad.gather_rows(state.scalars, send), d2], axis=1)
    )
    agg = ad.segment_sum(m, recv, n)
    push = ad.segment_sum(
        ad.hadamard(ad.reshape(p.vector_gate_mlp(m), (e, p.c_out, 1)), rel[:, None, :]), recv, n
    )
    if p.aggr_norm != 1.0:
        agg = ad.scale(agg, 1.0 / p.aggr_norm)
        push = ad.scale(push, 1.0 / p.aggr_norm)
    s = p.scalar_update_mlp(ad.concat([state.scalars, agg], axis=1))
    v = ad.add(p.vector_mix(state.vectors), push)
    return LayerState(s, v)


def make_layer(kind: str, store, name, f_in, f_out, c_in, c_out, cutoff, hidden: int = 64, aggr_norm: float = 1.0):
    if kind == "invariant":
        return InvariantLayerParams(
            store, name, f_in, f_out, cutoff, hidden=hidden, c_in=c_in, c_out=c_out, aggr_norm=aggr_norm
        )
    if kind == "equivariant":
        return EquivariantLayerParams(
            store, name, f_in, f_out, c_in=c_in, c_out=c_out, message_width=hidden, hidden=hidden,
            aggr_norm=aggr_norm, length_scale=cutoff,
        )
    raise ValueError(f"unknown layer kind {kind!r}")


def apply_layer(g: GeometricGraph, state: LayerState, p) -> LayerState:
    if isinstance(p, InvariantLayerParams):
        return invariant_pass(g, state, p)
    return equivariant_pass(g, state, p)


class ReadoutHead:
    def __init__(self, store, name, f: int, c: int, out: int, hidden: int = 64):
        self.f, self.c = f, c
        self.mlp = ad.MLP(store, name, f + c, out, hidden)


def readout(state: LayerState, head: ReadoutHead) -> ad.Tensor:
    """head([sum_i s_i, sum_i |v_i| per channel]) as a (1, out) tensor."""
    n = state.scalars.shape[0]
    zeros = np.zeros(n, dtype=np.int64)
    ssum = ad.segment_sum(state.scalars, zeros, 1)
    vsum = ad.segment_sum(ad.l2_norm_rows(state.vectors), zeros, 1)
    return head.mlp(ad.concat([ssum, vsum], axis=1))
