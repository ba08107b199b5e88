"""Encoder/decoder geometric graph U-Net."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

from . import autodiff as ad
from .geometry import GeometricGraph
from .layers import LayerState, ReadoutHead, apply_layer, make_layer, readout
from .pooling import PoolResult, UnpoolFill, pool_graph, unpool

__all__ = ["UNetConfig", "UNetModel", "encode", "decode", "forward", "embed", "FlatModel"]


@dataclass
class UNetConfig:
    levels: int = 3
    layers_per_level: int = 2
    decoder_layers_per_level: int | None = None
    pool_kind: str = "sparse"
    fps_ratio: float = 0.6
    knn_k: int = 16
    layer_kind: str = "invariant"
    feature_width: int = 32
    vector_channels: int = 1
    readout_width: int = 32
    hidden: int = 64
    num_classes: int = 2
    cutoff: float = 10.0
    aggr_norm: float = 10.0

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if not 0.0 < self.fps_ratio <= 1.0:
            raise ValueError("fps_ratio must lie in (0, 1]")
        if self.layers_per_level < 1:
            raise ValueError("layers_per_level must be >= 1")
        if self.decoder_depth < 1:
            raise ValueError("decoder needs at least one layer per level")
        if self.pool_kind not in ("point", "sparse"):
            raise ValueError(f"unknown pool kind {self.pool_kind!r}")
        if self.layer_kind not in ("invariant", "equivariant"):
            raise ValueError(f"unknown layer kind {self.layer_kind!r}")

    @property
    def decoder_depth(self) -> int:
        return self.layers_per_level if self.decoder_layers_per_level is None else self.decoder_layers_per_level

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, text: str) -> "UNetConfig":
        return cls(**json.loads(text))


class UNetModel:
    """Parameters for every stage of the U-Net, all held in one ParamStore.

    ``in_width``/``in_channels`` describe the input graphs' features.
    """

    def __init__(self, config: UNetConfig, in_width: int, in_channels: int = 1, seed: int = 0):
        self.config = cfg = config
        self.in_width, self.in_channels = in_width, in_channels
        self.store = ad.ParamStore(seed)
        f, c, h = cfg.feature_width, cfg.vector_channels, cfg.hidden

        def layer(name, fi, fo, ci, co):
            return make_layer(cfg.layer_kind, self.store, name, fi, fo, ci, co, cfg.cutoff, hidden=h, aggr_norm=cfg.aggr_norm)

        self.encoder: list[list] = []
        self.pool_mlps: list = []
        for lvl in range(cfg.levels):
            stack = []
            for k in range(cfg.layers_per_level):
                first = lvl == 0 and k == 0
                stack.append(
                    layer(f"enc{lvl}.{k}", in_width if first else f, f, in_channels if first else c, c)
                )
            self.encoder.append(stack)
            self.pool_mlps.append(
                ad.MLP(self.store, f"pool{lvl}", f, f, h) if cfg.pool_kind == "point" else None
            )
        self.fills: list[UnpoolFill] = []
        self.decoder: list[list] = []
        for lvl in reversed(range(cfg.levels)):
            self.fills.append(UnpoolFill(self.store, f"fill{lvl}", f, c))
            stack = []
            for k in range(cfg.decoder_depth):
                stack.append(layer(f"dec{lvl}.{k}", 2 * f if k == 0 else f, f, 2 * c if k == 0 else c, c))
            self.decoder.append(stack)
        self.head = ReadoutHead(self.store, "readout", f, c, cfg.readout_width, h)
        self.classifier = ad.Linear(self.store, "classifier", cfg.readout_width, cfg.num_classes)

    def num_parameters(self) -> int:
        return self.store.num_parameters()

    def embed(self, g: GeometricGraph) -> ad.Tensor:
        return embed(g, self)


def encode(g: GeometricGraph, model: UNetModel, state: LayerState | None = None):
    """Message passing and pooling per level; returns (bottom graph, state, caches)."""
    cfg = model.config
    if g.num_nodes < 1:
        raise ValueError("cannot encode an empty graph")
    state = LayerState.from_graph(g) if state is None else state
    caches: list[PoolResult] = []
    for lvl in range(cfg.levels):
        for p in model.encoder[lvl]:
            state = apply_layer(g, state, p)
        rec, ps, pv = pool_graph(
            g,
            cfg.pool_kind,
            cfg.fps_ratio,
            cfg.knn_k,
            scalars=state.scalars,
            vectors=state.vectors,
            mlp=model.pool_mlps[lvl],
            norm=cfg.aggr_norm,
        )
        if rec.pooled.num_nodes < 1:
            raise ValueError(f"level {lvl} pooled to zero nodes; need at least 1 node per level")
        caches.append(rec)
        g = rec.pooled
        state = LayerState(ps, pv)
    return g, state, caches


def decode(state: LayerState, caches: list[PoolResult], model: UNetModel) -> LayerState:
    if len(caches) != model.config.levels:
        raise ValueError(f"got {len(caches)} caches for a {model.config.levels}-level model")
    for fill, stack, cache in zip(model.fills, model.decoder, reversed(caches)):
        s, v = unpool(state.scalars, state.vectors, cache, fill)
        state = LayerState(s, v)
        for p in stack:
            state = apply_layer(cache.original, state, p)
    return state


def embed(g: GeometricGraph, model: UNetModel) -> ad.Tensor:
    _, bottom, caches = encode(g, model)
    return readout(decode(bottom, caches, model), model.head)


def forward(g: GeometricGraph, model) -> ad.Tensor:
    """Class logits, shape (1, num_classes)."""
    return model.classifier(model.embed(g))


class FlatModel:
    """Plain stack of message-passing layers with the same readout and classifier."""

    def __init__(
        self,
        layer_kind: str,
        num_layers: int,
        in_width: int,
        width: int,
        num_classes: int,
        cutoff: float,
        in_channels: int = 1,
        channels: int = 1,
        readout_width: int = 32,
        hidden: int = 64,
        aggr_norm: float = 1.0,
        seed: int = 0,
    ):
        self.store = ad.ParamStore(seed)
        self.layers = [
            make_layer(layer_kind, self.store, f"layer{i}", in_width if i == 0 else width, width,
                       in_channels if i == 0 else channels, channels, cutoff, hidden=hidden,
                       aggr_norm=aggr_norm)
            for i in range(num_layers)
        ]
        self.head = ReadoutHead(self.store, "readout", width, channels, readout_width, hidden)
        self.classifier = ad.Linear(self.store, "classifier", readout_width, num_classes)

    def num_parameters(self) -> int:
        return self.store.num_parameters()

    def embed(self, g: GeometricGraph) -> ad.Tensor:
        state = LayerState.from_graph(g)
        for p in self.layers:
            state = apply_layer(g, state, p)
        return readout(state, self.head)
