"""k-chain cis/trans pairs, their pooled versions, and the discrimination benchmark."""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry import GeometricGraph
from .layers import graph_diameter
from .pooling import fps_select
from .training import fit, predict
from .unet import FlatModel

__all__ = [
    "ChainSpec",
    "ExperimentConfig",
    "ResultRow",
    "make_k_chain_pair",
    "pool_chain",
    "train_discriminator",
    "default_grid",
    "run_table",
    "parse_table",
    "CSV_HEADER",
]

CSV_HEADER = ["model", "pool", "layers", "mean", "std"]


@dataclass(frozen=True)
class ChainSpec:
    k: int = 4
    dim: int = 3

    def __post_init__(self):
        if self.k < 2 or self.k % 2:
            raise ValueError(f"k must be an even number >= 2, got {self.k}")
        if self.dim != 3:
            raise ValueError("k-chains are built in 3 dimensions")


def make_k_chain_pair(spec: ChainSpec | int = ChainSpec()) -> tuple[GeometricGraph, GeometricGraph]:
    """Return (cis, trans).  Node 0 is the left end, 1..k the straight chain, k+1 the right end."""
    if isinstance(spec, int):
        spec = ChainSpec(spec)
    k = spec.k
    interior = np.array([[j, 0.0, 0.0] for j in range(k)])
    left = np.array([[-1.0, 1.0, 0.0]])
    edges = [(i, i + 1) for i in range(k + 1)]
    out = []
    for y in (1.0, -1.0):
        x = np.vstack([left, interior, [[float(k), y, 0.0]]])
        out.append(GeometricGraph(coords=x, edges=edges, scalars=np.ones((k + 2, 1)), vectors=np.zeros((k + 2, 1, 3))))
    return out[0], out[1]


def pool_chain(g: GeometricGraph, target_nodes: int) -> GeometricGraph:
    """Coarsen a chain to ``target_nodes`` supernodes.

    Centres come from farthest point sampling.  Every centre absorbs its
    1-hop neighbourhood; a node reached by no centre joins its nearest
    centre.  Features are summed over members.  Supernodes are ordered along
    the chain and joined into a path, and each path end is also linked to the
    supernode two steps along, which closes a triangle when three remain.
    """
    n = g.num_nodes
    if not 1 <= target_nodes < n:
        raise ValueError(f"target_nodes must be in [1, {n - 1}], got {target_nodes}")
    centers = sorted(fps_select(g.coords, count=target_nodes))
    C = np.zeros((target_nodes, n))
    for a, c in enumerate(centers):
        C[a, c] = 1.0
        C[a, g.neighbors[c]] = 1.0
    for i in np.flatnonzero(C.sum(axis=0) == 0):
        d = np.linalg.norm(g.coords[centers] - g.coords[i], axis=1)
        C[int(np.argmin(d)), i] = 1.0
    edges = {(a, a + 1) for a in range(target_nodes - 1)}
    if target_nodes >= 3:
        edges |= {(0, 2), (target_nodes - 3, target_nodes - 1)}
    vec = np.einsum("kn,ncd->kcd", C, g.vectors)
    return GeometricGraph(coords=g.coords[centers], edges=sorted(edges), scalars=C @ g.scalars, vectors=vec)


@dataclass(frozen=True)
class ExperimentConfig:
    layer_kind: str = "invariant"
    num_layers: int = 2
    pool_target: int | None = None
    seeds: int = 10
    lr: float = 1e-3
    epochs: int = 200
    hidden: int = 32
    mlp_hidden: int = 64
    k: int = 4
    seed_base: int = 0

    def __post_init__(self):
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.layer_kind not in ("invariant", "equivariant"):
            raise ValueError(f"unknown layer kind {self.layer_kind!r}")
        if self.pool_target not in (None, 3, 4):
            raise ValueError("pool_target must be None, 3 or 4")
        if self.seeds < 1 or self.epochs < 0:
            raise ValueError("need at least one seed and a non-negative epoch count")

    @property
    def pool_label(self) -> str:
        return "none" if self.pool_target is None else f"{self.pool_target}"


@dataclass
class ResultRow:
    config: ExperimentConfig
    mean: float
    std: float
    accuracies: list[float] = field(default_factory=list)
    embedding_gaps: list[float] = field(default_factory=list)
    diverged_seeds: list[int] = field(default_factory=list)

    def csv_row(self) -> list:
        c = self.config
        return [c.layer_kind, c.pool_label, c.num_layers, f"{self.mean:.1f}", f"{self.std:.1f}"]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["config"] = asdict(self.config)
        return d


def _graphs(cfg: ExperimentConfig):
    g1, g2 = make_k_chain_pair(ChainSpec(cfg.k))
    if cfg.pool_target is not None:
        g1, g2 = pool_chain(g1, cfg.pool_target), pool_chain(g2, cfg.pool_target)
    return g1, g2


def _run_seed(cfg: ExperimentConfig, seed: int) -> tuple[float, float, bool]:
    g1, g2 = _graphs(cfg)
    model = FlatModel(
        cfg.layer_kind,
        cfg.num_layers,
        in_width=g1.scalars.shape[1],
        width=cfg.hidden,
        num_classes=2,
        cutoff=max(graph_diameter(g1, g2), 1e-6),
        readout_width=cfg.hidden,
        hidden=cfg.mlp_hidden,
        seed=seed,
    )
    log = fit(model, [g1, g2], [0, 1], cfg.epochs, cfg.lr)
    if log.diverged:
        return 50.0, float("nan"), True
    pred = predict(model, [g1, g2])
    acc = 100.0 * float(np.mean(pred == np.array([0, 1])))
    if pred[0] == pred[1]:
        acc = 50.0
    gap = float(np.max(np.abs(model.embed(g1).data - model.embed(g2).data)))
    return acc, gap, False


def train_discriminator(config: ExperimentConfig, workers: int = 1) -> ResultRow:
    """Train one fresh model per seed on the two-graph task and summarise accuracy."""
    seeds = list(range(config.seed_base, config.seed_base + config.seeds))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_seed, [config] * len(seeds), seeds))
    else:
        results = [_run_seed(config, s) for s in seeds]
    accs = [r[0] for r in results]
    return ResultRow(
        config=config,
        mean=float(np.mean(accs)),
        std=float(np.std(accs)),
        accuracies=accs,
        embedding_gaps=[r[1] for r in results],
        diverged_seeds=[s for s, r in zip(seeds, results) if r[2]],
    )


def default_grid(k: int = 4, **overrides) -> list[ExperimentConfig]:
    depths = range(k // 2, k // 2 + 5)
    return [
        ExperimentConfig(layer_kind=kind, num_layers=L, pool_target=p, k=k, **overrides)
        for kind in ("invariant", "equivariant")
        for p in (None, 3, 4)
        for L in depths
    ]


def run_table(configs: list[ExperimentConfig] | None = None, workers: int = 1) -> tuple[str, list[ResultRow]]:
    """Run every config; return the CSV text and the full rows."""
    configs = default_grid() if configs is None else configs
    rows = [train_discriminator(c, workers) for c in configs]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow(r.csv_row())
    return buf.getvalue(), rows


def parse_table(text: str) -> list[dict]:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames != CSV_HEADER:
        raise ValueError(f"unexpected header {reader.fieldnames}")
    return [
        {"model": r["model"], "pool": r["pool"], "layers": int(r["layers"]), "mean": float(r["mean"]), "std": float(r["std"])}
        for r in reader
    ]


def config_echo(rows: list[ResultRow]) -> str:
    return json.dumps([r.to_dict() for r in rows], indent=2)
