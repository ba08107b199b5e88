"""Hierarchical-motif classification data and a U-Net vs flat-stack comparison.

Every sample is made of the same rigid 6-point motif repeated four times.
Only the placement of the four copies depends on the class, and the copies
sit far enough apart that a KNN graph with k=5 never links two of them.
Anything that only passes messages along the input edges therefore sees the
same disconnected pieces for every class.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry import GeometricGraph, knn_edges, random_motion
from .layers import graph_diameter
from .training import fit, predict
from .unet import FlatModel, UNetConfig, UNetModel

__all__ = [
    "SyntheticSample",
    "MOTIF",
    "TEMPLATES",
    "make_synthetic_fold_dataset",
    "SyntheticConfig",
    "compare_models",
    "matched_flat_width",
]

# An irregular 6-point cluster of diameter < 2.
MOTIF = np.array(
    [
        [0.0, 0.0, 0.0],
        [1.0, 0.0, 0.0],
        [0.0, 0.8, 0.0],
        [0.0, 0.0, 0.6],
        [0.7, 0.7, 0.3],
        [-0.4, 0.3, 0.5],
    ]
)
MOTIF = MOTIF - MOTIF.mean(axis=0)

SPACING = 5.0

# Motif centroid layouts; consecutive centroids are SPACING apart in all four.
TEMPLATES = {
    "line": np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]], dtype=float),
    "square": np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], dtype=float),
    "tetrahedron": np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float) / math.sqrt(8),
    "zigzag": np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [2, 1, 0]], dtype=float),
}
TEMPLATE_ORDER = ("line", "square", "tetrahedron", "zigzag")


@dataclass
class SyntheticSample:
    graph: GeometricGraph
    label: int


def _template(c: int) -> np.ndarray:
    if c < len(TEMPLATE_ORDER):
        return TEMPLATES[TEMPLATE_ORDER[c]]
    # Extra classes: bend the zigzag by a class-dependent angle.
    t = 0.3 + 0.25 * (c - len(TEMPLATE_ORDER))
    return np.array([[0, 0, 0], [1, 0, 0], [1 + math.cos(t), math.sin(t), 0], [2 + math.cos(t), math.sin(t), 0]])


def make_synthetic_fold_dataset(
    num_classes: int = 4,
    per_class: int = 50,
    seed: int = 0,
    noise: float = 0.05,
    knn: int = 5,
) -> list[SyntheticSample]:
    if num_classes < 2:
        raise ValueError("need at least two classes")
    rng = np.random.default_rng(seed)
    samples = []
    for c in range(num_classes):
        centroids = _template(c) * SPACING
        for _ in range(per_class):
            pieces = [MOTIF + ctr for ctr in centroids]
            x = np.vstack(pieces) + rng.normal(scale=noise, size=(len(pieces) * len(MOTIF), 3))
            motion = random_motion(rng, 3, proper=True)
            x = x @ motion.rotation.T + motion.translation
            n = len(x)
            g = GeometricGraph(coords=x, edges=knn_edges(x, knn), scalars=np.ones((n, 1)), vectors=np.zeros((n, 1, 3)))
            samples.append(SyntheticSample(g, c))
    order = rng.permutation(len(samples))
    return [samples[i] for i in order]


@dataclass
class SyntheticConfig:
    num_classes: int = 4
    train_per_class: int = 50
    test_per_class: int = 25
    epochs: int = 30
    lr: float = 3e-3
    batch_size: int = 20
    pool_kind: str = "sparse"
    layer_kind: str = "invariant"
    feature_width: int = 16
    hidden: int = 32
    flat_layers: int = 6
    seeds: tuple[int, ...] = (0, 1, 2)


def matched_flat_width(cfg: SyntheticConfig, target: int, cutoff: float) -> int:
    """Feature width whose flat model parameter count is closest to ``target``."""
    best, best_gap = 1, None
    for w in range(1, 257):
        m = FlatModel(cfg.layer_kind, cfg.flat_layers, 1, w, cfg.num_classes, cutoff,
                      readout_width=cfg.feature_width, hidden=cfg.hidden)
        gap = abs(m.num_parameters() - target)
        if best_gap is None or gap < best_gap:
            best, best_gap = w, gap
        if m.num_parameters() > target:
            break
    return best


@dataclass
class ComparisonResult:
    unet_accuracy: list[float] = field(default_factory=list)
    flat_accuracy: list[float] = field(default_factory=list)
    unet_parameters: int = 0
    flat_parameters: int = 0
    flat_width: int = 0
    diverged: list[str] = field(default_factory=list)

    @property
    def gap(self) -> float:
        return float(np.mean(self.unet_accuracy) - np.mean(self.flat_accuracy))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gap"] = self.gap
        return d


def compare_models(cfg: SyntheticConfig = SyntheticConfig()) -> ComparisonResult:
    """Train both models per seed on fresh data and report test accuracy (percent)."""
    res = ComparisonResult()
    for seed in cfg.seeds:
        train = make_synthetic_fold_dataset(cfg.num_classes, cfg.train_per_class, seed=10_000 + seed)
        test = make_synthetic_fold_dataset(cfg.num_classes, cfg.test_per_class, seed=20_000 + seed)
        cutoff = max(graph_diameter(*(s.graph for s in train[:20])), 1.0)
        ucfg = UNetConfig(
            levels=3, layers_per_level=2, pool_kind=cfg.pool_kind, layer_kind=cfg.layer_kind,
            feature_width=cfg.feature_width, readout_width=cfg.feature_width, hidden=cfg.hidden,
            num_classes=cfg.num_classes, cutoff=cutoff,
        )
        unet = UNetModel(ucfg, in_width=1, seed=seed)
        width = matched_flat_width(cfg, unet.num_parameters(), cutoff)
        flat = FlatModel(cfg.layer_kind, cfg.flat_layers, 1, width, cfg.num_classes, cutoff,
                         readout_width=cfg.feature_width, hidden=cfg.hidden, aggr_norm=ucfg.aggr_norm, seed=seed)
        res.unet_parameters, res.flat_parameters, res.flat_width = unet.num_parameters(), flat.num_parameters(), width
        for name, model, bucket in (("unet", unet, res.unet_accuracy), ("flat", flat, res.flat_accuracy)):
            log = fit(model, [s.graph for s in train], [s.label for s in train], cfg.epochs, cfg.lr,
                      batch_size=cfg.batch_size, rng=np.random.default_rng(seed))
            if log.diverged:
                res.diverged.append(f"{name}:{seed}")
            pred = predict(model, [s.graph for s in test])
            bucket.append(100.0 * float(np.mean(pred == np.array([s.label for s in test]))))
    return res
