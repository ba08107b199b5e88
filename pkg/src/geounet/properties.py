"""Randomised symmetry and gradient checks over the whole model stack.

Both suites return plain dicts (JSON-ready) with the worst error seen per
check and the tolerance it is held to.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .geometry import GeometricGraph, apply_motion, knn_edges, random_motion
from .layers import LayerState, apply_layer, make_layer
from .pooling import UnpoolFill, pool_graph, unpool
from .training import cross_entropy
from .unet import UNetConfig, UNetModel, forward

__all__ = ["equivariance_suite", "gradient_check", "random_graph", "LAYER_TOL", "MODEL_TOL", "GRAD_TOL"]

LAYER_TOL = 1e-9
MODEL_TOL = 1e-8
GRAD_TOL = 1e-5


def random_graph(rng: np.random.Generator, n: int = 14, width: int = 3, channels: int = 2, k: int = 4) -> GeometricGraph:
    x = rng.normal(scale=2.0, size=(n, 3))
    return GeometricGraph(
        coords=x,
        edges=knn_edges(x, k),
        scalars=rng.normal(size=(n, width)),
        vectors=rng.normal(size=(n, channels, 3)),
    )


def _err(a, b) -> float:
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b)))) if np.size(a) else 0.0


def equivariance_suite(seed: int = 0, motions: int = 20) -> dict:
    """Check every stage under ``motions`` random rigid motions, half of them improper."""
    rng = np.random.default_rng(seed)
    worst: dict[str, float] = {}

    def note(key, e):
        worst[key] = max(worst.get(key, 0.0), e)

    store = ad.ParamStore(seed)
    layers = {
        kind: make_layer(kind, store, kind, 3, 5, 2, 3, cutoff=6.0, hidden=16) for kind in ("invariant", "equivariant")
    }
    point_mlp = ad.MLP(store, "pool", 3, 3, 16)
    fill = UnpoolFill(store, "fill", 3, 2)
    fill.scalar.data[...] = rng.normal(size=fill.scalar.shape)
    fill.vector.data[...] = rng.normal(size=fill.vector.shape)
    models = {
        (lk, pk): UNetModel(
            UNetConfig(levels=2, layers_per_level=1, pool_kind=pk, layer_kind=lk, feature_width=8,
                       vector_channels=2, readout_width=8, hidden=16, num_classes=3, cutoff=8.0),
            in_width=3, in_channels=2, seed=seed,
        )
        for lk in ("invariant", "equivariant")
        for pk in ("point", "sparse")
    }

    for t in range(motions):
        g = random_graph(rng)
        m = random_motion(rng, 3, proper=bool(t % 2))
        h = apply_motion(g, m)
        R = m.rotation
        for kind, p in layers.items():
            a = apply_layer(g, LayerState.from_graph(g), p)
            b = apply_layer(h, LayerState.from_graph(h), p)
            note(f"layer.{kind}.scalars", _err(a.scalars.data, b.scalars.data))
            note(f"layer.{kind}.vectors", _err(a.vectors.data @ R.T, b.vectors.data))
        for kind in ("point", "sparse"):
            mlp = point_mlp if kind == "point" else None
            ra, sa, va = pool_graph(g, kind, mlp=mlp)
            rb, sb, vb = pool_graph(h, kind, mlp=mlp)
            note(f"pool.{kind}.selection", float(not np.array_equal(ra.assignment.centers, rb.assignment.centers)))
            note(f"pool.{kind}.coords", _err(ra.pooled.coords @ R.T + m.translation, rb.pooled.coords))
            note(f"pool.{kind}.scalars", _err(sa.data, sb.data))
            note(f"pool.{kind}.vectors", _err(va.data @ R.T, vb.data))
            ua_s, ua_v = unpool(ra.pooled.scalars, ra.pooled.vectors, ra, fill)
            ub_s, ub_v = unpool(rb.pooled.scalars, rb.pooled.vectors, rb, fill)
            note(f"unpool.{kind}.scalars", _err(ua_s.data, ub_s.data))
            note(f"unpool.{kind}.vectors", _err(ua_v.data @ R.T, ub_v.data))
        for (lk, pk), model in models.items():
            note(f"unet.{lk}.{pk}.logits", _err(forward(g, model).data, forward(h, model).data))

    checks = {
        key: {"max_error": e, "tolerance": MODEL_TOL if key.startswith("unet.") else LAYER_TOL,
              "passed": e <= (MODEL_TOL if key.startswith("unet.") else LAYER_TOL)}
        for key, e in sorted(worst.items())
    }
    return {"seed": seed, "motions": motions, "checks": checks, "passed": all(c["passed"] for c in checks.values())}


def gradient_check(seed: int = 0, points: int = 20, h: float = 1e-6, coords_per_point: int = 3) -> dict:
    """Analytic vs central-difference gradients of a cross-entropy loss through a 2-level U-Net.

    At each point a fresh model and graph are drawn; the check compares the
    directional derivative along a random unit direction in parameter space
    and ``coords_per_point`` single-parameter partials.  The error measure
    is ``|analytic - numeric| / max(1, |analytic|)``.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    rows = []
    for t in range(points):
        kind = ("point", "sparse")[t % 2]
        layer_kind = ("invariant", "equivariant")[(t // 2) % 2]
        cfg = UNetConfig(levels=2, layers_per_level=1, pool_kind=kind, layer_kind=layer_kind, feature_width=6,
                         vector_channels=2, readout_width=6, hidden=8, num_classes=3, cutoff=8.0, aggr_norm=4.0)
        model = UNetModel(cfg, in_width=3, in_channels=2, seed=int(rng.integers(1 << 31)))
        for fill in model.fills:
            fill.scalar.data[...] = rng.normal(scale=0.5, size=fill.scalar.shape)
            fill.vector.data[...] = rng.normal(scale=0.5, size=fill.vector.shape)
        g = random_graph(rng, n=12)
        label = [int(rng.integers(3))]

        def loss_value() -> float:
            return float(cross_entropy(forward(g, model), label).data)

        with ad.Tape() as tape:
            loss = cross_entropy(forward(g, model), label)
        grads = ad.backward(loss, tape, model.store)
        theta = model.store.flat()
        analytic = np.concatenate([grads[k].ravel() for k in model.store.params])

        u = rng.normal(size=theta.size)
        u /= np.linalg.norm(u)
        probes = [("direction", u)]
        for i in rng.choice(theta.size, size=coords_per_point, replace=False):
            e = np.zeros(theta.size)
            e[i] = 1.0
            probes.append((f"coord{int(i)}", e))
        for name, d in probes:
            model.store.set_flat(theta + h * d)
            fp = loss_value()
            model.store.set_flat(theta - h * d)
            fm = loss_value()
            model.store.set_flat(theta)
            a = float(analytic @ d)
            fd = (fp - fm) / (2 * h)
            rel = abs(a - fd) / max(1.0, abs(a))
            worst = max(worst, rel)
            rows.append({"point": t, "pool": kind, "layer": layer_kind, "probe": name, "analytic": a,
                         "numeric": fd, "rel_error": rel})
    return {"seed": seed, "points": points, "step": h, "max_rel_error": worst, "tolerance": GRAD_TOL,
            "passed": worst < GRAD_TOL, "probes": rows}
