"""Small full-batch / mini-batch classification loop shared by the benchmarks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .geometry import GeometricGraph
from .unet import forward


def cross_entropy(logits: ad.Tensor, labels: Sequence[int]) -> ad.Tensor:
    """Mean negative log-likelihood of integer ``labels`` under row ``logits``."""
    labels = np.asarray(labels, dtype=np.int64)
    onehot = np.zeros(logits.shape)
    onehot[np.arange(len(labels)), labels] = 1.0
    return ad.scale(ad.sum_all(ad.hadamard(ad.log_softmax(logits), onehot)), -1.0 / len(labels))


def batch_logits(model, graphs: Sequence[GeometricGraph]) -> ad.Tensor:
    return ad.concat([forward(g, model) for g in graphs], axis=0)


def predict(model, graphs: Sequence[GeometricGraph]) -> np.ndarray:
    return np.argmax(batch_logits(model, graphs).data, axis=1)


@dataclass
class FitLog:
    losses: list[float] = field(default_factory=list)
    diverged: bool = False


def fit(
    model,
    graphs: Sequence[GeometricGraph],
    labels: Sequence[int],
    epochs: int,
    lr: float = 1e-3,
    batch_size: int | None = None,
    rng: np.random.Generator | None = None,
) -> FitLog:
    """Adam on cross-entropy; stops and flags divergence on a non-finite loss."""
    log = FitLog()
    labels = np.asarray(labels)
    n = len(graphs)
    bs = n if batch_size is None else batch_size
    for _ in range(epochs):
        order = np.arange(n) if rng is None or bs >= n else rng.permutation(n)
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            try:
                with ad.Tape() as tape:
                    loss = cross_entropy(batch_logits(model, [graphs[i] for i in idx]), labels[idx])
                grads = ad.backward(loss, tape, model.store)
                ad.adam_step(model.store, grads, lr)
            except FloatingPointError:
                log.diverged = True
                return log
            log.losses.append(float(loss.data))
    return log
