import numpy as np
import pytest

from geounet import autodiff as ad
from geounet.geometry import GeometricGraph, knn_edges
from geounet.unet import FlatModel, UNetConfig, UNetModel, decode, encode, forward


def graph(seed=0, n=30):
    rng = np.random.default_rng(seed)
    x = rng.normal(scale=3.0, size=(n, 3))
    return GeometricGraph(coords=x, edges=knn_edges(x, 6), scalars=rng.normal(size=(n, 2)))


def test_config_validation_and_json():
    cfg = UNetConfig(levels=2, pool_kind="point", decoder_layers_per_level=1)
    assert UNetConfig.from_json(cfg.to_json()) == cfg
    assert cfg.decoder_depth == 1
    for bad in (dict(levels=0), dict(fps_ratio=0.0), dict(pool_kind="topk"), dict(layer_kind="x"),
                dict(decoder_layers_per_level=0), dict(layers_per_level=0)):
        with pytest.raises(ValueError):
            UNetConfig(**bad)


@pytest.mark.parametrize("pool", ["point", "sparse"])
@pytest.mark.parametrize("kind", ["invariant", "equivariant"])
def test_encode_decode_shapes(pool, kind):
    cfg = UNetConfig(levels=3, pool_kind=pool, layer_kind=kind, feature_width=8, hidden=16, readout_width=8)
    model = UNetModel(cfg, in_width=2)
    g = graph()
    bottom, state, caches = encode(g, model)
    assert [c.pooled.num_nodes for c in caches] == [18, 11, 7]
    assert bottom.num_nodes == 7 and state.scalars.shape == (7, 8)
    out = decode(state, caches, model)
    assert out.scalars.shape == (30, 8) and out.vectors.shape == (30, 1, 3)
    logits = forward(g, model)
    assert logits.shape == (1, 2) and np.all(np.isfinite(logits.data))


def test_decode_rejects_wrong_cache_count():
    model = UNetModel(UNetConfig(levels=2, feature_width=4, hidden=8), in_width=2)
    _, state, caches = encode(graph(), model)
    with pytest.raises(ValueError):
        decode(state, caches[:1], model)


def test_same_seed_same_model_and_output():
    cfg = UNetConfig(levels=2, feature_width=4, hidden=8)
    a, b = UNetModel(cfg, 2, seed=5), UNetModel(cfg, 2, seed=5)
    assert np.array_equal(a.store.flat(), b.store.flat())
    g = graph(1)
    assert np.array_equal(forward(g, a).data, forward(g, b).data)
    assert not np.array_equal(UNetModel(cfg, 2, seed=6).store.flat(), a.store.flat())


def test_parameter_count_grows_with_levels():
    small = UNetModel(UNetConfig(levels=1, feature_width=4, hidden=8), 2).num_parameters()
    big = UNetModel(UNetConfig(levels=3, feature_width=4, hidden=8), 2).num_parameters()
    assert big > small > 0


def test_fill_parameters_start_at_zero():
    model = UNetModel(UNetConfig(levels=2, feature_width=4, hidden=8), 2)
    for fill in model.fills:
        assert np.all(fill.scalar.data == 0) and np.all(fill.vector.data == 0)


def test_single_node_graph_runs():
    g = GeometricGraph(coords=np.zeros((1, 3)), edges=[], scalars=np.ones((1, 2)))
    model = UNetModel(UNetConfig(levels=2, feature_width=4, hidden=8), 2)
    assert forward(g, model).shape == (1, 2)


def test_flat_model_forward_and_grad():
    g = graph(2, 12)
    m = FlatModel("equivariant", 3, 2, 6, 3, cutoff=10.0, hidden=8)
    with ad.Tape() as tape:
        loss = ad.sum_all(forward(g, m))
    grads = ad.backward(loss, tape, m.store)
    assert forward(g, m).shape == (1, 3)
    assert any(np.any(v != 0) for v in grads.values())


def test_ratio_one_keeps_every_node():
    model = UNetModel(UNetConfig(levels=1, fps_ratio=1.0, feature_width=4, hidden=8), 2)
    g = graph(3, 12)
    _, _, caches = encode(g, model)
    assert sorted(caches[0].assignment.centers.tolist()) == list(range(12))


def test_sparse_levels_are_partitions():
    model = UNetModel(UNetConfig(levels=3, feature_width=4, hidden=8), 2)
    _, _, caches = encode(graph(4, 40), model)
    for c in caches:
        assert np.array_equal(c.assignment.column_sums(), np.ones(c.num_original))


def test_zero_parameters_give_finite_output():
    model = UNetModel(UNetConfig(levels=2, feature_width=4, hidden=8), 2)
    model.store.set_flat(np.zeros(model.num_parameters()))
    _, state, caches = encode(graph(), model)
    out = decode(state, caches, model)
    assert np.all(np.isfinite(out.scalars.data)) and out.scalars.shape[0] == 30


def test_encode_states_transform_correctly():
    from geounet.geometry import apply_motion, random_motion

    cfg = UNetConfig(levels=2, layer_kind="equivariant", pool_kind="point", feature_width=4, hidden=8)
    model = UNetModel(cfg, 2)
    g = graph(6, 20)
    m = random_motion(np.random.default_rng(6))
    _, sa, ca = encode(g, model)
    _, sb, cb = encode(apply_motion(g, m), model)
    assert np.max(np.abs(sa.scalars.data - sb.scalars.data)) < 1e-9
    assert np.max(np.abs(sa.vectors.data @ m.rotation.T - sb.vectors.data)) < 1e-9
    for x, y in zip(ca, cb):
        assert np.max(np.abs(np.asarray(x.cached_scalars.data) - np.asarray(y.cached_scalars.data))) < 1e-9


def test_logits_ignore_node_order_and_repeat_bitwise():
    cfg = UNetConfig(levels=2, feature_width=4, hidden=8)
    model = UNetModel(cfg, 2)
    g = graph(7, 16)
    # a permutation that keeps every distance tie-free so FPS picks the same points
    perm = np.random.default_rng(7).permutation(16)
    inv = np.argsort(perm)
    h = GeometricGraph(coords=g.coords[perm], edges=inv[g.edges], scalars=g.scalars[perm])
    assert np.max(np.abs(forward(g, model).data - forward(h, model).data)) < 1e-10
    assert np.array_equal(forward(g, model).data, forward(g, model).data)


def test_parameter_count_independent_of_graph_size():
    cfg = UNetConfig(levels=2, feature_width=4, hidden=8)
    a, b = UNetModel(cfg, 2), UNetModel(cfg, 2)
    forward(graph(0, 10), a)
    forward(graph(0, 50), b)
    assert a.num_parameters() == b.num_parameters()
