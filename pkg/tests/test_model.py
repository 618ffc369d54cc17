import numpy as np
import pytest

from csfmamba.autodiff import ParamStore, Tape, Tensor, backward, ops, precision
from csfmamba.model import (CSFMamba, ModelConfig, add_cls_pos, count_params_flops, cross_entropy, sincos_table,
                            tiny_config, tokenize)
from csfmamba.nn import Conv, Linear


def _warm(model, rng, n=4):
    """One training-mode pass so eval-mode batchnorm has running statistics."""
    c = model.config
    model(rng.standard_normal((n, c.patch_size, c.patch_size, c.c1)),
          rng.standard_normal((n, c.patch_size, c.patch_size, c.c2)), training=True)


def _patches(cfg, rng, n):
    s = cfg.patch_size
    return rng.standard_normal((n, s, s, cfg.c1)), rng.standard_normal((n, s, s, cfg.c2))


def test_default_counts_and_tokens():
    cfg = ModelConfig()
    assert cfg.tokens == 121 and cfg.grid == 11
    params, flops = count_params_flops(cfg)
    assert 50_000 <= params <= 500_000
    assert flops > 0


@pytest.mark.parametrize("cfg", [tiny_config(), ModelConfig(),
                                 tiny_config(conv_extractors=False), tiny_config(preprocess=False, c2=1)])
def test_analytic_count_matches_store(cfg):
    params, _ = count_params_flops(cfg)
    assert params == CSFMamba(cfg).store.num_scalars()


def test_layer_param_counts():
    store = ParamStore()
    rng = np.random.default_rng(0)
    Linear(store, "lin", 8, 4, rng)
    assert store.num_scalars() == 36
    store = ParamStore()
    Conv(store, "conv", 2, 4, (3, 3), rng)
    assert store.num_scalars() == 76


def test_extractor_shapes(f64, rng):
    cfg = tiny_config()
    model = CSFMamba(cfg)
    ph, pl = _patches(cfg, rng, 3)
    fh = model.hsi_extract(ph, training=True)
    fl = model.lidar_extract(pl, training=True)
    assert fh.shape == fl.shape == (3, cfg.token_width, cfg.patch_size, cfg.patch_size)


def test_default_hsi_extract_shape(rng):
    cfg = ModelConfig()
    model = CSFMamba(cfg)
    ph, _ = _patches(cfg, rng, 2)
    assert model.hsi_extract(ph.astype(np.float32), training=True).shape == (2, 64, 11, 11)


def test_zero_patch_batchnorm_guard(f64):
    cfg = tiny_config()
    model = CSFMamba(cfg)
    zeros = np.zeros((1, cfg.patch_size, cfg.patch_size, cfg.c1))
    # exactly zero before normalization (no conv bias)
    v = model.h_conv3d(Tensor(zeros.transpose(0, 3, 1, 2)[:, None]))
    np.testing.assert_array_equal(v.data, 0.0)
    with pytest.raises(ValueError):
        model.hsi_extract(zeros, training=True)
    with pytest.raises(ValueError):
        model.hsi_extract(zeros, training=False)
    _warm(model, np.random.default_rng(0))
    out = model.hsi_extract(zeros, training=False)
    assert np.all(np.isfinite(out.data))


def test_tokenize_identity(f64, rng):
    cfg = tiny_config()
    model = CSFMamba(cfg)
    tok = model.h_tok
    D = cfg.token_width
    tok.conv.weight.data[...] = 0.0
    tok.conv.weight.data[:, :, 1, 1] = np.eye(D)
    tok.conv.bias.data[...] = 0.0
    tok.proj.weight.data[...] = np.eye(D)
    tok.proj.bias.data[...] = 0.0
    f = rng.standard_normal((2, D, 5, 5))
    t = tokenize(Tensor(f), tok).data
    assert t.shape == (2, 25, D)
    for i in (0, 7, 24):
        np.testing.assert_allclose(t[:, i], f[:, :, i // 5, i % 5], atol=1e-14)


def test_sincos_table_layout():
    T = sincos_table(11, 64)
    assert T.shape == (122, 64)
    np.testing.assert_array_equal(T[0, 0::2], 0.0)
    np.testing.assert_array_equal(T[0, 1::2], 1.0)
    np.testing.assert_array_equal(T[-1], 0.0)
    # token 13 sits at grid cell (1, 2): row half encodes 1, column half encodes 2
    np.testing.assert_allclose(T[13, 0], np.sin(1.0))
    np.testing.assert_allclose(T[13, 32], np.sin(2.0))
    assert np.all(np.abs(T) <= 1)


def test_cls_row_zero_for_fresh_model(f64, rng):
    cfg = tiny_config()
    model = CSFMamba(cfg)
    seq = add_cls_pos(Tensor(rng.standard_normal((2, cfg.tokens, cfg.token_width))), model.h_tok)
    assert seq.shape == (2, cfg.tokens + 1, cfg.token_width)
    np.testing.assert_array_equal(seq.data[:, -1], 0.0)


def test_probabilities_sum_to_one(f64, rng):
    cfg = tiny_config()
    model = CSFMamba(cfg)
    out = model(*_patches(cfg, rng, 5), training=True)
    assert out.probs.shape == (5, cfg.num_classes)
    np.testing.assert_allclose(out.probs.data.sum(axis=1), 1.0, atol=1e-6)


def test_head_permutation_equivariance(f64, rng):
    cfg = tiny_config()
    model = CSFMamba(cfg)
    _warm(model, rng)
    ph, pl = _patches(cfg, rng, 3)
    p = model(ph, pl).probs.data
    perm = np.array([2, 0, 1])
    model.head.weight.data = model.head.weight.data[perm]
    model.head.bias.data = model.head.bias.data[perm]
    np.testing.assert_allclose(model(ph, pl).probs.data, p[:, perm], atol=1e-15)


def test_gradient_reaches_both_inputs(f64, rng):
    cfg = tiny_config()
    model = CSFMamba(cfg)
    ph, pl = _patches(cfg, rng, 3)
    th, tl = Tensor(ph, requires_grad=True), Tensor(pl, requires_grad=True)
    with Tape() as tape:
        loss = model.loss(model(th, tl, training=True), np.array([1, 2, 3]))
    backward(loss, tape)
    assert np.abs(th.grad).max() > 0 and np.abs(tl.grad).max() > 0


def test_eval_mode_is_per_sample(f64, rng):
    cfg = tiny_config()
    model = CSFMamba(cfg)
    _warm(model, rng)
    ph, pl = _patches(cfg, rng, 4)
    batch = model(ph, pl).logits.data
    single = np.concatenate([model(ph[i:i + 1], pl[i:i + 1]).logits.data for i in range(4)])
    np.testing.assert_allclose(batch, single, atol=1e-12)


def test_missing_modality_rejected(f64, rng):
    cfg = tiny_config()
    with pytest.raises(ValueError):
        CSFMamba(cfg)(_patches(cfg, rng, 2)[0], None)


def test_ablations_forward(f64, rng):
    for cfg in (tiny_config(conv_extractors=False), tiny_config(cross_state=False),
                tiny_config(preprocess=False, c2=1)):
        model = CSFMamba(cfg)
        out = model(*_patches(cfg, rng, 3), training=True)
        assert out.probs.shape == (3, cfg.num_classes)


def test_no_cross_state_ignores_other_modality_features(f64, rng):
    """Without fusion, the HSI CLS token cannot see LiDAR input."""
    cfg = tiny_config(cross_state=False)
    model = CSFMamba(cfg)
    _warm(model, rng)
    ph, pl = _patches(cfg, rng, 2)
    a = model(ph, pl).cls_h.data
    b = model(ph, pl + 1.0).cls_h.data
    np.testing.assert_array_equal(a, b)


def test_loss_values(f64):
    probs = np.eye(4)[[1]]
    assert float(cross_entropy(probs, [2]).data) == 0.0
    assert float(cross_entropy(np.full(4, 0.25), [3]).data) == pytest.approx(np.log(4), abs=1e-12)
    two = np.stack([np.eye(4)[0], np.full(4, 0.25)])
    assert float(cross_entropy(two, [1, 2]).data) == pytest.approx(np.log(4) / 2, abs=1e-12)
    with pytest.raises(ValueError):
        cross_entropy(probs, [5])


def test_loss_matches_fused_cross_entropy(f64, rng):
    cfg = tiny_config()
    model = CSFMamba(cfg)
    out = model(*_patches(cfg, rng, 4), training=True)
    y = np.array([1, 3, 2, 1])
    assert float(model.loss(out, y).data) == pytest.approx(float(cross_entropy(out.probs, y).data), rel=1e-12)


def test_deterministic_init():
    a = CSFMamba(tiny_config(seed=4)).store.state()
    b = CSFMamba(tiny_config(seed=4)).store.state()
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(patch_size=10)
    with pytest.raises(ValueError):
        ModelConfig(token_width=30)
    with pytest.raises(ValueError):
        ModelConfig(token_count=100)
    with pytest.raises(ValueError):
        ModelConfig.from_dict({"width": 3})
    assert ModelConfig.from_dict(ModelConfig().to_dict()) == ModelConfig()


def test_float32_default_dtype(rng):
    with precision(32):
        cfg = tiny_config()
        model = CSFMamba(cfg)
        ph, pl = _patches(cfg, rng, 2)
        out = model(ph.astype(np.float32), pl.astype(np.float32), training=True)
    assert out.logits.dtype == np.float32
    assert all(p.dtype == np.float32 for _, p in model.store)
