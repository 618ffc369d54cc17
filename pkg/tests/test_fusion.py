import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from csfmamba.autodiff import ParamStore, Tensor, finite_diff_check, ops, precision
from csfmamba.fusion import (CrossTokenPair, CsfmBlock, cross_selective_scan, exchange_cls,
                             fusion_stack_forward)
from csfmamba.ssm import SsmLayer


def test_exchange_cls_minimal(f64):
    th = np.array([[[1.0], [2.0]]])  # (f_h), (c_h)
    tl = np.array([[[3.0], [4.0]]])  # (f_l), (c_l)
    pair = exchange_cls(th, tl)
    np.testing.assert_array_equal(pair.h.data, [[[3.0], [2.0]]])
    np.testing.assert_array_equal(pair.l.data, [[[1.0], [4.0]]])


def test_exchange_cls_symmetric_input(f64, rng):
    t = rng.standard_normal((2, 5, 3))
    pair = exchange_cls(t, t)
    np.testing.assert_array_equal(pair.h.data, t)
    np.testing.assert_array_equal(pair.l.data, t)


def test_exchange_cls_shape_mismatch(f64, rng):
    with pytest.raises(ValueError):
        exchange_cls(rng.standard_normal((1, 5, 3)), rng.standard_normal((1, 4, 3)))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(2, 9), st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_exchange_cls_involution_and_value_preserving(b, L, D, seed):
    with precision(64):
        r = np.random.default_rng(seed)
        th, tl = r.standard_normal((b, L, D)), r.standard_normal((b, L, D))
        once = exchange_cls(th, tl)
        twice = exchange_cls(once.h, once.l)
        np.testing.assert_array_equal(twice.h.data, th)
        np.testing.assert_array_equal(twice.l.data, tl)
        before = np.sort(np.concatenate([th, tl], axis=1).reshape(-1))
        after = np.sort(np.concatenate([once.h.data, once.l.data], axis=1).reshape(-1))
        np.testing.assert_array_equal(before, after)


def _layer(seed=0, d_inner=4, N=3):
    return SsmLayer(ParamStore(), "ssm", d_inner, N, np.random.default_rng(seed))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 12))
def test_cross_scan_degenerates_bitwise(seed, L):
    with precision(64):
        layer = _layer(seed)
        x = Tensor(np.random.default_rng(seed).standard_normal((2, L, 4)))
        assert cross_selective_scan(x, x, layer).data.tobytes() == layer.scan(x).data.tobytes()


def test_constant_parameters_ignore_other_stream(f64, rng):
    layer = _layer()
    for w in (layer.W_B, layer.W_C, layer.W_dt):
        w.data[...] = 0.0
    x = Tensor(rng.standard_normal((1, 6, 4)))
    o = rng.standard_normal((1, 6, 4))
    o2 = o.copy()
    o2[0, 2, 1] += 1.0
    y1 = cross_selective_scan(x, Tensor(o), layer).data
    y2 = cross_selective_scan(x, Tensor(o2), layer).data
    assert np.max(np.abs(y1 - y2)) == 0.0


def test_zero_self_stream_gives_zero(f64, rng):
    layer = _layer()
    y = cross_selective_scan(Tensor(np.zeros((1, 5, 4))), Tensor(rng.standard_normal((1, 5, 4))), layer)
    np.testing.assert_array_equal(y.data, 0.0)


def test_cross_scan_length_mismatch(f64, rng):
    with pytest.raises(ValueError):
        cross_selective_scan(Tensor(rng.standard_normal((1, 5, 4))), Tensor(rng.standard_normal((1, 4, 4))),
                             _layer())


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 10), st.integers(0, 2**31 - 1), st.data())
def test_cross_scan_causal(L, seed, data):
    t = data.draw(st.integers(0, L - 1))
    with precision(64):
        layer = _layer(seed)
        r = np.random.default_rng(seed)
        x, o = r.standard_normal((1, L, 4)), r.standard_normal((1, L, 4))
        y = cross_selective_scan(Tensor(x), Tensor(o), layer).data
        x2, o2 = x.copy(), o.copy()
        x2[0, t:] += 0.5
        o2[0, t:] -= 0.5
        y2 = cross_selective_scan(Tensor(x2), Tensor(o2), layer).data
        np.testing.assert_array_equal(y[0, :t], y2[0, :t])


def _fusion_block(seed=0, tied=False, D=8, Di=6, N=4):
    store = ParamStore()
    return CsfmBlock(store, "fusion.0", D, Di, N, np.random.default_rng(seed), tied=tied), store


def test_block_shapes(f64, rng):
    blk, _ = _fusion_block()
    pair = CrossTokenPair(Tensor(rng.standard_normal((2, 5, 8))), Tensor(rng.standard_normal((2, 5, 8))))
    out = blk(pair)
    assert out.h.shape == (2, 5, 8) and out.l.shape == (2, 5, 8)


def test_block_tied_symmetric(f64, rng):
    blk, _ = _fusion_block(tied=True)
    t = Tensor(rng.standard_normal((1, 5, 8)))
    out = blk(CrossTokenPair(t, t))
    np.testing.assert_array_equal(out.h.data, out.l.data)


def test_block_untied_by_default(f64):
    blk, store = _fusion_block()
    assert blk.h_dir is not blk.l_dir
    assert "fusion.0.h.ssm.A_log" in store and "fusion.0.l.ssm.A_log" in store


def test_block_output_is_layer_normalised(f64, rng):
    blk, _ = _fusion_block()
    out = blk(CrossTokenPair(Tensor(rng.standard_normal((1, 5, 8))), Tensor(rng.standard_normal((1, 5, 8)))))
    np.testing.assert_allclose(out.h.data.mean(axis=-1), 0.0, atol=1e-12)


def test_block_cross_sensitivity(f64, rng):
    blk, _ = _fusion_block(3)
    h, l = rng.standard_normal((1, 6, 8)), rng.standard_normal((1, 6, 8))
    y = blk(CrossTokenPair(Tensor(h), Tensor(l))).h.data
    l2 = l.copy()
    l2[0, 1, 2] += 1e-3
    y2 = blk(CrossTokenPair(Tensor(h), Tensor(l2))).h.data
    assert np.max(np.abs(y - y2)) > 1e-9


def test_fusion_stack_composition(f64, rng):
    b1, _ = _fusion_block(1)
    b2, _ = _fusion_block(2)
    pair = CrossTokenPair(Tensor(rng.standard_normal((1, 5, 8))), Tensor(rng.standard_normal((1, 5, 8))))
    same = fusion_stack_forward(pair, [])
    assert same.h is pair.h and same.l is pair.l
    two = fusion_stack_forward(pair, [b1, b2])
    manual = b2(b1(pair))
    np.testing.assert_array_equal(two.h.data, manual.h.data)
    np.testing.assert_array_equal(two.l.data, manual.l.data)
    again = fusion_stack_forward(pair, [b1, b2])
    np.testing.assert_array_equal(two.h.data, again.h.data)


def test_block_gradients_match_finite_differences(rng):
    with precision(64):
        blk, store = _fusion_block(5, D=4, Di=4, N=3)
        xh = Tensor(rng.standard_normal((2, 4, 4)), requires_grad=True, name="x_h")
        xl = Tensor(rng.standard_normal((2, 4, 4)), requires_grad=True, name="x_l")
        wh, wl = rng.standard_normal((2, 4, 4)), rng.standard_normal((2, 4, 4))

        def fn():
            out = blk(CrossTokenPair(xh, xl))
            return ops.sum(out.h * wh) + ops.sum(out.l * wl)

        params = list(store) + [("x_h", xh), ("x_l", xl)]
        rep = finite_diff_check(fn, params, numeric_dtype=np.longdouble)
    assert rep.passed, (rep.max_rel_error, rep.worst)
