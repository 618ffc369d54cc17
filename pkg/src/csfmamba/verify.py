"""Finite-difference checks for every primitive and for the whole tiny model."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, finite_diff_check, ops, precision
from .model import CSFMamba, tiny_config
from .ssm import ssm_scan

TOLERANCE = 1e-4


def _leaf(rng, shape, name, positive=False, away_from_zero=False):
    v = rng.standard_normal(shape)
    if positive:
        v = np.abs(v) + 0.5
    if away_from_zero:
        v = np.where(np.abs(v) < 0.2, v + np.sign(v + 1e-12) * 0.3, v)
    return Tensor(v, requires_grad=True, name=name)


def _weighted(out: Tensor, w: np.ndarray) -> Tensor:
    """Random projection to a scalar so every output element matters."""
    return ops.sum(ops.multiply(out, w))


def primitive_cases(seed: int = 0):
    """(name, fn, leaves) triples; fn() -> scalar Tensor. Build inside 64-bit precision."""
    rng = np.random.default_rng(seed)
    cases = []

    def case(name, build, leaves):
        out = build()
        w = rng.standard_normal(out.shape)
        cases.append((name, lambda: _weighted(build(), w), leaves))

    a, b = _leaf(rng, (3, 4), "a"), _leaf(rng, (4,), "b")
    case("add", lambda: ops.add(a, b), [a, b])
    case("sub", lambda: ops.sub(a, b), [a, b])
    case("multiply", lambda: ops.multiply(a, b), [a, b])
    m1, m2 = _leaf(rng, (2, 3, 4), "m1"), _leaf(rng, (4, 5), "m2")
    case("matmul", lambda: ops.matmul(m1, m2), [m1, m2])
    x, w, bias = _leaf(rng, (2, 3, 6), "x"), _leaf(rng, (5, 6), "w"), _leaf(rng, (5,), "bias")
    case("linear", lambda: ops.linear(x, w, bias), [x, w, bias])
    xi, wk, bk = _leaf(rng, (2, 3, 6, 5), "x"), _leaf(rng, (4, 3, 3, 3), "w"), _leaf(rng, (4,), "b")
    case("conv2d", lambda: ops.conv2d(xi, wk, bk, stride=2, padding=1), [xi, wk, bk])
    xv, wv = _leaf(rng, (2, 1, 7, 4, 4), "x"), _leaf(rng, (2, 1, 3, 3, 3), "w")
    case("conv3d", lambda: ops.conv3d(xv, wv, None, stride=(2, 1, 1), padding=(0, 1, 1)), [xv, wv])
    xb, g, be = _leaf(rng, (8, 3, 2, 2), "x"), _leaf(rng, (3,), "gamma"), _leaf(rng, (3,), "beta")
    rm, rv = Tensor(np.zeros(3)), Tensor(np.ones(3))
    case("batchnorm_train", lambda: ops.batchnorm(xb, g, be, rm, rv, True), [xb, g, be])
    rm2, rv2 = Tensor(rng.standard_normal(3)), Tensor(np.abs(rng.standard_normal(3)) + 0.5)
    case("batchnorm_eval", lambda: ops.batchnorm(xb, g, be, rm2, rv2, False), [xb, g, be])
    e = _leaf(rng, (3, 5), "x", away_from_zero=True)
    case("relu", lambda: ops.relu(e), [e])
    case("silu", lambda: ops.silu(e), [e])
    case("softplus", lambda: ops.softplus(e), [e])
    case("exp", lambda: ops.exp(e), [e])
    case("reciprocal", lambda: ops.reciprocal(e), [e])
    p = _leaf(rng, (3, 5), "x", positive=True)
    case("log", lambda: ops.log(p), [p])
    c1, c2 = _leaf(rng, (2, 3), "c1"), _leaf(rng, (2, 2), "c2")
    case("concat", lambda: ops.concat([c1, c2], axis=1), [c1, c2])
    s = _leaf(rng, (4, 5, 3), "x")
    case("slice", lambda: s[1:3, ::2, -1], [s])
    case("flatten", lambda: ops.flatten(s), [s])
    case("transpose", lambda: ops.transpose(s, (2, 0, 1)), [s])
    case("mean", lambda: ops.mean(s, axis=1), [s])
    case("sum", lambda: ops.sum(s, axis=(0, 2)), [s])
    lx, lg, lb = _leaf(rng, (3, 6), "x"), _leaf(rng, (6,), "gamma"), _leaf(rng, (6,), "beta")
    case("layernorm", lambda: ops.layernorm(lx, lg, lb), [lx, lg, lb])
    case("softmax", lambda: ops.softmax(lx, axis=-1), [lx])
    cond = rng.random((3, 5)) > 0.5
    wa, wb = _leaf(rng, (3, 5), "a"), _leaf(rng, (5,), "b")
    case("where", lambda: ops.where(cond, wa, wb), [wa, wb])
    logits, tgt = _leaf(rng, (4, 3), "logits"), np.array([0, 2, 1, 2])
    cases.append(("softmax_cross_entropy", lambda: ops.softmax_cross_entropy(logits, tgt), [logits]))
    sx = _leaf(rng, (2, 6, 3), "x")
    sd = Tensor(np.abs(rng.standard_normal((2, 6, 3))) + 0.1, requires_grad=True, name="delta")
    sA = Tensor(-np.exp(rng.uniform(-1, 1, (3, 4))), requires_grad=True, name="A")
    sB, sC, sD = _leaf(rng, (2, 6, 4), "B"), _leaf(rng, (2, 6, 4), "C"), _leaf(rng, (3,), "D")
    case("ssm_scan", lambda: ssm_scan(sx, sd, sA, sB, sC, sD), [sx, sd, sA, sB, sC, sD])
    return cases


def check_primitives(seed: int = 0, eps: float = 1e-5, tolerance: float = TOLERANCE):
    """{primitive name: GradCheckReport}."""
    with precision(64):
        return {name: finite_diff_check(fn, leaves, eps=eps, tolerance=tolerance)
                for name, fn, leaves in primitive_cases(seed)}


def check_model(config=None, seed: int = 0, batch: int = 4, eps: float = 1e-5, tolerance: float = TOLERANCE):
    """End-to-end check of the tiny network (training-mode batchnorm)."""
    with precision(64):
        config = config or tiny_config(seed=seed)
        model = CSFMamba(config)
        rng = np.random.default_rng(seed)
        s = config.patch_size
        xh = rng.standard_normal((batch, s, s, config.c1))
        xl = rng.standard_normal((batch, s, s, config.c2))
        y = (np.arange(batch) % config.num_classes) + 1
        return finite_diff_check(lambda: model.loss(model(xh, xl, training=True), y), model.store,
                                 eps=eps, tolerance=tolerance, numeric_dtype=np.longdouble)
