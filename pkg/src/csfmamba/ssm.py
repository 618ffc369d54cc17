"""Selective state-space layer: parameter generation, discretization, scan.

Shapes, with optional leading batch dims written as ``...``:

    x, delta      (..., L, D_in)
    A             (D_in, N)        diagonal transition, strictly negative
    B, C          (..., L, N)      shared across channels
    Abar, Bbar    (..., L, D_in, N)
    D             (D_in,)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ParamStore, Tensor, ops, primitive, uniform_fan_in
from .nn import LayerNorm, Linear

ORACLE_MAX_LEN = 32
ORACLE_MAX_STATE = 8


@dataclass
class ScanSteps:
    Abar: np.ndarray
    Bbar: np.ndarray
    C: np.ndarray
    delta: np.ndarray | None = None


def discretize(A, B, delta):
    """Zero-order-hold discretization for a diagonal A.

    Abar = exp(delta * A) and Bbar = expm1(delta * A) / A * B, which is the
    diagonal form of (dA)^-1 (exp(dA) - I) dB. delta = 0 gives (1, 0).
    """
    A, B, delta = np.asarray(A), np.asarray(B), np.asarray(delta)
    if np.any(A >= 0):
        raise ValueError("discretize needs A < 0 elementwise")
    if np.any(delta < 0):
        raise ValueError("discretize needs delta >= 0")
    dA = delta[..., None] * A
    Abar = np.exp(dA)
    Bbar = np.expm1(dA) / A * B[..., None, :]
    return Abar, Bbar


def _recurrence(x, Abar, Bbar):
    L = x.shape[-2]
    H = np.empty_like(Bbar)
    h = np.zeros_like(Bbar[..., 0, :, :])
    for t in range(L):
        h = Abar[..., t, :, :] * h + Bbar[..., t, :, :] * x[..., t, :, None]
        H[..., t, :, :] = h
    return H


def _check_steps(x, steps, D):
    x = np.asarray(x)
    if steps.Abar.shape != steps.Bbar.shape or steps.Abar.shape[:-1] != x.shape:
        raise ValueError(f"scan shape mismatch: x {x.shape}, Abar {steps.Abar.shape}, Bbar {steps.Bbar.shape}")
    if steps.C.shape[:-1] != x.shape[:-1] or steps.C.shape[-1] != steps.Abar.shape[-1]:
        raise ValueError(f"scan shape mismatch: C {steps.C.shape}")
    if np.shape(D) != x.shape[-1:]:
        raise ValueError(f"residual D must have shape {x.shape[-1:]}, got {np.shape(D)}")
    return x


def selective_scan(x, steps: ScanSteps, D) -> np.ndarray:
    """h_t = Abar_t * h_{t-1} + Bbar_t * x_t, y_t = <C_t, h_t> + D * x_t, h_0 = 0."""
    x = _check_steps(x, steps, D)
    H = _recurrence(x, steps.Abar, steps.Bbar)
    return np.einsum("...ldn,...ln->...ld", H, steps.C) + D * x


def scan_oracle(x, steps: ScanSteps, D, limit: bool = True) -> np.ndarray:
    """Quadratic reference: y_t = sum_{j<=t} C_t (prod_{i=j+1..t} Abar_i) Bbar_j x_j + D x_t.

    Every contribution is materialized separately. ``limit=False`` lifts the
    size bounds (used by the timing benchmark).
    """
    x = _check_steps(x, steps, D)
    L, N = x.shape[-2], steps.Abar.shape[-1]
    if limit and (L > ORACLE_MAX_LEN or N > ORACLE_MAX_STATE):
        raise ValueError(f"scan_oracle is bounded to L <= {ORACLE_MAX_LEN}, N <= {ORACLE_MAX_STATE}")
    y = np.empty_like(x)
    for t in range(L):
        acc = np.zeros_like(steps.Bbar[..., 0, :, :])
        prod = np.ones_like(acc)
        for j in range(t, -1, -1):
            acc = acc + prod * steps.Bbar[..., j, :, :] * x[..., j, :, None]
            prod = prod * steps.Abar[..., j, :, :]
        y[..., t, :] = np.einsum("...dn,...n->...d", acc, steps.C[..., t, :]) + D * x[..., t, :]
    return y


def ssm_scan(x, delta, A, B, C, D) -> Tensor:
    """Differentiable fused discretize + selective scan (inputs batched as (b, L, .))."""
    x, delta, A, B, C, D = (ops._t(v) for v in (x, delta, A, B, C, D))
    if x.ndim != 3 or delta.shape != x.shape:
        raise ValueError(f"ssm_scan expects x and delta of shape (b, L, D_in), got {x.shape}, {delta.shape}")
    if B.shape != C.shape or B.shape[:2] != x.shape[:2] or A.shape != (x.shape[2], B.shape[2]):
        raise ValueError(f"ssm_scan parameter shapes do not match: A {A.shape} B {B.shape} C {C.shape}")
    Ad, dd, Bd, Cd, xd = A.data, delta.data, B.data, C.data, x.data
    Abar, Bbar = discretize(Ad, Bd, dd)
    H = _recurrence(xd, Abar, Bbar)
    y = np.einsum("bldn,bln->bld", H, Cd) + D.data * xd

    def bw(gy):
        L = xd.shape[1]
        gD = (gy * xd).sum(axis=(0, 1))
        gC = np.einsum("bldn,bld->bln", H, gy)
        GH = np.empty_like(H)
        gh = np.zeros_like(H[:, 0])
        for t in range(L - 1, -1, -1):
            gh = gh + gy[:, t, :, None] * Cd[:, t, None, :]
            GH[:, t] = gh
            gh = gh * Abar[:, t]
        Hprev = np.concatenate([np.zeros_like(H[:, :1]), H[:, :-1]], axis=1)
        gAbar = GH * Hprev
        gBbar = GH * xd[..., None]
        gx = gy * D.data + (GH * Bbar).sum(axis=-1)
        em1 = np.expm1(dd[..., None] * Ad)
        Bn = Bd[:, :, None, :]
        gdelta = (gAbar * Abar * Ad + gBbar * Abar * Bn).sum(axis=-1)
        gA = (gAbar * Abar * dd[..., None]
              + gBbar * Bn * (dd[..., None] * Abar * Ad - em1) / (Ad * Ad)).sum(axis=(0, 1))
        gB = (gBbar * em1 / Ad).sum(axis=2)
        return gx, gdelta, gA, gB, gC, gD

    return primitive("ssm_scan", (x, delta, A, B, C, D), y, bw)


class SsmLayer:
    """Learnable A (as A_log), D and the projections producing B, C, delta."""

    def __init__(self, store: ParamStore, name: str, d_inner: int, state_size: int,
                 rng: np.random.Generator):
        self.d_inner, self.state_size = d_inner, state_size
        self.A_log = store.add(f"{name}.A_log", np.log(np.tile(np.arange(1, state_size + 1), (d_inner, 1))))
        self.D = store.add(f"{name}.D", np.ones(d_inner))
        self.W_B = store.add(f"{name}.W_B", uniform_fan_in(rng, (state_size, d_inner), d_inner))
        self.W_C = store.add(f"{name}.W_C", uniform_fan_in(rng, (state_size, d_inner), d_inner))
        self.W_dt = store.add(f"{name}.W_dt", uniform_fan_in(rng, (d_inner, d_inner), d_inner))
        self.b_dt = store.add(f"{name}.b_dt", uniform_fan_in(rng, (d_inner,), d_inner))

    def A(self) -> Tensor:
        return ops.multiply(ops.exp(self.A_log), -1.0)

    def scan(self, x_self, x_other=None) -> Tensor:
        """Run the recurrence over ``x_self`` with B, C, delta generated from ``x_other``.

        ``x_other=None`` is the ordinary selective scan and takes exactly the
        same path as passing ``x_self`` twice.
        """
        if x_other is None:
            x_other = x_self
        if x_other.shape != x_self.shape:
            raise ValueError(f"cross scan length mismatch: {x_self.shape} vs {x_other.shape}")
        single = x_self.ndim == 2
        if single:
            x_self, x_other = x_self.reshape((1,) + x_self.shape), x_other.reshape((1,) + x_other.shape)
        B, C, delta = selective_params(x_other, self)
        y = ssm_scan(x_self, delta, self.A(), B, C, self.D)
        return y.reshape(y.shape[1:]) if single else y


def selective_params(x, layer: SsmLayer):
    """B_t = W_B x_t, C_t = W_C x_t, delta_t = softplus(W_dt x_t + b_dt)."""
    B = ops.linear(x, layer.W_B)
    C = ops.linear(x, layer.W_C)
    delta = ops.softplus(ops.linear(x, layer.W_dt, layer.b_dt))
    return B, C, delta


@dataclass
class EncoderConfig:
    n_layers: int = 2
    width: int = 64
    d_inner: int = 64
    state_size: int = 16

    def __post_init__(self):
        if self.n_layers < 0 or min(self.width, self.d_inner, self.state_size) < 1:
            raise ValueError(f"invalid encoder config {self}")


class MambaBlock:
    """Pre-norm Mamba block without the 1-D convolution.

    One input projection yields both the SSM branch and the gate branch; the
    gated scan output is projected back and added to the block input.
    """

    def __init__(self, store, name, width, d_inner, state_size, rng):
        self.width, self.d_inner = width, d_inner
        self.norm = LayerNorm(store, f"{name}.norm", width)
        self.in_proj = Linear(store, f"{name}.in_proj", width, 2 * d_inner, rng)
        self.ssm = SsmLayer(store, f"{name}.ssm", d_inner, state_size, rng)
        self.out_proj = Linear(store, f"{name}.out_proj", d_inner, width, rng)

    def _branches(self, tokens):
        z = self.in_proj(self.norm(tokens))
        return z[..., :self.d_inner], z[..., self.d_inner:]

    def mix(self, x_self, x_other=None):
        a, g = self._branches(x_self)
        a_other = None if x_other is None else self._branches(x_other)[0]
        y = self.ssm.scan(a, a_other)
        return x_self + self.out_proj(y * ops.silu(g))

    def __call__(self, tokens):
        return self.mix(tokens)


def mamba_block_forward(tokens, block: MambaBlock):
    return block(tokens)


def encoder_forward(tokens, config: EncoderConfig, blocks):
    if len(blocks) != config.n_layers:
        raise ValueError(f"expected {config.n_layers} layer blocks, got {len(blocks)}")
    for block in blocks:
        tokens = block(tokens)
    return tokens
