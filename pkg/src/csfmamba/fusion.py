"""CLS-token exchange and cross-state fusion between the HSI and LiDAR streams."""

from __future__ import annotations

from dataclasses import dataclass

from .autodiff import Tensor, ops
from .nn import LayerNorm
from .ssm import MambaBlock, SsmLayer


@dataclass
class CrossTokenPair:
    """``h``: LiDAR feature tokens + HSI CLS; ``l``: HSI feature tokens + LiDAR CLS.

    The CLS token sits at the last position of each sequence.
    """
    h: Tensor
    l: Tensor


def exchange_cls(tokens_h, tokens_l) -> CrossTokenPair:
    tokens_h, tokens_l = ops._t(tokens_h), ops._t(tokens_l)
    if tokens_h.shape != tokens_l.shape:
        raise ValueError(f"token shapes differ: {tokens_h.shape} vs {tokens_l.shape}")
    x_h = ops.concat([tokens_l[..., :-1, :], tokens_h[..., -1:, :]], axis=-2)
    x_l = ops.concat([tokens_h[..., :-1, :], tokens_l[..., -1:, :]], axis=-2)
    return CrossTokenPair(x_h, x_l)


def cross_selective_scan(x_self, x_other, layer: SsmLayer) -> Tensor:
    """Recurrence driven by ``x_self``; B, C and delta generated from ``x_other``."""
    return layer.scan(x_self, x_other)


class CsfmDirection(MambaBlock):
    """One direction of the fusion block: cross-fed Mamba block, then LayerNorm."""

    def __init__(self, store, name, width, d_inner, state_size, rng):
        super().__init__(store, name, width, d_inner, state_size, rng)
        self.post_norm = LayerNorm(store, f"{name}.post_norm", width)

    def __call__(self, x_self, x_other=None):
        return self.post_norm(self.mix(x_self, x_other))


class CsfmBlock:
    def __init__(self, store, name, width, d_inner, state_size, rng, tied: bool = False):
        self.h_dir = CsfmDirection(store, f"{name}.h", width, d_inner, state_size, rng)
        self.l_dir = self.h_dir if tied else CsfmDirection(store, f"{name}.l", width, d_inner, state_size, rng)

    def __call__(self, pair: CrossTokenPair) -> CrossTokenPair:
        return csfm_block_forward(pair, self)


def csfm_block_forward(pair: CrossTokenPair, block: CsfmBlock) -> CrossTokenPair:
    if pair.h.shape != pair.l.shape:
        raise ValueError(f"pair shapes differ: {pair.h.shape} vs {pair.l.shape}")
    y_h = block.h_dir(pair.h, pair.l)
    y_l = block.l_dir(pair.l, pair.h)
    return CrossTokenPair(y_h, y_l)


def fusion_stack_forward(pair: CrossTokenPair, blocks) -> CrossTokenPair:
    for block in blocks:
        pair = block(pair)
    return pair
