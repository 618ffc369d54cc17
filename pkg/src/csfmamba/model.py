"""The two-branch HSI/LiDAR network and its parameter/FLOP accounting."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .autodiff import ParamStore, Tensor, ops
from .fusion import CrossTokenPair, CsfmBlock, exchange_cls, fusion_stack_forward
from .nn import BatchNorm, Conv, Linear
from .ssm import EncoderConfig, MambaBlock, encoder_forward


@dataclass
class ModelConfig:
    patch_size: int = 11
    c1: int = 30
    c2: int = 5
    token_width: int = 64
    inner_width: int = 64
    state_size: int = 16
    encoder_layers: int = 2
    fusion_layers: int = 2
    num_classes: int = 11
    token_count: int | None = None
    hsi_conv3d_channels: int = 8
    hsi_spectral_kernel: int = 7
    hsi_spectral_stride: int = 2
    lidar_hidden_channels: int = 32
    tokenizer_kernel: int = 3
    seed: int = 0
    # ablation switches
    preprocess: bool = True
    conv_extractors: bool = True
    cross_state: bool = True

    def __post_init__(self):
        if self.patch_size < 1 or self.patch_size % 2 == 0:
            raise ValueError(f"patch_size must be odd, got {self.patch_size}")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.token_width % 4:
            raise ValueError("token_width must be divisible by 4 for the 2-D sin/cos table")
        if self.tokenizer_kernel % 2 == 0:
            raise ValueError("tokenizer_kernel must be odd")
        if self.conv_extractors and self.c1 < self.hsi_spectral_kernel:
            raise ValueError(f"c1={self.c1} is smaller than the spectral kernel {self.hsi_spectral_kernel}")
        if self.token_count is not None and self.token_count != self.grid ** 2:
            raise ValueError(f"token_count {self.token_count} != grid^2 = {self.grid ** 2}")
        if min(self.encoder_layers, self.fusion_layers) < 0:
            raise ValueError("layer counts must be >= 0")

    @property
    def grid(self) -> int:
        # stride 1, same padding
        return self.patch_size

    @property
    def tokens(self) -> int:
        return self.grid ** 2

    @property
    def spectral_depth(self) -> int:
        return (self.c1 - self.hsi_spectral_kernel) // self.hsi_spectral_stride + 1

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def tiny_config(**overrides) -> ModelConfig:
    cfg = dict(patch_size=5, c1=8, c2=5, token_width=8, inner_width=8, state_size=4,
               encoder_layers=1, fusion_layers=1, num_classes=3)
    cfg.update(overrides)
    return ModelConfig(**cfg)


def sincos_table(grid: int, width: int) -> np.ndarray:
    """Fixed 2-D sinusoidal table of shape (grid*grid + 1, width).

    The first width/2 coordinates encode the row index and the rest the
    column index, each as interleaved (sin, cos) pairs over the frequency
    ladder 10000^(-k / (width/4)). The last row (CLS slot) is zero.
    """
    if width % 4:
        raise ValueError("width must be divisible by 4")
    quarter = width // 4
    omega = 1.0 / 10000 ** (np.arange(quarter) / quarter)
    rows, cols = np.divmod(np.arange(grid * grid), grid)

    def axis(pos):
        ang = np.outer(pos, omega)
        out = np.empty((len(pos), 2 * quarter))
        out[:, 0::2] = np.sin(ang)
        out[:, 1::2] = np.cos(ang)
        return out

    table = np.concatenate([axis(rows), axis(cols)], axis=1)
    return np.concatenate([table, np.zeros((1, width))], axis=0)


@dataclass
class ModelOutput:
    probs: Tensor
    logits: Tensor
    cls_h: Tensor
    cls_l: Tensor


class Tokenizer:
    def __init__(self, store, name, width, kernel, grid, rng):
        self.conv = Conv(store, f"{name}.conv", width, width, (kernel, kernel), rng, padding=kernel // 2)
        self.proj = Linear(store, f"{name}.proj", width, width, rng)
        self.cls = store.add(f"{name}.cls", np.zeros((1, width)))
        self.pos = Tensor(sincos_table(grid, width).astype(self.cls.dtype))

    def __call__(self, features):
        return add_cls_pos(tokenize(features, self), self)


def tokenize(features, tok: Tokenizer) -> Tensor:
    """(B, D, s, s) features -> (B, g*g, D) tokens in row-major grid order."""
    f = tok.conv(features)
    b, d, g1, g2 = f.shape
    return tok.proj(f.transpose(0, 2, 3, 1).reshape(b, g1 * g2, d))


def add_cls_pos(tokens, tok: Tokenizer) -> Tensor:
    b = tokens.shape[0]
    cls = ops.add(np.zeros((b, 1, tokens.shape[-1]), dtype=tokens.dtype), tok.cls)
    seq = ops.concat([tokens, cls], axis=1)
    if seq.shape[1:] != tok.pos.shape:
        raise ValueError(f"token sequence {seq.shape[1:]} does not match position table {tok.pos.shape}")
    return seq + tok.pos


class CSFMamba:
    """Conv extractors -> tokenizers -> per-branch Mamba encoders -> cross-state fusion -> head.

    Patches enter channel-last as (B, s, s, C); feature maps are NCHW inside.
    """

    def __init__(self, config: ModelConfig):
        self.config = c = config
        self.store = ParamStore()
        rng = np.random.default_rng(c.seed)
        s, D = self.store, c.token_width
        if c.conv_extractors:
            depth = c.spectral_depth
            self.h_conv3d = Conv(s, "hsi.conv3d", 1, c.hsi_conv3d_channels, (c.hsi_spectral_kernel, 3, 3), rng,
                                 stride=(c.hsi_spectral_stride, 1, 1), padding=(0, 1, 1), bias=False)
            self.h_bn3d = BatchNorm(s, "hsi.bn3d", c.hsi_conv3d_channels)
            self.h_conv2d = Conv(s, "hsi.conv2d", c.hsi_conv3d_channels * depth, D, (3, 3), rng, padding=1, bias=False)
            self.h_bn2d = BatchNorm(s, "hsi.bn2d", D)
            self.l_conv1 = Conv(s, "lidar.conv1", c.c2, c.lidar_hidden_channels, (3, 3), rng, padding=1, bias=False)
            self.l_bn1 = BatchNorm(s, "lidar.bn1", c.lidar_hidden_channels)
            self.l_conv2 = Conv(s, "lidar.conv2", c.lidar_hidden_channels, D, (3, 3), rng, padding=1, bias=False)
            self.l_bn2 = BatchNorm(s, "lidar.bn2", D)
        else:
            self.h_lift = Linear(s, "hsi.lift", c.c1, D, rng)
            self.l_lift = Linear(s, "lidar.lift", c.c2, D, rng)
        self.h_tok = Tokenizer(s, "hsi.tokenizer", D, c.tokenizer_kernel, c.grid, rng)
        self.l_tok = Tokenizer(s, "lidar.tokenizer", D, c.tokenizer_kernel, c.grid, rng)
        self.enc_config = EncoderConfig(c.encoder_layers, D, c.inner_width, c.state_size)
        self.h_enc = [MambaBlock(s, f"hsi.encoder.{i}", D, c.inner_width, c.state_size, rng)
                      for i in range(c.encoder_layers)]
        self.l_enc = [MambaBlock(s, f"lidar.encoder.{i}", D, c.inner_width, c.state_size, rng)
                      for i in range(c.encoder_layers)]
        self.fusion = [CsfmBlock(s, f"fusion.{i}", D, c.inner_width, c.state_size, rng)
                       for i in range(c.fusion_layers)]
        self.head = Linear(s, "head", D, c.num_classes, rng)

    def hsi_extract(self, patch, training: bool) -> Tensor:
        """(B, s, s, C1) -> (B, D, s, s)."""
        x = ops._t(patch)
        if not self.config.conv_extractors:
            return self.h_lift(x).transpose(0, 3, 1, 2)
        b, s1, s2, c1 = x.shape
        v = x.transpose(0, 3, 1, 2).reshape(b, 1, c1, s1, s2)
        v = ops.relu(self.h_bn3d(self.h_conv3d(v), training))
        v = v.reshape(b, -1, s1, s2)
        return ops.relu(self.h_bn2d(self.h_conv2d(v), training))

    def lidar_extract(self, patch, training: bool) -> Tensor:
        x = ops._t(patch)
        if not self.config.conv_extractors:
            return self.l_lift(x).transpose(0, 3, 1, 2)
        v = x.transpose(0, 3, 1, 2)
        v = ops.relu(self.l_bn1(self.l_conv1(v), training))
        return ops.relu(self.l_bn2(self.l_conv2(v), training))

    def classify(self, cls_h, cls_l) -> Tensor:
        return self.head((cls_h + cls_l) * 0.5)

    def forward(self, patch_h, patch_l, training: bool = False) -> ModelOutput:
        if patch_h is None or patch_l is None:
            raise ValueError("both HSI and LiDAR patches are required")
        patch_h, patch_l = ops._t(patch_h), ops._t(patch_l)
        if patch_h.ndim == 3:
            patch_h = patch_h.reshape((1,) + patch_h.shape)
            patch_l = patch_l.reshape((1,) + patch_l.shape)
        if patch_h.shape[:3] != patch_l.shape[:3]:
            raise ValueError(f"patch shapes disagree: {patch_h.shape} vs {patch_l.shape}")
        tok_h = self.h_tok(self.hsi_extract(patch_h, training))
        tok_l = self.l_tok(self.lidar_extract(patch_l, training))
        tok_h = encoder_forward(tok_h, self.enc_config, self.h_enc)
        tok_l = encoder_forward(tok_l, self.enc_config, self.l_enc)
        if self.config.cross_state:
            pair = fusion_stack_forward(exchange_cls(tok_h, tok_l), self.fusion)
        else:
            pair = CrossTokenPair(tok_h, tok_l)
            for block in self.fusion:
                pair = CrossTokenPair(block.h_dir(pair.h), block.l_dir(pair.l))
        cls_h, cls_l = pair.h[:, -1, :], pair.l[:, -1, :]
        logits = self.classify(cls_h, cls_l)
        return ModelOutput(ops.softmax(logits, axis=-1), logits, cls_h, cls_l)

    __call__ = forward

    def loss(self, out: ModelOutput, labels) -> Tensor:
        """Mean cross-entropy for 1-based class ids."""
        labels = np.asarray(labels)
        if labels.min() < 1 or labels.max() > self.config.num_classes:
            raise ValueError(f"labels must lie in 1..{self.config.num_classes}")
        return ops.softmax_cross_entropy(out.logits, labels - 1)


def model_forward(patch_h, patch_l, model: CSFMamba, training: bool = False) -> ModelOutput:
    return model.forward(patch_h, patch_l, training)


def cross_entropy(probs, labels) -> Tensor:
    """-mean_n log p_hat[n, label_n] for probabilities and 1-based labels."""
    probs = ops._t(probs)
    if probs.ndim == 1:
        probs = probs.reshape(1, -1)
    labels = np.atleast_1d(np.asarray(labels))
    k = probs.shape[-1]
    if labels.min() < 1 or labels.max() > k:
        raise ValueError(f"labels must lie in 1..{k}")
    picked = probs[np.arange(len(labels)), labels - 1]
    return ops.mean(ops.log(picked)) * -1.0


# accounting --------------------------------------------------------------------

def _conv_cost(c_in, c_out, kernel, out_elems, bias):
    k = int(np.prod(kernel))
    params = c_in * c_out * k + (c_out if bias else 0)
    flops = 2 * c_in * k * c_out * out_elems + (c_out * out_elems if bias else 0)
    return params, flops


def _linear_cost(fan_in, fan_out, rows, bias=True):
    return fan_in * fan_out + (fan_out if bias else 0), 2 * fan_in * fan_out * rows + (fan_out * rows if bias else 0)


def _mamba_cost(D, Di, N, T, post_norm):
    p = f = 0
    # pre-norm
    p += 2 * D
    f += 5 * T * D
    lp, lf = _linear_cost(D, 2 * Di, T)
    p, f = p + lp, f + lf
    # B, C, delta generation
    for fan_out, bias in ((N, False), (N, False), (Di, True)):
        lp, lf = _linear_cost(Di, fan_out, T, bias)
        p, f = p + lp, f + lf
    f += 3 * T * Di  # softplus
    p += Di * N + Di  # A_log, D
    f += 2 * Di * N  # A = -exp(A_log)
    f += 10 * T * Di * N + 2 * T * Di  # discretize, recurrence, readout, residual D
    f += 4 * T * Di + T * Di  # silu gate and product
    lp, lf = _linear_cost(Di, D, T)
    p, f = p + lp, f + lf
    f += T * D  # residual
    if post_norm:
        p += 2 * D
        f += 5 * T * D
    return p, f


def count_params_flops(config: ModelConfig) -> tuple[int, int]:
    """Exact learnable scalar count and forward FLOPs per sample.

    FLOPs: 2 per multiply-accumulate in conv/linear layers, plus nominal
    elementwise costs (batchnorm 2, relu 1, layernorm 5, softplus 3, silu 4,
    10 per scan state element per step).
    """
    c = config
    D, s = c.token_width, c.patch_size
    area = s * s
    T = c.tokens + 1
    p = f = 0

    def add(pf):
        nonlocal p, f
        p, f = p + pf[0], f + pf[1]

    if c.conv_extractors:
        depth, ch3 = c.spectral_depth, c.hsi_conv3d_channels
        add(_conv_cost(1, ch3, (c.hsi_spectral_kernel, 3, 3), depth * area, False))
        add((2 * ch3, 3 * ch3 * depth * area))
        add(_conv_cost(ch3 * depth, D, (3, 3), area, False))
        add((2 * D, 3 * D * area))
        hid = c.lidar_hidden_channels
        add(_conv_cost(c.c2, hid, (3, 3), area, False))
        add((2 * hid, 3 * hid * area))
        add(_conv_cost(hid, D, (3, 3), area, False))
        add((2 * D, 3 * D * area))
    else:
        add(_linear_cost(c.c1, D, area))
        add(_linear_cost(c.c2, D, area))
    k = c.tokenizer_kernel
    for _ in range(2):
        add(_conv_cost(D, D, (k, k), c.grid ** 2, True))
        add(_linear_cost(D, D, c.tokens))
        add((D, T * D))  # CLS token, positional add
    for _ in range(2 * c.encoder_layers):
        add(_mamba_cost(D, c.inner_width, c.state_size, T, post_norm=False))
    for _ in range(2 * c.fusion_layers):
        add(_mamba_cost(D, c.inner_width, c.state_size, T, post_norm=True))
    f += 2 * D
    add(_linear_cost(D, c.num_classes, 1))
    f += 3 * c.num_classes
    return p, f
