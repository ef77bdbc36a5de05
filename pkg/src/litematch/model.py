"""Four-stage pyramid transformer mapping grayscale patches to unit descriptors.

Each stage tokenizes its input with an overlapping strided-convolution
patch embedding and runs pre-norm encoder blocks whose attention
downsamples keys and values by the stage's reduction ratio. A linear head
over globally pooled stage-4 tokens produces the descriptor, which is
L2-normalized. No explicit positional embedding: the zero-padded
depthwise convolution inside each feed-forward provides position.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from . import ops
from .errors import ConfigError, DimensionError
from .tensor import Tensor

ALLOWED_DESCRIPTOR_DIMS = (64, 128, 256)


@dataclass(frozen=True)
class StageConfig:
    """Hyperparameters of one pyramid stage."""

    stride: int
    channels: int
    reduction: int
    heads: int
    mlp_ratio: int
    depth: int


DEFAULT_STAGES = (
    StageConfig(stride=4, channels=16, reduction=8, heads=1, mlp_ratio=8, depth=2),
    StageConfig(stride=2, channels=32, reduction=4, heads=2, mlp_ratio=8, depth=2),
    StageConfig(stride=2, channels=64, reduction=2, heads=4, mlp_ratio=4, depth=2),
    StageConfig(stride=2, channels=128, reduction=1, heads=8, mlp_ratio=8, depth=2),
)


@dataclass(frozen=True)
class ModelConfig:
    """Full network configuration; the default reproduces the reference setting."""

    stages: tuple[StageConfig, ...] = DEFAULT_STAGES
    input_size: int = 128
    input_channels: int = 1
    descriptor_dim: int = 128

    def __post_init__(self):
        if len(self.stages) != 4:
            raise ConfigError(f"expected 4 stages, got {len(self.stages)}")
        if self.descriptor_dim not in ALLOWED_DESCRIPTOR_DIMS:
            raise ConfigError(
                f"descriptor_dim must be one of {ALLOWED_DESCRIPTOR_DIMS}, got {self.descriptor_dim}"
            )
        if self.input_channels < 1:
            raise ConfigError("input_channels must be >= 1")
        total_stride = 1
        for st in self.stages:
            total_stride *= st.stride
        if self.input_size <= 0 or self.input_size % total_stride != 0:
            raise ConfigError(
                f"input_size {self.input_size} must be divisible by {total_stride}"
            )
        spatial = self.input_size
        for i, st in enumerate(self.stages, start=1):
            if st.stride < 1 or st.channels < 1 or st.heads < 1 or st.mlp_ratio < 1 or st.depth < 1:
                raise ConfigError(f"stage {i}: all hyperparameters must be positive")
            if st.channels % st.heads != 0:
                raise ConfigError(
                    f"stage {i}: channels {st.channels} not divisible by heads {st.heads}"
                )
            spatial //= st.stride
            if st.reduction < 1 or spatial % st.reduction != 0:
                raise ConfigError(
                    f"stage {i}: spatial size {spatial} not divisible by reduction {st.reduction}"
                )


@dataclass(frozen=True)
class StageShapes:
    """Activation geometry of one stage for a given input size."""

    channels: int
    spatial: int
    tokens: int
    reduced_tokens: int


@dataclass(frozen=True)
class ShapeTable:
    """Every parameter shape plus per-stage activation geometry."""

    params: dict[str, tuple[int, ...]] = field(default_factory=dict)
    stages: tuple[StageShapes, ...] = ()
    descriptor_dim: int = 0

    def total_params(self) -> int:
        return sum(int(np.prod(s)) for s in self.params.values())


def _embed_kernel(stride: int) -> tuple[int, int]:
    """Overlapping patch embedding: kernel 2*stride - 1, padding stride - 1."""
    return 2 * stride - 1, stride - 1


def describe_shapes(config: ModelConfig) -> ShapeTable:
    """Enumerate parameter shapes and activation sizes implied by ``config``."""
    params: dict[str, tuple[int, ...]] = {}
    stages: list[StageShapes] = []
    in_ch = config.input_channels
    spatial = config.input_size
    for i, st in enumerate(config.stages, start=1):
        c = st.channels
        k, _ = _embed_kernel(st.stride)
        spatial //= st.stride
        stages.append(
            StageShapes(
                channels=c,
                spatial=spatial,
                tokens=spatial * spatial,
                reduced_tokens=(spatial // st.reduction) ** 2,
            )
        )
        pre = f"stage{i}"
        params[f"{pre}.embed.conv.weight"] = (c, in_ch, k, k)
        params[f"{pre}.embed.conv.bias"] = (c,)
        params[f"{pre}.embed.norm.gamma"] = (c,)
        params[f"{pre}.embed.norm.beta"] = (c,)
        hidden = st.mlp_ratio * c
        for j in range(1, st.depth + 1):
            blk = f"{pre}.block{j}"
            params[f"{blk}.norm1.gamma"] = (c,)
            params[f"{blk}.norm1.beta"] = (c,)
            params[f"{blk}.attn.q.weight"] = (c, c)
            params[f"{blk}.attn.q.bias"] = (c,)
            # no key bias: softmax is invariant to a per-query shift, so a
            # key bias would be a permanently zero-gradient parameter
            params[f"{blk}.attn.k.weight"] = (c, c)
            params[f"{blk}.attn.v.weight"] = (c, c)
            params[f"{blk}.attn.v.bias"] = (c,)
            if st.reduction > 1:
                params[f"{blk}.attn.sr.weight"] = (c, c, st.reduction, st.reduction)
                params[f"{blk}.attn.sr.bias"] = (c,)
                params[f"{blk}.attn.sr_norm.gamma"] = (c,)
                params[f"{blk}.attn.sr_norm.beta"] = (c,)
            params[f"{blk}.attn.proj.weight"] = (c, c)
            params[f"{blk}.attn.proj.bias"] = (c,)
            params[f"{blk}.norm2.gamma"] = (c,)
            params[f"{blk}.norm2.beta"] = (c,)
            params[f"{blk}.ffn.fc1.weight"] = (hidden, c)
            params[f"{blk}.ffn.fc1.bias"] = (hidden,)
            params[f"{blk}.ffn.dw.weight"] = (hidden, 1, 3, 3)
            params[f"{blk}.ffn.dw.bias"] = (hidden,)
            params[f"{blk}.ffn.fc2.weight"] = (c, hidden)
            params[f"{blk}.ffn.fc2.bias"] = (c,)
        params[f"{pre}.norm.gamma"] = (c,)
        params[f"{pre}.norm.beta"] = (c,)
        in_ch = c
    params["head.weight"] = (config.descriptor_dim, in_ch)
    params["head.bias"] = (config.descriptor_dim,)
    return ShapeTable(params=params, stages=tuple(stages), descriptor_dim=config.descriptor_dim)


@dataclass
class Model:
    """Configuration plus the named trainable parameter set."""

    config: ModelConfig
    params: dict[str, Tensor]

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())


def _truncated_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Inverse-CDF sampling of a normal truncated at +/- 2 std."""
    lo, hi = 0.022750131948179195, 0.9772498680518208  # Phi(-2), Phi(2)
    u = rng.uniform(lo, hi, size=shape)
    return (ndtri(u) * std).astype(np.float32)


def init_model(config: ModelConfig, seed: int) -> Model:
    """Deterministically initialize all parameters from ``seed``.

    Weights are truncated-normal (std 0.02), biases zero, norm gains one.
    """
    table = describe_shapes(config)
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    for name, shape in table.params.items():
        if name.endswith(".gamma"):
            data = np.ones(shape, dtype=np.float32)
        elif name.endswith((".beta", ".bias")):
            data = np.zeros(shape, dtype=np.float32)
        else:
            data = _truncated_normal(rng, shape)
        params[name] = Tensor(data, requires_grad=True)
    return Model(config=config, params=params)


def param_count(model: Model) -> int:
    """Exact number of scalar parameters."""
    return sum(p.size for p in model.params.values())


def _tokens_to_spatial(x: Tensor, h: int, w: int) -> Tensor:
    b, _, c = x.shape
    return ops.transpose(ops.reshape(x, (b, h, w, c)), (0, 3, 1, 2))


def _spatial_to_tokens(x: Tensor) -> Tensor:
    b, c, h, w = x.shape
    return ops.reshape(ops.transpose(x, (0, 2, 3, 1)), (b, h * w, c))


def _split_heads(x: Tensor, heads: int) -> Tensor:
    b, n, c = x.shape
    return ops.transpose(ops.reshape(x, (b, n, heads, c // heads)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    b, h, n, dk = x.shape
    return ops.reshape(ops.transpose(x, (0, 2, 1, 3)), (b, n, h * dk))


def _attention(x: Tensor, p: dict[str, Tensor], blk: str, st: StageConfig, h: int, w: int) -> Tensor:
    q = ops.linear(x, p[f"{blk}.attn.q.weight"], p[f"{blk}.attn.q.bias"])
    if st.reduction > 1:
        sp = _tokens_to_spatial(x, h, w)
        red = ops.conv2d(
            sp, p[f"{blk}.attn.sr.weight"], p[f"{blk}.attn.sr.bias"],
            stride=st.reduction, padding=0,
        )
        kv = _spatial_to_tokens(red)
        kv = ops.layer_norm(kv, p[f"{blk}.attn.sr_norm.gamma"], p[f"{blk}.attn.sr_norm.beta"])
    else:
        kv = x
    k = ops.linear(kv, p[f"{blk}.attn.k.weight"], None)
    v = ops.linear(kv, p[f"{blk}.attn.v.weight"], p[f"{blk}.attn.v.bias"])
    dk = st.channels // st.heads
    qh = _split_heads(q, st.heads)
    kh = _split_heads(k, st.heads)
    vh = _split_heads(v, st.heads)
    scores = ops.scale(ops.matmul(qh, ops.transpose(kh, (0, 1, 3, 2))), dk ** -0.5)
    ctx = ops.matmul(ops.softmax(scores), vh)
    return ops.linear(_merge_heads(ctx), p[f"{blk}.attn.proj.weight"], p[f"{blk}.attn.proj.bias"])


def _feed_forward(x: Tensor, p: dict[str, Tensor], blk: str, h: int, w: int) -> Tensor:
    f = ops.linear(x, p[f"{blk}.ffn.fc1.weight"], p[f"{blk}.ffn.fc1.bias"])
    sp = _tokens_to_spatial(f, h, w)
    sp = ops.depthwise_conv2d(sp, p[f"{blk}.ffn.dw.weight"], p[f"{blk}.ffn.dw.bias"])
    f = ops.gelu(_spatial_to_tokens(sp))
    return ops.linear(f, p[f"{blk}.ffn.fc2.weight"], p[f"{blk}.ffn.fc2.bias"])


def forward(model: Model, patches: Tensor) -> Tensor:
    """Map [B, C, S, S] patches in [0, 1] to [B, descriptor_dim] unit rows."""
    cfg = model.config
    p = model.params
    expected = (cfg.input_channels, cfg.input_size, cfg.input_size)
    if patches.ndim != 4 or patches.shape[1:] != expected:
        raise DimensionError(
            f"expected patches of shape [B, {expected[0]}, {expected[1]}, {expected[2]}], "
            f"got {tuple(patches.shape)}"
        )
    # fixed input standardization: [0,1] -> mean 0.5, std 0.25
    x = ops.scale(ops.shift(patches, -0.5), 4.0)
    spatial = cfg.input_size
    tokens: Tensor | None = None
    for i, st in enumerate(cfg.stages, start=1):
        pre = f"stage{i}"
        _, pad = _embed_kernel(st.stride)
        x = ops.conv2d(
            x, p[f"{pre}.embed.conv.weight"], p[f"{pre}.embed.conv.bias"],
            stride=st.stride, padding=pad,
        )
        spatial //= st.stride
        tokens = _spatial_to_tokens(x)
        tokens = ops.layer_norm(tokens, p[f"{pre}.embed.norm.gamma"], p[f"{pre}.embed.norm.beta"])
        for j in range(1, st.depth + 1):
            blk = f"{pre}.block{j}"
            a = ops.layer_norm(tokens, p[f"{blk}.norm1.gamma"], p[f"{blk}.norm1.beta"])
            tokens = ops.add(tokens, _attention(a, p, blk, st, spatial, spatial))
            f = ops.layer_norm(tokens, p[f"{blk}.norm2.gamma"], p[f"{blk}.norm2.beta"])
            tokens = ops.add(tokens, _feed_forward(f, p, blk, spatial, spatial))
        tokens = ops.layer_norm(tokens, p[f"{pre}.norm.gamma"], p[f"{pre}.norm.beta"])
        x = _tokens_to_spatial(tokens, spatial, spatial)
    pooled = ops.global_avg_pool(x)
    desc = ops.linear(pooled, p["head.weight"], p["head.bias"])
    return ops.l2_normalize(desc)
