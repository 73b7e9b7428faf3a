"""Feed-forward reconstruction: images -> identity features + static Gaussian maps.

Stages: per-image patch tokens (with per-image positional encodings only),
global self-attention over the concatenated token set, cross-attention from
a fixed grid of learned query tokens, row-major reshape to a UV grid, and a
convolutional decoder with two heads (identity features, raw Gaussian maps).
Because no positional signal crosses image boundaries, the output does not
depend on the order or count of the input images.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import Tensor, ops
from .autodiff.nn import Conv2d, CrossAttentionBlock, LayerNorm, Module, Parameter, SelfAttentionBlock
from .uvmaps import N_CHANNELS, GaussianMaps, TexelSpace, activate


@dataclass
class ReconConfig:
    image_size: int = 128
    patch: int = 16
    token_dim: int = 128
    heads: int = 4
    mlp_ratio: int = 2
    encoder_depth: int = 2
    self_depth: int = 2
    cross_depth: int = 2
    query_h: int = 16
    query_w: int = 16
    uv_res: int = 64
    decoder_width: int = 64
    id_dim: int = 16
    gaussian_dim: int = N_CHANNELS
    n_max: int = 4
    head_gain: float = 0.05  # init scale of the Gaussian head, keeps early raw values small

    @property
    def tokens_per_image(self) -> int:
        return (self.image_size // self.patch) ** 2

    @property
    def query_count(self) -> int:
        return self.query_h * self.query_w

    @property
    def upsample(self) -> int:
        return self.uv_res // self.query_h

    def validate(self) -> None:
        if self.gaussian_dim != N_CHANNELS:
            raise ValueError(f"gaussian_dim must be {N_CHANNELS}")
        if self.image_size % self.patch:
            raise ValueError("image size must be divisible by the patch size")
        if self.patch != 16:
            raise ValueError("the patch embedder is two stride-4 convolutions (patch 16)")
        if self.token_dim % self.heads:
            raise ValueError("token_dim must be divisible by heads")
        if self.query_h != self.query_w or self.uv_res % self.query_h:
            raise ValueError("UV resolution must be a multiple of the square query grid")
        up = self.upsample
        if up < 1 or up & (up - 1):
            raise ValueError("decoder upsample factor must be a power of two")

    def to_dict(self) -> dict:
        return asdict(self)


class PatchEncoder(Module):
    """Stand-in image encoder: two stride-4 convs (patch 16), learned positional
    encodings, then self-attention blocks applied to each image separately."""

    def __init__(self, cfg: ReconConfig, rng: np.random.Generator, dtype=np.float32):
        d = cfg.token_dim
        self.cfg = cfg
        self.conv1 = Conv2d(3, d // 2, 4, rng, stride=4, padding=0, dtype=dtype)
        self.conv2 = Conv2d(d // 2, d, 4, rng, stride=4, padding=0, dtype=dtype)
        self.pos = Parameter((rng.standard_normal((cfg.tokens_per_image, d)) * 0.02).astype(dtype))
        self.blocks = [SelfAttentionBlock(d, cfg.heads, cfg.mlp_ratio, rng, dtype) for _ in range(cfg.encoder_depth)]

    def patch_tokens(self, images) -> Tensor:
        """(N, H, W, 3) -> (N, L, D) before positional encoding."""
        x = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=self.pos.dtype))
        n, h, w, _ = x.shape
        if h != self.cfg.image_size or w != self.cfg.image_size:
            raise ValueError(f"expected {self.cfg.image_size}x{self.cfg.image_size} images, got {h}x{w}")
        x = self.conv2(ops.relu(self.conv1(x)))
        return ops.reshape(x, (n, -1, self.cfg.token_dim))

    def forward(self, images) -> Tensor:
        x = self.patch_tokens(images) + self.pos
        for blk in self.blocks:
            x = blk(x)
        return x


class ReconNet(Module):
    def __init__(self, cfg: ReconConfig | None = None, seed: int = 0, dtype=np.float32):
        cfg = cfg or ReconConfig()
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        d = cfg.token_dim
        self.encoder = PatchEncoder(cfg, rng, dtype)
        self.fusion = [SelfAttentionBlock(d, cfg.heads, cfg.mlp_ratio, rng, dtype) for _ in range(cfg.self_depth)]
        self.queries = Parameter((rng.standard_normal((cfg.query_count, d)) * 0.02).astype(dtype))
        self.cross = [CrossAttentionBlock(d, cfg.heads, cfg.mlp_ratio, rng, dtype) for _ in range(cfg.cross_depth)]
        self.out_norm = LayerNorm(d, dtype)
        wd = cfg.decoder_width
        self.dec_in = Conv2d(d, wd, 3, rng, dtype=dtype)
        n_up = int(round(math.log2(cfg.upsample)))
        self.dec_up = [Conv2d(wd, wd, 3, rng, dtype=dtype) for _ in range(n_up)]
        self.id_head = Conv2d(wd, cfg.id_dim, 3, rng, dtype=dtype, gain=1.0)
        self.gs_head = Conv2d(wd, cfg.gaussian_dim, 3, rng, dtype=dtype, gain=cfg.head_gain)

    @property
    def dtype(self):
        return self.queries.dtype

    # -- stages ------------------------------------------------------------------
    def encode_image(self, image) -> Tensor:
        """One (H, W, 3) image -> (L, D) tokens."""
        x = image if isinstance(image, Tensor) else Tensor(np.asarray(image, dtype=self.dtype))
        return ops.reshape(self.encoder(ops.reshape(x, (1,) + x.shape)), (self.cfg.tokens_per_image, -1))

    def fuse(self, token_sets) -> Tensor:
        """List of (L_i, D) token sets (or an (N, L, D) tensor) -> (sum L_i, D)."""
        if isinstance(token_sets, Tensor):
            if token_sets.ndim == 3:
                token_sets = ops.reshape(token_sets, (-1, token_sets.shape[-1]))
            x = token_sets
        else:
            if len(token_sets) == 0:
                raise ValueError("fuse needs at least one token set")
            x = ops.concat(list(token_sets), axis=0) if len(token_sets) > 1 else token_sets[0]
        if x.shape[0] == 0:
            raise ValueError("fuse needs at least one token")
        x = ops.reshape(x, (1,) + x.shape)
        for blk in self.fusion:
            x = blk(x)
        return ops.reshape(x, x.shape[1:])

    def head_query_attend(self, f_agg: Tensor) -> Tensor:
        """(T, D) fused tokens -> (N_H, D); size independent of T."""
        if f_agg.ndim != 2 or f_agg.shape[0] == 0 or f_agg.shape[1] != self.cfg.token_dim:
            raise ValueError(f"expected (T, {self.cfg.token_dim}) tokens, got {f_agg.shape}")
        ctx = ops.reshape(f_agg, (1,) + f_agg.shape)
        q = ops.reshape(self.queries, (1,) + self.queries.shape)
        for blk in self.cross:
            q = blk(q, ctx)
        return ops.reshape(self.out_norm(q), self.queries.shape)

    def reshape_uv(self, f_q: Tensor) -> Tensor:
        h, w = self.cfg.query_h, self.cfg.query_w
        if f_q.shape[0] != h * w:
            raise ValueError(f"{f_q.shape[0]} query tokens cannot form a {h}x{w} grid")
        return ops.reshape(f_q, (h, w, f_q.shape[-1]))

    @staticmethod
    def flatten_uv(f_uv: Tensor) -> Tensor:
        return ops.reshape(f_uv, (-1, f_uv.shape[-1]))

    def decode_raw(self, f_uv: Tensor):
        """(Hq, Wq, D) -> (F_id (H, W, id_dim), raw Gaussian maps (H, W, 14))."""
        x = ops.relu(self.dec_in(ops.reshape(f_uv, (1,) + f_uv.shape)))
        for conv in self.dec_up:
            x = ops.relu(conv(ops.upsample_nearest(x, 2)))
        f_id = self.id_head(x)
        raw = self.gs_head(x)
        return ops.reshape(f_id, f_id.shape[1:]), ops.reshape(raw, raw.shape[1:])

    def decode_maps(self, f_uv: Tensor, space: TexelSpace) -> "AvatarCanonical":
        f_id, raw = self.decode_raw(f_uv)
        return AvatarCanonical(f_id, raw, activate(raw, space.anchors, space))

    def forward(self, images, masks=None, features=None):
        """Images (N, H, W, 3) with optional foreground masks (N, H, W), or
        precomputed ``features`` (N, L, D) -> (F_id, raw maps)."""
        if features is None:
            imgs = np.asarray(images.data if isinstance(images, Tensor) else images, dtype=self.dtype)
            if imgs.ndim == 3:
                imgs = imgs[None]
            n = imgs.shape[0]
            if not 1 <= n <= self.cfg.n_max:
                raise ValueError(f"image count must be in [1, {self.cfg.n_max}], got {n}")
            if masks is not None:
                imgs = imgs * np.asarray(masks, dtype=self.dtype).reshape(n, imgs.shape[1], imgs.shape[2], 1)
            tokens = self.encoder(Tensor(imgs))
        else:
            tokens = features if isinstance(features, Tensor) else Tensor(np.asarray(features, dtype=self.dtype))
            if tokens.ndim != 3 or tokens.shape[-1] != self.cfg.token_dim:
                raise ValueError(f"features must be (N, L, {self.cfg.token_dim})")
        f_q = self.head_query_attend(self.fuse(tokens))
        return self.decode_raw(self.reshape_uv(f_q))


@dataclass
class AvatarCanonical:
    f_id: Tensor  # (H, W, id_dim)
    raw: Tensor  # (H, W, 14) pre-activation static maps
    maps: GaussianMaps  # activated static maps (G_st)


def reconstruct(net: ReconNet, images, space: TexelSpace, masks=None, features=None) -> AvatarCanonical:
    f_id, raw = net(images, masks, features)
    if raw.shape[:2] != space.resolution:
        raise ValueError(f"decoder produces {raw.shape[:2]} maps but the texel space is {space.resolution}")
    return AvatarCanonical(f_id, raw, activate(raw, space.anchors, space))
