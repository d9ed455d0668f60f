"""Toy vision transformer used as the feature source.

Randomly initialized, pre-norm blocks, fixed 224-px tiles cut into 14-px
patches (a 16x16 token map per tile). The residual stream is recorded
after selected blocks so the resampler can read features at several
depths. No pretrained weights anywhere; every contract downstream is
architectural.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = ["EncoderConfig", "EncoderParams", "VitFeatures", "init_encoder", "encode_tile", "multi_head_attention"]


@dataclass(frozen=True)
class EncoderConfig:
    depth: int = 27
    dim: int = 64
    n_heads: int = 4
    patch_px: int = 14
    tile_px: int = 224
    channels: int = 1
    recorded_layers: tuple[int, ...] = (14, 18, 22, 26)

    def __post_init__(self):
        if self.dim % self.n_heads:
            raise ValueError("dim must divide into heads")
        if self.tile_px % self.patch_px:
            raise ValueError("tile_px must be a multiple of patch_px")
        if list(self.recorded_layers) != sorted(self.recorded_layers):
            raise ValueError("recorded_layers must be sorted ascending")
        if len(set(self.recorded_layers)) != len(self.recorded_layers):
            raise ValueError("recorded_layers must be distinct")
        if self.recorded_layers and self.recorded_layers[-1] >= self.depth:
            raise ValueError("recorded_layers must be < depth")

    @property
    def grid_side(self) -> int:
        return self.tile_px // self.patch_px

    @property
    def tokens_per_tile(self) -> int:
        return self.grid_side * self.grid_side


@dataclass
class BlockParams:
    ln1_g: Tensor
    ln1_b: Tensor
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    ln2_g: Tensor
    ln2_b: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


@dataclass
class EncoderParams:
    patch_w: Tensor
    patch_b: Tensor
    blocks: list[BlockParams] = field(default_factory=list)


def _param(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Tensor:
    return Tensor(rng.standard_normal(shape) / np.sqrt(fan_in), requires_grad=True)


def _init_block(rng: np.random.Generator, dim: int) -> BlockParams:
    hidden = 2 * dim
    return BlockParams(
        ln1_g=Tensor(np.ones(dim), requires_grad=True),
        ln1_b=Tensor(np.zeros(dim), requires_grad=True),
        wq=_param(rng, (dim, dim), dim),
        wk=_param(rng, (dim, dim), dim),
        wv=_param(rng, (dim, dim), dim),
        wo=_param(rng, (dim, dim), dim),
        ln2_g=Tensor(np.ones(dim), requires_grad=True),
        ln2_b=Tensor(np.zeros(dim), requires_grad=True),
        w1=_param(rng, (dim, hidden), dim),
        b1=Tensor(np.zeros(hidden), requires_grad=True),
        w2=_param(rng, (hidden, dim), hidden),
        b2=Tensor(np.zeros(dim), requires_grad=True),
    )


def init_encoder(cfg: EncoderConfig, rng: np.random.Generator) -> EncoderParams:
    patch_dim = cfg.patch_px * cfg.patch_px * cfg.channels
    return EncoderParams(
        patch_w=_param(rng, (patch_dim, cfg.dim), patch_dim),
        patch_b=Tensor(np.zeros(cfg.dim), requires_grad=True),
        blocks=[_init_block(rng, cfg.dim) for _ in range(cfg.depth)],
    )


def multi_head_attention(q_in: Tensor, kv_in: Tensor, wq: Tensor, wk: Tensor, wv: Tensor, wo: Tensor, n_heads: int) -> Tensor:
    """Bidirectional (unmasked) attention; q_in and kv_in may differ."""
    q = ad.matmul(q_in, wq)
    k = ad.matmul(kv_in, wk)
    v = ad.matmul(kv_in, wv)
    d_model = q.shape[1]
    dh = d_model // n_heads
    scale = 1.0 / np.sqrt(dh)
    heads = []
    for h in range(n_heads):
        sl = slice(h * dh, (h + 1) * dh)
        scores = ad.mul(ad.matmul(q[:, sl], k[:, sl].T), scale)
        heads.append(ad.matmul(ad.softmax_rows(scores), v[:, sl]))
    return ad.matmul(ad.concat(heads, axis=1), wo)


def _block_forward(x: Tensor, p: BlockParams, n_heads: int) -> Tensor:
    h = ad.layer_norm(x, p.ln1_g, p.ln1_b)
    x = ad.add(x, multi_head_attention(h, h, p.wq, p.wk, p.wv, p.wo, n_heads))
    h = ad.layer_norm(x, p.ln2_g, p.ln2_b)
    h = ad.matmul(ad.gelu(ad.add(ad.matmul(h, p.w1), p.b1)), p.w2)
    return ad.add(x, ad.add(h, p.b2))


def patchify(tile: np.ndarray, cfg: EncoderConfig) -> np.ndarray:
    """Cut a [tile_px, tile_px(, c)] tile into flattened patches, row-major."""
    tile = np.asarray(tile, dtype=np.float64)
    if tile.ndim == 2:
        tile = tile[:, :, None]
    if tile.shape != (cfg.tile_px, cfg.tile_px, cfg.channels):
        raise ValueError(f"tile shape {tile.shape} does not match config")
    g, p = cfg.grid_side, cfg.patch_px
    return (
        tile.reshape(g, p, g, p, cfg.channels)
        .transpose(0, 2, 1, 3, 4)
        .reshape(g * g, p * p * cfg.channels)
    )


@dataclass
class VitFeatures:
    """Recorded feature maps: per recorded layer, one [side, side, dim] map per tile."""

    recorded_layers: tuple[int, ...]
    per_layer: dict[int, list[Tensor]]
    grid_side: int

    def flat(self, layer: int) -> Tensor:
        """All tiles' tokens for one layer, tile-major [tiles * side^2, dim]."""
        if layer not in self.per_layer:
            raise KeyError(f"layer {layer} was not recorded (have {self.recorded_layers})")
        n = self.grid_side * self.grid_side
        maps = self.per_layer[layer]
        return ad.concat([ad.reshape(m, (n, m.shape[2])) for m in maps], axis=0)

    @property
    def tile_count(self) -> int:
        return len(self.per_layer[self.recorded_layers[0]])


def encode_tile(tile: np.ndarray, params: EncoderParams, cfg: EncoderConfig) -> dict[int, Tensor]:
    """Run the encoder on one tile; returns recorded layer -> [side, side, dim]."""
    x = ad.add(ad.matmul(Tensor(patchify(tile, cfg)), params.patch_w), params.patch_b)
    g = cfg.grid_side
    recorded: dict[int, Tensor] = {}
    want = set(cfg.recorded_layers)
    for i, block in enumerate(params.blocks):
        x = _block_forward(x, block, cfg.n_heads)
        if i in want:
            recorded[i] = ad.reshape(x, (g, g, cfg.dim))
    return recorded
