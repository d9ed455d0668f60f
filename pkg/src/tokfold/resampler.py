"""Token compressor: query proposal, cross-attention decoding, rearrangement.

Each 16x16 tile feature map is pooled into an 8x8 query grid (4x fewer),
the queries are refined by 4 bidirectional decoder layers that cross-
attend to encoder features at configurable depths (deep to shallow), and
the refined tokens are re-ordered into whole-image line-scan order and
concatenated in 1x4 groups (another 4x), for 16x compression overall
inside a 2x8 subsampling window.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import VitFeatures, multi_head_attention
from .posembed import SlerpPositionTable, position_grid

__all__ = [
    "ResamplerConfig",
    "RoutingTable",
    "QpnParams",
    "DecoderLayerParams",
    "propose_queries",
    "decoder_forward",
    "rearrange_permutation",
    "permute_rows",
    "group_concat",
]


@dataclass(frozen=True)
class ResamplerConfig:
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 4
    query_side: int = 8  # queries per tile edge; 64 queries per tile
    d_out: int = 64
    group: int = 4  # tokens concatenated per output token

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must divide into heads")
        if self.query_side < 1 or self.group < 1:
            raise ValueError("query_side and group must be positive")

    @property
    def queries_per_tile(self) -> int:
        return self.query_side * self.query_side

    @property
    def tokens_per_tile(self) -> int:
        return self.queries_per_tile // self.group

    @property
    def window(self) -> tuple[int, int]:
        # 2x2 pooling then a 1xgroup row window
        return (2, 2 * self.group)


@dataclass(frozen=True)
class RoutingTable:
    """Which encoder layer each decoder layer cross-attends to."""

    encoder_layers: tuple[int, ...] = (26, 22, 18, 14)

    def __post_init__(self):
        layers = self.encoder_layers
        if any(layers[i] < layers[i + 1] for i in range(len(layers) - 1)):
            raise ValueError("routing must be deep-to-shallow (non-increasing)")

    def __len__(self) -> int:
        return len(self.encoder_layers)

    def validate_against(self, recorded: tuple[int, ...], n_layers: int) -> None:
        if len(self.encoder_layers) != n_layers:
            raise ValueError(f"routing has {len(self.encoder_layers)} entries, decoder has {n_layers} layers")
        missing = [e for e in self.encoder_layers if e not in recorded]
        if missing:
            raise ValueError(f"routing references unrecorded encoder layers {missing}")


@dataclass
class QpnParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


@dataclass
class DecoderLayerParams:
    ln_self_g: Tensor
    ln_self_b: Tensor
    self_wq: Tensor
    self_wk: Tensor
    self_wv: Tensor
    self_wo: Tensor
    ln_cross_g: Tensor
    ln_cross_b: Tensor
    cross_wq: Tensor
    cross_wk: Tensor
    cross_wv: Tensor
    cross_wo: Tensor
    ln_mlp_g: Tensor
    ln_mlp_b: Tensor
    mlp_w1: Tensor
    mlp_b1: Tensor
    mlp_w2: Tensor
    mlp_b2: Tensor


def propose_queries(feat: Tensor, params: QpnParams) -> Tensor:
    """Derive resampler queries from one tile's feature map.

    Pointwise MLP (one hidden gelu layer), 2x2 max pooling, dense
    projection: a [16, 16, d] map becomes [64, d_model], so the query
    count follows the tile count instead of being fixed.
    """
    if feat.ndim != 3:
        raise ValueError(f"expected [h, w, d] features, got {feat.shape}")
    h, w, d = feat.shape
    if h % 2 or w % 2:
        raise ValueError(f"spatial extents must be even, got {h}x{w}")
    hidden = params.w1.shape[1]
    x = ad.gelu(ad.add(ad.matmul(ad.reshape(feat, (h * w, d)), params.w1), params.b1))
    x = ad.max_pool_2x2(ad.reshape(x, (h, w, hidden)))
    x = ad.reshape(x, ((h // 2) * (w // 2), hidden))
    return ad.add(ad.matmul(x, params.w2), params.b2)


def decoder_forward(
    queries: Tensor,
    feats: VitFeatures,
    routing: RoutingTable,
    spe: SlerpPositionTable | None,
    grid: tuple[int, int],
    layers: list[DecoderLayerParams],
    n_heads: int,
    query_side: int = 8,
) -> Tensor:
    """Refine queries through self-attention + routed cross-attention layers.

    `queries` are tile-major over a `grid` = (rows, cols) tile layout,
    `query_side`^2 per tile. Positional embeddings for the whole-image
    query grid are added before the first layer when `spe` is given.
    Pre-norm residual blocks throughout, so zeroed output projections
    make the whole stack an identity.
    """
    routing.validate_against(feats.recorded_layers, len(layers))
    rows, cols = grid
    q_count = query_side * query_side * rows * cols
    if queries.shape[0] != q_count:
        raise ValueError(f"expected {q_count} queries for a {rows}x{cols} grid, got {queries.shape[0]}")
    x = queries
    if spe is not None:
        grid_pos = position_grid(spe, query_side * rows, query_side * cols)
        dest = rearrange_permutation(rows, cols, query_side)
        x = ad.add(x, Tensor(grid_pos[dest]))
    for p, enc_layer in zip(layers, routing.encoder_layers):
        h = ad.layer_norm(x, p.ln_self_g, p.ln_self_b)
        x = ad.add(x, multi_head_attention(h, h, p.self_wq, p.self_wk, p.self_wv, p.self_wo, n_heads))
        h = ad.layer_norm(x, p.ln_cross_g, p.ln_cross_b)
        kv = feats.flat(enc_layer)
        x = ad.add(x, multi_head_attention(h, kv, p.cross_wq, p.cross_wk, p.cross_wv, p.cross_wo, n_heads))
        h = ad.layer_norm(x, p.ln_mlp_g, p.ln_mlp_b)
        h = ad.matmul(ad.gelu(ad.add(ad.matmul(h, p.mlp_w1), p.mlp_b1)), p.mlp_w2)
        x = ad.add(x, ad.add(h, p.mlp_b2))
    return x


def rearrange_permutation(rows: int, cols: int, query_side: int = 8) -> np.ndarray:
    """Destination map from tile-major token order to whole-image scan order.

    Token i in tile-major order (tile (a, b) of the rows x cols grid,
    local (y, x) inside the tile's query grid) lands at global position
    (query_side*a + y) * (query_side*cols) + (query_side*b + x), i.e. the
    line-by-line scan of the full (query_side*rows) x (query_side*cols)
    grid, interleaving tiles that share a row. Always a bijection.
    """
    if rows < 1 or cols < 1:
        raise ValueError("grid extents must be positive")
    s = query_side
    n = s * s * rows * cols
    dest = np.empty(n, dtype=np.int64)
    width = s * cols
    i = 0
    for a in range(rows):
        for b in range(cols):
            for y in range(s):
                for x in range(s):
                    dest[i] = (s * a + y) * width + (s * b + x)
                    i += 1
    return dest


def permute_rows(tokens: Tensor, dest: np.ndarray) -> Tensor:
    """Reorder token rows so row i of the input lands at row dest[i]."""
    order = np.argsort(dest, kind="stable")
    return ad.concat([tokens[int(i) : int(i) + 1] for i in order], axis=0)


def group_concat(tokens: Tensor, group: int = 4) -> Tensor:
    """Concatenate consecutive `group` tokens channel-wise.

    Input must already be in whole-image scan order; since every global
    row holds a multiple of `group` tokens, no window straddles a row.
    """
    n = tokens.shape[0]
    if n % group:
        raise ValueError(f"token count {n} not divisible by {group}")
    return ad.concat([tokens[k::group] for k in range(group)], axis=1)
