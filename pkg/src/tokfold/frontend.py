"""End-to-end image-to-token frontend.

plan_crop -> tile_image -> encoder -> query proposal -> decoder ->
scan-order rearrangement -> 1x4 grouping -> output projection. Every
tile contributes 256 encoder tokens and exactly 16 output tokens; the
optional thumbnail takes the same path as a 1x1 grid and its tokens are
appended after the sub-image tokens.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .cropping import CropConfig, CropPlan, plan_crop, tile_image
from .encoder import EncoderConfig, EncoderParams, VitFeatures, encode_tile, init_encoder
from .posembed import SlerpPositionTable
from .resampler import (
    DecoderLayerParams,
    QpnParams,
    ResamplerConfig,
    RoutingTable,
    decoder_forward,
    group_concat,
    permute_rows,
    propose_queries,
    rearrange_permutation,
)

__all__ = ["FrontendParams", "init_frontend", "compress_image", "compress_grid", "output_token_count"]


@dataclass
class FrontendParams:
    ecfg: EncoderConfig
    rcfg: ResamplerConfig
    routing: RoutingTable
    encoder: EncoderParams
    qpn: QpnParams
    decoder: list[DecoderLayerParams]
    spe: SlerpPositionTable
    out_w: Tensor
    out_b: Tensor


def _param(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Tensor:
    return Tensor(rng.standard_normal(shape) / np.sqrt(fan_in), requires_grad=True)


def _init_decoder_layer(rng: np.random.Generator, d_model: int, d_enc: int) -> DecoderLayerParams:
    hidden = 2 * d_model
    ones = lambda: Tensor(np.ones(d_model), requires_grad=True)
    zeros = lambda n=d_model: Tensor(np.zeros(n), requires_grad=True)
    return DecoderLayerParams(
        ln_self_g=ones(),
        ln_self_b=zeros(),
        self_wq=_param(rng, (d_model, d_model), d_model),
        self_wk=_param(rng, (d_model, d_model), d_model),
        self_wv=_param(rng, (d_model, d_model), d_model),
        self_wo=_param(rng, (d_model, d_model), d_model),
        ln_cross_g=ones(),
        ln_cross_b=zeros(),
        cross_wq=_param(rng, (d_model, d_model), d_model),
        cross_wk=_param(rng, (d_enc, d_model), d_enc),
        cross_wv=_param(rng, (d_enc, d_model), d_enc),
        cross_wo=_param(rng, (d_model, d_model), d_model),
        ln_mlp_g=ones(),
        ln_mlp_b=zeros(),
        mlp_w1=_param(rng, (d_model, hidden), d_model),
        mlp_b1=zeros(hidden),
        mlp_w2=_param(rng, (hidden, d_model), hidden),
        mlp_b2=zeros(),
    )


def init_frontend(
    ecfg: EncoderConfig = EncoderConfig(),
    rcfg: ResamplerConfig = ResamplerConfig(),
    routing: RoutingTable | None = None,
    seed: int = 0,
) -> FrontendParams:
    if routing is None:
        routing = RoutingTable()
    routing.validate_against(ecfg.recorded_layers, rcfg.n_layers)
    rng = np.random.default_rng(seed)
    qpn = QpnParams(
        w1=_param(rng, (ecfg.dim, ecfg.dim), ecfg.dim),
        b1=Tensor(np.zeros(ecfg.dim), requires_grad=True),
        w2=_param(rng, (ecfg.dim, rcfg.d_model), ecfg.dim),
        b2=Tensor(np.zeros(rcfg.d_model), requires_grad=True),
    )
    return FrontendParams(
        ecfg=ecfg,
        rcfg=rcfg,
        routing=routing,
        encoder=init_encoder(ecfg, rng),
        qpn=qpn,
        decoder=[_init_decoder_layer(rng, rcfg.d_model, ecfg.dim) for _ in range(rcfg.n_layers)],
        spe=SlerpPositionTable.random(rcfg.d_model, rcfg.n_heads, seed=seed + 1),
        out_w=_param(rng, (rcfg.group * rcfg.d_model, rcfg.d_out), rcfg.group * rcfg.d_model),
        out_b=Tensor(np.zeros(rcfg.d_out), requires_grad=True),
    )


def compress_grid(tiles: list[np.ndarray], grid: tuple[int, int], params: FrontendParams) -> Tensor:
    """Compress one tile grid into 16 tokens per tile."""
    rows, cols = grid
    if len(tiles) != rows * cols:
        raise ValueError(f"expected {rows * cols} tiles, got {len(tiles)}")
    rcfg = params.rcfg
    per_layer: dict[int, list[Tensor]] = {layer: [] for layer in params.ecfg.recorded_layers}
    queries = []
    deepest = params.ecfg.recorded_layers[-1]
    for tile in tiles:
        recorded = encode_tile(tile, params.encoder, params.ecfg)
        for layer, fmap in recorded.items():
            per_layer[layer].append(fmap)
        queries.append(propose_queries(recorded[deepest], params.qpn))
    feats = VitFeatures(params.ecfg.recorded_layers, per_layer, params.ecfg.grid_side)
    q = ad.concat(queries, axis=0)
    decoded = decoder_forward(
        q, feats, params.routing, params.spe, grid, params.decoder, rcfg.n_heads, rcfg.query_side
    )
    ordered = permute_rows(decoded, rearrange_permutation(rows, cols, rcfg.query_side))
    grouped = group_concat(ordered, rcfg.group)
    return ad.add(ad.matmul(grouped, params.out_w), params.out_b)


def compress_image(img: np.ndarray, cfg: CropConfig, params: FrontendParams) -> Tensor:
    """Full frontend pass: [16 * (tiles + thumbnail), d_out] tokens."""
    plan = plan_crop(img.shape[1], img.shape[0], cfg)
    tiles, thumb = tile_image(img, plan, cfg)
    out = compress_grid(tiles, (plan.rows, plan.cols), params)
    if thumb is not None:
        out = ad.concat([out, compress_grid([thumb], (1, 1), params)], axis=0)
    return out


def output_token_count(plan: CropPlan, rcfg: ResamplerConfig = ResamplerConfig()) -> int:
    """Token count the frontend will emit for a crop plan, without running it."""
    tile_tokens = len(rearrange_permutation(plan.rows, plan.cols, rcfg.query_side)) // rcfg.group
    thumb_tokens = rcfg.queries_per_tile // rcfg.group if plan.has_thumbnail else 0
    return tile_tokens + thumb_tokens
