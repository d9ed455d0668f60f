"""Render demonstration figures to files alongside a JSONL summary.

Used by the `report` CLI subcommand. Figures are written as PNG into the
output directory; one JSON line per artifact lands in report.jsonl and
is echoed to stdout by the CLI.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .cropping import CropConfig, plan_crop
from .datapipe import PackStream, StreamSample
from .planner import StageModel, bubble_fraction, partition
from .posembed import SlerpPositionTable, axis_embedding

__all__ = ["make_report"]


def _fig_crop_grids(out: Path) -> dict:
    cfg = CropConfig()
    sizes = [(448, 224), (896, 672), (2000, 500), (500, 2000), (3000, 3000), (10000, 224)]
    fig, axes = plt.subplots(2, 3, figsize=(10, 6))
    for ax, (w, h) in zip(axes.flat, sizes):
        plan = plan_crop(w, h, cfg)
        ax.add_patch(plt.Rectangle((0, 0), plan.scaled_w, plan.scaled_h, fill=False, lw=1.2))
        for r, c in plan.tiles:
            ax.add_patch(
                plt.Rectangle(
                    (c * cfg.tile_px, r * cfg.tile_px), cfg.tile_px, cfg.tile_px,
                    fill=False, ec="tab:blue", lw=0.6,
                )
            )
        ax.set_title(f"{w}x{h} -> {plan.cols}x{plan.rows} tiles", fontsize=9)
        ax.set_xlim(-50, plan.scaled_w + 50)
        ax.set_ylim(plan.scaled_h + 50, -50)
        ax.set_aspect("equal")
        ax.tick_params(labelsize=7)
    fig.suptitle("Shape-adaptive crop plans (area cap 36, side cap 12)")
    fig.tight_layout()
    path = out / "crop_grids.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return {"figure": "crop_grids", "path": str(path), "examples": len(sizes)}


def _fig_slerp(out: Path, seed: int) -> dict:
    table = SlerpPositionTable.random(64, 8, seed=seed)
    dh = table.head_dim
    ts = np.linspace(0.0, 1.0, 101)
    embs = np.stack([axis_embedding(table.e0_row, table.e1_row, table.n_heads, t) for t in ts])
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    e0 = axis_embedding(table.e0_row, table.e1_row, table.n_heads, 0.0)
    for h in range(table.n_heads):
        sl = slice(h * dh, (h + 1) * dh)
        norms = np.linalg.norm(embs[:, sl], axis=1)
        ax1.plot(ts, norms, lw=1)
        u = embs[:, sl] / norms[:, None]
        u0 = e0[sl] / np.linalg.norm(e0[sl])
        ang = 2 * np.arcsin(np.clip(np.linalg.norm(u - u0[None, :], axis=1) / 2, 0, 1))
        ax2.plot(ts, ang, lw=1)
    ax1.set_xlabel("t")
    ax1.set_ylabel("per-head norm")
    ax1.axhline(np.sqrt(dh), color="k", ls=":", lw=0.8)
    ax1.set_title("norm stays sqrt(head_dim)")
    ax2.set_xlabel("t")
    ax2.set_ylabel("angle from t=0 endpoint (rad)")
    ax2.set_title("angle grows linearly in t")
    fig.tight_layout()
    path = out / "slerp_embedding.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return {"figure": "slerp_embedding", "path": str(path), "heads": table.n_heads}


def _fig_packing(out: Path, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    samples = [
        StreamSample(
            "demo",
            str(i),
            {"json": json.dumps({
                "tokens": [1] * int(rng.integers(64, 2400)),
                "tiles": int(rng.integers(1, 14)),
            }).encode()},
        )
        for i in range(600)
    ]
    packs = list(PackStream(iter(samples)))
    util = [p.used / p.context for p in packs]
    tiles = [p.tile_count for p in packs]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    ax1.hist(util, bins=20, color="tab:blue")
    ax1.set_xlabel("token utilization")
    ax1.set_ylabel("packs")
    ax1.set_title(f"context 4096, {len(packs)} packs")
    ax2.hist(tiles, bins=20, color="tab:orange")
    ax2.axvline(108, color="k", ls=":", lw=0.8)
    ax2.set_xlabel("tiles per pack (cap 108)")
    ax2.set_title("tile budget")
    fig.tight_layout()
    path = out / "packing.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return {
        "figure": "packing",
        "path": str(path),
        "packs": len(packs),
        "mean_utilization": float(np.mean(util)),
    }


def _fig_pipeline(out: Path, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    costs = tuple(float(c) for c in rng.uniform(0.8, 1.2, size=28))
    vision = 4.0
    model = StageModel(vision, costs, stages=4, micro_batches=8)
    plan = partition(model)
    fig, ax = plt.subplots(figsize=(7, 4))
    xs = np.arange(plan.stages)
    ax.bar(xs, plan.stage_costs, color="tab:green")
    ax.bar(0, vision, color="tab:red", label="vision + resampler")
    ax.axhline(plan.bottleneck, color="k", ls=":", lw=0.8)
    layer_spans = plan.stage_layers(len(costs))
    ax.set_xticks(xs, [f"stage {i}\n{hi - lo} layers" for i, (lo, hi) in enumerate(layer_spans)])
    ax.set_ylabel("cost (abstract units)")
    ax.set_title(f"bubble ~ {plan.bubble:.3f} at M={model.micro_batches}")
    ax.legend()
    fig.tight_layout()
    path = out / "pipeline.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return {
        "figure": "pipeline",
        "path": str(path),
        "boundaries": list(plan.boundaries),
        "bubble": plan.bubble,
        "bubble_m1": bubble_fraction(plan, 1),
    }


def make_report(out_dir: str | Path, seed: int = 0) -> list[dict]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = [
        _fig_crop_grids(out),
        _fig_slerp(out, seed),
        _fig_packing(out, seed),
        _fig_pipeline(out, seed),
    ]
    with open(out / "report.jsonl", "w") as fh:
        for e in entries:
            fh.write(json.dumps(e, separators=(",", ":")) + "\n")
    return entries
