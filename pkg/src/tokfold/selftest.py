"""Fast invariant suite behind the `selftest` CLI subcommand.

One check per core contract, each a few hundred milliseconds at most.
The pytest suite is the authoritative gate; this is the smoke-test
version that ships with the CLI.
"""

from __future__ import annotations

import json
import tempfile
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, backward
from .coords import BBox, CoordVocab, decode_box, encode_box, encode_box_digits
from .cropping import CropConfig, plan_crop, stitch_tiles, tile_image
from .datapipe import PackStream, StreamSample, build_shards, open_pipeline, resume_pipeline, snapshot_doc
from .frontend import output_token_count
from .planner import StageModel, partition
from .posembed import SlerpPositionTable, position_grid
from .resampler import rearrange_permutation

__all__ = ["run_selftest", "CHECKS"]


def _check_autodiff() -> dict:
    rng = np.random.default_rng(7)
    a = Tensor(rng.standard_normal((4, 5)), requires_grad=True)
    b = Tensor(rng.standard_normal((5, 3)), requires_grad=True)
    loss = ad.matmul(a, b).sum()
    backward(loss)
    h = 1e-5
    i, j = 2, 1
    base = a.data.copy()
    a.data[i, j] = base[i, j] + h
    up = (a.data @ b.data).sum()
    a.data[i, j] = base[i, j] - h
    dn = (a.data @ b.data).sum()
    a.data[i, j] = base[i, j]
    fd = (up - dn) / (2 * h)
    err = abs(fd - a.grad[i, j]) / max(1.0, abs(fd))
    assert err < 1e-6, f"matmul gradient off by {err}"
    p = ad.softmax_rows(Tensor(rng.standard_normal((6, 9)) * 100)).data
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)
    return {"matmul_grad_rel_err": err}


def _check_crop() -> dict:
    plan = plan_crop(896, 672)
    assert (plan.rows, plan.cols) == (3, 4), f"896x672 gave {plan.rows}x{plan.cols}"
    cfg = CropConfig(thumbnail=False)
    for w, h in ((10000, 224), (896, 672), (5000, 5000), (224, 9000)):
        p = plan_crop(w, h, cfg)
        assert p.rows * p.cols <= cfg.max_area and max(p.rows, p.cols) <= cfg.max_side
    img = np.random.default_rng(1).uniform(size=(672, 896))
    tiles, _ = tile_image(img, plan, CropConfig())
    from .cropping import bilinear_resize

    assert np.array_equal(stitch_tiles(tiles, plan.rows, plan.cols), bilinear_resize(img, 672, 896))
    return {"grid_896x672": [plan.rows, plan.cols]}


def _check_posembed() -> dict:
    from .posembed import axis_embedding

    table = SlerpPositionTable.random(32, 8, seed=3)
    grid = position_grid(table, 4, 6)
    assert grid.shape == (24, 32)
    dh = table.head_dim
    worst = 0.0
    for t in (0.0, 0.3, 0.5, 1.0):
        e = axis_embedding(table.e0_row, table.e1_row, table.n_heads, t)
        for h in range(table.n_heads):
            norm = float(np.linalg.norm(e[h * dh : (h + 1) * dh]))
            worst = max(worst, abs(norm - np.sqrt(dh)))
    assert worst < 1e-9, f"per-head norm drift {worst}"
    return {"per_head_norm_err": worst}


def _check_permutation() -> dict:
    for rows, cols in ((1, 1), (1, 2), (3, 4), (12, 12)):
        dest = rearrange_permutation(rows, cols)
        assert sorted(dest.tolist()) == list(range(64 * rows * cols))
    return {"largest_grid": "12x12"}


def _check_token_ratio() -> dict:
    cfg = CropConfig(thumbnail=False)
    for rows in range(1, 13):
        for cols in range(1, 13):
            if rows * cols > cfg.max_area:
                continue
            plan = plan_crop(cols * 224, rows * 224, cfg)
            n = output_token_count(plan)
            assert 256 * plan.tile_count == 16 * n, f"ratio broken at {rows}x{cols}"
    return {"ratio": 16}


def _check_coords() -> dict:
    v = CoordVocab()
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(1000):
        x1, x2 = sorted(rng.uniform(size=2))
        y1, y2 = sorted(rng.uniform(size=2))
        b = BBox(x1, y1, x2, y2)
        seq = encode_box(b, v)
        assert len(seq) == 7
        assert len(encode_box_digits(b)) == 25
        d = decode_box(seq, v)
        worst = max(worst, abs(d.x1 - x1), abs(d.y1 - y1), abs(d.x2 - x2), abs(d.y2 - y2))
    assert worst <= 0.5 / 999 + 1e-12
    return {"roundtrip_inf_err": worst}


def _mk_dataset(tmp: Path, name: str, n: int, seed: int):
    rng = np.random.default_rng(seed)
    samples = [
        {"json": json.dumps({"tokens": rng.integers(1, 100, size=rng.integers(5, 40)).tolist(),
                             "tiles": int(rng.integers(0, 4))}).encode()}
        for _ in range(n)
    ]
    return build_shards(samples, 7, seed, tmp, dataset=name)


def _check_resume() -> dict:
    with tempfile.TemporaryDirectory() as td:
        tmp = Path(td)
        a = _mk_dataset(tmp, "a", 30, 11)
        b = _mk_dataset(tmp, "b", 20, 12)
        pipeline = {
            "kind": "pack",
            "manifests": [str(a.manifest_path), str(b.manifest_path)],
            "weights": [2.0, 1.0],
            "policies": ["drop", "drop"],
            "seed": 99,
            "pack": {"context": 128, "max_tiles": 16},
        }
        full = [p.to_json() for p in open_pipeline(pipeline)]
        run = open_pipeline(pipeline)
        head = [next(run).to_json() for _ in range(3)]
        doc = snapshot_doc(pipeline, run)
        tail = [p.to_json() for p in resume_pipeline(json.loads(json.dumps(doc)))]
        assert head + tail == full, "resumed stream diverged"
    return {"packs": len(full)}


def _check_packing() -> dict:
    samples = [
        StreamSample("mem", str(i), {"json": json.dumps({"tokens": [1] * 3, "tiles": 3}).encode()})
        for i in range(40)
    ]
    packs = list(PackStream(iter(samples), context=4096, max_tiles=108))
    assert len(packs[0].sample_keys) == 36  # 36 * 3 tiles saturates the budget
    for p in packs:
        assert p.used <= 4096 and p.tile_count <= 108
    return {"first_pack_samples": len(packs[0].sample_keys)}


def _brute_force_bottleneck(vision: float, costs: tuple[float, ...], stages: int) -> float:
    from itertools import combinations

    n = len(costs)
    if stages == 1:
        return vision + sum(costs)
    best = float("inf")
    for bs in combinations(range(0, n), stages - 1):
        edges = (0, *bs, n)
        worst = vision + sum(costs[: bs[0]])
        for i in range(1, stages):
            worst = max(worst, sum(costs[edges[i] : edges[i + 1]]))
        best = min(best, worst)
    return best


def _check_planner() -> dict:
    rng = np.random.default_rng(17)
    for _ in range(30):
        n = int(rng.integers(3, 9))
        stages = int(rng.integers(2, min(4, n) + 1))
        costs = tuple(float(c) for c in rng.uniform(0.5, 3.0, size=n))
        vision = float(rng.uniform(0, 3))
        plan = partition(StageModel(vision, costs, stages))
        best = _brute_force_bottleneck(vision, costs, stages)
        assert abs(plan.bottleneck - best) < 1e-9, f"planner suboptimal: {plan.bottleneck} vs {best}"
    return {"instances": 30}


CHECKS = [
    ("autodiff gradients and softmax rows", _check_autodiff),
    ("crop plan caps and stitching", _check_crop),
    ("position grid shape", _check_posembed),
    ("rearrangement bijection", _check_permutation),
    ("16x token ratio over admissible grids", _check_token_ratio),
    ("coordinate codec round trip", _check_coords),
    ("stream/mix/pack resume equivalence", _check_resume),
    ("packing budgets", _check_packing),
    ("stage partition optimality", _check_planner),
]


def run_selftest(emit) -> int:
    """Run all checks; emit one JSON-able dict per check. Returns failures."""
    failures = 0
    for name, fn in CHECKS:
        try:
            detail = fn()
            emit({"check": name, "ok": True, **detail})
        except Exception as e:  # report and keep going
            failures += 1
            emit({"check": name, "ok": False, "error": str(e)})
    return failures
