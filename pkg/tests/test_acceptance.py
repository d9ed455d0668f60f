"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines. Tolerances and runtime budgets are pinned here, not configurable.
"""

import json
import math
import time
from contextlib import contextmanager
from itertools import combinations

import numpy as np
import pytest

from tokfold import autodiff as ad
from tokfold.autodiff import Tensor, backward
from tokfold.coords import (
    BBox,
    CoordVocab,
    decode_box,
    detection_head_loss,
    encode_box,
    encode_box_digits,
    init_detection_head,
    predict_boxes,
)
from tokfold.cropping import CropConfig, plan_crop
from tokfold.datapipe import (
    PackStream,
    SampleTooLargeError,
    ShardStream,
    StreamSample,
    assign_chunks,
    build_shards,
    open_pipeline,
    resume_pipeline,
    snapshot_doc,
)
from tokfold.encoder import EncoderConfig
from tokfold.frontend import compress_image, init_frontend, output_token_count
from tokfold.planner import StageModel, partition
from tokfold.posembed import SlerpPositionTable, axis_embedding, slerp_interpolate
from tokfold.resampler import ResamplerConfig, RoutingTable, rearrange_permutation

from conftest import assert_grad_close, finite_difference

TEST_ECFG = EncoderConfig(depth=8, dim=32, n_heads=4, channels=1, recorded_layers=(1, 3, 5, 7))
TEST_RCFG = ResamplerConfig(d_model=32, n_heads=4, d_out=32)
TEST_ROUTING = RoutingTable((7, 5, 3, 1))


@contextmanager
def criterion(num, name, budget_s):
    start = time.perf_counter()
    try:
        yield
    except Exception:
        print(f"criterion {num} ({name}): FAIL")
        raise
    elapsed = time.perf_counter() - start
    verdict = "PASS" if elapsed < budget_s else "FAIL (over time budget)"
    print(f"criterion {num} ({name}): {verdict} [{elapsed:.2f}s < {budget_s}s]")
    assert elapsed < budget_s, f"criterion {num} took {elapsed:.2f}s, budget {budget_s}s"


def test_criterion_1_compression_constant():
    with criterion(1, "compression constant", 10):
        params = init_frontend(TEST_ECFG, TEST_RCFG, TEST_ROUTING, seed=0)
        rng = np.random.default_rng(0)
        out = compress_image(rng.uniform(size=(224, 448)), CropConfig(thumbnail=False), params)
        assert out.shape[0] == 32
        out = compress_image(rng.uniform(size=(224, 224)), CropConfig(thumbnail=False), params)
        assert out.shape[0] == 16
        # exhaustive 16x ratio holds on every admissible grid
        cfg = CropConfig(thumbnail=False)
        checked = 0
        for rows in range(1, 13):
            for cols in range(1, 13):
                if rows * cols > cfg.max_area:
                    continue
                plan = plan_crop(cols * 224, rows * 224, cfg)
                assert (plan.rows, plan.cols) == (rows, cols)
                vit_tokens = 256 * plan.tile_count
                out_tokens = output_token_count(plan)
                assert vit_tokens == 16 * out_tokens
                checked += 1
        assert checked == 80  # admissible (rows, cols) pairs within the caps


def test_criterion_2_crop_example():
    with criterion(2, "crop example", 1):
        plan = plan_crop(896, 672)
        assert (plan.rows, plan.cols) == (3, 4)
        assert (plan.rows, plan.cols) != (6, 8)
        cfg = CropConfig()
        for w in range(64, 12000, 331):
            for h in range(64, 12000, 331):
                p = plan_crop(w, h, cfg)
                assert p.rows * p.cols <= 36
                assert max(p.rows, p.cols) <= 12
                assert p.scaled_w * p.scaled_h <= 36 * 224 * 224  # ~1.806M pixel budget
                assert max(p.scaled_w, p.scaled_h) <= 2688


def test_criterion_3_coordinate_token_counts():
    with criterion(3, "coordinate token counts", 1):
        rng = np.random.default_rng(3)
        v = CoordVocab(bins=1000)
        bound = 0.5 / 999
        for _ in range(10**4):
            x1, x2 = sorted(rng.uniform(size=2))
            y1, y2 = sorted(rng.uniform(size=2))
            b = BBox(float(x1), float(y1), float(x2), float(y2))
            seq = encode_box(b, v)
            assert len(seq) == 7
            assert len(encode_box_digits(b)) == 25
            d = decode_box(seq, v)
            err = max(abs(d.x1 - b.x1), abs(d.y1 - b.y1), abs(d.x2 - b.x2), abs(d.y2 - b.y2))
            assert err <= bound + 1e-15


def test_criterion_4_spe_correctness():
    with criterion(4, "positional interpolation", 5):
        import mpmath

        rng = np.random.default_rng(4)
        n_heads, dh = 8, 8
        table = SlerpPositionTable.random(n_heads * dh, n_heads, seed=4)
        s = math.sqrt(dh)
        for h in range(n_heads):
            sl = slice(h * dh, (h + 1) * dh)
            e0, e1 = table.e0_row[sl], table.e1_row[sl]
            u0 = slerp_interpolate(e0, e1, 0.0)
            u1 = slerp_interpolate(e0, e1, 1.0)
            assert np.array_equal(u0, e0 / np.linalg.norm(e0) * s)
            assert np.array_equal(u1, e1 / np.linalg.norm(e1) * s)
            un0, un1 = u0 / s, u1 / s
            theta = 2 * math.asin(min(1.0, float(np.linalg.norm(un0 - un1)) / 2))
            for t in np.linspace(0.0, 1.0, 100):
                e_t = slerp_interpolate(e0, e1, float(t))
                assert abs(np.linalg.norm(e_t) - s) < 1e-9  # norm = sqrt(d_h)
                ut = e_t / np.linalg.norm(e_t)
                ang = 2 * math.asin(min(1.0, float(np.linalg.norm(ut - un0)) / 2))
                assert abs(ang - t * theta) < 1e-9  # angle linear in t
        # independent high-precision oracle
        with mpmath.workdps(50):
            for _ in range(20):
                e0 = rng.standard_normal(dh)
                e1 = rng.standard_normal(dh)
                t = float(rng.uniform())
                v0 = [mpmath.mpf(float(x)) for x in e0]
                v1 = [mpmath.mpf(float(x)) for x in e1]
                sm = mpmath.sqrt(dh)
                n0 = mpmath.sqrt(mpmath.fsum(x * x for x in v0))
                n1 = mpmath.sqrt(mpmath.fsum(x * x for x in v1))
                w0 = [x / n0 * sm for x in v0]
                w1 = [x / n1 * sm for x in v1]
                cos = mpmath.fsum(a * b for a, b in zip(w0, w1)) / (sm * sm)
                theta = mpmath.acos(cos)
                st = mpmath.sin(theta)
                c0 = mpmath.sin((1 - mpmath.mpf(t)) * theta) / st
                c1 = mpmath.sin(mpmath.mpf(t) * theta) / st
                oracle = np.array([float(c0 * a + c1 * b) for a, b in zip(w0, w1)])
                ours = slerp_interpolate(e0, e1, t)
                assert np.allclose(ours, oracle, atol=1e-12)


def test_criterion_5_rearrangement_permutation():
    with criterion(5, "rearrangement permutation", 5):
        for rows in range(1, 13):
            for cols in range(1, 13):
                dest = rearrange_permutation(rows, cols)
                n = 64 * rows * cols
                assert np.array_equal(np.sort(dest), np.arange(n))  # bijection
                # brute force: sort token ids by (global_row, global_col)
                width = 8 * cols
                keys = np.empty((n, 2), dtype=np.int64)
                i = 0
                for a in range(rows):
                    for b in range(cols):
                        for y in range(8):
                            for x in range(8):
                                keys[i] = (8 * a + y, 8 * b + x)
                                i += 1
                assert np.array_equal(dest, keys[:, 0] * width + keys[:, 1])
        # interleaving on the 1x2 case: scan order alternates between tiles row by row
        dest = rearrange_permutation(1, 2)
        gather = np.argsort(dest)
        assert gather[:8].tolist() == list(range(0, 8))  # tile 0 row 0
        assert gather[8:16].tolist() == list(range(64, 72))  # tile 1 row 0
        assert gather[16:24].tolist() == list(range(8, 16))  # back to tile 0 row 1


def test_criterion_6_gradient_integrity():
    with criterion(6, "gradient integrity", 60):
        rng = np.random.default_rng(6)

        def check(build, arrays, grads, per_array=3, rtol=1e-3):
            loss = build()
            backward(loss)
            coords = []
            for ai, arr in enumerate(arrays):
                for _ in range(min(per_array, arr.size)):
                    coords.append((ai, tuple(int(rng.integers(0, s)) for s in arr.shape)))
            numeric = finite_difference(lambda: build().item(), arrays, coords)
            analytic = [grads[ai]()[idx] for ai, idx in coords]
            assert_grad_close(analytic, numeric, rtol=rtol)

        # every differentiable op
        x = Tensor(rng.standard_normal((6, 8)), requires_grad=True)
        w = Tensor(rng.standard_normal((8, 4)), requires_grad=True)
        g = Tensor(rng.uniform(0.5, 1.5, size=8), requires_grad=True)
        b = Tensor(rng.standard_normal(8), requires_grad=True)
        p3 = Tensor(rng.standard_normal((4, 6, 5)), requires_grad=True)
        far = Tensor(rng.uniform(0.5, 1.5, size=(6, 8)) * rng.choice([-1.0, 1.0], size=(6, 8)), requires_grad=True)

        pool_w = Tensor(rng.standard_normal((2, 3, 5)))  # fixed multiplier for the pooled map
        half = Tensor(x.data * 0.5)  # snapshot, not rebuilt under perturbation

        check(lambda: ad.matmul(x, w).sum(), [x.data, w.data], [lambda: x.grad, lambda: w.grad])
        check(lambda: ad.mul(ad.softmax_rows(x), x).sum(), [x.data], [lambda: x.grad])
        check(lambda: ad.mul(ad.layer_norm(x, g, b), x).sum(), [x.data, g.data, b.data],
              [lambda: x.grad, lambda: g.grad, lambda: b.grad])
        check(lambda: ad.mul(ad.max_pool_2x2(p3), pool_w).sum(), [p3.data], [lambda: p3.grad])
        check(lambda: ad.mul(ad.gelu(x), x).sum(), [x.data], [lambda: x.grad])
        check(lambda: far.abs().sum(), [far.data], [lambda: far.grad])
        check(lambda: ad.mul(ad.add(x, b), x).sum(), [x.data, b.data], [lambda: x.grad, lambda: b.grad])
        check(lambda: ad.mul(ad.sub(x, half), x).sum(), [x.data], [lambda: x.grad])
        check(lambda: ad.mul(ad.concat([x[:3], x[3:]], axis=0), x).sum(), [x.data], [lambda: x.grad])
        check(lambda: ad.mul(x[1:5, 2:7], Tensor(np.ones((4, 5)))).sum(), [x.data], [lambda: x.grad])
        check(lambda: ad.mul(x.T, x.T).sum(), [x.data], [lambda: x.grad])
        check(lambda: ad.mul(x.reshape((8, 6)), x.reshape((8, 6))).sum(), [x.data], [lambda: x.grad])

        # composed two-tile frontend at d_model = 32
        params = init_frontend(TEST_ECFG, TEST_RCFG, TEST_ROUTING, seed=6)
        img = rng.uniform(size=(224, 448))
        cfg = CropConfig(thumbnail=False)

        def frontend_loss():
            out = compress_image(img, cfg, params)
            return ad.mul(ad.mul(out, out), 0.5).sum()

        loss = frontend_loss()
        backward(loss)
        probes = [params.qpn.w2, params.decoder[1].self_wq, params.decoder[2].cross_wv,
                  params.encoder.patch_w, params.out_w]
        coords, analytic = [], []
        arrays = [t.data for t in probes]
        for ai, t in enumerate(probes):
            idx = tuple(int(rng.integers(0, s)) for s in t.shape)
            coords.append((ai, idx))
            analytic.append(t.grad[idx])
        numeric = finite_difference(lambda: frontend_loss().item(), arrays, coords)
        assert_grad_close(analytic, numeric, rtol=1e-3)


def _random_dataset(tmp_path, name, n, seed, chunk):
    rng = np.random.default_rng(seed)
    samples = [
        {"json": json.dumps({
            "tokens": rng.integers(1, 5000, size=int(rng.integers(3, 90))).tolist(),
            "tiles": int(rng.integers(0, 6)),
        }).encode()}
        for _ in range(n)
    ]
    return build_shards(samples, chunk, seed, tmp_path / name, dataset=name)


def test_criterion_7_resume_exactness(tmp_path):
    with criterion(7, "resume exactness", 30):
        rng = np.random.default_rng(7)
        for trial in range(20):
            n_datasets = int(rng.integers(1, 4))
            shard_sets = [
                _random_dataset(tmp_path / f"t{trial}", f"d{i}", int(rng.integers(8, 40)),
                                int(rng.integers(0, 10**6)), int(rng.integers(2, 9)))
                for i in range(n_datasets)
            ]
            pipeline = {
                "kind": "pack",
                "manifests": [str(s.manifest_path) for s in shard_sets],
                "weights": [float(w) for w in rng.uniform(0.5, 3.0, size=n_datasets)],
                "policies": ["drop"] * n_datasets,
                "seed": int(rng.integers(0, 10**6)),
                "pack": {"context": 512, "max_tiles": 32},
            }
            baseline = [p.to_json() for p in open_pipeline(pipeline)]
            k = int(rng.integers(0, len(baseline)))
            run = open_pipeline(pipeline)
            head = [next(run).to_json() for _ in range(k)]
            doc = json.loads(json.dumps(snapshot_doc(pipeline, run)))
            tail = [p.to_json() for p in resume_pipeline(doc)]
            assert head + tail == baseline  # byte-identical

        # worker streams disjoint and jointly complete
        shards = _random_dataset(tmp_path, "workers", 53, seed=11, chunk=5)
        for workers in (1, 2, 4):
            seen = []
            for w, chunk_ids in enumerate(assign_chunks(shards, workers)):
                seen.extend(s.key for s in ShardStream(shards, chunk_ids))
            assert sorted(seen) == sorted(f"{i:06d}" for i in range(53))


def test_criterion_8_packing_budgets():
    with criterion(8, "packing budgets", 10):
        rng = np.random.default_rng(8)

        def sample_iter(count):
            for i in range(count):
                tokens = [1] * int(rng.integers(1, 4096))
                tiles = int(rng.integers(0, 109))
                yield StreamSample("mem", str(i), {
                    "json": json.dumps({"tokens": tokens, "tiles": tiles}).encode()
                })

        batches = 0
        mask_samples = 0
        packer = PackStream(sample_iter(25000), context=4096, max_tiles=108)
        for batch in packer:
            assert batch.used <= 4096
            assert batch.tile_count <= 108
            seg = batch.segments
            nz = np.flatnonzero(seg)
            assert np.all(nz == np.arange(len(nz)))  # padding only at the tail
            assert np.all(np.diff(seg[nz]) >= 0)  # contiguous segment runs
            if batches % 500 == 0 and mask_samples < 20:
                mask = batch.visibility_mask()
                expect = (seg[:, None] == seg[None, :]) & (seg[:, None] != 0)
                assert np.array_equal(mask, expect)
                mask_samples += 1
            batches += 1
            if batches >= 10**4:
                break
        assert batches == 10**4

        # oversized rejection carries the key
        too_long = StreamSample("mem", "big", {"json": json.dumps({"tokens": [1] * 5000, "tiles": 0}).encode()})
        with pytest.raises(SampleTooLargeError) as exc:
            next(PackStream(iter([too_long])))
        assert exc.value.key == "mem/big"
        too_tiled = StreamSample("mem", "tiles", {"json": json.dumps({"tokens": [1], "tiles": 109}).encode()})
        with pytest.raises(SampleTooLargeError):
            next(PackStream(iter([too_tiled])))


def test_criterion_9_planner_optimality():
    with criterion(9, "planner optimality", 10):
        rng = np.random.default_rng(9)
        for _ in range(200):
            n = int(rng.integers(1, 13))
            stages = int(rng.integers(1, 5))
            if n < stages - 1:
                stages = n + 1
            costs = tuple(float(c) for c in rng.uniform(0.1, 5.0, size=n))
            vision = float(rng.uniform(0.0, 8.0))
            plan = partition(StageModel(vision, costs, stages))
            # exhaustive oracle
            if stages == 1:
                best = vision + sum(costs)
            else:
                best = math.inf
                for bs in combinations(range(0, n), stages - 1):
                    edges = (0, *bs, n)
                    worst = vision + sum(costs[: bs[0]])
                    for i in range(1, stages):
                        worst = max(worst, sum(costs[edges[i] : edges[i + 1]]))
                    best = min(best, worst)
            assert abs(plan.bottleneck - best) < 1e-9
            assert plan.stage_costs[0] >= vision  # vision pinned to stage 0


def test_criterion_10_detection_head():
    with criterion(10, "detection head", 5):
        rng = np.random.default_rng(10)
        head = init_detection_head(16, seed=10)
        hidden = Tensor(rng.standard_normal((6, 16)))
        pred = predict_boxes(hidden, head)
        assert detection_head_loss(hidden, Tensor(pred.data.copy()), head).item() == 0.0
        nudged = pred.data.copy()
        nudged[0, 0] += 1e-9
        assert detection_head_loss(hidden, Tensor(nudged), head).item() > 0.0
        for delta in (0.2, -0.45):
            loss = detection_head_loss(hidden, Tensor(pred.data + delta), head)
            assert abs(loss.item() - abs(delta)) < 1e-12

        hidden_g = Tensor(rng.standard_normal((5, 16)), requires_grad=True)
        targets = Tensor(rng.uniform(low=2.0, high=3.0, size=(5, 4)))
        backward(detection_head_loss(hidden_g, targets, head))
        arrays = [hidden_g.data, head.w1.data, head.w2.data, head.proj_w.data, head.proj_b.data]
        grads = [hidden_g.grad, head.w1.grad, head.w2.grad, head.proj_w.grad, head.proj_b.grad]
        coords = []
        for ai, arr in enumerate(arrays):
            for _ in range(3):
                coords.append((ai, tuple(int(rng.integers(0, s)) for s in arr.shape)))

        def forward():
            return detection_head_loss(Tensor(hidden_g.data), targets, head).item()

        numeric = finite_difference(forward, arrays, coords)
        analytic = [grads[ai][idx] for ai, idx in coords]
        assert_grad_close(analytic, numeric, rtol=1e-5)
