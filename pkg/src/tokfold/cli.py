"""Command-line entry point.

Machine-readable output is line-delimited JSON on stdout; stderr carries
diagnostics only. Exit codes: 0 success, 1 usage error, 2 data error.
The TH2_SEED environment variable overrides default seeds everywhere a
--seed flag is not given.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

__all__ = ["main"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _emit(obj) -> None:
    print(json.dumps(obj, separators=(",", ":")))


def _default_seed() -> int:
    return int(os.environ.get("TH2_SEED", "0"))


def _build_parser() -> _Parser:
    p = _Parser(prog="tokfold", description=__doc__)
    sub = p.add_subparsers(dest="command", metavar="command")

    cp = sub.add_parser("crop-plan", help="choose a tile grid for an image size")
    cp.add_argument("--width", type=int, required=True)
    cp.add_argument("--height", type=int, required=True)
    cp.add_argument("--max-area", type=int, default=36)
    cp.add_argument("--max-side", type=int, default=12)
    cp.add_argument("--tile", type=int, default=224)
    cp.add_argument("--no-thumbnail", action="store_true")

    sp = sub.add_parser("spe", help="emit an interpolated position-embedding grid")
    sp.add_argument("--rows", type=int, required=True)
    sp.add_argument("--cols", type=int, required=True)
    sp.add_argument("--dim", type=int, required=True)
    sp.add_argument("--heads", type=int, required=True)
    sp.add_argument("--seed", type=int, default=None)

    cm = sub.add_parser("compress", help="run the image-to-token frontend")
    cm.add_argument("--image", required=True, help="image file (PNG/PPM/JPEG)")
    cm.add_argument("--no-thumbnail", action="store_true")
    cm.add_argument("--seed", type=int, default=None)

    co = sub.add_parser("coords", help="bounding-box token codec")
    co_sub = co.add_subparsers(dest="coords_command", metavar="encode|decode")
    ce = co_sub.add_parser("encode")
    ce.add_argument("--box", required=True, help="x1,y1,x2,y2 normalized")
    ce.add_argument("--bins", type=int, default=1000)
    ce.add_argument("--digits", action="store_true", help="also emit the 25-token digit baseline")
    cd = co_sub.add_parser("decode")
    cd.add_argument("--tokens", required=True, help="comma-separated token ids")
    cd.add_argument("--bins", type=int, default=1000)

    sh = sub.add_parser("shard", help="build, stream, pack, or resume sharded data")
    sh_sub = sh.add_subparsers(dest="shard_command", metavar="build|stream|pack|resume")
    sb = sh_sub.add_parser("build")
    sb.add_argument("--input", required=True, help="JSONL file, one sample per line")
    sb.add_argument("--out", required=True, help="output directory")
    sb.add_argument("--chunk-size", type=int, required=True)
    sb.add_argument("--seed", type=int, default=None)
    sb.add_argument("--dataset", default="train")
    ss = sh_sub.add_parser("stream")
    ss.add_argument("--manifest", required=True)
    ss.add_argument("--worker", type=int, default=0)
    ss.add_argument("--workers", type=int, default=1)
    ss.add_argument("--limit", type=int, default=None)
    ss.add_argument("--state-out", default=None)
    spk = sh_sub.add_parser("pack")
    _add_pack_args(spk)
    sr = sh_sub.add_parser("resume")
    sr.add_argument("--state", required=True)
    sr.add_argument("--limit", type=int, default=None)
    sr.add_argument("--state-out", default=None)

    pk = sub.add_parser("pack", help="alias of `shard pack`")
    _add_pack_args(pk)

    pp = sub.add_parser("pp-plan", help="partition LLM layers into pipeline stages")
    pp.add_argument("--layers", required=True, help="comma-separated per-layer costs, or COUNT for uniform")
    pp.add_argument("--vision", type=float, default=0.0)
    pp.add_argument("--stages", type=int, required=True)
    pp.add_argument("--micro", type=int, default=1)

    sub.add_parser("selftest", help="run the invariant suite")

    rp = sub.add_parser("report", help="write figures and a JSONL summary")
    rp.add_argument("--out", required=True)
    rp.add_argument("--seed", type=int, default=None)

    return p


def _add_pack_args(p) -> None:
    p.add_argument("--manifest", action="append", required=True, help="repeatable, one per dataset")
    p.add_argument("--weights", default=None, help="comma-separated, defaults to uniform")
    p.add_argument("--policies", default=None, help="comma-separated cycle|drop per dataset (default drop)")
    p.add_argument("--context", type=int, default=4096)
    p.add_argument("--max-tiles", type=int, default=108)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--state-out", default=None)


def _cmd_crop_plan(args) -> int:
    from .cropping import CropConfig, plan_crop

    cfg = CropConfig(
        tile_px=args.tile, max_area=args.max_area, max_side=args.max_side,
        thumbnail=not args.no_thumbnail,
    )
    plan = plan_crop(args.width, args.height, cfg)
    _emit({
        "rows": plan.rows,
        "cols": plan.cols,
        "scaled_w": plan.scaled_w,
        "scaled_h": plan.scaled_h,
        "tiles": plan.tile_count,
        "has_thumbnail": plan.has_thumbnail,
    })
    return 0


def _cmd_spe(args) -> int:
    from .posembed import SlerpPositionTable, position_grid

    seed = args.seed if args.seed is not None else _default_seed()
    table = SlerpPositionTable.random(args.dim, args.heads, seed=seed)
    grid = position_grid(table, args.rows, args.cols)
    for i in range(args.rows):
        for j in range(args.cols):
            _emit({"row": i, "col": j, "embedding": grid[i * args.cols + j].tolist()})
    return 0


def _load_image(path: str) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def _cmd_compress(args) -> int:
    from .cropping import CropConfig, plan_crop
    from .encoder import EncoderConfig
    from .frontend import compress_image, init_frontend

    seed = args.seed if args.seed is not None else _default_seed()
    img = _load_image(args.image)
    cfg = CropConfig(thumbnail=not args.no_thumbnail)
    params = init_frontend(EncoderConfig(channels=3), seed=seed)
    plan = plan_crop(img.shape[1], img.shape[0], cfg)
    tokens = compress_image(img, cfg, params)
    _emit({
        "image": args.image,
        "input_size": [img.shape[1], img.shape[0]],
        "grid": [plan.rows, plan.cols],
        "tiles": plan.tile_count + (1 if plan.has_thumbnail else 0),
        "tokens": tokens.shape[0],
        "shape": list(tokens.shape),
        "mean": float(tokens.data.mean()),
        "std": float(tokens.data.std()),
    })
    return 0


def _cmd_coords(args) -> int:
    from .coords import BBox, CoordVocab, decode_box, encode_box, encode_box_digits

    if args.coords_command == "encode":
        parts = [float(x) for x in args.box.split(",")]
        if len(parts) != 4:
            raise ValueError("--box must be x1,y1,x2,y2")
        box = BBox(*parts)
        v = CoordVocab(bins=args.bins)
        out = {"tokens": encode_box(box, v), "length": 7}
        if args.digits:
            digits = encode_box_digits(box, bins=args.bins)
            out["digit_tokens"] = digits
            out["digit_length"] = len(digits)
        _emit(out)
        return 0
    seq = [int(t) for t in args.tokens.split(",")]
    box = decode_box(seq, CoordVocab(bins=args.bins))
    _emit({"box": [box.x1, box.y1, box.x2, box.y2]})
    return 0


def _cmd_shard_build(args) -> int:
    from .datapipe import build_shards

    seed = args.seed if args.seed is not None else _default_seed()
    samples = []
    with open(args.input) as fh:
        for line in fh:
            line = line.strip()
            if line:
                json.loads(line)  # validate early
                samples.append({"json": line.encode()})
    shards = build_shards(samples, args.chunk_size, seed, args.out, dataset=args.dataset)
    _emit({
        "manifest": str(shards.manifest_path),
        "chunks": len(shards.chunk_files),
        "total": shards.total,
    })
    return 0


def _sample_line(sample) -> dict:
    doc = {"dataset": sample.dataset, "key": sample.key}
    raw = sample.members.get("json")
    if raw is not None:
        doc["data"] = json.loads(raw)
    else:
        doc["members"] = sorted(sample.members)
    return doc


def _run_stream(component, pipeline: dict, limit: int | None, state_out: str | None, render) -> int:
    from .datapipe import snapshot_doc

    count = 0
    for item in component:
        _emit(render(item))
        count += 1
        if limit is not None and count >= limit:
            break
    if state_out:
        Path(state_out).write_text(json.dumps(snapshot_doc(pipeline, component), indent=2) + "\n")
        print(f"state written to {state_out}", file=sys.stderr)
    return 0


def _cmd_shard_stream(args) -> int:
    from .datapipe import open_pipeline

    pipeline = {
        "kind": "stream",
        "manifest": str(Path(args.manifest).resolve()),
        "worker": args.worker,
        "workers": args.workers,
    }
    return _run_stream(open_pipeline(pipeline), pipeline, args.limit, args.state_out, _sample_line)


def _pack_pipeline(args) -> dict:
    seed = args.seed if args.seed is not None else _default_seed()
    manifests = [str(Path(m).resolve()) for m in args.manifest]
    weights = [float(w) for w in args.weights.split(",")] if args.weights else [1.0] * len(manifests)
    # one-shot CLI semantics: a finite pass unless cycling is asked for
    policies = args.policies.split(",") if args.policies else ["drop"] * len(manifests)
    return {
        "kind": "pack",
        "manifests": manifests,
        "weights": weights,
        "policies": policies,
        "seed": seed,
        "pack": {"context": args.context, "max_tiles": args.max_tiles},
    }


def _pack_line(batch) -> dict:
    return {
        "samples": list(batch.sample_keys),
        "used": batch.used,
        "pad": batch.pad,
        "tiles": batch.tile_count,
        "segments": int(batch.segments.max()),
    }


def _cmd_shard_pack(args) -> int:
    from .datapipe import open_pipeline

    pipeline = _pack_pipeline(args)
    return _run_stream(open_pipeline(pipeline), pipeline, args.limit, args.state_out, _pack_line)


def _cmd_shard_resume(args) -> int:
    from .datapipe import resume_pipeline

    doc = json.loads(Path(args.state).read_text())
    component = resume_pipeline(doc)
    render = _pack_line if doc["pipeline"].get("pack") else _sample_line
    return _run_stream(component, doc["pipeline"], args.limit, args.state_out, render)


def _cmd_pp_plan(args) -> int:
    from .planner import StageModel, partition

    spec = args.layers.strip()
    if "," in spec:
        costs = tuple(float(c) for c in spec.split(","))
    else:
        costs = tuple(1.0 for _ in range(int(spec)))
    model = StageModel(args.vision, costs, args.stages, args.micro)
    plan = partition(model)
    _emit({
        "boundaries": list(plan.boundaries),
        "stage_layers": [[lo, hi] for lo, hi in plan.stage_layers(len(costs))],
        "stage_costs": list(plan.stage_costs),
        "bottleneck": plan.bottleneck,
        "bubble": plan.bubble,
        "warmup_activations": list(plan.warmup_counts(args.micro)),
    })
    return 0


def _cmd_selftest(args) -> int:
    from .selftest import run_selftest

    failures = run_selftest(_emit)
    return 0 if failures == 0 else 2


def _cmd_report(args) -> int:
    from .report import make_report

    seed = args.seed if args.seed is not None else _default_seed()
    for entry in make_report(args.out, seed=seed):
        _emit(entry)
    return 0


def _usage_error(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 1


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    handlers = {
        "crop-plan": _cmd_crop_plan,
        "spe": _cmd_spe,
        "compress": _cmd_compress,
        "coords": _cmd_coords,
        "pp-plan": _cmd_pp_plan,
        "selftest": _cmd_selftest,
        "report": _cmd_report,
        "pack": _cmd_shard_pack,
    }
    try:
        if args.command == "shard":
            shard_handlers = {
                "build": _cmd_shard_build,
                "stream": _cmd_shard_stream,
                "pack": _cmd_shard_pack,
                "resume": _cmd_shard_resume,
            }
            if args.shard_command not in shard_handlers:
                return _usage_error("shard needs one of build|stream|pack|resume")
            return shard_handlers[args.shard_command](args)
        if args.command == "coords" and args.coords_command not in ("encode", "decode"):
            return _usage_error("coords needs encode or decode")
        return handlers[args.command](args)
    except SystemExit:
        raise
    except (ValueError, KeyError, OSError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
