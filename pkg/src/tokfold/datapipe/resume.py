"""Building stream pipelines from a spec dict and resuming them from JSON.

A resume document is self-describing: the `pipeline` section holds
everything needed to rebuild the iterator stack (manifests, worker
assignment, weights, budgets, seed) and the `state` section mirrors the
stack, with worker positions as (chunk index, sample offset), pending
packed-but-unemitted samples, and hex RNG state blobs. Replaying from a
document reproduces exactly the samples not yet emitted, in order.

Two pipeline kinds are supported:
  stream: one dataset, one worker's share of its chunks
  pack:   several datasets mixed by weight, then packed (mixing only:
          set "pack": null)
"""

from __future__ import annotations

import json
from pathlib import Path

from .packing import DEFAULT_CONTEXT, DEFAULT_MAX_TILES, PackStream
from .shards import assign_chunks, load_shards
from .streams import MixStream, ShardStream

__all__ = ["open_pipeline", "snapshot_doc", "resume_pipeline", "RESUME_FORMAT"]

RESUME_FORMAT = "tokfold.resume.v1"


def open_pipeline(pipeline: dict):
    """Build the iterator stack described by a pipeline dict, at its start."""
    kind = pipeline.get("kind")
    if kind == "stream":
        shards = load_shards(pipeline["manifest"])
        workers = int(pipeline.get("workers", 1))
        worker = int(pipeline.get("worker", 0))
        if not 0 <= worker < workers:
            raise ValueError(f"worker {worker} out of range for {workers} workers")
        return ShardStream(shards, assign_chunks(shards, workers)[worker])
    if kind == "pack":
        sources = [
            ShardStream(load_shards(m), list(range(len(load_shards(m).chunk_files))))
            for m in pipeline["manifests"]
        ]
        weights = [float(w) for w in pipeline.get("weights", [1.0] * len(sources))]
        policies = pipeline.get("policies")
        mixed = MixStream(sources, weights, int(pipeline["seed"]), policies)
        pack = pipeline.get("pack")
        if pack is None:
            return mixed
        return PackStream(
            mixed,
            context=int(pack.get("context", DEFAULT_CONTEXT)),
            max_tiles=int(pack.get("max_tiles", DEFAULT_MAX_TILES)),
        )
    raise ValueError(f"unknown pipeline kind {kind!r}")


def snapshot_doc(pipeline: dict, component) -> dict:
    """Wrap a component's snapshot in a self-describing resume document."""
    return {"format": RESUME_FORMAT, "pipeline": pipeline, "state": component.snapshot()}


def resume_pipeline(doc: dict | str | Path):
    """Rebuild a pipeline from a resume document (dict, path, or JSON text)."""
    if isinstance(doc, (str, Path)):
        p = Path(doc)
        doc = json.loads(p.read_text() if p.exists() else str(doc))
    if doc.get("format") != RESUME_FORMAT:
        raise ValueError(f"not a resume document (format {doc.get('format')!r})")
    component = open_pipeline(doc["pipeline"])
    component.restore(doc["state"])
    return component
