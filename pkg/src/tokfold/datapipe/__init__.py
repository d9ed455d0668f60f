"""Sharded tar storage, resumable streaming, dataset mixing, sample packing."""

from .rng import SplitMix64
from .shards import ShardSet, assign_chunks, build_shards, load_shards
from .streams import IntegrityError, MixStream, ShardStream, StreamError, StreamSample
from .packing import PackedBatch, PackStream, SampleTooLargeError
from .resume import open_pipeline, resume_pipeline, snapshot_doc

__all__ = [
    "SplitMix64",
    "ShardSet",
    "build_shards",
    "load_shards",
    "assign_chunks",
    "ShardStream",
    "MixStream",
    "StreamSample",
    "StreamError",
    "IntegrityError",
    "PackStream",
    "PackedBatch",
    "SampleTooLargeError",
    "open_pipeline",
    "resume_pipeline",
    "snapshot_doc",
]
