"""Equal-sized tar chunks plus a JSON manifest.

Samples are pre-shuffled once (seeded Fisher-Yates) and cut sequentially
into tar files of `samples_per_chunk` samples each (the last may be
short). A sample is a set of members sharing a zero-padded decimal key:
`{key}.{ext}` entries stored adjacently, so a fully sequential read
reconstructs samples without an index. Archives are written with fixed
metadata, making builds byte-identical for a fixed seed.
"""

from __future__ import annotations

import io
import json
import tarfile
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .rng import SplitMix64

__all__ = ["ShardSet", "build_shards", "load_shards", "assign_chunks"]

MANIFEST_SUFFIX = ".manifest.json"


@dataclass(frozen=True)
class ShardSet:
    dataset: str
    directory: Path
    chunk_files: tuple[str, ...]
    chunk_counts: tuple[int, ...]
    samples_per_chunk: int
    seed: int
    total: int

    @property
    def manifest_path(self) -> Path:
        return self.directory / f"{self.dataset}{MANIFEST_SUFFIX}"

    def chunk_path(self, index: int) -> Path:
        return self.directory / self.chunk_files[index]

    def to_manifest(self) -> dict:
        return {
            "dataset": self.dataset,
            "samples_per_chunk": self.samples_per_chunk,
            "seed": self.seed,
            "total": self.total,
            "chunks": [
                {"file": f, "count": c} for f, c in zip(self.chunk_files, self.chunk_counts)
            ],
        }


def _key_width(n: int) -> int:
    return max(6, len(str(n - 1)))


def _add_member(tar: tarfile.TarFile, name: str, payload: bytes) -> None:
    info = tarfile.TarInfo(name=name)
    info.size = len(payload)
    info.mtime = 0
    info.uid = info.gid = 0
    info.uname = info.gname = ""
    info.mode = 0o644
    tar.addfile(info, io.BytesIO(payload))


def build_shards(
    samples: Sequence[Mapping[str, bytes]],
    samples_per_chunk: int,
    seed: int,
    out_dir: str | Path,
    dataset: str = "train",
) -> ShardSet:
    """Shuffle, chunk, and archive samples; writes tars plus the manifest."""
    if samples_per_chunk < 1:
        raise ValueError("samples_per_chunk must be >= 1")
    if len(samples) == 0:
        raise ValueError("empty dataset")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    width = _key_width(len(samples))
    keyed = [(f"{i:0{width}d}", dict(s)) for i, s in enumerate(samples)]
    SplitMix64(seed).shuffle(keyed)

    files: list[str] = []
    counts: list[int] = []
    for start in range(0, len(keyed), samples_per_chunk):
        chunk = keyed[start : start + samples_per_chunk]
        fname = f"{dataset}-{len(files):06d}.tar"
        with tarfile.open(out_dir / fname, "w", format=tarfile.USTAR_FORMAT) as tar:
            for key, members in chunk:
                for ext in sorted(members):
                    _add_member(tar, f"{key}.{ext}", members[ext])
        files.append(fname)
        counts.append(len(chunk))

    shards = ShardSet(
        dataset=dataset,
        directory=out_dir,
        chunk_files=tuple(files),
        chunk_counts=tuple(counts),
        samples_per_chunk=samples_per_chunk,
        seed=seed,
        total=len(keyed),
    )
    shards.manifest_path.write_text(json.dumps(shards.to_manifest(), indent=2) + "\n")
    return shards


def load_shards(manifest_path: str | Path) -> ShardSet:
    manifest_path = Path(manifest_path)
    doc = json.loads(manifest_path.read_text())
    return ShardSet(
        dataset=doc["dataset"],
        directory=manifest_path.parent,
        chunk_files=tuple(c["file"] for c in doc["chunks"]),
        chunk_counts=tuple(c["count"] for c in doc["chunks"]),
        samples_per_chunk=doc["samples_per_chunk"],
        seed=doc["seed"],
        total=doc["total"],
    )


def assign_chunks(shards: ShardSet, workers: int) -> list[list[int]]:
    """Round-robin chunk assignment: disjoint lists whose union covers all chunks."""
    if workers < 1:
        raise ValueError("need at least one worker")
    out: list[list[int]] = [[] for _ in range(workers)]
    for i in range(len(shards.chunk_files)):
        out[i % workers].append(i)
    return out
