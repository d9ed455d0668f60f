"""Sequential sample streams with snapshot/resume, and weighted mixing.

A stream owns an ordered list of chunks and reads them fully
sequentially. Its position is just (chunk index, sample offset), so a
snapshot is cheap and resuming jumps straight to the right tar file and
skips already-emitted samples. The mixer draws its source per step from
a seeded categorical distribution; with the RNG state captured in the
snapshot, an interrupted-then-resumed run reproduces the uninterrupted
interleaving byte for byte.

Snapshots are only valid between sample emissions (quiescent points).
One stream per worker; streams share nothing mutable.
"""

from __future__ import annotations

import tarfile
from dataclasses import dataclass
from typing import Iterator

from .rng import SplitMix64
from .shards import ShardSet

__all__ = ["StreamSample", "StreamError", "IntegrityError", "ShardStream", "MixStream"]


@dataclass(frozen=True)
class StreamSample:
    dataset: str
    key: str
    members: dict[str, bytes]

    @property
    def qualified_key(self) -> str:
        return f"{self.dataset}/{self.key}"


class StreamError(RuntimeError):
    """Unreadable archive entry; names the chunk and member."""


class IntegrityError(RuntimeError):
    """Archive contents disagree with the manifest."""


def _read_chunk(shards: ShardSet, chunk_id: int) -> list[StreamSample]:
    """Fully sequential read of one chunk, grouping adjacent same-key members."""
    path = shards.chunk_path(chunk_id)
    samples: list[StreamSample] = []
    key: str | None = None
    members: dict[str, bytes] = {}
    try:
        with tarfile.open(path, "r") as tar:
            for info in tar:
                name = info.name
                stem, _, ext = name.rpartition(".")
                if not stem:
                    raise StreamError(f"unparseable member name {name!r} in {path.name}")
                try:
                    payload = tar.extractfile(info).read()
                except Exception as e:
                    raise StreamError(f"corrupt member {name!r} in {path.name}: {e}") from e
                if payload is None or len(payload) != info.size:
                    raise StreamError(f"corrupt member {name!r} in {path.name}: truncated")
                if stem != key:
                    if key is not None:
                        samples.append(StreamSample(shards.dataset, key, members))
                    key, members = stem, {}
                members[ext] = payload
    except tarfile.TarError as e:
        raise StreamError(f"unreadable archive {path.name}: {e}") from e
    if key is not None:
        samples.append(StreamSample(shards.dataset, key, members))
    if len(samples) != shards.chunk_counts[chunk_id]:
        raise IntegrityError(
            f"{path.name} holds {len(samples)} samples, manifest says {shards.chunk_counts[chunk_id]}"
        )
    return samples


class ShardStream:
    """Iterate the samples of an assigned chunk list, resumably."""

    def __init__(self, shards: ShardSet, chunk_ids: list[int], chunk_pos: int = 0, offset: int = 0):
        if chunk_pos < 0 or chunk_pos > len(chunk_ids):
            raise ValueError("chunk_pos out of range")
        self.shards = shards
        self.chunk_ids = list(chunk_ids)
        self.chunk_pos = chunk_pos
        self.offset = offset
        self._buffer: list[StreamSample] | None = None

    def restart(self) -> None:
        self.chunk_pos = 0
        self.offset = 0
        self._buffer = None

    def __iter__(self) -> Iterator[StreamSample]:
        return self

    def __next__(self) -> StreamSample:
        while True:
            if self.chunk_pos >= len(self.chunk_ids):
                raise StopIteration
            if self._buffer is None:
                self._buffer = _read_chunk(self.shards, self.chunk_ids[self.chunk_pos])
                if self.offset > len(self._buffer):
                    raise IntegrityError(
                        f"resume offset {self.offset} exceeds chunk of {len(self._buffer)} samples"
                    )
            if self.offset < len(self._buffer):
                sample = self._buffer[self.offset]
                self.offset += 1
                return sample
            self.chunk_pos += 1
            self.offset = 0
            self._buffer = None

    def snapshot(self) -> dict:
        return {"chunk_pos": self.chunk_pos, "offset": self.offset}

    def restore(self, state: dict) -> None:
        self.chunk_pos = int(state["chunk_pos"])
        self.offset = int(state["offset"])
        self._buffer = None


class MixStream:
    """Interleave several streams by seeded weighted sampling.

    Per-source exhaustion policy: "cycle" restarts the source from its
    beginning, "drop" removes it from the draw. All sources dropped ends
    the stream.
    """

    def __init__(
        self,
        sources: list[ShardStream],
        weights: list[float],
        seed: int,
        policies: list[str] | None = None,
    ):
        if len(sources) != len(weights) or not sources:
            raise ValueError("need one positive weight per source")
        if any(not (w > 0) or w != w or w == float("inf") for w in weights):
            raise ValueError("weights must be positive and finite")
        policies = policies or ["cycle"] * len(sources)
        if len(policies) != len(sources) or any(p not in ("cycle", "drop") for p in policies):
            raise ValueError("policies must be 'cycle' or 'drop', one per source")
        self.sources = sources
        self.weights = [float(w) for w in weights]
        self.policies = list(policies)
        self.rng = SplitMix64(seed)
        self.alive = [True] * len(sources)

    def __iter__(self) -> Iterator[StreamSample]:
        return self

    def _draw(self) -> int:
        total = sum(w for w, a in zip(self.weights, self.alive) if a)
        u = self.rng.uniform() * total
        acc = 0.0
        last = -1
        for i, (w, a) in enumerate(zip(self.weights, self.alive)):
            if not a:
                continue
            acc += w
            last = i
            if u < acc:
                return i
        return last  # u == total after rounding

    def __next__(self) -> StreamSample:
        while any(self.alive):
            i = self._draw()
            try:
                return next(self.sources[i])
            except StopIteration:
                if self.policies[i] == "cycle":
                    self.sources[i].restart()
                    return next(self.sources[i])
                self.alive[i] = False
        raise StopIteration

    def snapshot(self) -> dict:
        return {
            "rng": self.rng.state_hex(),
            "alive": list(self.alive),
            "sources": [s.snapshot() for s in self.sources],
        }

    def restore(self, state: dict) -> None:
        self.rng = SplitMix64.from_state_hex(state["rng"])
        self.alive = [bool(a) for a in state["alive"]]
        for src, sub in zip(self.sources, state["sources"]):
            src.restore(sub)
