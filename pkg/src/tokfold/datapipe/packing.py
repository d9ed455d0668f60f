"""Greedy first-fit sample packing under token and tile budgets.

Samples arrive as stream samples whose `json` member carries
`{"tokens": [...], "tiles": n}`. They are packed in arrival order (no
reordering, which keeps resume deterministic): a sample joins the open
pack while both budgets hold, otherwise the pack is emitted and the
sample opens the next one. Segment ids run 1..k inside a pack with 0 for
padding, and two positions see each other iff they share a nonzero
segment id, so the visibility mask is block-diagonal.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .streams import StreamError, StreamSample

__all__ = ["PackedBatch", "PackStream", "SampleTooLargeError", "DEFAULT_CONTEXT", "DEFAULT_MAX_TILES"]

DEFAULT_CONTEXT = 4096
DEFAULT_MAX_TILES = 108
TOKENS_MEMBER = "json"


class SampleTooLargeError(ValueError):
    """A single sample exceeds a packing budget on its own."""

    def __init__(self, key: str, tokens: int, tiles: int, context: int, max_tiles: int):
        super().__init__(
            f"sample {key!r} ({tokens} tokens, {tiles} tiles) exceeds budgets "
            f"(context {context}, max tiles {max_tiles})"
        )
        self.key = key


@dataclass(frozen=True)
class PackedBatch:
    tokens: np.ndarray  # int64 [context], padded with 0
    segments: np.ndarray  # int64 [context], 1..k per sample, 0 = pad
    tile_count: int
    sample_keys: tuple[str, ...]

    @property
    def context(self) -> int:
        return len(self.tokens)

    @property
    def used(self) -> int:
        return int((self.segments != 0).sum())

    @property
    def pad(self) -> int:
        return self.context - self.used

    def visibility_mask(self) -> np.ndarray:
        """Dense [context, context] bool: same nonzero segment id."""
        seg = self.segments
        return (seg[:, None] == seg[None, :]) & (seg[:, None] != 0)

    def to_json(self) -> str:
        return json.dumps(
            {
                "tokens": self.tokens.tolist(),
                "segments": self.segments.tolist(),
                "tiles": self.tile_count,
                "keys": list(self.sample_keys),
            },
            separators=(",", ":"),
        )


def _parse(sample: StreamSample) -> tuple[str, list[int], int]:
    raw = sample.members.get(TOKENS_MEMBER)
    if raw is None:
        raise StreamError(f"sample {sample.qualified_key} lacks a {TOKENS_MEMBER!r} member")
    try:
        doc = json.loads(raw)
        tokens = [int(t) for t in doc["tokens"]]
        tiles = int(doc.get("tiles", 0))
    except (ValueError, KeyError, TypeError) as e:
        raise StreamError(f"sample {sample.qualified_key} has malformed token data: {e}") from e
    return sample.qualified_key, tokens, tiles


class PackStream:
    """Pack a sample stream into fixed-context batches, resumably.

    On snapshot, samples already pulled into the open pack but not yet
    emitted are serialized as the pending buffer, so resuming never loses
    or duplicates a sample.
    """

    def __init__(self, source, context: int = DEFAULT_CONTEXT, max_tiles: int = DEFAULT_MAX_TILES):
        if context < 1 or max_tiles < 0:
            raise ValueError("bad budgets")
        self.source = source
        self.context = context
        self.max_tiles = max_tiles
        self.pending: list[tuple[str, list[int], int]] = []
        self._done = False

    def __iter__(self):
        return self

    def _fits(self, tokens: list[int], tiles: int) -> bool:
        used_tok = sum(len(t) for _, t, _ in self.pending)
        used_tiles = sum(n for _, _, n in self.pending)
        return used_tok + len(tokens) <= self.context and used_tiles + tiles <= self.max_tiles

    def _emit(self) -> PackedBatch:
        tokens = np.zeros(self.context, dtype=np.int64)
        segments = np.zeros(self.context, dtype=np.int64)
        pos = 0
        keys = []
        tiles = 0
        for seg, (key, toks, n_tiles) in enumerate(self.pending, start=1):
            tokens[pos : pos + len(toks)] = toks
            segments[pos : pos + len(toks)] = seg
            pos += len(toks)
            keys.append(key)
            tiles += n_tiles
        self.pending = []
        return PackedBatch(tokens, segments, tiles, tuple(keys))

    def __next__(self) -> PackedBatch:
        if self._done:
            raise StopIteration
        while True:
            try:
                sample = next(self.source)
            except StopIteration:
                self._done = True
                if self.pending:
                    return self._emit()
                raise
            key, toks, n_tiles = _parse(sample)
            if len(toks) > self.context or n_tiles > self.max_tiles:
                raise SampleTooLargeError(key, len(toks), n_tiles, self.context, self.max_tiles)
            if self._fits(toks, n_tiles):
                self.pending.append((key, toks, n_tiles))
            else:
                batch = self._emit()
                self.pending.append((key, toks, n_tiles))
                return batch

    def snapshot(self) -> dict:
        return {
            "source": self.source.snapshot(),
            "pending": [{"key": k, "tokens": t, "tiles": n} for k, t, n in self.pending],
            "done": self._done,
        }

    def restore(self, state: dict) -> None:
        self.source.restore(state["source"])
        self.pending = [(p["key"], [int(t) for t in p["tokens"]], int(p["tiles"])) for p in state["pending"]]
        self._done = bool(state["done"])
