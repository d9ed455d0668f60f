"""Bounding-box token codec and the auxiliary box-regression head.

Vocabulary layout (ids): open trigger = 0, close trigger = 1, comma = 2,
then one token per quantization bin, so bin q maps to id 3 + q. A box is
seven tokens: open, x1, y1, comma, x2, y2, close. The digit-string
baseline spends 25 tokens on the same box (2 triggers, 4 five-character
numbers, 3 commas) and exists for comparison and tests only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = [
    "BBox",
    "CoordVocab",
    "BoxParseError",
    "encode_box",
    "decode_box",
    "encode_box_digits",
    "DetectionHead",
    "init_detection_head",
    "predict_boxes",
    "detection_head_loss",
]


@dataclass(frozen=True)
class BBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (0.0 <= self.x1 <= self.x2 <= 1.0 and 0.0 <= self.y1 <= self.y2 <= 1.0):
            raise ValueError(f"invalid box corners ({self.x1}, {self.y1}, {self.x2}, {self.y2})")


@dataclass(frozen=True)
class CoordVocab:
    bins: int = 1000
    open_id: int = 0
    close_id: int = 1
    comma_id: int = 2

    def __post_init__(self):
        if self.bins < 2:
            raise ValueError("need at least 2 bins")
        if len({self.open_id, self.close_id, self.comma_id}) != 3:
            raise ValueError("marker ids must be distinct")

    @property
    def coord_base(self) -> int:
        return max(self.open_id, self.close_id, self.comma_id) + 1

    def coord_id(self, q: int) -> int:
        if not 0 <= q < self.bins:
            raise ValueError(f"bin {q} out of range [0, {self.bins})")
        return self.coord_base + q

    def bin_of(self, token: int) -> int:
        q = token - self.coord_base
        if not 0 <= q < self.bins:
            raise ValueError(f"token {token} is not a coordinate token")
        return q


class BoxParseError(ValueError):
    """Malformed token sequence; `position` is the offending index."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at index {position})")
        self.position = position


def quantize(x: float, bins: int) -> int:
    return int(round(x * (bins - 1)))


def dequantize(q: int, bins: int) -> float:
    return q / (bins - 1)


def encode_box(b: BBox, v: CoordVocab = CoordVocab()) -> list[int]:
    """Seven tokens: open, x1, y1, comma, x2, y2, close."""
    return [
        v.open_id,
        v.coord_id(quantize(b.x1, v.bins)),
        v.coord_id(quantize(b.y1, v.bins)),
        v.comma_id,
        v.coord_id(quantize(b.x2, v.bins)),
        v.coord_id(quantize(b.y2, v.bins)),
        v.close_id,
    ]


def decode_box(seq: list[int], v: CoordVocab = CoordVocab()) -> BBox:
    """Parse a 7-token sequence back to a box; corner order is re-validated."""
    if len(seq) != 7:
        raise BoxParseError(f"expected 7 tokens, got {len(seq)}", min(len(seq), 7))
    if seq[0] != v.open_id:
        raise BoxParseError("expected open trigger", 0)
    if seq[3] != v.comma_id:
        raise BoxParseError("expected comma", 3)
    if seq[6] != v.close_id:
        raise BoxParseError("expected close trigger", 6)
    vals = []
    for pos in (1, 2, 4, 5):
        try:
            vals.append(dequantize(v.bin_of(seq[pos]), v.bins))
        except ValueError as e:
            raise BoxParseError(str(e), pos) from None
    x1, y1, x2, y2 = vals
    if x1 > x2 or y1 > y2:
        raise ValueError(f"decoded corners out of order: ({x1}, {y1}) vs ({x2}, {y2})")
    return BBox(x1, y1, x2, y2)


def _digit_number(x: float, bins: int) -> str:
    # fixed 5-character "0.ddd"; 1.0 clamps to 0.999 to keep the format
    v = min(dequantize(quantize(x, bins), bins), 0.999)
    return f"{v:.3f}"


def encode_box_digits(b: BBox, bins: int = 1000, open_mark: str = "<box>", close_mark: str = "</box>") -> list[str]:
    """Digit-string baseline: 25 string tokens, one per mark/character."""
    parts: list[str] = [open_mark]
    for i, x in enumerate((b.x1, b.y1, b.x2, b.y2)):
        parts.extend(_digit_number(x, bins))
        if i < 3:
            parts.append(",")
    parts.append(close_mark)
    return parts


@dataclass
class DetectionHead:
    """Two-layer MLP plus a linear projection to 4 coordinates.

    Runs off hidden states in parallel with the language head; it never
    sees logits.
    """

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    proj_w: Tensor
    proj_b: Tensor


def init_detection_head(d_hidden: int, d_mid: int | None = None, seed: int = 0) -> DetectionHead:
    if d_mid is None:
        d_mid = d_hidden
    rng = np.random.default_rng(seed)
    p = lambda shape, fan: Tensor(rng.standard_normal(shape) / np.sqrt(fan), requires_grad=True)
    return DetectionHead(
        w1=p((d_hidden, d_mid), d_hidden),
        b1=Tensor(np.zeros(d_mid), requires_grad=True),
        w2=p((d_mid, d_mid), d_mid),
        b2=Tensor(np.zeros(d_mid), requires_grad=True),
        proj_w=p((d_mid, 4), d_mid),
        proj_b=Tensor(np.zeros(4), requires_grad=True),
    )


def predict_boxes(hidden: Tensor, head: DetectionHead) -> Tensor:
    """Map [n, d_hidden] states to [n, 4] box predictions."""
    x = ad.gelu(ad.add(ad.matmul(hidden, head.w1), head.b1))
    x = ad.gelu(ad.add(ad.matmul(x, head.w2), head.b2))
    return ad.add(ad.matmul(x, head.proj_w), head.proj_b)


def detection_head_loss(hidden: Tensor, targets: Tensor, head: DetectionHead) -> Tensor:
    """Mean absolute error over all supervised coordinates (scalar tensor)."""
    if hidden.ndim != 2 or hidden.shape[0] == 0:
        raise ValueError("need at least one supervised position")
    if targets.shape != (hidden.shape[0], 4):
        raise ValueError(f"targets must be [{hidden.shape[0]}, 4], got {targets.shape}")
    pred = predict_boxes(hidden, head)
    return ad.mul(ad.sub(pred, targets).abs().sum(), 1.0 / targets.size)
