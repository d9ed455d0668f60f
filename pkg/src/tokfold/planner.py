"""Offline pipeline-stage partitioning for a vision-fronted LLM.

The visual encoder and resampler are pinned to stage 0, so LLM layers
are split into unequal contiguous segments: stage 0 gets few (possibly
zero) layers and the partition minimizes the bottleneck stage cost,
computed exactly by dynamic programming over prefix sums. Ties prefer
fewer layers in stage 0 and then the lexicographically smallest
boundaries. The bubble estimate is standard synchronous-pipeline
accounting, not a measurement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = ["StageModel", "StagePlan", "partition", "bubble_fraction"]


@dataclass(frozen=True)
class StageModel:
    vision_cost: float
    layer_costs: tuple[float, ...]
    stages: int
    micro_batches: int = 1

    def __post_init__(self):
        if self.stages < 1 or self.micro_batches < 1:
            raise ValueError("stages and micro_batches must be >= 1")
        if self.vision_cost < 0 or not math.isfinite(self.vision_cost):
            raise ValueError("vision_cost must be finite and nonnegative")
        if any(c <= 0 or not math.isfinite(c) for c in self.layer_costs):
            raise ValueError("layer costs must be positive and finite")


@dataclass(frozen=True)
class StagePlan:
    boundaries: tuple[int, ...]  # stage p >= 1 holds layers [boundaries[p-1], boundaries[p])
    stage_costs: tuple[float, ...]
    bottleneck: float
    bubble: float

    @property
    def stages(self) -> int:
        return len(self.stage_costs)

    def stage_layers(self, layer_count: int) -> list[tuple[int, int]]:
        edges = (0, *self.boundaries, layer_count)
        return [(edges[i], edges[i + 1]) for i in range(len(edges) - 1)]

    def warmup_counts(self, micro_batches: int) -> tuple[int, ...]:
        """Warm-up micro-batches held live per stage (advisory memory signal).

        Earlier stages buffer more in-flight activations; stage i holds
        min(M, P - i). No hard constraint is derived from this.
        """
        p = self.stages
        return tuple(min(micro_batches, p - i) for i in range(p))


def _stage_cost(prefix: list[float], vision: float, p: int, lo: int, hi: int) -> float:
    cost = prefix[hi] - prefix[lo]
    return cost + vision if p == 0 else cost


def partition(model: StageModel) -> StagePlan:
    """Optimal contiguous split; stages 1..P-1 non-empty, stage 0 may hold zero layers."""
    p_count = model.stages
    layers = model.layer_costs
    n = len(layers)
    if n < p_count - 1:
        raise ValueError(f"{n} layers cannot fill {p_count} stages (stages past 0 must be non-empty)")
    prefix = [0.0]
    for c in layers:
        prefix.append(prefix[-1] + c)

    if p_count == 1:
        cost = model.vision_cost + prefix[n]
        return StagePlan((), (cost,), cost, 0.0)

    # f[p][i]: best bottleneck covering layers [0, i) with stages 0..p
    inf = float("inf")
    f = [[inf] * (n + 1) for _ in range(p_count)]
    for i in range(n + 1):
        f[0][i] = model.vision_cost + prefix[i]
    for p in range(1, p_count):
        # stages 1..p are non-empty, and p_count - 1 - p stages must still fit behind i
        for i in range(p, n - (p_count - 1 - p) + 1):
            best = inf
            lo_j = p - 1 if p > 1 else 0
            for j in range(lo_j, i):
                cand = max(f[p - 1][j], prefix[i] - prefix[j])
                if cand < best:
                    best = cand
            f[p][i] = best
    bottleneck = f[p_count - 1][n]

    # lexicographically smallest boundaries achieving the bottleneck; the
    # same prefix differences are compared, so no float tolerance is needed.
    # min_seg[i]: minimal segments covering layers[i:] under the cap
    # (greedy maximal fill from the left is optimal)
    min_seg = [0] * (n + 1)
    for i in range(n - 1, -1, -1):
        j = i
        while j + 1 <= n and prefix[j + 1] - prefix[i] <= bottleneck:
            j += 1
        if j == i:  # single layer exceeds bottleneck; cannot happen at optimum
            min_seg[i] = 10 ** 9
        else:
            min_seg[i] = 1 + min_seg[j]

    boundaries: list[int] = []
    start = 0
    for p in range(p_count - 1):
        remaining = p_count - 1 - p
        b = start if p == 0 else start + 1
        while True:
            cost = _stage_cost(prefix, model.vision_cost, p, start, b)
            rest = n - b
            if cost <= bottleneck and remaining <= rest and min_seg[b] <= remaining:
                break
            b += 1
            if b > n:
                raise AssertionError("no feasible boundary; DP and construction disagree")
        boundaries.append(b)
        start = b

    edges = (0, *boundaries, n)
    costs = tuple(
        _stage_cost(prefix, model.vision_cost, p, edges[p], edges[p + 1]) for p in range(p_count)
    )
    plan = StagePlan(tuple(boundaries), costs, max(costs), 0.0)
    return StagePlan(plan.boundaries, plan.stage_costs, plan.bottleneck, bubble_fraction(plan, model.micro_batches))


def bubble_fraction(plan: StagePlan, micro_batches: int) -> float:
    """Idle fraction of a synchronous pipeline running M micro-batches.

    Capacity accounting: the makespan is (M + P - 1) bottleneck steps on
    P devices, of which M * sum(stage costs) is useful work. Equals
    (P-1)/(M+P-1) for balanced stages; 0 iff P == 1; always in [0, 1).
    """
    if micro_batches < 1:
        raise ValueError("micro_batches must be >= 1")
    p_count = plan.stages
    if p_count == 1:
        return 0.0
    mean = sum(plan.stage_costs) / p_count
    return 1.0 - (micro_batches * mean) / ((micro_batches + p_count - 1) * plan.bottleneck)
