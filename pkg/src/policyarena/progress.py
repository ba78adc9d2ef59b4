"""Per-frame progress scores: shuffle contract, aggregation, SEM.

External scorers receive frames in shuffled order (with the initial frame
prepended as a zero-progress reference, so temporal order cannot be
exploited) and return one score per transmitted frame. This module owns the
shuffle/de-shuffle bookkeeping, the aggregation statistics over a score
series, and standard-error reporting.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .errors import InsufficientSamples


class AggregationMethod(str, Enum):
    FULL_MEAN = "FULL_MEAN"
    FINAL_30 = "FINAL_30"
    TOP_30 = "TOP_30"


DEFAULT_METHOD = AggregationMethod.FINAL_30
WINDOW_FRACTION = 0.3


@dataclass(frozen=True)
class FrameScoreSeries:
    execution_id: str
    scores: tuple[float, ...]
    frame_indices: tuple[int, ...]

    def __post_init__(self):
        if not self.scores:
            raise ValueError("score series must be non-empty")
        if len(self.scores) != len(self.frame_indices):
            raise ValueError("scores and frame_indices must have equal length")
        if any(b <= a for a, b in zip(self.frame_indices, self.frame_indices[1:])):
            raise ValueError("frame_indices must be strictly increasing")
        if any(not 0.0 <= s <= 100.0 for s in self.scores):
            raise ValueError("scores must lie in [0, 100]")


@dataclass(frozen=True)
class ShufflePlan:
    """permutation[i] = transmitted slot (after the zero reference) holding
    original frame i."""

    permutation: tuple[int, ...]
    seed: int
    zero_reference_index: int = 0

    def __post_init__(self):
        if sorted(self.permutation) != list(range(len(self.permutation))):
            raise ValueError("permutation must be a bijection over frame positions")


@dataclass(frozen=True)
class AggregateScore:
    value: float
    method: AggregationMethod


def make_shuffle_plan(frame_count: int, seed: int) -> ShufflePlan:
    if frame_count < 1:
        raise ValueError("frame_count must be >= 1")
    rng = np.random.default_rng(seed)
    perm = tuple(int(k) for k in rng.permutation(frame_count))
    return ShufflePlan(permutation=perm, seed=seed)


def shuffle_frames(frames: Sequence, plan: ShufflePlan, zero_reference) -> list:
    """Transmitted order: zero reference first, then frames permuted per plan."""
    if len(frames) != len(plan.permutation):
        raise ValueError(
            f"{len(frames)} frames do not match plan over {len(plan.permutation)}"
        )
    shuffled = [None] * len(frames)
    for original, slot in enumerate(plan.permutation):
        shuffled[slot] = frames[original]
    out = list(shuffled)
    out.insert(plan.zero_reference_index, zero_reference)
    return out


def deshuffle_scores(
    shuffled_scores: Sequence[float],
    plan: ShufflePlan,
    execution_id: str = "",
    frame_indices: Optional[Sequence[int]] = None,
) -> FrameScoreSeries:
    """Invert the shuffle; the zero-reference entry is dropped from the series."""
    expected = len(plan.permutation) + 1
    if len(shuffled_scores) != expected:
        raise ValueError(
            f"got {len(shuffled_scores)} scores, plan expects {expected} "
            "(frames plus zero reference)"
        )
    body = list(shuffled_scores)
    del body[plan.zero_reference_index]
    ordered = [float(body[plan.permutation[i]]) for i in range(len(body))]
    indices = tuple(frame_indices) if frame_indices is not None else tuple(range(len(ordered)))
    return FrameScoreSeries(
        execution_id=execution_id,
        scores=tuple(ordered),
        frame_indices=indices,
    )


def clamp_scores(raw: Sequence[float]) -> tuple[list[float], bool]:
    """Clamp to [0, 100]; external scorers occasionally return 100.0+eps."""
    clamped = [min(100.0, max(0.0, float(s))) for s in raw]
    return clamped, any(c != float(s) for c, s in zip(clamped, raw))


def _window(length: int) -> int:
    # round-half-up on 0.3*T, at least one frame
    return max(1, int(np.floor(WINDOW_FRACTION * length + 0.5)))


def aggregate(series: FrameScoreSeries, method: AggregationMethod = DEFAULT_METHOD) -> AggregateScore:
    scores = np.asarray(series.scores, dtype=float)
    method = AggregationMethod(method)
    k = _window(scores.size)
    if method is AggregationMethod.FULL_MEAN:
        value = scores.mean()
    elif method is AggregationMethod.FINAL_30:
        value = scores[-k:].mean()
    else:
        value = np.sort(scores)[-k:].mean()
    return AggregateScore(value=float(value), method=method)


def sem(values: Sequence[float]) -> float:
    """Sample standard deviation (n-1) over sqrt(n)."""
    if len(values) < 2:
        raise InsufficientSamples(f"SEM needs >= 2 values, got {len(values)}")
    arr = np.asarray(values, dtype=float)
    return float(arr.std(ddof=1) / np.sqrt(arr.size))


# ---------------------------------------------------------------------------
# Wire contract with the external scorer and JSONL persistence.

def build_scorer_request(
    execution_id: str,
    instruction: str,
    frame_uris: Sequence[str],
    plan: ShufflePlan,
    zero_reference_uri: str,
) -> dict:
    return {
        "execution_id": execution_id,
        "instruction": instruction,
        "frames": shuffle_frames(list(frame_uris), plan, zero_reference_uri),
        "zero_reference_position": plan.zero_reference_index,
    }


def parse_scorer_response(
    response: dict,
    plan: ShufflePlan,
    execution_id: str = "",
    frame_indices: Optional[Sequence[int]] = None,
) -> FrameScoreSeries:
    scores, _ = clamp_scores(response["scores"])
    return deshuffle_scores(scores, plan, execution_id, frame_indices)


def series_to_json(series: FrameScoreSeries, extra: Optional[dict] = None) -> dict:
    obj = {
        "execution_id": series.execution_id,
        "frame_indices": list(series.frame_indices),
        "scores": list(series.scores),
    }
    if extra:
        obj.update(extra)
    return obj


def series_from_json(obj: dict) -> FrameScoreSeries:
    return FrameScoreSeries(
        execution_id=obj["execution_id"],
        scores=tuple(float(s) for s in obj["scores"]),
        frame_indices=tuple(int(k) for k in obj["frame_indices"]),
    )


def load_series_file(path) -> list[tuple[FrameScoreSeries, dict]]:
    """Read a JSONL series file; returns (series, raw line dict) pairs so
    callers can pick up grouping metadata stored alongside."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            out.append((series_from_json(obj), obj))
    return out
