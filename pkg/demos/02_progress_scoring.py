"""Score task progress from per-frame judgments.

Frames are shuffled (with a zero-reference frame mixed in) before being sent
to a scorer so that temporal order cannot leak into the scores; afterwards we
restore order, clamp, and aggregate with the final-30% window.
"""

import numpy as np

from policyarena.progress import (
    AggregationMethod,
    aggregate,
    build_scorer_request,
    clamp_scores,
    deshuffle_scores,
    make_shuffle_plan,
    sem,
    shuffle_frames,
)

# A rollout of 10 frames whose true progress ramps from 0 to 90.
true_scores = [float(10 * k) for k in range(10)]

plan = make_shuffle_plan(len(true_scores), seed=7)
print(f"shuffle plan: {plan.permutation} (zero reference at slot {plan.zero_reference_index})")

# What actually goes over the wire: shuffled frames plus the reference.
request = build_scorer_request(
    execution_id="run-42",
    instruction="stack the red cup on the tray",
    frame_uris=[f"frames/{k:03d}.png" for k in range(10)],
    plan=plan,
    zero_reference_uri="frames/reference.png",
)
print(f"request carries {len(request['frames'])} frames for 10 real ones")

# Pretend the scorer echoes the true progress (plus one wild value).
transmitted = shuffle_frames(true_scores, plan, zero_reference=0.0)
transmitted[3] += 200.0  # a scorer glitch
clamped, flagged = clamp_scores(transmitted)
print(f"out-of-range scores clamped: {flagged}")

series = deshuffle_scores(clamped, plan)
print(f"recovered in-order scores: {[f'{s:.0f}' for s in series.scores]}")

# Aggregation: the paper-style summary is the mean of the final 30% window.
for method in AggregationMethod:
    print(f"{method.name:<10} -> {aggregate(series, method).value:6.2f}")

# Error bars across repeated rollouts use the standard error of the mean.
final_scores = [80.0, 72.5, 91.0, 66.0, 84.5]
print(f"\nfive rollouts: mean {np.mean(final_scores):.2f} +/- {sem(final_scores):.2f} (SEM)")
