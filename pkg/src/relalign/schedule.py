"""Learning-rate schedule: linear warmup into a cosine decay.

The ramp runs from zero to the base rate over the warmup fraction of the
run, then cosine-decays to ``final_lr_fraction * base_lr``. Both endpoints
are exact in floating point: the ramp evaluates ``step / warmup`` (one at
the boundary) and the cosine term vanishes identically at the final step.
"""

from __future__ import annotations

import math


def warmup_steps(total_steps: int, warmup_fraction: float) -> int:
    """Number of ramp steps; at least 1 and at most total_steps - 1."""
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    steps = int(round(warmup_fraction * total_steps))
    return max(1, min(steps, max(1, total_steps - 1)))


def lr_at(
    step: int,
    total_steps: int,
    base_lr: float,
    warmup_fraction: float = 0.20,
    final_lr_fraction: float = 0.05,
) -> float:
    """Learning rate at ``step`` of a ``total_steps`` run."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    final_lr = final_lr_fraction * base_lr
    if step == total_steps:
        return final_lr
    ramp = warmup_steps(total_steps, warmup_fraction)
    if step <= ramp:
        return base_lr * (step / ramp)
    progress = (step - ramp) / (total_steps - ramp)
    return final_lr + (base_lr - final_lr) * 0.5 * (1.0 + math.cos(math.pi * progress))
