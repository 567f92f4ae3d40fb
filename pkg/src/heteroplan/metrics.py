"""Throughput and model-alignment metrics."""
from __future__ import annotations

from typing import Sequence

from .errors import ValidationError


def hetero_speedup_ratio(
    hetero_tgs: float,
    total_chips: int,
    baselines: Sequence[tuple[int, float]],
) -> float:
    """Mixed-cluster throughput relative to running each sub-cluster alone.

    baselines lists (chip_count, per-chip TGS) per type; the result is
    total_chips * hetero_tgs / sum(count * tgs).  1.0 means the mixed run
    exactly matches the chip-count-weighted mean of the homogeneous runs.
    """
    if hetero_tgs <= 0:
        raise ValidationError(f"hetero_tgs must be positive, got {hetero_tgs}")
    if total_chips <= 0:
        raise ValidationError(f"total_chips must be positive, got {total_chips}")
    if not baselines:
        raise ValidationError("baselines must be non-empty")
    denom = 0.0
    for count, tgs in baselines:
        if count <= 0 or tgs <= 0:
            raise ValidationError(f"baseline entries must be positive, got ({count}, {tgs})")
        denom += count * tgs
    return (total_chips * hetero_tgs) / denom


def mean_relative_error(reference: Sequence[float], candidate: Sequence[float]) -> float:
    """Mean of |y - y_hat| / |y| over matched pairs."""
    if len(reference) != len(candidate):
        raise ValidationError(
            f"series lengths differ: reference {len(reference)} vs candidate {len(candidate)}"
        )
    if not reference:
        raise ValidationError("series must be non-empty")
    acc = 0.0
    for i, (y, yhat) in enumerate(zip(reference, candidate)):
        if y == 0:
            raise ValidationError(f"reference element {i} is zero; relative error undefined")
        acc += abs(y - yhat) / abs(y)
    return acc / len(reference)


def tokens_per_chip_second(
    iteration_time: float,
    global_batch: int,
    sequence_length: int,
    total_chips: int,
) -> float:
    """Throughput in tokens per chip per second for one iteration.

    global_batch counts microbatches of one sequence each, so the iteration
    processes global_batch * sequence_length tokens.
    """
    if iteration_time <= 0:
        raise ValidationError(f"iteration_time must be positive, got {iteration_time}")
    if global_batch < 1 or sequence_length < 1 or total_chips < 1:
        raise ValidationError("global_batch, sequence_length, total_chips must be >= 1")
    return (global_batch * sequence_length) / (iteration_time * total_chips)


def load_series(path: str) -> list[float]:
    """Read a two-column (iteration, value) text series; returns the values.

    Columns split on commas or whitespace; blank lines and '#' comments are
    skipped.  The iteration column must be non-decreasing.
    """
    values: list[float] = []
    last_it = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            parts = text.split(",") if "," in text else text.split()
            if len(parts) != 2:
                raise ValidationError(f"{path}:{lineno}: expected two columns, got {len(parts)}")
            try:
                it, val = float(parts[0]), float(parts[1])
            except ValueError:
                raise ValidationError(f"{path}:{lineno}: non-numeric entry {text!r}") from None
            if last_it is not None and it < last_it:
                raise ValidationError(f"{path}:{lineno}: iteration column decreases")
            last_it = it
            values.append(val)
    if not values:
        raise ValidationError(f"{path}: series is empty")
    return values
