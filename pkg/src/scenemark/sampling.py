"""Frame selection: pick n working frames out of an N-frame capture.

Indices follow s_i = floor((i-1) * N / n) + 1 for i = 1..n, evaluated in
exact integer arithmetic so the plan is reproducible everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass


class SamplingError(ValueError):
    """Invalid (N, n) combination."""


@dataclass(frozen=True)
class SamplePlan:
    """A concrete pick of ``sample_count`` frame indices out of ``total_frames``.

    Indices are 1-based and strictly increasing.
    """

    total_frames: int
    sample_count: int
    indices: tuple[int, ...]


def sample_indices(total_frames: int, sample_count: int) -> SamplePlan:
    """Approximately uniform frame pick over [1, total_frames].

    Raises SamplingError when sample_count is 0, total_frames is 0, or
    sample_count exceeds total_frames (a deliberate error, not a clamp:
    silently clamping would hide a misconfigured run).
    """
    if total_frames <= 0:
        raise SamplingError(f"total_frames must be positive, got {total_frames}")
    if sample_count <= 0:
        raise SamplingError(f"sample_count must be positive, got {sample_count}")
    if sample_count > total_frames:
        raise SamplingError(
            f"cannot sample {sample_count} frames from {total_frames}"
        )
    indices = tuple(
        (i - 1) * total_frames // sample_count + 1 for i in range(1, sample_count + 1)
    )
    return SamplePlan(total_frames, sample_count, indices)
