"""Periodic excitation added to each agent's sampling point."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["DitherSchedule", "dither_at"]


@dataclass(frozen=True)
class DitherSchedule:
    """Cosine on the decision channel, sine on the aggregate channel.

    ``phases`` holds optional per-agent offsets (radians); missing agents use 0.
    """

    period: int = 4
    amplitude: float = 5.0
    phases: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.period < 1:
            raise ValueError("period must be a positive integer")
        if not self.amplitude > 0:
            raise ValueError("amplitude must be positive")
        object.__setattr__(self, "phases", tuple(float(p) for p in self.phases))

    def phase(self, i: int) -> float:
        return self.phases[i] if i < len(self.phases) else 0.0

    def values(self, k: int, n_agents: int) -> tuple[np.ndarray, np.ndarray]:
        """Dithers of all agents at iteration ``k``."""
        k = int(k) % self.period
        ph = np.array([self.phase(i) for i in range(n_agents)])
        ang = 2.0 * np.pi * k / self.period + ph
        return self.amplitude * np.cos(ang), self.amplitude * np.sin(ang)


def dither_at(sched: DitherSchedule, i: int, k: int) -> tuple[float, float]:
    if k < 0:
        raise ValueError("iteration must be nonnegative")
    # reducing k modulo the period makes periodicity exact in floating point
    ang = 2.0 * np.pi * (k % sched.period) / sched.period + sched.phase(i)
    return float(sched.amplitude * np.cos(ang)), float(sched.amplitude * np.sin(ang))
