"""Random telegraph noise (RTN) trajectories.

A trajectory is a symmetric two-state Markov chain alpha(t) in {-1, +1} whose
autocorrelation is ``exp(-nu |t - t'|)``; a symmetric chain with that
correlation flips at rate ``nu / 2``. All sites share the trajectory, with the
sign alternating by node index parity (node 0 positive).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument


@dataclass(frozen=True)
class RTNParams:
    """Noise amplitude Omega and rate nu (inverse correlation time)."""

    amplitude: float = 10.0
    rate: float = 1.0

    def __post_init__(self):
        if self.amplitude < 0:
            raise InvalidArgument(f"RTN amplitude must be >= 0, got {self.amplitude}")
        if self.rate <= 0:
            raise InvalidArgument(f"RTN switching rate must be > 0, got {self.rate}")


@dataclass(frozen=True)
class RTNTrajectory:
    initial_sign: int
    flip_times: tuple
    t_up: float

    def __post_init__(self):
        if self.initial_sign not in (-1, 1):
            raise InvalidArgument("initial_sign must be +1 or -1")
        if self.t_up <= 0:
            raise InvalidArgument("t_up must be positive")
        prev = 0.0
        for t in self.flip_times:
            if not prev < t < self.t_up:
                raise InvalidArgument("flip times must be strictly increasing inside (0, t_up)")
            prev = t

    @property
    def n_flips(self) -> int:
        return len(self.flip_times)

    def to_json(self) -> str:
        return json.dumps(
            {"initial_sign": self.initial_sign, "flip_times": list(self.flip_times), "t_up": self.t_up}
        )

    @classmethod
    def from_json(cls, text: str) -> "RTNTrajectory":
        d = json.loads(text)
        return cls(int(d["initial_sign"]), tuple(float(t) for t in d["flip_times"]), float(d["t_up"]))


def constant_trajectory(t_up: float, sign: int = 1) -> RTNTrajectory:
    return RTNTrajectory(sign, (), t_up)


def sample_trajectory(rate: float, t_up: float, rng=None) -> RTNTrajectory:
    """Draw one RTN realization on ``[0, t_up]``.

    The initial sign is uniform (stationary start). Waiting times between
    flips are exponential with mean ``2 / rate``, which makes the
    autocorrelation ``exp(-rate * lag)``.
    """
    if rate <= 0 or t_up <= 0:
        raise InvalidArgument("rate and t_up must be positive")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    sign = 1 if rng.random() < 0.5 else -1
    flips = []
    mean_wait = 2.0 / rate
    t = rng.exponential(mean_wait)
    while t < t_up:
        if t > 0:
            flips.append(float(t))
        t += rng.exponential(mean_wait)
    return RTNTrajectory(sign, tuple(flips), float(t_up))


def value_at(traj: RTNTrajectory, t: float) -> int:
    """alpha(t); right-continuous, so a flip time already carries the new sign."""
    if not 0.0 <= t <= traj.t_up:
        raise InvalidArgument(f"t={t} outside [0, {traj.t_up}]")
    n = int(np.searchsorted(traj.flip_times, t, side="right"))
    return traj.initial_sign * (-1 if n % 2 else 1)


def values_on_grid(traj: RTNTrajectory, grid: np.ndarray) -> np.ndarray:
    n = np.searchsorted(np.asarray(traj.flip_times), grid, side="right")
    return traj.initial_sign * np.where(n % 2, -1, 1)


def site_signs(n_nodes: int) -> np.ndarray:
    """Alternating +1, -1, +1, ... pattern applied to the shared noise."""
    return np.where(np.arange(n_nodes) % 2, -1.0, 1.0)


def site_energy(node: int, t: float, traj: RTNTrajectory, amplitude: float, eps0: float = 0.0) -> float:
    return eps0 + (-1.0 if node % 2 else 1.0) * amplitude * value_at(traj, t)


def estimate_autocorrelation(trajectories, lag: float, n_grid: int = 64) -> float:
    """Average of alpha(t) alpha(t + lag) over trajectories and a grid of t."""
    if len(trajectories) < 2:
        raise InvalidArgument("need at least two trajectories")
    t_up = trajectories[0].t_up
    if not 0 <= lag <= t_up:
        raise InvalidArgument(f"lag must lie in [0, {t_up}]")
    t0 = np.linspace(0.0, t_up - lag, n_grid)
    acc = 0.0
    for tr in trajectories:
        acc += float(np.mean(values_on_grid(tr, t0) * values_on_grid(tr, t0 + lag)))
    return acc / len(trajectories)
