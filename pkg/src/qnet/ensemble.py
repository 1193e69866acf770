"""Seeded ensemble campaigns over graph realizations, noise amplitudes and trajectories.

Every random draw is keyed by ``derive_seed(master_seed, (realization,
omega_index, trajectory), stream)``, so a campaign is a pure function of its
configuration and the order or number of workers never changes a result.
"""

from __future__ import annotations

import csv
import enum
import functools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import graphs
from .bath import BathKernels, SpectralParams, tabulate_kernels
from .dynamics import Environment, RunRecord, SimParams, efficiency, evolve, evolve_batch
from .errors import ConsistencyError, InvalidArgument
from .graphs import Graph
from .noise import RTNParams, sample_trajectory

FAMILIES = ("random_removal", "watts_strogatz", "explicit")
STREAM_GRAPH = 0
STREAM_RTN = 1
MIN_CLASSIFY_POINTS = 5
LINEARITY_TOL = 1e-10

_MASK64 = (1 << 64) - 1
_REALIZATION_BITS = 24
_OMEGA_BITS = 12
_TRAJECTORY_BITS = 24
_STREAM_BITS = 4


class CurveClass(str, enum.Enum):
    MD = "MD"
    DI = "DI"
    DI2 = "DI2"
    I = "I"  # noqa: E741
    ID = "ID"
    IDI = "IDI"
    FLAT = "FLAT"
    OTHER = "OTHER"


@dataclass(frozen=True)
class CampaignConfig:
    """Everything that determines a campaign; field names match the JSON config."""

    family: str = "random_removal"
    n_nodes: int = 10
    n_removed: int = 15
    k: int = 4
    p: float = 0.75
    graph: Graph | None = None
    environment: Environment = Environment.RTN_ONLY
    V: float = 2.0
    kappa: float = 0.5
    t_up: float = math.pi
    dt: float | None = None
    nu: float = 1.0
    omega: float = 10.0
    omega_grid: tuple | None = None
    f: float = 0.5
    x_f: float = 2.0
    k_bt: float = 1.0
    n_realizations: int = 1
    n_traj: int = 100
    master_seed: int = 0
    theta: float = 0.02
    classify: bool = True
    negativity_tol: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "environment", Environment(self.environment))
        if self.family not in FAMILIES:
            raise InvalidArgument(f"family must be one of {FAMILIES}, got {self.family!r}")
        if self.family == "explicit" and self.graph is None:
            raise InvalidArgument("family 'explicit' needs a graph")
        if self.omega_grid is not None:
            grid = tuple(float(w) for w in self.omega_grid)
            object.__setattr__(self, "omega_grid", grid)
            if len(grid) == 0:
                raise InvalidArgument("omega_grid must not be empty")
            if any(b <= a for a, b in zip(grid, grid[1:])):
                raise InvalidArgument("omega_grid must be strictly increasing")
            if self.classification_requested and grid[0] != 0.0:
                raise InvalidArgument("omega_grid must start at 0 when curves are classified")
        if any(w < 0 for w in self.omegas):
            raise InvalidArgument("noise amplitudes must be >= 0")
        if self.n_realizations < 1 or self.n_realizations >= 1 << _REALIZATION_BITS:
            raise InvalidArgument(f"n_realizations must lie in [1, 2^{_REALIZATION_BITS})")
        if self.n_traj < 1 or self.n_traj >= 1 << _TRAJECTORY_BITS:
            raise InvalidArgument(f"n_traj must lie in [1, 2^{_TRAJECTORY_BITS})")
        if len(self.omegas) >= 1 << _OMEGA_BITS:
            raise InvalidArgument(f"omega_grid holds at most 2^{_OMEGA_BITS} - 1 points")
        if not 0 <= self.master_seed <= _MASK64:
            raise InvalidArgument("master_seed must be an unsigned 64-bit integer")
        if self.nu <= 0:
            raise InvalidArgument("nu must be > 0")
        if not 0.0 <= self.p <= 1.0:
            raise InvalidArgument("p must lie in [0, 1]")
        if self.theta <= 0:
            raise InvalidArgument("theta must be > 0")
        # validates V, kappa, t_up, dt
        self.sim_params()

    @property
    def omegas(self) -> tuple:
        return self.omega_grid if self.omega_grid is not None else (float(self.omega),)

    @property
    def classification_requested(self) -> bool:
        return self.classify and self.omega_grid is not None and len(self.omega_grid) >= MIN_CLASSIFY_POINTS

    @property
    def family_params(self) -> dict:
        if self.family == "random_removal":
            return {"n_R": self.n_removed}
        if self.family == "watts_strogatz":
            return {"k": self.k, "p": self.p}
        return {}

    def sim_params(self) -> SimParams:
        return SimParams(V=self.V, kappa=self.kappa, t_up=self.t_up, dt=self.dt,
                         environment=self.environment, negativity_tol=self.negativity_tol)

    def spectral_params(self) -> SpectralParams:
        return SpectralParams(x_f=self.x_f, k_bt=self.k_bt)


@dataclass
class EfficiencyCurve:
    omegas: np.ndarray
    etas: np.ndarray
    realization: int = 0
    label: CurveClass | None = None


@dataclass
class PointResult:
    """Noise-averaged outcome at one (graph, Omega) point."""

    eta: float
    eta_mean: float
    record: RunRecord | None
    sink: int | None


@dataclass
class CampaignResult:
    config: CampaignConfig
    curves: list
    seeds: list = field(default_factory=list)


# -- seeding -----------------------------------------------------------------

def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(master_seed: int, indices: tuple[int, int, int], stream: int = STREAM_RTN) -> int:
    """64-bit seed for one cell of the campaign index space.

    The indices are packed into disjoint bit fields (24 bits realization,
    12 bits Omega index, 24 bits trajectory, 4 bits stream) and XOR-ed with a
    scrambled master seed before a final splitmix64 round. Both steps are
    bijections of 64-bit words, so distinct cells never share a seed and a
    different master seed changes every cell.
    """
    r, w, t = (int(i) for i in indices)
    limits = ((r, _REALIZATION_BITS), (w, _OMEGA_BITS), (t, _TRAJECTORY_BITS), (stream, _STREAM_BITS))
    for value, bits in limits:
        if not 0 <= value < 1 << bits:
            raise InvalidArgument(f"index {value} outside the {bits}-bit campaign range")
    packed = r
    packed = (packed << _OMEGA_BITS) | w
    packed = (packed << _TRAJECTORY_BITS) | t
    packed = (packed << _STREAM_BITS) | stream
    return _splitmix64(_splitmix64(int(master_seed) & _MASK64) ^ packed)


def realization_seed(config: CampaignConfig, realization: int) -> int:
    return derive_seed(config.master_seed, (realization, 0, 0), STREAM_GRAPH)


def build_graph(config: CampaignConfig, realization: int) -> Graph:
    """The graph of one realization; deterministic in (config, realization)."""
    if config.family == "explicit":
        return config.graph
    rng = np.random.default_rng(realization_seed(config, realization))
    if config.family == "random_removal":
        return graphs.random_removal_graph(config.n_nodes, config.n_removed, rng)
    return graphs.watts_strogatz_graph(config.n_nodes, config.k, config.p, rng)


@functools.lru_cache(maxsize=16)
def _kernels(n_steps: int, t_up: float, f: float, V: float, x_f: float, k_bt: float) -> BathKernels:
    sim = SimParams(t_up=t_up, dt=t_up / n_steps)
    return tabulate_kernels(sim.grid(), f, V, SpectralParams(x_f=x_f, k_bt=k_bt))


def kernels_for(config: CampaignConfig) -> BathKernels | None:
    if not config.environment.has_bath:
        return None
    sim = config.sim_params()
    return _kernels(sim.n_steps, sim.t_up, float(config.f), float(config.V), float(config.x_f), float(config.k_bt))


# -- single points and sweeps ------------------------------------------------

def run_point(config: CampaignConfig, graph: Graph, omega: float, realization: int = 0,
              omega_index: int = 0) -> PointResult:
    """Noise-averaged efficiency and averaged record at one amplitude.

    For noisy models the trajectory records are averaged first and the
    efficiency taken from the mean record; the mean of the per-trajectory
    efficiencies must agree to LINEARITY_TOL.
    """
    sim = config.sim_params()
    sink = graphs.select_sink(graph, sim.source)
    if sink is graphs.DEGENERATE:
        return PointResult(0.0, 0.0, None, None)
    env = config.environment
    kernels = kernels_for(config)
    if not env.has_noise:
        rec = evolve(graph, sink, sim, kernels=kernels)
        eta = efficiency(rec, sim.kappa)
        return PointResult(eta, eta, rec, sink)

    rtn = RTNParams(amplitude=omega, rate=config.nu)
    trajs = [
        sample_trajectory(config.nu, sim.t_up,
                          np.random.default_rng(derive_seed(config.master_seed, (realization, omega_index, j))))
        for j in range(config.n_traj)
    ]
    if env.has_bath:
        records = [evolve(graph, sink, sim, traj=t, kernels=kernels, rtn=rtn) for t in trajs]
    else:
        records = evolve_batch(graph, sink, sim, trajs, rtn)
    mean_rec = RunRecord.average(records)
    eta = efficiency(mean_rec, sim.kappa)
    eta_mean = float(np.mean([efficiency(r, sim.kappa) for r in records]))
    if abs(eta - eta_mean) > LINEARITY_TOL:
        raise ConsistencyError(
            f"efficiency of the averaged record {eta!r} differs from the mean efficiency {eta_mean!r}"
        )
    return PointResult(eta, eta_mean, mean_rec, sink)


def run_single(config: CampaignConfig, graph: Graph, omega: float, realization: int = 0,
               omega_index: int = 0) -> float:
    return run_point(config, graph, omega, realization, omega_index).eta


def sweep_omega(config: CampaignConfig, graph: Graph, realization: int = 0) -> EfficiencyCurve:
    """Efficiency at every amplitude of the config grid, on one graph."""
    omegas = np.asarray(config.omegas, dtype=float)
    etas = np.array([run_single(config, graph, w, realization, i) for i, w in enumerate(omegas)])
    label = classify_curve(etas, config.theta) if config.classification_requested else None
    return EfficiencyCurve(omegas, etas, realization, label)


# -- classification ----------------------------------------------------------

def _smooth3(y: np.ndarray) -> np.ndarray:
    """Three-point moving average; the two end samples are kept as they are."""
    out = y.copy()
    out[1:-1] = (y[:-2] + y[1:-1] + y[2:]) / 3.0
    return out


def monotone_pattern(y, theta: float) -> str:
    """Sequence of significant rises ('I') and falls ('D').

    A zigzag filter: a turning point is confirmed only once the curve has
    moved at least ``theta`` away from it, so every reported segment has a
    swing of at least ``theta``.
    """
    y = np.asarray(y, dtype=float)
    lo = hi = 0
    direction = 0
    cand = 0
    pattern = []
    for i in range(1, y.size):
        if direction == 0:
            if y[i] < y[lo]:
                lo = i
            if y[i] > y[hi]:
                hi = i
            if y[i] - y[lo] >= theta:
                direction, cand = 1, i
                pattern.append("I")
            elif y[hi] - y[i] >= theta:
                direction, cand = -1, i
                pattern.append("D")
        elif direction == 1:
            if y[i] > y[cand]:
                cand = i
            elif y[cand] - y[i] >= theta:
                direction, cand = -1, i
                pattern.append("D")
        else:
            if y[i] < y[cand]:
                cand = i
            elif y[i] - y[cand] >= theta:
                direction, cand = 1, i
                pattern.append("I")
    return "".join(pattern)


def classify_curve(curve, theta: float = 0.02) -> CurveClass:
    """Label the Omega dependence of an efficiency curve.

    ``curve`` is an EfficiencyCurve or a sequence of efficiencies on a grid
    starting at Omega = 0.
    """
    if isinstance(curve, EfficiencyCurve):
        if curve.omegas.size and curve.omegas[0] != 0.0:
            raise InvalidArgument("curve must start at Omega = 0")
        etas = curve.etas
    else:
        etas = curve
    y = np.asarray(etas, dtype=float)
    if y.ndim != 1 or y.size < MIN_CLASSIFY_POINTS:
        raise InvalidArgument(f"classification needs at least {MIN_CLASSIFY_POINTS} points")
    if theta <= 0:
        raise InvalidArgument("theta must be > 0")
    pattern = monotone_pattern(_smooth3(y), theta)
    if pattern == "":
        return CurveClass.FLAT
    if pattern == "D":
        return CurveClass.MD
    if pattern == "DI":
        if y[-1] < y[0] - theta:
            return CurveClass.DI
        if y[-1] > y[0] + theta:
            return CurveClass.DI2
        return CurveClass.OTHER
    return {"I": CurveClass.I, "ID": CurveClass.ID, "IDI": CurveClass.IDI}.get(pattern, CurveClass.OTHER)


def class_distribution(labels) -> list[tuple]:
    """Rows (k, class, count, fraction) for every k and every class.

    ``labels`` is an iterable of ``(k, CurveClass)`` pairs.
    """
    counts: dict = {}
    for k, label in labels:
        counts.setdefault(k, {c: 0 for c in CurveClass})[CurveClass(label)] += 1
    rows = []
    for k in sorted(counts):
        total = sum(counts[k].values())
        for c in CurveClass:
            rows.append((k, c, counts[k][c], counts[k][c] / total))
    return rows


def efficiency_distribution(etas, bins) -> tuple[np.ndarray, np.ndarray]:
    """Per-Omega histogram of efficiencies over realizations, and the per-Omega mean.

    ``etas`` has shape (n_realizations, n_omega); the result has one row per
    Omega and one column per bin.
    """
    etas = np.atleast_2d(np.asarray(etas, dtype=float))
    bins = np.asarray(bins, dtype=float)
    if bins.ndim != 1 or bins.size < 2 or bins[0] > 0.0 or bins[-1] < 1.0 or np.any(np.diff(bins) <= 0):
        raise InvalidArgument("bins must be increasing and cover [0, 1]")
    counts = np.stack([np.histogram(col, bins=bins)[0] for col in etas.T])
    return counts, etas.mean(axis=0)


# -- campaigns ---------------------------------------------------------------

def _point_task(args):
    config, realization, omega_index = args
    graph = build_graph(config, realization)
    return run_single(config, graph, config.omegas[omega_index], realization, omega_index)


def map_ordered(fn, tasks, jobs: int = 1):
    """Apply ``fn`` to every task, in a process pool when ``jobs > 1``; results in task order."""
    tasks = list(tasks)
    if jobs is None or jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    chunk = max(1, len(tasks) // (4 * jobs))
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks, chunksize=chunk))


def run_campaign(config: CampaignConfig, jobs: int = 1) -> CampaignResult:
    """All realizations times all amplitudes; one task per (realization, Omega)."""
    n_w = len(config.omegas)
    tasks = [(config, r, i) for r in range(config.n_realizations) for i in range(n_w)]
    etas = np.array(map_ordered(_point_task, tasks, jobs)).reshape(config.n_realizations, n_w)
    omegas = np.asarray(config.omegas, dtype=float)
    curves = []
    for r in range(config.n_realizations):
        label = classify_curve(etas[r], config.theta) if config.classification_requested else None
        curves.append(EfficiencyCurve(omegas, etas[r], r, label))
    seeds = [realization_seed(config, r) for r in range(config.n_realizations)]
    return CampaignResult(config, curves, seeds)


def parameter_sweep(config: CampaignConfig, axis: str, values, jobs: int = 1) -> np.ndarray:
    """Efficiency table of shape (n_realizations, len(values)) along one axis.

    ``axis`` is ``"k_bt"`` or ``"x_f"`` (bath environments) or ``"k"``
    (Watts-Strogatz family); all other settings stay at the config values and
    the noise amplitude is ``config.omega``.
    """
    names = {"k_bt": "k_bt", "x_f": "x_f", "k": "k"}
    if axis not in names:
        raise InvalidArgument(f"axis must be one of {sorted(names)}, got {axis!r}")
    if axis in ("k_bt", "x_f") and not config.environment.has_bath:
        raise InvalidArgument(f"sweeping {axis} needs a bath environment")
    if axis == "k" and config.family != "watts_strogatz":
        raise InvalidArgument("sweeping k needs the watts_strogatz family")
    values = list(values)
    configs = [replace(config, omega_grid=None, **{names[axis]: v}) for v in values]
    tasks = [(c, r, 0) for r in range(config.n_realizations) for c in configs]
    out = map_ordered(_point_task, tasks, jobs)
    return np.array(out, dtype=float).reshape(config.n_realizations, len(values))


# -- output ------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_results_csv(result: CampaignResult, path) -> None:
    """One row per (realization, Omega); the class sits on each curve's last row."""
    fam = result.config.family_params
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["realization_id", *fam, "omega", "eta", "class", "seed"])
        for curve, seed in zip(result.curves, result.seeds):
            last = len(curve.omegas) - 1
            for i, (om, eta) in enumerate(zip(curve.omegas, curve.etas)):
                label = curve.label.value if (i == last and curve.label is not None) else ""
                w.writerow([curve.realization, *(_fmt(v) for v in fam.values()), _fmt(om), _fmt(eta), label, seed])


def write_class_distribution_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "class", "count", "fraction"])
        for k, cls, count, frac in rows:
            w.writerow([k, CurveClass(cls).value, count, _fmt(frac)])


def write_curve_csv(curve: EfficiencyCurve, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["omega", "eta"])
        for om, eta in zip(curve.omegas, curve.etas):
            w.writerow([_fmt(om), _fmt(eta)])
