"""Synthetic ground-truth generator.

Produces everything the pipeline consumes — trajectory CSVs, role files,
grid configs, observation files — from explicit small seasonal kernels,
so each estimation stage can be checked against the truth that generated
its input.  All randomness flows from one seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .grid import GridCovering, build_grid
from .ingest import DEFAULT_EPOCH, Season, SeasonCalendar, TransitionPair
from .schedule import ChainSchedule

_ROW_TOL = 1e-12


@dataclass(frozen=True)
class SyntheticSpec:
    """Ground truth for a synthetic run.

    ``kernels`` maps each season to an (n, n) row-substochastic array
    over the grid's states; row deficits are exit probabilities.  Role
    and observation entries use state indices; ``sample_observations``
    requests that many simulated debris discoveries from the true source
    instead of explicit ones.
    """

    bounds: tuple[float, float, float, float]
    cell_size: float
    kernels: dict[Season, np.ndarray]
    n_drifters: int = 100
    duration_days: float = 360.0
    sample_interval_days: float = 5.0
    seed: int = 0
    start_date: date = DEFAULT_EPOCH
    source_state: int | None = None
    leaky: tuple[int, ...] = ()
    sticky: dict[int, float] = field(default_factory=dict)
    debris: tuple[int, ...] = ()
    candidate_sources: tuple[int, ...] = ()
    observations: tuple[dict, ...] = ()
    sample_observations: int = 0
    max_observation_steps: int = 200

    def __post_init__(self):
        for season in Season:
            if season not in self.kernels:
                raise ConfigError(f"synthetic spec lacks a kernel for season {season}")
        shapes = {k.shape for k in self.kernels.values()}
        if len(shapes) != 1:
            raise ConfigError("seasonal kernels must share one shape")
        for season, k in self.kernels.items():
            validate_kernel(k, str(season))
        if self.n_drifters < 0:
            raise ConfigError("n_drifters must be nonnegative")
        if self.sample_interval_days <= 0:
            raise ConfigError("sample interval must be positive")

    @property
    def n_states(self) -> int:
        return next(iter(self.kernels.values())).shape[0]

    def grid(self) -> GridCovering:
        g = build_grid(self.bounds, self.cell_size)
        if g.n_states != self.n_states:
            raise ConfigError(
                f"kernels are {self.n_states}-state but the grid has {g.n_states} boxes"
            )
        return g


def validate_kernel(k: np.ndarray, name: str) -> None:
    k = np.asarray(k)
    if k.ndim != 2 or k.shape[0] != k.shape[1]:
        raise ConfigError(f"kernel {name} must be square, got {k.shape}")
    if k.size and k.min() < 0:
        raise ConfigError(f"kernel {name} has negative entries")
    sums = k.sum(axis=1)
    if sums.size and sums.max() > 1 + _ROW_TOL:
        raise ConfigError(f"kernel {name} row sums exceed 1 (max {sums.max()})")


def load_spec(path: str | Path) -> SyntheticSpec:
    """Read a SyntheticSpec from its JSON description."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    try:
        bounds = tuple(float(raw["bounds"][i]) for i in range(4))
        kernels = {
            Season(name): np.asarray(mat, dtype=float)
            for name, mat in raw["kernels"].items()
        }
        spec = SyntheticSpec(
            bounds=bounds,
            cell_size=float(raw["cell_size"]),
            kernels=kernels,
            n_drifters=int(raw.get("n_drifters", 100)),
            duration_days=float(raw.get("duration_days", 360.0)),
            sample_interval_days=float(raw.get("sample_interval_days", 5.0)),
            seed=int(raw.get("seed", 0)),
            start_date=date.fromisoformat(raw.get("start_date", "2014-03-08")),
            source_state=None if raw.get("source_state") is None else int(raw["source_state"]),
            leaky=tuple(int(i) for i in raw.get("leaky", [])),
            sticky={int(i): float(l) for i, l in raw.get("sticky", {}).items()},
            debris=tuple(int(i) for i in raw.get("debris", [])),
            candidate_sources=tuple(int(i) for i in raw.get("candidate_sources", [])),
            observations=tuple(raw.get("observations", [])),
            sample_observations=int(raw.get("sample_observations", 0)),
            max_observation_steps=int(raw.get("max_observation_steps", 200)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: invalid synthetic spec ({exc})") from None
    return spec


def sample_pairs(
    kernels: dict[Season, np.ndarray] | np.ndarray,
    n_pairs: int,
    seed: int = 0,
    start_probs: np.ndarray | None = None,
) -> list[TransitionPair]:
    """Draw independent lag-T transition pairs straight from kernels.

    Start states are uniform (or ``start_probs``); seasons are drawn
    uniformly when several kernels are given.  Row deficits materialize
    as out-of-domain endings (to_state -1).  This bypasses trajectory
    assembly: it is the sampling model Ulam counting inverts, so the
    estimator must converge to the kernel as n_pairs grows.
    """
    if isinstance(kernels, np.ndarray):
        kernels = {Season.W: kernels, Season.S: kernels, Season.SF: kernels}
    for season, k in kernels.items():
        validate_kernel(k, str(season))
    seasons = sorted(kernels, key=lambda s: s.value)
    n = kernels[seasons[0]].shape[0]
    rng = np.random.default_rng(seed)

    starts = rng.choice(n, size=n_pairs, p=start_probs)
    season_idx = rng.integers(len(seasons), size=n_pairs)
    u = rng.random(n_pairs)

    # Cumulative rows per (season, state); a draw beyond the row sum is an exit.
    cums = {s: np.cumsum(kernels[s], axis=1) for s in seasons}
    ends = np.empty(n_pairs, dtype=np.int64)
    for si, s in enumerate(seasons):
        sel = season_idx == si
        if not sel.any():
            continue
        rows = cums[s][starts[sel]]
        pos = np.sum(u[sel, None] >= rows, axis=1)
        hit = np.where(pos < n, pos, -1)
        ends[sel] = hit
    return [
        TransitionPair(
            from_state=int(starts[i]),
            to_state=int(ends[i]),
            start_date=0.0,
            season=seasons[season_idx[i]],
        )
        for i in range(n_pairs)
    ]


@dataclass(frozen=True)
class SimulatedTrack:
    drifter_id: int
    times: np.ndarray
    lons: np.ndarray
    lats: np.ndarray
    states: np.ndarray  # -1 marks the final out-of-domain sample


def simulate_tracks(spec: SyntheticSpec, calendar: SeasonCalendar | None = None) -> list[SimulatedTrack]:
    """Walk virtual drifters through the true seasonal kernels.

    Each drifter starts in a uniform random box at a random step-aligned
    day, reports one jittered in-box position per step, and —
    when its kernel row's deficit fires — one final position just outside
    the domain before vanishing.
    """
    calendar = calendar or SeasonCalendar()
    g = spec.grid()
    rng = np.random.default_rng(spec.seed)
    dt = spec.sample_interval_days
    n = g.n_states
    max_steps = max(int(math.floor(spec.duration_days / dt)), 1)
    out_lon = g.lon_max + spec.cell_size
    out_lat = (g.lat_min + g.lat_max) / 2.0
    tracks = []
    for did in range(spec.n_drifters):
        start_step = int(rng.integers(max_steps))
        state = int(rng.integers(n))
        times, lons, lats, states = [], [], [], []
        step = start_step
        while step <= max_steps and state >= 0:
            t = step * dt
            lon, lat = _jittered_position(g, state, rng)
            times.append(t)
            lons.append(lon)
            lats.append(lat)
            states.append(state)
            if step == max_steps:
                break
            season = calendar.season_of_day(t, spec.start_date)
            state = _step_state(spec.kernels[season], state, rng)
            step += 1
        if state < 0 and step <= max_steps:
            times.append(step * dt)
            lons.append(out_lon)
            lats.append(out_lat)
            states.append(-1)
        tracks.append(SimulatedTrack(
            drifter_id=did,
            times=np.asarray(times),
            lons=np.asarray(lons),
            lats=np.asarray(lats),
            states=np.asarray(states, dtype=np.int64),
        ))
    return tracks


def _jittered_position(g: GridCovering, state: int, rng) -> tuple[float, float]:
    lon, lat = g.box_center(state)
    half = 0.45 * g.cell_size
    return (
        lon + half * (2.0 * rng.random() - 1.0),
        lat + half * (2.0 * rng.random() - 1.0),
    )


def _step_state(kernel: np.ndarray, state: int, rng) -> int:
    row = kernel[state]
    u = rng.random()
    acc = 0.0
    for j, p in enumerate(row):
        acc += p
        if u < acc:
            return j
    return -1


def write_tracks_csv(tracks: list[SimulatedTrack], path: str | Path) -> None:
    """Emit the ingest-format trajectory CSV."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("id,time_days,lon,lat\n")
        for tr in tracks:
            for t, lon, lat in zip(tr.times, tr.lons, tr.lats):
                fh.write(f"{tr.drifter_id},{t:.17g},{lon:.17g},{lat:.17g}\n")


def sample_observations(
    schedule: ChainSchedule,
    source: int,
    count: int,
    seed: int = 0,
    max_steps: int = 200,
) -> list[tuple[int, int]]:
    """Simulate debris discoveries: (target label, absorption step) pairs.

    Walks the augmented chain from the source until a target absorbs the
    walker; cemetery deaths and walks exceeding ``max_steps`` are
    discarded and retried.  Raises after too many consecutive failures
    (the source may not reach any target).
    """
    rng = np.random.default_rng(seed)
    n = schedule.n_grid_states
    if not 0 <= source < n:
        raise ValueError(f"source {source} outside the grid state range")
    out: list[tuple[int, int]] = []
    failures = 0
    while len(out) < count:
        hit = _one_absorption(schedule, source, rng, max_steps)
        if hit is None:
            failures += 1
            if failures >= 1000:
                raise ConfigError(
                    f"source {source}: no beaching in 1000 consecutive walks"
                )
            continue
        failures = 0
        out.append(hit)
    return out


def _one_absorption(schedule, source: int, rng, max_steps: int):
    state = source
    cemetery = schedule.cemetery
    for k in range(1, max_steps + 1):
        m = schedule.matrix_for_step(k - 1)
        lo, hi = m.indptr[state], m.indptr[state + 1]
        nbrs = m.indices[lo:hi]
        probs = m.data[lo:hi]
        # Rows of an augmented chain sum to 1, so this draw is total.
        state = int(rng.choice(nbrs, p=probs / probs.sum()))
        if state == cemetery:
            return None
        if state > cemetery:
            return state - cemetery, k
    return None


def write_observations_csv(
    rows: list[tuple[int, int]] | list[dict],
    transition_time: float,
    path: str | Path,
) -> None:
    """Write `target_label,days_since_crash,name` from (label, step) pairs
    or explicit observation dicts."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("target_label,days_since_crash,name\n")
        for i, row in enumerate(rows, start=1):
            if isinstance(row, dict):
                label = int(row["target_label"])
                days = float(row["days_since_crash"])
                name = str(row.get("name", f"obs{i}"))
            else:
                label, k = row
                days = k * transition_time
                name = f"obs{i}"
            fh.write(f"{label},{days:.17g},{name}\n")


def write_roles_csv(spec: SyntheticSpec, g: GridCovering, path: str | Path) -> None:
    """Emit the role file for the spec's state-indexed role sets."""
    def box(i: int) -> str:
        ix, iy = g.box_of_state(i)
        return f"{ix},{iy}"

    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i in spec.leaky:
            fh.write(f"leaky: {box(i)}\n")
        for i, ell in sorted(spec.sticky.items()):
            fh.write(f"sticky: {box(i)},{ell:.17g}\n")
        for m, i in enumerate(spec.debris, start=1):
            fh.write(f"debris: {box(i)},{m}\n")
        for i in spec.candidate_sources:
            fh.write(f"source: {box(i)}\n")


def write_grid_config(spec: SyntheticSpec, path: str | Path) -> None:
    lon_min, lon_max, lat_min, lat_max = spec.bounds
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"lon_min = {lon_min:.17g}\n")
        fh.write(f"lon_max = {lon_max:.17g}\n")
        fh.write(f"lat_min = {lat_min:.17g}\n")
        fh.write(f"lat_max = {lat_max:.17g}\n")
        fh.write(f"cell_size = {spec.cell_size:.17g}\n")


def write_truth_sidecar(spec: SyntheticSpec, path: str | Path,
                        sampled_obs: list[tuple[int, int]] | None = None) -> None:
    """Ground-truth JSON sidecar for oracle comparison."""
    payload = {
        "seed": spec.seed,
        "source_state": spec.source_state,
        "n_drifters": spec.n_drifters,
        "duration_days": spec.duration_days,
        "sample_interval_days": spec.sample_interval_days,
        "start_date": spec.start_date.isoformat(),
        "bounds": list(spec.bounds),
        "cell_size": spec.cell_size,
        "kernels": {str(s): spec.kernels[s].tolist() for s in Season},
        "leaky": list(spec.leaky),
        "sticky": {str(i): l for i, l in sorted(spec.sticky.items())},
        "debris": list(spec.debris),
        "candidate_sources": list(spec.candidate_sources),
        "sampled_observations": sampled_obs,
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def two_gyre_kernel(n_per_gyre: int, leak: float = 0.3,
                    coupling: float = 0.05, retention: float = 0.9) -> np.ndarray:
    """Two cyclic gyres, the first leak-shielded, weakly coupled.

    States 0..n-1 form the attracting gyre (no leaks); states n..2n-1
    leak mass out at ``leak`` per step.  ``coupling`` carries mass from
    the leaky gyre into the attracting one, so the dominant right
    eigenvector separates the basins.
    """
    n = n_per_gyre
    if n < 2:
        raise ValueError("each gyre needs at least 2 states")
    if not 0 < retention - coupling - leak:
        raise ValueError("retention must exceed coupling + leak")
    k = np.zeros((2 * n, 2 * n))
    for i in range(n):
        k[i, i] = 1.0 - retention
        k[i, (i + 1) % n] = retention
    for i in range(n):
        s = n + i
        k[s, n + (i + 1) % n] = retention - coupling - leak
        k[s, (i + 1) % n] = coupling
        k[s, s] = 1.0 - retention
    return k
