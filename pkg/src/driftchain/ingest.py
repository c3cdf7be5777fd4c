"""Trajectory parsing, lag-T transition-pair extraction, and seasonal binning.

Times are fractional days since a configurable epoch (default the crash
date, 2014-03-08).  Seasons follow the monsoon calendar: January-March is
the winter season W, July-September the summer season S, and the remaining
six months form the transition season SF.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from datetime import date, timedelta
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .grid import OUT_OF_DOMAIN, GridCovering

log = logging.getLogger(__name__)

DEFAULT_EPOCH = date(2014, 3, 8)


class Season(Enum):
    W = "W"
    S = "S"
    SF = "SF"

    def __str__(self) -> str:
        return self.value


_DEFAULT_MONTHS = {
    1: Season.W, 2: Season.W, 3: Season.W,
    4: Season.SF, 5: Season.SF, 6: Season.SF,
    7: Season.S, 8: Season.S, 9: Season.S,
    10: Season.SF, 11: Season.SF, 12: Season.SF,
}


@dataclass(frozen=True)
class SeasonCalendar:
    """Total month-to-season mapping with 3 W, 3 S and 6 SF months."""

    month_to_season: dict[int, Season] = field(default_factory=lambda: dict(_DEFAULT_MONTHS))

    def __post_init__(self):
        if sorted(self.month_to_season) != list(range(1, 13)):
            raise ConfigError("season calendar must map every month 1..12")
        counts = {s: 0 for s in Season}
        for s in self.month_to_season.values():
            counts[s] += 1
        if counts != {Season.W: 3, Season.S: 3, Season.SF: 6}:
            raise ConfigError(f"season calendar must have 3 W, 3 S and 6 SF months, got {counts}")

    def season_of_month(self, month: int) -> Season:
        return self.month_to_season[month]

    def season_of_date(self, d: date) -> Season:
        return self.month_to_season[d.month]

    def season_of_day(self, day: float, epoch: date = DEFAULT_EPOCH) -> Season:
        """Season of a fractional day-since-epoch timestamp."""
        return self.season_of_date(epoch + timedelta(days=math.floor(day)))


@dataclass(frozen=True, slots=True)
class TransitionPair:
    """One (start box, end box) sample at lag T.

    ``to_state`` is OUT_OF_DOMAIN when the trajectory left the domain by
    t+T; ``from_state`` is always a valid state.
    """

    from_state: int
    to_state: int
    start_date: float
    season: Season


@dataclass(frozen=True)
class Trajectory:
    drifter_id: str
    times: np.ndarray
    lons: np.ndarray
    lats: np.ndarray

    def __len__(self) -> int:
        return len(self.times)


@dataclass
class ParseReport:
    total_rows: int = 0
    valid_rows: int = 0
    skipped_rows: int = 0
    drogued_dropped: int = 0
    duplicate_times: int = 0
    n_drifters: int = 0


def parse_trajectories(path: str | Path) -> tuple[list[Trajectory], ParseReport]:
    """Read a `id,time_days,lon,lat[,drogued]` CSV into per-drifter tracks.

    Rows are grouped by drifter id and sorted by time; drifters come back
    sorted by id.  Malformed rows are skipped and counted, duplicate
    timestamps within a drifter keep the first occurrence, and rows with a
    drogued flag of 1 are dropped when the optional column is present.
    Raises ConfigError if the header is wrong or no row survives.
    """
    report = ParseReport()
    by_id: dict[str, list[tuple[float, float, float]]] = {}
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except OSError as exc:
        raise ConfigError(f"cannot read trajectory file {path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ConfigError(f"{path}: empty trajectory file")
        header = [h.strip() for h in header]
        if header[:4] != ["id", "time_days", "lon", "lat"]:
            raise ConfigError(f"{path}: expected header id,time_days,lon,lat[,drogued]")
        has_drogued = len(header) > 4 and header[4] == "drogued"
        width = 5 if has_drogued else 4
        for row in reader:
            if not row or all(not f.strip() for f in row):
                continue
            report.total_rows += 1
            if len(row) != width:
                report.skipped_rows += 1
                continue
            try:
                t = float(row[1])
                lon = float(row[2])
                lat = float(row[3])
                drogued = int(row[4]) if has_drogued else 0
            except ValueError:
                report.skipped_rows += 1
                continue
            if not (math.isfinite(t) and math.isfinite(lon) and math.isfinite(lat)):
                report.skipped_rows += 1
                continue
            if drogued:
                report.drogued_dropped += 1
                continue
            by_id.setdefault(row[0].strip(), []).append((t, lon, lat))
            report.valid_rows += 1

    if report.valid_rows == 0:
        raise ConfigError(f"{path}: no valid trajectory rows")
    if report.skipped_rows:
        log.warning("%s: skipped %d malformed rows", path, report.skipped_rows)

    trajectories = []
    for drifter_id in sorted(by_id):
        rows = sorted(by_id[drifter_id], key=lambda r: r[0])
        times, lons, lats = [], [], []
        for t, lon, lat in rows:
            if times and t == times[-1]:
                report.duplicate_times += 1
                continue
            times.append(t)
            lons.append(lon)
            lats.append(lat)
        trajectories.append(
            Trajectory(
                drifter_id=drifter_id,
                times=np.asarray(times, dtype=float),
                lons=np.asarray(lons, dtype=float),
                lats=np.asarray(lats, dtype=float),
            )
        )
    report.n_drifters = len(trajectories)
    return trajectories, report


def extract_pairs(
    trajectories: list[Trajectory],
    g: GridCovering,
    transition_time: float,
    calendar: SeasonCalendar | None = None,
    epoch: date = DEFAULT_EPOCH,
) -> list[TransitionPair]:
    """Extract non-overlapping lag-T transition pairs from the tracks.

    Starting at each drifter's first sample, the sample nearest t+T within
    +-T/10 closes a pair and becomes the next start, so consecutive pairs
    do not share intervals.  When the start position is off-domain or no
    sample matches t+T, extraction resumes from the following sample.  End
    positions off the domain produce pairs against OUT_OF_DOMAIN, which
    later feed the row deficits of the estimated matrix.
    """
    if transition_time <= 0:
        raise ValueError(f"transition_time must be positive, got {transition_time}")
    calendar = calendar or SeasonCalendar()
    tol = transition_time / 10.0
    pairs: list[TransitionPair] = []
    for traj in trajectories:
        times = traj.times
        n = len(times)
        i = 0
        while i < n:
            j = _match_index(times, times[i] + transition_time, tol)
            if j is None:
                i += 1
                continue
            from_state = g.point_to_state(traj.lons[i], traj.lats[i])
            if from_state == OUT_OF_DOMAIN:
                i += 1
                continue
            to_state = g.point_to_state(traj.lons[j], traj.lats[j])
            start = float(times[i])
            pairs.append(
                TransitionPair(
                    from_state=from_state,
                    to_state=to_state,
                    start_date=start,
                    season=calendar.season_of_day(start, epoch),
                )
            )
            i = j
    if not pairs:
        log.warning("extract_pairs produced no pairs")
    return pairs


def _match_index(times: np.ndarray, target: float, tol: float) -> int | None:
    """Index of the sample nearest ``target`` within ``tol``, earlier on ties."""
    k = int(np.searchsorted(times, target))
    best = None
    best_err = tol
    for idx in (k - 1, k):
        if 0 <= idx < len(times):
            err = abs(times[idx] - target)
            if err < best_err or (err == best_err and best is None):
                best = idx
                best_err = err
    return best


def season_split(pairs: list[TransitionPair]) -> dict[Season, list[TransitionPair]]:
    """Partition pairs by their season tag; all three keys are always present."""
    out: dict[Season, list[TransitionPair]] = {s: [] for s in Season}
    for p in pairs:
        out[p.season].append(p)
    return out
