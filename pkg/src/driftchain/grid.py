"""Longitude-latitude box covering of the domain and state-role bookkeeping.

The domain rectangle is tiled with square cells of ``cell_size`` degrees.
Cells flagged wet form the chain states, indexed contiguously from 0 in
(lat_index, lon_index) raster order.  Positions on dry cells or outside the
rectangle map to the ``OUT_OF_DOMAIN`` marker.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import ConfigError

#: Marker returned for positions that do not fall on an active (wet) box.
OUT_OF_DOMAIN = -1

#: A box is addressed by integer (lon_index, lat_index) within the rectangle.
BoxId = tuple[int, int]

EARTH_RADIUS_KM = 6371.0

_DIVISOR_TOL = 1e-9


@dataclass(frozen=True)
class GridCovering:
    """Box covering of a lon-lat rectangle with contiguous state indexing.

    Cells are half-open, ``[lon_i, lon_i + cell) x [lat_j, lat_j + cell)``,
    so every in-bounds position belongs to exactly one box.  Instances are
    immutable and safe for concurrent reads.
    """

    lon_min: float
    lon_max: float
    lat_min: float
    lat_max: float
    cell_size: float
    n_lon: int
    n_lat: int
    active_boxes: tuple[BoxId, ...]
    _box_to_state: dict[BoxId, int] = field(repr=False)

    @property
    def n_states(self) -> int:
        return len(self.active_boxes)

    def state_of_box(self, box: BoxId) -> int:
        """State index of an active box, or OUT_OF_DOMAIN for a dry box."""
        return self._box_to_state.get(box, OUT_OF_DOMAIN)

    def box_of_state(self, state: int) -> BoxId:
        return self.active_boxes[state]

    def box_center(self, state: int) -> tuple[float, float]:
        """(lon, lat) of the box center of a state."""
        ix, iy = self.active_boxes[state]
        return (
            self.lon_min + (ix + 0.5) * self.cell_size,
            self.lat_min + (iy + 0.5) * self.cell_size,
        )

    def box_corners(self, state: int) -> list[tuple[float, float]]:
        """Counterclockwise (lon, lat) corners of a state's box."""
        ix, iy = self.active_boxes[state]
        x0 = self.lon_min + ix * self.cell_size
        y0 = self.lat_min + iy * self.cell_size
        x1 = x0 + self.cell_size
        y1 = y0 + self.cell_size
        return [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]

    def point_to_state(self, lon: float, lat: float) -> int:
        """Map a position to its state index (total: never raises).

        Returns OUT_OF_DOMAIN for out-of-bounds positions and for positions
        on dry boxes.  Boundary points belong to the upper cell (half-open
        convention); the top edges lie outside the domain.
        """
        ix = self._cell_index(lon, self.lon_min, self.n_lon)
        if ix < 0:
            return OUT_OF_DOMAIN
        iy = self._cell_index(lat, self.lat_min, self.n_lat)
        if iy < 0:
            return OUT_OF_DOMAIN
        return self._box_to_state.get((ix, iy), OUT_OF_DOMAIN)

    def _cell_index(self, value: float, lower: float, count: int) -> int:
        idx = math.floor((value - lower) / self.cell_size)
        # One correction step so the half-open rule is exact against the
        # floating-point cell edges lower + i*cell.
        if idx + 1 < count and value >= lower + (idx + 1) * self.cell_size:
            idx += 1
        elif idx > 0 and value < lower + idx * self.cell_size:
            idx -= 1
        if idx < 0 or idx >= count:
            return -1
        if value < lower + idx * self.cell_size:
            return -1
        if idx == count - 1 and value >= lower + count * self.cell_size:
            return -1
        return idx

    def box_area_km2(self, state: int) -> float:
        """Spherical area of a state's box in km^2 (depends on latitude only)."""
        _, iy = self.active_boxes[state]
        return self.row_area_km2(iy)

    def row_area_km2(self, lat_index: int) -> float:
        lat0 = math.radians(self.lat_min + lat_index * self.cell_size)
        lat1 = math.radians(self.lat_min + (lat_index + 1) * self.cell_size)
        dlon = math.radians(self.cell_size)
        return EARTH_RADIUS_KM**2 * dlon * (math.sin(lat1) - math.sin(lat0))


@dataclass(frozen=True)
class StateRoles:
    """Role annotations over chain states.

    ``sticky`` maps each coastal state to its land fraction in the open
    interval (0, 1).  ``debris`` lists the beaching states in target-label
    order: position m-1 carries target label m, and a state may appear more
    than once when several observed beachings share a box (its land-fraction
    mass is then split equally among the co-located targets).  ``leaky``
    states may overlap ``sticky``.  ``candidate_sources`` keeps the file
    order, which downstream code treats as the latitude ordering.
    """

    leaky: frozenset[int]
    sticky: dict[int, float]
    debris: tuple[int, ...]
    candidate_sources: tuple[int, ...]

    def __post_init__(self):
        for state, ell in self.sticky.items():
            if not 0.0 < ell < 1.0:
                raise ConfigError(
                    f"land fraction for state {state} must lie strictly in (0, 1), got {ell}"
                )
        missing = [s for s in self.debris if s not in self.sticky]
        if missing:
            raise ConfigError(f"debris states not marked sticky: {sorted(set(missing))}")

    @property
    def n_targets(self) -> int:
        return len(self.debris)

    def targets_of(self, state: int) -> tuple[int, ...]:
        """Target labels (1-based) hosted by a debris state."""
        return tuple(m + 1 for m, s in enumerate(self.debris) if s == state)

    def max_state(self) -> int:
        states: set[int] = set(self.leaky) | set(self.sticky) | set(self.debris)
        states.update(self.candidate_sources)
        return max(states) if states else -1

    def check_states(self, n_states: int) -> None:
        """Raise if any referenced state falls outside 0..n_states-1."""
        top = self.max_state()
        if top >= n_states:
            raise ConfigError(f"role references state {top} but chain has {n_states} states")


def build_grid(
    bounds: tuple[float, float, float, float],
    cell_size: float = 0.25,
    wet_mask: Mapping[BoxId, bool] | None = None,
) -> GridCovering:
    """Build the box covering of a (lon_min, lon_max, lat_min, lat_max) rectangle.

    ``cell_size`` must divide both extents to within 1e-9 degrees.  Boxes
    flagged true in ``wet_mask`` become states; ``None`` marks every box wet.
    Boxes missing from the mask are dry.
    """
    lon_min, lon_max, lat_min, lat_max = map(float, bounds)
    if not (lon_max > lon_min and lat_max > lat_min):
        raise ConfigError(f"degenerate bounds {bounds}")
    if cell_size <= 0:
        raise ConfigError(f"cell_size must be positive, got {cell_size}")
    n_lon = _checked_count(lon_max - lon_min, cell_size, "longitude")
    n_lat = _checked_count(lat_max - lat_min, cell_size, "latitude")

    active: list[BoxId] = []
    for iy in range(n_lat):
        for ix in range(n_lon):
            if wet_mask is None or wet_mask.get((ix, iy), False):
                active.append((ix, iy))
    if not active:
        raise ConfigError("wet mask leaves no active boxes")
    box_to_state = {box: s for s, box in enumerate(active)}
    return GridCovering(
        lon_min=lon_min,
        lon_max=lon_max,
        lat_min=lat_min,
        lat_max=lat_max,
        cell_size=float(cell_size),
        n_lon=n_lon,
        n_lat=n_lat,
        active_boxes=tuple(active),
        _box_to_state=box_to_state,
    )


def _checked_count(extent: float, cell: float, axis: str) -> int:
    count = round(extent / cell)
    if count < 1 or abs(extent - count * cell) > _DIVISOR_TOL:
        raise ConfigError(f"cell_size {cell} does not divide the {axis} extent {extent}")
    return count


def load_wet_mask(path: str | Path) -> dict[BoxId, bool]:
    """Read a wet mask file with one `lon_index,lat_index,wet{0|1}` line per box."""
    mask: dict[BoxId, bool] = {}
    for lineno, row in _iter_csv_rows(path):
        if len(row) != 3:
            raise ConfigError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
        try:
            ix, iy, wet = int(row[0]), int(row[1]), int(row[2])
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}") from None
        if wet not in (0, 1):
            raise ConfigError(f"{path}:{lineno}: wet flag must be 0 or 1, got {wet}")
        mask[(ix, iy)] = bool(wet)
    if not mask:
        raise ConfigError(f"{path}: empty wet mask")
    return mask


def load_roles(g: GridCovering, path: str | Path) -> StateRoles:
    """Parse the sectioned roles file into validated StateRoles.

    Records are `leaky: ix,iy`, `sticky: ix,iy,ell`, `debris: ix,iy,m` and
    `source: ix,iy`.  Debris records define the target labels m, which must
    cover 1..M exactly once each; the source record order defines the
    candidate ordering used for posterior intervals.
    """
    leaky: set[int] = set()
    sticky: dict[int, float] = {}
    debris_by_label: dict[int, int] = {}
    sources: list[int] = []

    with open(path, "r", encoding="utf-8", newline="") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            kind, _, rest = line.partition(":")
            kind = kind.strip().lower()
            fields = [f.strip() for f in rest.split(",")]
            want = 2 if kind in ("leaky", "source") else 3
            if kind not in ("leaky", "sticky", "debris", "source"):
                raise ConfigError(f"{path}:{lineno}: unknown record kind {kind!r}")
            if len(fields) != want:
                raise ConfigError(f"{path}:{lineno}: {kind} record needs {want} fields")
            try:
                state = _role_state(g, fields[0], fields[1], path, lineno)
                if kind == "leaky":
                    if state in leaky:
                        raise ConfigError(f"{path}:{lineno}: duplicate leaky record")
                    leaky.add(state)
                elif kind == "sticky":
                    if state in sticky:
                        raise ConfigError(f"{path}:{lineno}: duplicate sticky record")
                    sticky[state] = float(fields[2])
                elif kind == "debris":
                    label = int(fields[2])
                    if label in debris_by_label:
                        raise ConfigError(f"{path}:{lineno}: duplicate debris label {label}")
                    debris_by_label[label] = state
                else:
                    if state in sources:
                        raise ConfigError(f"{path}:{lineno}: duplicate source record")
                    sources.append(state)
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from None

    labels = sorted(debris_by_label)
    if labels != list(range(1, len(labels) + 1)):
        raise ConfigError(f"{path}: debris target labels must be exactly 1..M, got {labels}")
    debris = tuple(debris_by_label[m] for m in labels)
    return StateRoles(
        leaky=frozenset(leaky),
        sticky=sticky,
        debris=debris,
        candidate_sources=tuple(sources),
    )


def _role_state(g: GridCovering, ix_field: str, iy_field: str, path, lineno: int) -> int:
    box = (int(ix_field), int(iy_field))
    state = g.state_of_box(box)
    if state == OUT_OF_DOMAIN:
        raise ConfigError(f"{path}:{lineno}: box {box} is not an active box")
    return state


def _iter_csv_rows(path: str | Path) -> Iterable[tuple[int, list[str]]]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (row[0].lstrip().startswith("#")):
                continue
            if all(not f.strip() for f in row):
                continue
            yield lineno, [f.strip() for f in row]


def states_by_latitude_row(g: GridCovering) -> list[np.ndarray]:
    """State indices grouped per latitude row (index 0 = southernmost row)."""
    rows: list[list[int]] = [[] for _ in range(g.n_lat)]
    for state, (_, iy) in enumerate(g.active_boxes):
        rows[iy].append(state)
    return [np.asarray(r, dtype=np.int64) for r in rows]
