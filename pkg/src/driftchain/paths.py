"""Most-probable-path computation under a fixed travel time.

Given a target beaching site observed after exactly K steps, the forward
dynamic program tracks, for each box j and step k, the largest
log-probability of any k-step path from a source box to j that has not
been absorbed on the way; the final step is forced into the target's
absorbing state.  An unconstrained shortest-path variant (no fixed
length, no absorption bookkeeping) serves as a cross-check.
"""

from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .errors import UnreachableTargetError
from .grid import GridCovering
from .schedule import ChainSchedule

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PathResult:
    """One optimal path: K+1 states from source to final state.

    For constrained paths the final state is the absorbing target and
    ``landing_state`` is the coastal box it represents; unconstrained
    paths end in an ordinary state.  ``log_prob`` equals the sum of
    ``step_log_probs``.
    """

    states: tuple[int, ...]
    log_prob: float
    step_log_probs: tuple[float, ...]
    season_labels: tuple[str, ...]
    target: int
    target_label: int | None = None
    landing_state: int | None = None

    @property
    def source(self) -> int:
        return self.states[0]

    @property
    def n_steps(self) -> int:
        return len(self.states) - 1


@dataclass(frozen=True)
class PathSet:
    """Per-source optimal paths to one target, plus the overall best.

    ``results`` aligns with ``sources``; an infeasible source holds None.
    ``best`` is the feasible result of largest log-probability (ties go
    to the smallest source state).
    """

    target_label: int
    n_steps: int
    sources: tuple[int, ...]
    results: tuple[PathResult | None, ...]
    best: PathResult | None


def _log_edges(matrix, n_grid: int, target_col: int | None):
    """Positive-probability edges out of grid states, in log space.

    target_col None restricts columns to grid states (intermediate step);
    otherwise only edges into that single column are kept.
    """
    coo = matrix.tocoo()
    mask = (coo.row < n_grid) & (coo.data > 0)
    if target_col is None:
        mask &= coo.col < n_grid
    else:
        mask &= coo.col == target_col
    rows = coo.row[mask].astype(np.int64)
    cols = coo.col[mask].astype(np.int64)
    logs = np.log(coo.data[mask])
    return rows, cols, logs


class _StepCache:
    """Per-call cache of log-edge arrays keyed by matrix identity."""

    def __init__(self, schedule: ChainSchedule, target_col: int):
        self.schedule = schedule
        self.target_col = target_col
        self.n = schedule.n_grid_states
        self._interm: dict[int, tuple] = {}
        self._final: dict[int, tuple] = {}

    def intermediate(self, k: int):
        m = self.schedule.matrix_for_step(k)
        key = id(m)
        if key not in self._interm:
            self._interm[key] = _log_edges(m, self.n, None)
        return self._interm[key]

    def final(self, k: int):
        m = self.schedule.matrix_for_step(k)
        key = id(m)
        if key not in self._final:
            self._final[key] = _log_edges(m, self.n, self.target_col)
        return self._final[key]


def _column_max(rows, cols, scores):
    """Best incoming score per column; ties resolved to the smallest row.

    Returns (columns, best scores, best rows) over columns with at least
    one edge.
    """
    order = np.lexsort((rows, -scores, cols))
    c_sorted = cols[order]
    uniq, first = np.unique(c_sorted, return_index=True)
    picked = order[first]
    return uniq, scores[picked], rows[picked]


def _run_dp(cache: _StepCache, start: np.ndarray, n_steps: int):
    """Forward DP; returns (final log-prob, state sequence) or None."""
    n = cache.n
    v = np.full(n, -np.inf)
    v[start] = 0.0
    back = np.full((n_steps, n), -1, dtype=np.int64)
    for k in range(n_steps - 1):
        rows, cols, logs = cache.intermediate(k)
        scores = v[rows] + logs
        uniq, best, brows = _column_max(rows, cols, scores)
        v = np.full(n, -np.inf)
        v[uniq] = best
        back[k, uniq] = brows
    rows, _, logs = cache.final(n_steps - 1)
    scores = v[rows] + logs
    finite = np.isfinite(scores)
    if not finite.any():
        return None
    order = np.lexsort((rows, -scores))
    pick = order[0]
    total = float(scores[pick])
    if not np.isfinite(total):
        return None

    seq = np.empty(n_steps + 1, dtype=np.int64)
    seq[-1] = cache.target_col
    seq[-2] = rows[pick]
    for k in range(n_steps - 2, -1, -1):
        seq[k] = back[k, seq[k + 1]]
    return total, seq


def most_probable_path(
    schedule: ChainSchedule,
    sources,
    b: int,
    n_steps: int,
) -> PathSet:
    """Most probable exactly-K-step paths from each source into target b.

    Intermediate absorption is excluded: before the final step the walker
    must stay among the grid states, and only the last transition enters
    the target's absorbing state.  Infeasible sources yield None entries.
    """
    if n_steps < 1:
        raise ValueError("path length must be at least 1 step")
    n = schedule.n_grid_states
    if not 1 <= b <= schedule.n_targets:
        raise ValueError(f"target label {b} outside 1..{schedule.n_targets}")
    src = np.unique(np.asarray(list(sources), dtype=np.int64))
    if src.size == 0:
        raise ValueError("at least one source state is required")
    if src.min() < 0 or src.max() >= n:
        raise ValueError("sources must be grid states")

    cache = _StepCache(schedule, schedule.target_state(b))
    results: list[PathResult | None] = []
    for s in src:
        hit = _run_dp(cache, np.array([s]), n_steps)
        if hit is None:
            log.info("no feasible %d-step path from state %d to target %d", n_steps, s, b)
            results.append(None)
            continue
        total, seq = hit
        results.append(_assemble(schedule, seq, total, b))

    best = None
    for r in results:
        if r is None:
            continue
        if best is None or r.log_prob > best.log_prob:
            best = r
    return PathSet(
        target_label=b,
        n_steps=n_steps,
        sources=tuple(int(s) for s in src),
        results=tuple(results),
        best=best,
    )


def _assemble(schedule: ChainSchedule, seq: np.ndarray, total: float, b: int) -> PathResult:
    steps = len(seq) - 1
    step_logs = []
    labels = []
    for k in range(steps):
        m = schedule.matrix_for_step(k)
        step_logs.append(float(np.log(m[seq[k], seq[k + 1]])))
        labels.append(schedule.season_label(k))
    return PathResult(
        states=tuple(int(s) for s in seq),
        log_prob=total,
        step_log_probs=tuple(step_logs),
        season_labels=tuple(labels),
        target=int(seq[-1]),
        target_label=b,
        landing_state=int(schedule.roles.debris[b - 1]),
    )


def unconstrained_best_path(p, source: int, target: int, label: str | None = None) -> PathResult:
    """Maximum-probability path of any length (no absorption bookkeeping).

    Classic shortest-path search with edge weights -log P_ij >= 0;
    deterministic because neighbors relax in index order and only strict
    improvements update.  Raises UnreachableTargetError when no positive-
    probability route exists.
    """
    mat = getattr(p, "matrix", p)
    mat = mat.tocsr() if sparse.issparse(mat) else sparse.csr_matrix(np.asarray(mat))
    n = mat.shape[0]
    if not (0 <= source < n and 0 <= target < n):
        raise ValueError("source and target must be valid states")
    if label is None:
        label = str(getattr(p, "label", "pooled"))

    dist = np.full(n, np.inf)
    dist[source] = 0.0
    pred = np.full(n, -1, dtype=np.int64)
    settled = np.zeros(n, dtype=bool)
    heap = [(0.0, source)]
    while heap:
        d, u = heapq.heappop(heap)
        if settled[u]:
            continue
        settled[u] = True
        if u == target:
            break
        lo, hi = mat.indptr[u], mat.indptr[u + 1]
        for v, pval in zip(mat.indices[lo:hi], mat.data[lo:hi]):
            if pval <= 0 or settled[v]:
                continue
            w = max(0.0, -np.log(pval))
            nd = d + w
            if nd < dist[v]:
                dist[v] = nd
                pred[v] = u
                heapq.heappush(heap, (nd, v))
    if not settled[target]:
        raise UnreachableTargetError(
            f"state {target} is unreachable from {source} along positive-probability edges"
        )

    seq = [target]
    while seq[-1] != source:
        seq.append(int(pred[seq[-1]]))
    seq.reverse()
    step_logs = [float(np.log(mat[seq[k], seq[k + 1]])) for k in range(len(seq) - 1)]
    total = 0.0
    for s in step_logs:
        total += s
    return PathResult(
        states=tuple(seq),
        log_prob=total,
        step_log_probs=tuple(step_logs),
        season_labels=(label,) * (len(seq) - 1),
        target=target,
        target_label=None,
        landing_state=None,
    )


def path_to_geojson(p: PathResult | None, g: GridCovering) -> dict:
    """GeoJSON Feature tracing a path through box centers.

    Augmented absorbing states map to the landing box when known and are
    skipped otherwise; an infeasible (None or empty) path yields an empty
    LineString with an explanatory property.
    """
    if p is None or not p.states:
        return {
            "type": "Feature",
            "geometry": {"type": "LineString", "coordinates": []},
            "properties": {"error": "no feasible path"},
        }
    coords = []
    steps = []
    for k, s in enumerate(p.states):
        if s < g.n_states:
            lon, lat = g.box_center(s)
        elif p.landing_state is not None:
            lon, lat = g.box_center(p.landing_state)
        else:
            continue
        coords.append([lon, lat])
        steps.append(k)
    props = {
        "log_prob": p.log_prob,
        "n_steps": p.n_steps,
        "source": p.states[0],
        "target": p.target,
        "target_label": p.target_label,
        "states": list(p.states),
        "step_indices": steps,
        "step_log_probs": list(p.step_log_probs),
        "season_labels": list(p.season_labels),
    }
    return {
        "type": "Feature",
        "geometry": {"type": "LineString", "coordinates": coords},
        "properties": props,
    }


def common_source_report(path_sets) -> dict:
    """Best source per target, flagging sources shared by several targets."""
    best_by_target = {}
    by_source: dict[int, set[int]] = {}
    for ps in path_sets:
        if ps.best is None:
            best_by_target[ps.target_label] = None
            continue
        s = ps.best.source
        best_by_target[ps.target_label] = s
        by_source.setdefault(s, set()).add(ps.target_label)
    shared = {s: sorted(labels) for s, labels in by_source.items() if len(labels) > 1}
    return {"best_source_by_target": best_by_target, "shared_sources": shared}
