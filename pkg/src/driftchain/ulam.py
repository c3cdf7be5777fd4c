"""Transition-matrix estimation and manipulation.

A transition matrix is estimated by counting box-to-box transitions of
sample trajectories at lag T: entry (i, j) is the fraction of lag-T pairs
starting in box i that end in box j.  Pairs ending outside the domain
count in the denominator only, so rows of boxes with observed exits sum to
less than one (row-substochastic).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sparse

from .errors import ConfigError
from .grid import OUT_OF_DOMAIN
from .ingest import TransitionPair

log = logging.getLogger(__name__)

VALID_LABELS = ("W", "S", "SF", "annual", "pooled")

#: Entries below this magnitude are dropped when multiplying matrices.
DEFAULT_PRUNE_TOL = 1e-15

_ROW_SUM_TOL = 1e-12


@dataclass(frozen=True)
class TransitionMatrix:
    """Sparse row-substochastic transition matrix over chain states.

    ``row_counts`` holds the number of lag-T samples per row for estimated
    matrices and is None for derived (composed) ones.  Rows without samples
    stay structurally empty; downstream augmentation treats them as fully
    leaky.  Treat instances as immutable.
    """

    matrix: sparse.csr_matrix
    transition_time: float
    label: str
    row_counts: np.ndarray | None = None

    def __post_init__(self):
        m = self.matrix
        if m.shape[0] != m.shape[1]:
            raise ValueError(f"transition matrix must be square, got {m.shape}")
        if self.label not in VALID_LABELS:
            raise ValueError(f"unknown season label {self.label!r}")
        if m.nnz and m.data.min() < 0:
            raise ValueError("transition matrix entries must be nonnegative")
        sums = self.row_sums()
        if sums.size and sums.max() > 1.0 + _ROW_SUM_TOL:
            raise ValueError(f"row sum {sums.max()} exceeds 1")
        if self.row_counts is not None and len(self.row_counts) != m.shape[0]:
            raise ValueError("row_counts length must match the state count")

    @property
    def n_states(self) -> int:
        return self.matrix.shape[0]

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).ravel()

    def deficits(self) -> np.ndarray:
        """Per-row missing mass 1 - row sum (out-of-domain leakage)."""
        return np.clip(1.0 - self.row_sums(), 0.0, None)

    def empty_rows(self) -> np.ndarray:
        """Indices of states with no samples (or no entries if counts unknown)."""
        if self.row_counts is not None:
            return np.flatnonzero(self.row_counts == 0)
        return np.flatnonzero(np.diff(self.matrix.indptr) == 0)

    def empty_row_fraction(self) -> float:
        return len(self.empty_rows()) / self.n_states


def estimate(
    pairs: Sequence[TransitionPair],
    n_states: int,
    transition_time: float,
    label: str,
) -> TransitionMatrix:
    """Estimate the transition matrix from lag-T pairs by direct counting.

    P[i, j] = count(i -> j) / count(i -> anywhere), where the denominator
    includes pairs that ended outside the domain; those contribute to the
    row deficit rather than to any column.  Rows with zero samples are left
    empty and flagged via ``row_counts``.
    """
    if n_states < 1:
        raise ValueError("n_states must be at least 1")
    frm = np.fromiter((p.from_state for p in pairs), dtype=np.int64, count=len(pairs))
    to = np.fromiter((p.to_state for p in pairs), dtype=np.int64, count=len(pairs))
    if frm.size:
        if frm.min() < 0 or frm.max() >= n_states:
            raise ValueError("pair from_state outside 0..n_states-1")
        if to.max(initial=-1) >= n_states or to.min(initial=0) < OUT_OF_DOMAIN:
            raise ValueError("pair to_state outside valid range")

    row_counts = np.bincount(frm, minlength=n_states).astype(np.int64)
    keep = to != OUT_OF_DOMAIN
    counts = sparse.coo_matrix(
        (np.ones(keep.sum(), dtype=float), (frm[keep], to[keep])),
        shape=(n_states, n_states),
    ).tocsr()
    counts.sum_duplicates()
    denom = np.repeat(row_counts, np.diff(counts.indptr))
    counts.data /= denom
    counts.eliminate_zeros()
    counts.sort_indices()

    tm = TransitionMatrix(
        matrix=counts,
        transition_time=float(transition_time),
        label=label,
        row_counts=row_counts,
    )
    if tm.empty_row_fraction() > 0:
        log.info(
            "estimate(%s): %d of %d rows empty (%.1f%%)",
            label, len(tm.empty_rows()), n_states, 100 * tm.empty_row_fraction(),
        )
    return tm


def _pruned(m: sparse.csr_matrix, prune_tol: float) -> sparse.csr_matrix:
    if prune_tol > 0 and m.nnz:
        m.data[np.abs(m.data) < prune_tol] = 0.0
        m.eliminate_zeros()
    m.sort_indices()
    return m


def _matmul(a: sparse.csr_matrix, b: sparse.csr_matrix, prune_tol: float) -> sparse.csr_matrix:
    return _pruned((a @ b).tocsr(), prune_tol)


def _matpow(m: sparse.csr_matrix, e: int, prune_tol: float) -> sparse.csr_matrix:
    result = None
    base = m
    while e > 0:
        if e & 1:
            result = base.copy() if result is None else _matmul(result, base, prune_tol)
        e >>= 1
        if e:
            base = _matmul(base, base, prune_tol)
    return result


def compose_annual(
    p_w: TransitionMatrix,
    p_s: TransitionMatrix,
    p_sf: TransitionMatrix,
    exponent: int = 18,
    prune_tol: float = DEFAULT_PRUNE_TOL,
) -> TransitionMatrix:
    """Compose the season-aware annual matrix P_W^e * P_SF^e * P_S^e * P_SF^e.

    The factor order is fixed; with the default exponent 18 and 5-day
    seasonal matrices the composite advances one 360-day year.  Entries
    below ``prune_tol`` are dropped after each product to bound fill-in.
    """
    if exponent < 1:
        raise ValueError("exponent must be at least 1")
    n = p_w.n_states
    t = p_w.transition_time
    for other in (p_s, p_sf):
        if other.n_states != n:
            raise ValueError("seasonal matrices must share the state count")
        if other.transition_time != t:
            raise ValueError("seasonal matrices must share the transition time")
    w_e = _matpow(p_w.matrix, exponent, prune_tol)
    s_e = _matpow(p_s.matrix, exponent, prune_tol)
    sf_e = _matpow(p_sf.matrix, exponent, prune_tol)
    annual = _matmul(_matmul(_matmul(w_e, sf_e, prune_tol), s_e, prune_tol), sf_e, prune_tol)
    # Products of substochastic factors are substochastic up to roundoff;
    # clamp stray ulps so the row-sum invariant holds exactly.
    sums = np.asarray(annual.sum(axis=1)).ravel()
    bad = sums > 1.0
    if bad.any():
        scale = np.ones_like(sums)
        scale[bad] = 1.0 / sums[bad]
        annual = sparse.diags(scale).dot(annual).tocsr()
    return TransitionMatrix(
        matrix=annual,
        transition_time=4 * exponent * t,
        label="annual",
        row_counts=None,
    )


def push_forward(f: np.ndarray, tm: TransitionMatrix, k: int = 1) -> np.ndarray:
    """Evolve a (sub)probability row vector k steps: returns f P^k.

    Uses k successive vector-matrix products; P^k is never materialized.
    """
    v = np.asarray(f, dtype=float)
    if v.ndim != 1 or v.shape[0] != tm.n_states:
        raise ValueError(f"vector length {v.shape} does not match {tm.n_states} states")
    if v.min(initial=0.0) < -1e-12:
        raise ValueError("distribution entries must be nonnegative")
    if v.sum() > 1.0 + 1e-10:
        raise ValueError("distribution mass exceeds 1")
    if k < 0:
        raise ValueError("step count must be nonnegative")
    mt = tm.matrix.T.tocsr()
    out = v.copy()
    for _ in range(k):
        out = mt @ out
    return out


@dataclass(frozen=True)
class MarkovTestRow:
    """One lag multiple of the Markovianity diagnostic."""

    n: int
    observed: np.ndarray    # leading eigenvalue moduli of P(nT)
    predicted: np.ndarray   # moduli of P(T) raised to the n-th power
    rel_deviation: np.ndarray
    converged: bool


def markov_test(
    p1: TransitionMatrix,
    pn: Sequence[TransitionMatrix],
    k_eigs: int = 2,
    tol: float = 1e-10,
    max_iter: int = 100_000,
) -> list[MarkovTestRow]:
    """Compare leading eigenvalue moduli of P(nT) against those of P(T)^n.

    For a time-homogeneous Markov chain the two agree; the relative
    deviation per eigenvalue quantifies memory effects at each lag
    multiple.  Non-convergence of the eigensolver is flagged per row.
    """
    from .spectral import dominant_eigs

    if k_eigs < 1:
        raise ValueError("k_eigs must be at least 1")
    base = dominant_eigs(p1, k=k_eigs, tol=tol, max_iter=max_iter)
    rows = []
    for tm in pn:
        ratio = tm.transition_time / p1.transition_time
        n = round(ratio)
        if n < 1 or abs(ratio - n) > 1e-9:
            raise ValueError(
                f"lag {tm.transition_time} is not an integer multiple of {p1.transition_time}"
            )
        res = dominant_eigs(tm, k=k_eigs, tol=tol, max_iter=max_iter)
        k = min(k_eigs, len(res.moduli), len(base.moduli))
        observed = res.moduli[:k]
        predicted = base.moduli[:k] ** n
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = np.abs(observed - predicted) / predicted
        rows.append(
            MarkovTestRow(
                n=n,
                observed=observed,
                predicted=predicted,
                rel_deviation=rel,
                converged=bool(res.converged[:k].all() and base.converged[:k].all()),
            )
        )
    return rows


def save_matrix(tm: TransitionMatrix, path: str | Path) -> None:
    """Write the matrix in the text triplet format (bit-exact round trip)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# transition-matrix v1\n")
        fh.write(f"n_states {tm.n_states}\n")
        fh.write(f"transition_time_days {tm.transition_time:.17g}\n")
        fh.write(f"label {tm.label}\n")
        if tm.row_counts is None:
            fh.write("row_counts none\n")
        else:
            fh.write("row_counts " + ",".join(str(int(c)) for c in tm.row_counts) + "\n")
        fh.write("i,j,value\n")
        coo = tm.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        for i, j, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write(f"{i},{j},{v:.17g}\n")


def load_matrix(path: str | Path) -> TransitionMatrix:
    """Read a matrix written by :func:`save_matrix`."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        lines = fh.read().splitlines()
    header, entries = _split_header(lines, "# transition-matrix v1", path)
    try:
        n = int(header["n_states"])
        t = float(header["transition_time_days"])
        label = header["label"]
        counts_field = header["row_counts"]
    except KeyError as exc:
        raise ConfigError(f"{path}: missing header field {exc}") from None
    row_counts = None
    if counts_field != "none":
        row_counts = np.array([int(c) for c in counts_field.split(",")], dtype=np.int64)
    rows, cols, vals = _parse_triplets(entries, path)
    m = sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    m.sort_indices()
    return TransitionMatrix(matrix=m, transition_time=t, label=label, row_counts=row_counts)


def _split_header(lines: list[str], magic: str, path) -> tuple[dict[str, str], list[str]]:
    if not lines or lines[0].strip() != magic:
        raise ConfigError(f"{path}: not a {magic!r} file")
    header: dict[str, str] = {}
    body_start = None
    for idx, line in enumerate(lines[1:], start=1):
        if line.strip() == "i,j,value":
            body_start = idx + 1
            break
        key, _, value = line.partition(" ")
        header[key.strip()] = value.strip()
    if body_start is None:
        raise ConfigError(f"{path}: missing i,j,value section")
    return header, lines[body_start:]


def _parse_triplets(entries: list[str], path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rows, cols, vals = [], [], []
    for line in entries:
        line = line.strip()
        if not line or line.startswith("#") or line.startswith("["):
            break
        i_s, j_s, v_s = line.split(",")
        rows.append(int(i_s))
        cols.append(int(j_s))
        vals.append(float(v_s))
    return (
        np.asarray(rows, dtype=np.int64),
        np.asarray(cols, dtype=np.int64),
        np.asarray(vals, dtype=float),
    )
