"""Co-selection edge weights from a clustering trace.

For every retained iteration and every cluster holding at least two
subjects, each covariate pair selected together (both switches on)
contributes that cluster's size to the pair's raw tally.  Raw tallies are
exact 64-bit integers; the published matrix divides by the maximum tally,
so entries live in [0, 1] and the strongest pair sits at 1.  Low entries
flag covariate pairs unlikely to be joined by an edge in a well-supported
graphical model.

Accumulation is associative and commutative over iterations, so traces can
be reduced in any order (or in parallel) with an identical result.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import default_names
from .dpcluster import ClusterTrace
from .errors import ConfigError


@dataclass(frozen=True)
class TGammaMatrix:
    values: np.ndarray            # (P, P) floats in [0, 1], upper triangle
    raw: np.ndarray               # (P, P) int64 tallies, upper triangle
    max_pair: tuple[int, int]     # index of the (first) maximal element
    n_iterations: int
    source: str = ""
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        raw = np.asarray(self.raw, dtype=np.int64)
        p = values.shape[0]
        if values.shape != (p, p) or raw.shape != (p, p):
            raise ConfigError("matrix must be square")
        if np.any(np.tril(values, k=0) != 0) or np.any(np.tril(raw, k=0) != 0):
            raise ConfigError("lower triangle and diagonal must be zero")
        if values.min() < 0 or values.max() > 1:
            raise ConfigError("entries must lie in [0, 1]")
        if values.max() != 1.0 and values.max() != 0.0:
            raise ConfigError("a non-zero matrix must have maximum entry 1")
        values.setflags(write=False)
        raw.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "raw", raw)

    @property
    def p_count(self) -> int:
        return self.values.shape[0]

    def value(self, p1: int, p2: int) -> float:
        a, b = min(p1, p2), max(p1, p2)
        return float(self.values[a, b])

    def column_names(self) -> tuple[str, ...]:
        return self.names if self.names is not None else default_names(self.p_count)

    @classmethod
    def flat(cls, p_count: int) -> "TGammaMatrix":
        """All pairs at weight 1; the degenerate matrix behind uniform search."""
        values = np.triu(np.ones((p_count, p_count)), k=1)
        return cls(
            values=values,
            raw=values.astype(np.int64),
            max_pair=(0, 1),
            n_iterations=0,
            source="flat",
        )


def accumulate(trace: ClusterTrace) -> TGammaMatrix:
    """Build the co-selection matrix from a trace.

    Singleton clusters are skipped; clusters of two or more subjects add
    size * gamma_p1 * gamma_p2 to every pair.  If nothing accumulates the
    matrix is identically zero.
    """
    p = trace.p_count
    raw = np.zeros((p, p), dtype=np.int64)
    for sizes, gam in zip(trace.sizes, trace.gamma):
        keep = sizes >= 2
        if not keep.any():
            continue
        g = gam[keep].astype(np.int64)
        raw += np.einsum("k,kp,kq->pq", sizes[keep], g, g)
    raw = np.triu(raw, k=1)
    peak = int(raw.max())
    if peak > 0:
        values = raw / peak
        flat_idx = int(np.argmax(raw))
    else:
        values = np.zeros_like(raw, dtype=np.float64)
        flat_idx = 1  # (0, 1); arbitrary for the all-zero matrix
    max_pair = tuple(int(v) for v in np.unravel_index(flat_idx, raw.shape))
    return TGammaMatrix(
        values=values,
        raw=raw,
        max_pair=max_pair,
        n_iterations=trace.n_retained,
        source=f"trace(seed={trace.seed},retained={trace.n_retained})",
        names=trace.names,
    )


def restrict(matrix: TGammaMatrix, keep: list[int]) -> TGammaMatrix:
    """Sub-matrix over the kept covariates, renormalized to max 1."""
    keep = [int(k) for k in keep]
    raw = matrix.raw[np.ix_(keep, keep)]
    raw = np.triu(raw, k=1)
    peak = int(raw.max())
    values = raw / peak if peak > 0 else np.zeros_like(raw, dtype=np.float64)
    flat_idx = int(np.argmax(raw)) if peak > 0 else 1
    names = None
    if matrix.names is not None:
        names = tuple(matrix.names[k] for k in keep)
    return TGammaMatrix(
        values=values,
        raw=raw,
        max_pair=tuple(int(v) for v in np.unravel_index(flat_idx, raw.shape)),
        n_iterations=matrix.n_iterations,
        source=matrix.source + f"|restrict({keep})",
        names=names,
    )


def save_matrix(matrix: TGammaMatrix, path: str | Path) -> Path:
    """Upper-triangular CSV of normalized weights plus a `.raw.csv` sibling."""
    path = Path(path)
    names = matrix.column_names()
    for target, arr, fmt in (
        (path, matrix.values, lambda v: repr(float(v))),
        (path.with_name(path.name + ".raw.csv"), matrix.raw, lambda v: str(int(v))),
    ):
        with target.open("w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow([""] + list(names))
            for i, row_name in enumerate(names):
                row = [row_name] + [
                    fmt(arr[i, j]) if j > i else "" for j in range(len(names))
                ]
                wr.writerow(row)
    return path


def load_matrix(path: str | Path) -> TGammaMatrix:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"no such matrix file: {path}")

    def read(target: Path) -> tuple[tuple[str, ...], np.ndarray]:
        with target.open(newline="") as fh:
            rows = list(csv.reader(fh))
        names = tuple(rows[0][1:])
        p = len(names)
        arr = np.zeros((p, p))
        for i, r in enumerate(rows[1:]):
            for j in range(p):
                tok = r[j + 1].strip()
                if tok:
                    arr[i, j] = float(tok)
        return names, arr

    names, values = read(path)
    raw_path = path.with_name(path.name + ".raw.csv")
    if raw_path.exists():
        _, raw = read(raw_path)
        raw = raw.astype(np.int64)
    else:
        raw = np.zeros_like(values, dtype=np.int64)
    peak = values.max()
    flat_idx = int(np.argmax(values)) if peak > 0 else 1
    return TGammaMatrix(
        values=values,
        raw=np.triu(raw, k=1),
        max_pair=tuple(int(v) for v in np.unravel_index(flat_idx, values.shape)),
        n_iterations=0,
        source=str(path),
        names=names,
    )
