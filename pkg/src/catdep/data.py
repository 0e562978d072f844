"""Categorical datasets, contingency tables and marginal frequencies.

Level codes are 0-based integers.  Text inputs may carry arbitrary string
labels; those are mapped to codes in first-seen order and the mapping is
written to a JSON sidecar next to the CSV so the encoding stays auditable.

Contingency tables are dense and use lexicographic cell order with the
*last* covariate fastest-varying (C order), which every module that touches
cells relies on.  Tables larger than ``MAX_TABLE_CELLS`` are refused:
analyses over many covariates must restrict to a covariate subset first.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError

MAX_TABLE_CELLS = 1 << 26


def default_names(p_count: int) -> tuple[str, ...]:
    """Single letters A.. for up to 26 covariates, zero-padded X01.. beyond."""
    if p_count <= 26:
        return tuple(chr(ord("A") + p) for p in range(p_count))
    width = len(str(p_count))
    return tuple(f"X{p + 1:0{width}d}" for p in range(p_count))


@dataclass(frozen=True)
class CategoricalDataset:
    """n subjects x P categorical covariates as 0-based level codes.

    Immutable after construction (the code matrix is marked read-only),
    so instances can be shared freely across threads.
    """

    codes: np.ndarray              # (n, P) integers, column p in [0, levels[p])
    levels: tuple[int, ...]        # categories per covariate, each >= 2
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        codes = np.ascontiguousarray(np.asarray(self.codes))
        if codes.ndim != 2:
            raise ConfigError("codes must be a 2-d array (subjects x covariates)")
        n, p = codes.shape
        if n < 1:
            raise ConfigError("dataset needs at least one subject")
        if p < 2:
            raise ConfigError("dataset needs at least two covariates")
        levels = tuple(int(m) for m in self.levels)
        if len(levels) != p:
            raise ConfigError(f"levels has {len(levels)} entries for {p} covariates")
        if any(m < 2 for m in levels):
            raise ConfigError("every covariate needs at least 2 levels")
        if codes.min() < 0:
            raise ConfigError("negative level code")
        for col, m in enumerate(levels):
            hi = codes[:, col].max()
            if hi >= m:
                raise ConfigError(f"covariate {col} has code {hi} but only {m} levels")
        if self.names is not None:
            names = tuple(str(s) for s in self.names)
            if len(names) != p:
                raise ConfigError(f"expected {p} covariate names, got {len(names)}")
            object.__setattr__(self, "names", names)
        codes = codes.astype(np.int16, copy=False)
        codes.setflags(write=False)
        object.__setattr__(self, "codes", codes)
        object.__setattr__(self, "levels", levels)

    @property
    def n(self) -> int:
        return self.codes.shape[0]

    @property
    def p_count(self) -> int:
        return self.codes.shape[1]

    def column_names(self) -> tuple[str, ...]:
        return self.names if self.names is not None else default_names(self.p_count)

    def select(self, cols: list[int] | np.ndarray) -> "CategoricalDataset":
        """Dataset restricted to the given covariate indices (order kept)."""
        cols = list(int(c) for c in cols)
        if len(cols) < 2:
            raise ConfigError("a dataset needs at least two covariates")
        names = None
        if self.names is not None:
            names = tuple(self.names[c] for c in cols)
        return CategoricalDataset(
            codes=self.codes[:, cols].copy(),
            levels=tuple(self.levels[c] for c in cols),
            names=names,
        )


@dataclass(frozen=True)
class ContingencyTable:
    """Dense cell counts over the full level lattice (last covariate fastest)."""

    levels: tuple[int, ...]
    counts: np.ndarray             # (prod levels,) non-negative int64
    total: int
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        levels = tuple(int(m) for m in self.levels)
        counts = np.ascontiguousarray(np.asarray(self.counts, dtype=np.int64))
        n_cells = int(np.prod(levels, dtype=object))
        if counts.shape != (n_cells,):
            raise ConfigError(f"expected {n_cells} cells, got shape {counts.shape}")
        if counts.min() < 0:
            raise ConfigError("negative cell count")
        if int(counts.sum()) != int(self.total):
            raise ConfigError("total does not match the sum of cell counts")
        counts.setflags(write=False)
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "total", int(self.total))

    @property
    def n_cells(self) -> int:
        return self.counts.shape[0]

    def reshaped(self) -> np.ndarray:
        return self.counts.reshape(self.levels)

    def margin(self, p: int) -> np.ndarray:
        """Counts summed over every axis except covariate p."""
        axes = tuple(a for a in range(len(self.levels)) if a != p)
        return self.reshaped().sum(axis=axes)

    def column_names(self) -> tuple[str, ...]:
        return self.names if self.names is not None else default_names(len(self.levels))


@dataclass(frozen=True)
class MarginalFrequencies:
    """Per-covariate empirical level proportions."""

    freqs: tuple[np.ndarray, ...]
    levels: tuple[int, ...]

    def __post_init__(self):
        freqs = tuple(np.asarray(f, dtype=np.float64) for f in self.freqs)
        levels = tuple(int(m) for m in self.levels)
        if len(freqs) != len(levels):
            raise ConfigError("freqs/levels length mismatch")
        for p, (f, m) in enumerate(zip(freqs, levels)):
            if f.shape != (m,):
                raise ConfigError(f"covariate {p}: expected {m} frequencies")
            if f.min() < 0:
                raise ConfigError(f"covariate {p}: negative frequency")
            if abs(f.sum() - 1.0) > 1e-12:
                raise ConfigError(f"covariate {p}: frequencies sum to {f.sum()!r}")
            f.setflags(write=False)
        object.__setattr__(self, "freqs", freqs)
        object.__setattr__(self, "levels", levels)

    def padded(self, fill: float = 0.0) -> np.ndarray:
        """(P, max(levels)) array, short rows padded with `fill`."""
        m_max = max(self.levels)
        out = np.full((len(self.levels), m_max), fill, dtype=np.float64)
        for p, f in enumerate(self.freqs):
            out[p, : self.levels[p]] = f
        return out


def build_table(data: CategoricalDataset) -> ContingencyTable:
    """Cross-classify all subjects over the full level lattice.

    Cell (l_1, ..., l_P) sits at flat index sum_p l_p * prod_{q>p} M_q,
    i.e. the last covariate varies fastest.
    """
    n_cells = int(np.prod(data.levels, dtype=object))
    if n_cells > MAX_TABLE_CELLS:
        raise ConfigError(
            f"refusing to materialize a table with {n_cells} cells "
            f"(limit {MAX_TABLE_CELLS}); select fewer covariates first"
        )
    flat = np.ravel_multi_index(tuple(data.codes.T.astype(np.int64)), data.levels)
    counts = np.bincount(flat, minlength=n_cells).astype(np.int64)
    return ContingencyTable(
        levels=data.levels, counts=counts, total=data.n, names=data.names
    )


def marginals(data: CategoricalDataset) -> MarginalFrequencies:
    """Empirical proportion of each level, per covariate."""
    freqs = tuple(
        np.bincount(data.codes[:, p].astype(np.int64), minlength=m) / data.n
        for p, m in enumerate(data.levels)
    )
    return MarginalFrequencies(freqs=freqs, levels=data.levels)


# ---------------------------------------------------------------------------
# CSV input/output
# ---------------------------------------------------------------------------

def _sidecar_path(csv_path: Path) -> Path:
    return csv_path.with_name(csv_path.name + ".meta.json")


def write_dataset_csv(data: CategoricalDataset, path: str | Path) -> Path:
    """One header row of names, one row of integer codes per subject.

    Also writes the JSON metadata sidecar (levels, names, level label map)
    and returns its path.
    """
    path = Path(path)
    names = data.column_names()
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for row in data.codes:
            writer.writerow([int(v) for v in row])
    meta = {
        "n": data.n,
        "p": data.p_count,
        "levels": list(data.levels),
        "names": list(names),
        "level_labels": [[str(m) for m in range(mp)] for mp in data.levels],
    }
    side = _sidecar_path(path)
    side.write_text(json.dumps(meta, indent=1))
    return side


def read_dataset_csv(
    path: str | Path, write_sidecar: bool = True
) -> CategoricalDataset:
    """Read a subjects CSV, using the sidecar mapping when present.

    Without a sidecar, string labels map to codes in first-seen order per
    column and the resulting mapping is emitted as a new sidecar (unless
    `write_sidecar` is False).
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"no such data file: {path}")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ConfigError(f"{path}: need a header row and at least one subject")
    header = [h.strip() for h in rows[0]]
    body = [[tok.strip() for tok in r] for r in rows[1:] if r]
    p = len(header)
    for i, r in enumerate(body):
        if len(r) != p:
            raise ConfigError(f"{path}: row {i + 2} has {len(r)} fields, expected {p}")

    side = _sidecar_path(path)
    if side.exists():
        meta = json.loads(side.read_text())
        names = tuple(meta["names"])
        if list(names) != header:
            raise ConfigError(f"{side}: names disagree with the CSV header")
        levels = tuple(int(m) for m in meta["levels"])
        maps = [
            {lab: code for code, lab in enumerate(labs)}
            for labs in meta["level_labels"]
        ]
        codes = np.empty((len(body), p), dtype=np.int64)
        for j in range(p):
            col_map = maps[j]
            for i, r in enumerate(body):
                try:
                    codes[i, j] = col_map[r[j]]
                except KeyError:
                    raise ConfigError(
                        f"{path}: label {r[j]!r} in column {header[j]!r} "
                        "not present in the sidecar level map"
                    ) from None
        return CategoricalDataset(codes=codes, levels=levels, names=names)

    # first-seen encoding
    maps: list[dict[str, int]] = [dict() for _ in range(p)]
    codes = np.empty((len(body), p), dtype=np.int64)
    for i, r in enumerate(body):
        for j, tok in enumerate(r):
            codes[i, j] = maps[j].setdefault(tok, len(maps[j]))
    levels = tuple(len(m) for m in maps)
    for j, m in enumerate(levels):
        if m < 2:
            raise ConfigError(
                f"{path}: column {header[j]!r} shows a single level; "
                "provide a sidecar declaring its level set"
            )
    data = CategoricalDataset(codes=codes, levels=levels, names=tuple(header))
    if write_sidecar:
        meta = {
            "n": data.n,
            "p": p,
            "levels": list(levels),
            "names": header,
            "level_labels": [
                [lab for lab, _ in sorted(m.items(), key=lambda kv: kv[1])]
                for m in maps
            ],
        }
        side.write_text(json.dumps(meta, indent=1))
    return data


def read_counts_csv(path: str | Path) -> ContingencyTable:
    """Read a cell-count CSV: covariate name columns plus a final ``count``.

    Level entries must be integer codes.  Missing cells default to zero;
    duplicate cells are an error.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"no such counts file: {path}")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ConfigError(f"{path}: need a header row and at least one cell")
    header = [h.strip() for h in rows[0]]
    if header[-1].lower() != "count":
        raise ConfigError(f"{path}: last column must be named 'count'")
    names = tuple(header[:-1])
    p = len(names)
    if p < 2:
        raise ConfigError(f"{path}: need at least two covariate columns")
    body = [r for r in rows[1:] if r]
    try:
        cells = np.array([[int(tok) for tok in r[:-1]] for r in body], dtype=np.int64)
        cnts = np.array([int(r[-1]) for r in body], dtype=np.int64)
    except ValueError as exc:
        raise ConfigError(f"{path}: non-integer entry ({exc})") from None
    if cells.min() < 0 or cnts.min() < 0:
        raise ConfigError(f"{path}: negative code or count")
    levels = tuple(int(m) for m in cells.max(axis=0) + 1)
    if any(m < 2 for m in levels):
        raise ConfigError(f"{path}: every covariate needs at least 2 observed levels")
    n_cells = int(np.prod(levels, dtype=object))
    if n_cells > MAX_TABLE_CELLS:
        raise ConfigError(f"{path}: table would have {n_cells} cells")
    flat = np.ravel_multi_index(tuple(cells.T), levels)
    if len(np.unique(flat)) != len(flat):
        raise ConfigError(f"{path}: duplicate cell rows")
    counts = np.zeros(n_cells, dtype=np.int64)
    counts[flat] = cnts
    total = int(counts.sum())
    if total < 1:
        raise ConfigError(f"{path}: all cell counts are zero")
    return ContingencyTable(levels=levels, counts=counts, total=total, names=names)


def write_counts_csv(table: ContingencyTable, path: str | Path) -> None:
    path = Path(path)
    names = table.column_names()
    lattice = np.stack(
        np.unravel_index(np.arange(table.n_cells), table.levels), axis=1
    )
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(names) + ["count"])
        for cell, cnt in zip(lattice, table.counts):
            writer.writerow([int(v) for v in cell] + [int(cnt)])


def expand_table(table: ContingencyTable) -> CategoricalDataset:
    """One subject row per unit of count, in cell order."""
    if table.total < 1:
        raise ConfigError("cannot expand an empty table")
    lattice = np.stack(
        np.unravel_index(np.arange(table.n_cells), table.levels), axis=1
    )
    codes = np.repeat(lattice, table.counts, axis=0)
    return CategoricalDataset(codes=codes, levels=table.levels, names=table.names)
