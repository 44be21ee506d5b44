"""Site-level observation tables: ingestion, validation, synthesis.

Three aligned tables describe each study: microbial relative abundances
(n sites x p taxa, rows closed to 1), macrofauna counts (n x k non-negative
integers), and per-site stage labels. The abundance file is the site-order
authority; the other tables are reordered to match it on load.

CSV schemas
-----------
abundances.csv : header ``site_id,<taxon_1>,...,<taxon_p>``; decimal fractions.
macrofauna.csv : header ``site_id,dead,adult,juvenile,clam``; integer counts.
labels.csv     : header ``site_id,stage``; stage in {juvenile, adult, dead}
                 (case-insensitive on read, lowercase on write).
"""

from __future__ import annotations

import csv
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    InvalidShape,
    InvalidValue,
    IoFailure,
    MissingSite,
    NegativeCount,
    NegativeValue,
    RowSumViolation,
    UnknownLabel,
)

STAGE_LABELS = ("juvenile", "adult", "dead")
MACROFAUNA_CATEGORIES = ("dead", "adult", "juvenile", "clam")
ROW_SUM_TOLERANCE = 1e-6

# Internal knobs of the synthetic generator: amplitude of the per-class
# block shift in log space, and the split of `noise` into a block-shared
# component (builds within-block correlation) and an idiosyncratic one.
_SHIFT_AMPLITUDE = 2.0
_BLOCK_NOISE_FRACTION = 0.6
_IDIO_NOISE_FRACTION = 0.8


def substream(seed: int, name: str) -> np.random.Generator:
    """Deterministic named RNG substream derived from a single run seed."""
    return np.random.default_rng([seed % (2**63), zlib.crc32(name.encode("utf-8"))])


@dataclass(eq=False)
class AbundanceMatrix:
    """Relative abundances per site; rows sum to 1 within 1e-6."""

    site_ids: list[str]
    taxa_names: list[str]
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        n, p = len(self.site_ids), len(self.taxa_names)
        if self.values.shape != (n, p):
            raise InvalidShape(
                f"abundance matrix shape {self.values.shape} does not match "
                f"{n} sites x {p} taxa"
            )
        if len(set(self.site_ids)) != n:
            raise InvalidValue("duplicate site ids in abundance table")
        if len(set(self.taxa_names)) != p:
            raise InvalidValue("duplicate taxa names in abundance table")
        neg = np.argwhere(self.values < 0)
        if neg.size:
            i, j = neg[0]
            raise NegativeValue(
                f"negative abundance at site '{self.site_ids[i]}', taxon '{self.taxa_names[j]}'"
            )
        sums = self.values.sum(axis=1)
        bad = np.flatnonzero(np.abs(sums - 1.0) > ROW_SUM_TOLERANCE)
        if bad.size:
            i = int(bad[0])
            raise RowSumViolation(
                f"abundance row for site '{self.site_ids[i]}' sums to {sums[i]:.8f}, expected 1"
            )
        self.values.setflags(write=False)

    @property
    def n_sites(self) -> int:
        return len(self.site_ids)

    @property
    def n_taxa(self) -> int:
        return len(self.taxa_names)


@dataclass(eq=False)
class MacrofaunaCounts:
    """Non-negative integer macrofauna counts per site."""

    site_ids: list[str]
    values: np.ndarray
    category_names: list[str] = field(default_factory=lambda: list(MACROFAUNA_CATEGORIES))

    def __post_init__(self) -> None:
        arr = np.asarray(self.values)
        if not np.issubdtype(arr.dtype, np.integer):
            rounded = np.rint(np.asarray(arr, dtype=float))
            if not np.array_equal(rounded, np.asarray(arr, dtype=float)):
                raise NegativeCount("macrofauna counts must be integers")
            arr = rounded.astype(np.int64)
        self.values = arr.astype(np.int64)
        n, k = len(self.site_ids), len(self.category_names)
        if self.values.shape != (n, k):
            raise InvalidShape(
                f"macrofauna matrix shape {self.values.shape} does not match "
                f"{n} sites x {k} categories"
            )
        neg = np.argwhere(self.values < 0)
        if neg.size:
            i, j = neg[0]
            raise NegativeCount(
                f"negative count at site '{self.site_ids[i]}', "
                f"category '{self.category_names[j]}'"
            )
        self.values.setflags(write=False)


@dataclass(eq=False)
class StageLabels:
    """Per-site developmental stage labels from an ordered label set."""

    site_ids: list[str]
    labels: list[str]
    label_set: tuple[str, ...] = STAGE_LABELS

    def __post_init__(self) -> None:
        if len(self.labels) != len(self.site_ids):
            raise InvalidShape(
                f"{len(self.labels)} labels for {len(self.site_ids)} sites"
            )
        allowed = set(self.label_set)
        for site, lab in zip(self.site_ids, self.labels):
            if lab not in allowed:
                raise UnknownLabel(
                    f"site '{site}' has label '{lab}', expected one of {list(self.label_set)}"
                )

    def indices(self) -> np.ndarray:
        """Labels as integer indices into ``label_set``."""
        lookup = {lab: i for i, lab in enumerate(self.label_set)}
        return np.array([lookup[lab] for lab in self.labels], dtype=np.int64)


@dataclass(eq=False)
class Dataset:
    """Aligned site-level observations; macrofauna and stages are optional."""

    abundances: AbundanceMatrix
    macrofauna: Optional[MacrofaunaCounts] = None
    stages: Optional[StageLabels] = None
    provenance: str = ""

    def __post_init__(self) -> None:
        ids = self.abundances.site_ids
        if self.macrofauna is not None and self.macrofauna.site_ids != ids:
            raise MissingSite("macrofauna site ids do not match abundance site ids")
        if self.stages is not None:
            if self.stages.site_ids != ids:
                raise MissingSite("label site ids do not match abundance site ids")
            if len(ids) < len(self.stages.label_set):
                raise InvalidShape(
                    f"{len(ids)} sites for {len(self.stages.label_set)} classes; "
                    "need at least one sample per class"
                )

    @property
    def n_sites(self) -> int:
        return self.abundances.n_sites

    @property
    def n_taxa(self) -> int:
        return self.abundances.n_taxa

    def subset(self, indices: Sequence[int]) -> "Dataset":
        """New Dataset holding only the selected sites, order preserved."""
        idx = list(indices)
        ids = [self.abundances.site_ids[i] for i in idx]
        ab = AbundanceMatrix(ids, list(self.abundances.taxa_names), self.abundances.values[idx])
        mf = None
        if self.macrofauna is not None:
            mf = MacrofaunaCounts(
                list(ids), self.macrofauna.values[idx], list(self.macrofauna.category_names)
            )
        st = None
        if self.stages is not None:
            st = StageLabels(
                list(ids), [self.stages.labels[i] for i in idx], self.stages.label_set
            )
        return Dataset(ab, mf, st, provenance=self.provenance)

    def with_labels(self, labels: Sequence[str]) -> "Dataset":
        """Same observations with a replacement label column."""
        if self.stages is None:
            raise InvalidShape("dataset has no labels to replace")
        st = StageLabels(list(self.abundances.site_ids), list(labels), self.stages.label_set)
        return Dataset(self.abundances, self.macrofauna, st, provenance=self.provenance)


def _read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise InvalidValue(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    if not header or header[0] != "site_id":
        raise InvalidValue(f"{path}: first header column must be 'site_id'")
    return header, body


def _parse_float(cell: str, path: Path, site: str, col: str) -> float:
    try:
        return float(cell)
    except ValueError as exc:
        raise InvalidValue(f"{path}: site '{site}', column '{col}': not a number: {cell!r}") from exc


def _parse_count(cell: str, path: Path, site: str, col: str) -> int:
    try:
        value = int(cell)
    except ValueError as exc:
        raise InvalidValue(
            f"{path}: site '{site}', column '{col}': not an integer count: {cell!r}"
        ) from exc
    if value < 0:
        raise NegativeCount(f"{path}: site '{site}', column '{col}': negative count {value}")
    return value


def load_dataset(
    abundance_path: str | Path,
    macrofauna_path: str | Path | None = None,
    labels_path: str | Path | None = None,
    label_set: tuple[str, ...] = STAGE_LABELS,
) -> Dataset:
    """Load and validate the site tables; rows follow abundance-file order.

    Raises
    ------
    MissingSite, RowSumViolation, NegativeCount, NegativeValue,
    UnknownLabel, InvalidValue, IoFailure
    """
    abundance_path = Path(abundance_path)
    header, body = _read_csv(abundance_path)
    taxa = header[1:]
    if not taxa:
        raise InvalidValue(f"{abundance_path}: no taxa columns")
    site_ids: list[str] = []
    values = np.empty((len(body), len(taxa)), dtype=float)
    for i, row in enumerate(body):
        if len(row) != len(header):
            raise InvalidValue(f"{abundance_path}: row {i + 2} has {len(row)} cells, expected {len(header)}")
        site_ids.append(row[0])
        for j, cell in enumerate(row[1:]):
            values[i, j] = _parse_float(cell, abundance_path, row[0], taxa[j])
    abundances = AbundanceMatrix(site_ids, taxa, values)

    macrofauna = None
    if macrofauna_path is not None:
        macrofauna_path = Path(macrofauna_path)
        mheader, mbody = _read_csv(macrofauna_path)
        categories = mheader[1:]
        counts_by_site: dict[str, list[int]] = {}
        for i, row in enumerate(mbody):
            if len(row) != len(mheader):
                raise InvalidValue(
                    f"{macrofauna_path}: row {i + 2} has {len(row)} cells, expected {len(mheader)}"
                )
            counts_by_site[row[0]] = [
                _parse_count(cell, macrofauna_path, row[0], categories[j])
                for j, cell in enumerate(row[1:])
            ]
        ordered = _align(counts_by_site, site_ids, macrofauna_path, abundance_path)
        macrofauna = MacrofaunaCounts(list(site_ids), np.array(ordered, dtype=np.int64), categories)

    stages = None
    if labels_path is not None:
        labels_path = Path(labels_path)
        lheader, lbody = _read_csv(labels_path)
        if len(lheader) != 2 or lheader[1] != "stage":
            raise InvalidValue(f"{labels_path}: expected header 'site_id,stage'")
        labels_by_site: dict[str, str] = {}
        for row in lbody:
            if len(row) != 2:
                raise InvalidValue(f"{labels_path}: malformed row {row!r}")
            lab = row[1].strip().lower()
            if lab not in label_set:
                raise UnknownLabel(
                    f"{labels_path}: site '{row[0]}' has label '{row[1]}', "
                    f"expected one of {list(label_set)}"
                )
            labels_by_site[row[0]] = lab
        ordered_labels = _align(labels_by_site, site_ids, labels_path, abundance_path)
        stages = StageLabels(list(site_ids), ordered_labels, label_set)

    parts = [abundance_path.name]
    if macrofauna_path is not None:
        parts.append(Path(macrofauna_path).name)
    if labels_path is not None:
        parts.append(Path(labels_path).name)
    return Dataset(abundances, macrofauna, stages, provenance="loaded:" + ",".join(parts))


def _align(by_site: dict, site_ids: list[str], path: Path, authority: Path) -> list:
    missing = [s for s in site_ids if s not in by_site]
    if missing:
        raise MissingSite(f"{path}: site '{missing[0]}' from {authority.name} is absent")
    extra = [s for s in by_site if s not in set(site_ids)]
    if extra:
        raise MissingSite(f"{path}: site '{extra[0]}' is absent from {authority.name}")
    return [by_site[s] for s in site_ids]


def save_dataset(
    dataset: Dataset,
    abundance_path: str | Path,
    macrofauna_path: str | Path | None = None,
    labels_path: str | Path | None = None,
) -> None:
    """Write the dataset back to the CSV schemas (full-precision floats)."""
    ab = dataset.abundances
    _write_csv(
        abundance_path,
        ["site_id", *ab.taxa_names],
        [[sid, *[repr(float(v)) for v in row]] for sid, row in zip(ab.site_ids, ab.values)],
    )
    if macrofauna_path is not None:
        if dataset.macrofauna is None:
            raise InvalidValue("dataset has no macrofauna counts to save")
        mf = dataset.macrofauna
        _write_csv(
            macrofauna_path,
            ["site_id", *mf.category_names],
            [[sid, *[str(int(v)) for v in row]] for sid, row in zip(mf.site_ids, mf.values)],
        )
    if labels_path is not None:
        if dataset.stages is None:
            raise InvalidValue("dataset has no labels to save")
        st = dataset.stages
        _write_csv(
            labels_path,
            ["site_id", "stage"],
            [[sid, lab] for sid, lab in zip(st.site_ids, st.labels)],
        )


def _write_csv(path: str | Path, header: list[str], rows: list[list[str]]) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _label_set_for(n_classes: int) -> tuple[str, ...]:
    if n_classes <= len(STAGE_LABELS):
        return STAGE_LABELS[:n_classes]
    extra = tuple(f"stage_{i}" for i in range(len(STAGE_LABELS), n_classes))
    return STAGE_LABELS + extra


def taxa_blocks(p: int, n_blocks: int) -> list[np.ndarray]:
    """Partition taxon indices 0..p-1 into contiguous blocks."""
    return [b for b in np.array_split(np.arange(p), n_blocks)]


def planted_signal_taxa(p: int, K: int, n_blocks: int) -> list[int]:
    """Indices of taxa in the blocks that carry a class shift."""
    blocks = taxa_blocks(p, n_blocks)
    n_signal = min(K, n_blocks)
    return [int(j) for b in blocks[:n_signal] for j in b]


def synthesize_dataset(
    n: int,
    p: int,
    K: int,
    n_blocks: int,
    coupling: float,
    noise: float,
    seed: int,
) -> Dataset:
    """Generate block-structured compositional data with planted signal.

    Taxa are partitioned into ``n_blocks`` contiguous blocks. Each class
    shifts the log-abundance of one whole block coherently; within-block
    taxa additionally share a noise component so that blocks are genuinely
    co-occurring groups. Rows are closed to sum 1. Macrofauna counts are
    monotone (dense-rank) functions of the abundance mean of the block
    each category tracks, mixed with independent noise weighted
    ``coupling`` : ``1 - coupling``. Deterministic given ``seed``.

    Raises
    ------
    InvalidShape
        If n < K, p < n_blocks, or n_blocks < 1.
    """
    if K < 1 or n < K or n_blocks < 1 or p < n_blocks:
        raise InvalidShape(
            f"need n >= K >= 1 and p >= n_blocks >= 1, got n={n} p={p} K={K} n_blocks={n_blocks}"
        )
    if not 0.0 <= coupling <= 1.0:
        raise InvalidShape(f"coupling must be in [0, 1], got {coupling}")
    if noise < 0.0:
        raise InvalidShape(f"noise must be >= 0, got {noise}")

    rng = substream(seed, "synthesize")
    blocks = taxa_blocks(p, n_blocks)
    block_of = np.empty(p, dtype=np.int64)
    for b, members in enumerate(blocks):
        block_of[members] = b
    n_signal = min(K, n_blocks)
    classes = np.arange(n) % K

    baseline = rng.normal(0.0, 0.5, size=p)
    block_noise = rng.normal(size=(n, n_blocks))
    idio_noise = rng.normal(size=(n, p))

    # class k lifts block (k % n_signal); classes forced to share a block
    # (K > n_blocks) get distinct amplitudes so they stay separable
    shift = np.zeros((n, p))
    for k in range(K):
        target = k % n_signal
        amp = _SHIFT_AMPLITUDE * (1.0 + (k // n_signal))
        shift[np.ix_(classes == k, blocks[target])] = amp

    log_abund = (
        baseline[None, :]
        + shift
        + noise * _BLOCK_NOISE_FRACTION * block_noise[:, block_of]
        + noise * _IDIO_NOISE_FRACTION * idio_noise
    )
    raw = np.exp(log_abund)
    closed = raw / raw.sum(axis=1, keepdims=True)

    site_ids = [f"site_{i + 1:02d}" for i in range(n)]
    taxa = [f"taxon_{j + 1:02d}" for j in range(p)]
    abundances = AbundanceMatrix(site_ids, taxa, closed)

    k_cat = len(MACROFAUNA_CATEGORIES)
    count_noise = rng.normal(size=(n, k_cat))
    counts = np.empty((n, k_cat), dtype=np.int64)
    for c in range(k_cat):
        tracked = blocks[c % n_signal]
        block_mean = closed[:, tracked].mean(axis=1)
        std = block_mean.std()
        signal = (block_mean - block_mean.mean()) / std if std > 0 else np.zeros(n)
        score = coupling * signal + (1.0 - coupling) * count_noise[:, c]
        counts[:, c] = _dense_rank(score)
    macrofauna = MacrofaunaCounts(list(site_ids), counts)

    label_set = _label_set_for(K)
    stages = StageLabels(list(site_ids), [label_set[k] for k in classes], label_set)

    prov = (
        f"synthetic:n={n},p={p},K={K},n_blocks={n_blocks},"
        f"coupling={coupling},noise={noise},seed={seed}"
    )
    return Dataset(abundances, macrofauna, stages, provenance=prov)


def _dense_rank(values: np.ndarray) -> np.ndarray:
    """Map values to 0-based dense ranks; ties share a rank."""
    _, inverse = np.unique(values, return_inverse=True)
    return inverse.astype(np.int64)
