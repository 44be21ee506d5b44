"""Ecological knowledge graph over microbial taxa.

Two evidence sources produce weighted adjacency matrices over the p taxa:

* macro-coupling: each taxon gets a profile of Spearman correlations
  between its feature column and every macrofauna count column; taxa whose
  profiles point the same way (cosine similarity >= tau) are connected.
* co-occurrence: taxa whose feature columns have pairwise Spearman
  correlation >= gamma are connected.

The fused adjacency A = alpha * A_macro + (1 - alpha) * A_co feeds the
combinatorial Laplacian L = D - A used as a smoothing penalty downstream.
Edges keep their thresholded similarity value; negative correlations never
form edges.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .compositional import FeatureMatrix
from .dataset import MacrofaunaCounts
from .errors import (
    AsymmetricInput,
    InvalidAdjacency,
    InvalidValue,
    IoFailure,
    Misalignment,
    ShapeMismatch,
    TooFewSamples,
)
from .rankstats import snap_to_unit, spearman_cross, spearman_matrix

SYMMETRY_TOLERANCE = 1e-12


@dataclass(eq=False)
class EcologicalGraph:
    """Fused taxa graph: both adjacency sources plus the Laplacian."""

    taxa_names: list[str]
    a_macro: np.ndarray
    a_co: np.ndarray
    alpha: float
    adjacency: np.ndarray
    laplacian: np.ndarray
    tau: float
    gamma: float

    def __post_init__(self) -> None:
        for name in ("a_macro", "a_co", "adjacency", "laplacian"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            setattr(self, name, arr)

    @property
    def n_taxa(self) -> int:
        return len(self.taxa_names)


def compute_macro_profiles(features: FeatureMatrix, macrofauna: MacrofaunaCounts) -> np.ndarray:
    """Per-taxon Spearman profile against every macrofauna category (p x k)."""
    if features.site_ids != macrofauna.site_ids:
        raise Misalignment("features and macrofauna counts are not site-aligned")
    if len(features.site_ids) < 3:
        raise TooFewSamples("graph construction needs at least 3 sites")
    return spearman_cross(features.values, np.asarray(macrofauna.values, dtype=float))


def a_macro_from_profiles(profiles: np.ndarray, tau: float) -> np.ndarray:
    """Cosine similarity of correlation profiles, thresholded at ``tau``.

    Taxa with an all-zero profile (e.g. constant feature columns) get no
    incident edges. Diagonal is 0; the result is exactly symmetric.
    """
    _check_unit_interval(tau, "tau")
    p = profiles.shape[0]
    norms = np.sqrt((profiles * profiles).sum(axis=1))
    ok = norms > 0.0
    unit = profiles / np.where(ok, norms, 1.0)[:, None]
    cos = snap_to_unit(np.clip(unit @ unit.T, -1.0, 1.0))
    a = np.where(cos >= tau, cos, 0.0)
    a[~ok, :] = 0.0
    a[:, ~ok] = 0.0
    np.fill_diagonal(a, 0.0)
    return a


def build_a_macro(features: FeatureMatrix, macrofauna: MacrofaunaCounts, tau: float) -> np.ndarray:
    """Macro-coupling adjacency from site-aligned features and counts."""
    return a_macro_from_profiles(compute_macro_profiles(features, macrofauna), tau)


def compute_co_correlations(features: FeatureMatrix) -> np.ndarray:
    """Pairwise Spearman correlations between taxa feature columns (p x p)."""
    if len(features.site_ids) < 3:
        raise TooFewSamples("graph construction needs at least 3 sites")
    return spearman_matrix(features.values)


def a_co_from_correlations(correlations: np.ndarray, gamma: float) -> np.ndarray:
    """Keep positive correlations >= ``gamma`` as edge weights, zero diagonal."""
    _check_unit_interval(gamma, "gamma")
    a = np.where(correlations >= gamma, correlations, 0.0)
    np.fill_diagonal(a, 0.0)
    return a


def build_a_co(features: FeatureMatrix, gamma: float) -> np.ndarray:
    """Co-occurrence adjacency from feature columns."""
    return a_co_from_correlations(compute_co_correlations(features), gamma)


def laplacian_of(adjacency: np.ndarray) -> np.ndarray:
    """Combinatorial Laplacian D - A of a weighted adjacency matrix."""
    return np.diag(adjacency.sum(axis=1)) - adjacency


def fuse(
    a_macro: np.ndarray,
    a_co: np.ndarray,
    alpha: float,
    taxa_names: list[str] | None = None,
    tau: float = float("nan"),
    gamma: float = float("nan"),
) -> EcologicalGraph:
    """Convex fusion of the two adjacency sources plus the Laplacian.

    Raises
    ------
    ShapeMismatch, AsymmetricInput, InvalidAdjacency
    """
    a_macro = np.asarray(a_macro, dtype=float)
    a_co = np.asarray(a_co, dtype=float)
    if a_macro.ndim != 2 or a_macro.shape[0] != a_macro.shape[1]:
        raise ShapeMismatch(f"a_macro must be square, got {a_macro.shape}")
    if a_macro.shape != a_co.shape:
        raise ShapeMismatch(f"adjacency shapes differ: {a_macro.shape} vs {a_co.shape}")
    if not 0.0 <= alpha <= 1.0:
        raise InvalidValue(f"alpha must be in [0, 1], got {alpha}")
    for name, a in (("a_macro", a_macro), ("a_co", a_co)):
        if np.abs(a - a.T).max(initial=0.0) > SYMMETRY_TOLERANCE:
            raise AsymmetricInput(f"{name} is not symmetric")
        if np.any(a < 0.0):
            raise InvalidAdjacency(f"{name} has negative entries")
        if np.abs(np.diag(a)).max(initial=0.0) != 0.0:
            raise InvalidAdjacency(f"{name} has a nonzero diagonal")
    p = a_macro.shape[0]
    if taxa_names is None:
        taxa_names = [f"taxon_{j + 1:02d}" for j in range(p)]
    if len(taxa_names) != p:
        raise ShapeMismatch(f"{len(taxa_names)} taxa names for {p} x {p} adjacency")
    adjacency = alpha * a_macro + (1.0 - alpha) * a_co
    return EcologicalGraph(
        taxa_names=list(taxa_names),
        a_macro=a_macro,
        a_co=a_co,
        alpha=float(alpha),
        adjacency=adjacency,
        laplacian=laplacian_of(adjacency),
        tau=float(tau),
        gamma=float(gamma),
    )


def build_graph(
    features: FeatureMatrix,
    macrofauna: MacrofaunaCounts | None,
    tau: float,
    gamma: float,
    alpha: float,
    co_correlations: np.ndarray | None = None,
) -> EcologicalGraph:
    """Construct the full graph from features (and counts when alpha > 0).

    ``co_correlations`` lets the caller substitute correlations computed on
    a wider site set (the transductive co-occurrence scope) or reuse cached
    ones; by default they come from ``features`` itself.
    """
    p = len(features.taxa_names)
    if macrofauna is not None:
        a_macro = build_a_macro(features, macrofauna, tau)
    elif alpha > 0.0:
        from .errors import MissingMacrofauna

        raise MissingMacrofauna("alpha > 0 requires macrofauna counts to build the graph")
    else:
        a_macro = np.zeros((p, p))
    if co_correlations is None:
        co_correlations = compute_co_correlations(features)
    a_co = a_co_from_correlations(co_correlations, gamma)
    return fuse(a_macro, a_co, alpha, list(features.taxa_names), tau=tau, gamma=gamma)


def export_heatmaps(graph: EcologicalGraph, out_dir: str | Path) -> list[Path]:
    """Write a_macro.csv, a_co.csv and adjacency.csv into ``out_dir``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {out}: {exc}") from exc
    written = []
    for name, matrix in (
        ("a_macro.csv", graph.a_macro),
        ("a_co.csv", graph.a_co),
        ("adjacency.csv", graph.adjacency),
    ):
        path = out / name
        write_matrix_csv(path, graph.taxa_names, matrix)
        written.append(path)
    return written


def write_matrix_csv(path: str | Path, taxa_names: list[str], matrix: np.ndarray) -> None:
    """Taxa-labelled square matrix as CSV with full-precision decimals."""
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["taxon", *taxa_names])
            for name, row in zip(taxa_names, matrix):
                writer.writerow([name, *[repr(float(v)) for v in row]])
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_matrix_csv(path: str | Path) -> tuple[list[str], np.ndarray]:
    """Inverse of :func:`write_matrix_csv`."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if not rows or rows[0][:1] != ["taxon"]:
        raise InvalidValue(f"{path}: expected a 'taxon'-labelled matrix CSV")
    taxa = rows[0][1:]
    matrix = np.array([[float(c) for c in row[1:]] for row in rows[1:]], dtype=float)
    if matrix.shape != (len(taxa), len(taxa)):
        raise InvalidValue(f"{path}: matrix shape {matrix.shape} does not match header")
    return taxa, matrix


def _check_unit_interval(value: float, name: str) -> None:
    if not 0.0 <= value <= 1.0:
        raise InvalidValue(f"{name} must be in [0, 1], got {value}")
