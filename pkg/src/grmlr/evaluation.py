"""Evaluation harness: LOOCV, metrics, permutation test, grid search,
ablations and the graph-mixing sensitivity sweep.

All evaluations are leave-one-out: the held-out site never influences the
training fold's graph (under the default ``co_occurrence_scope='train'``),
sample weights or fit. Rank correlations are precomputed once per fold and
shared across hyperparameter configurations, which keeps the exhaustive
grid search cheap; thresholding and fitting still happen per configuration,
so results are identical to rebuilding everything from scratch.
"""

from __future__ import annotations

import csv
import itertools
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dataset import Dataset, substream
from .ecograph import a_co_from_correlations, a_macro_from_profiles, laplacian_of
from .errors import (
    InvalidShape,
    InvalidValue,
    IoFailure,
    LengthMismatch,
    MissingLabels,
    MissingMacrofauna,
    TaxaMismatch,
    UnknownParameter,
)
from .model import GrmlrConfig, GrmlrModel, build_features, fit_arrays
from .rankstats import spearman_cross, spearman_matrix

DEFAULT_GRID: dict[str, list] = {
    "alpha": [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
    "lambda_g": [0.0, 1.0, 5.0, 10.0],
    "lambda_l2": [0.001, 0.01, 0.02, 0.1],
    "tau": [0.5, 0.7, 0.9],
    "gamma": [0.7, 0.8, 0.9, 0.95],
}

DEFAULT_ALPHAS = DEFAULT_GRID["alpha"]


@dataclass(eq=False)
class FoldPrediction:
    site_id: str
    true_label: str
    predicted_label: str


@dataclass(eq=False)
class EvalReport:
    """LOOCV outcome: per-fold predictions plus aggregate metrics."""

    per_fold: list[FoldPrediction]
    accuracy: float
    macro_f1: float
    stage_correct: dict[str, int]
    config: GrmlrConfig
    skipped_folds: list[str] = field(default_factory=list)
    fold_models: list[GrmlrModel] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "metrics": {
                "accuracy": self.accuracy,
                "macro_f1": self.macro_f1,
                "stage_correct": dict(self.stage_correct),
            },
            "per_fold": [
                {"site_id": f.site_id, "true": f.true_label, "predicted": f.predicted_label}
                for f in self.per_fold
            ],
            "skipped_folds": list(self.skipped_folds),
            "config": self.config.to_dict(),
        }


@dataclass(eq=False)
class PermutationReport:
    observed_accuracy: float
    permuted_accuracies: list[float]
    p_value: float

    def to_dict(self) -> dict:
        return {
            "observed_accuracy": self.observed_accuracy,
            "permuted_accuracies": list(self.permuted_accuracies),
            "n_permutations": len(self.permuted_accuracies),
            "p_value": self.p_value,
        }


@dataclass(eq=False)
class GridEntry:
    index: int
    config: GrmlrConfig
    accuracy: float
    macro_f1: float
    error: Optional[str] = None


@dataclass(eq=False)
class GridResult:
    entries: list[GridEntry]

    def best(self) -> GridEntry:
        for entry in self.entries:
            if entry.error is None:
                return entry
        raise InvalidValue("every grid entry failed")


def macro_f1(
    true_labels: Sequence[str],
    predicted_labels: Sequence[str],
    label_set: Sequence[str],
) -> float:
    """Unweighted mean of per-class F1; undefined per-class F1 counts as 0."""
    if len(true_labels) != len(predicted_labels):
        raise LengthMismatch(
            f"{len(true_labels)} true labels vs {len(predicted_labels)} predictions"
        )
    scores = []
    for lab in label_set:
        tp = sum(1 for t, q in zip(true_labels, predicted_labels) if t == lab and q == lab)
        fp = sum(1 for t, q in zip(true_labels, predicted_labels) if t != lab and q == lab)
        fn = sum(1 for t, q in zip(true_labels, predicted_labels) if t == lab and q != lab)
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(scores))


@dataclass(eq=False)
class _Fold:
    site_id: str
    test_index: int
    train_idx: np.ndarray
    co_train: np.ndarray
    profiles: Optional[np.ndarray]


@dataclass(eq=False)
class LoocvPlan:
    """Per-fold data and rank correlations, reusable across configurations."""

    site_ids: list[str]
    taxa_names: list[str]
    label_set: tuple[str, ...]
    features: np.ndarray
    y: np.ndarray
    folds: list[_Fold]
    co_all: np.ndarray
    feature_mode: str
    epsilon: float


def build_plan(dataset: Dataset, epsilon: float, feature_mode: str = "clr") -> LoocvPlan:
    """Precompute features and per-fold rank correlations for LOOCV."""
    if dataset.stages is None:
        raise MissingLabels("LOOCV requires stage labels")
    n = dataset.n_sites
    K = len(dataset.stages.label_set)
    if n < K + 1:
        raise InvalidShape(f"LOOCV needs at least K+1={K + 1} sites, got {n}")
    feats = build_features(dataset, epsilon, feature_mode)
    Z = feats.values
    counts = None if dataset.macrofauna is None else np.asarray(dataset.macrofauna.values, float)
    folds = []
    for i in range(n):
        train_idx = np.array([j for j in range(n) if j != i])
        z_train = Z[train_idx]
        folds.append(
            _Fold(
                site_id=dataset.abundances.site_ids[i],
                test_index=i,
                train_idx=train_idx,
                co_train=spearman_matrix(z_train),
                profiles=None if counts is None else spearman_cross(z_train, counts[train_idx]),
            )
        )
    return LoocvPlan(
        site_ids=list(dataset.abundances.site_ids),
        taxa_names=list(dataset.abundances.taxa_names),
        label_set=tuple(dataset.stages.label_set),
        features=Z,
        y=dataset.stages.indices(),
        folds=folds,
        co_all=spearman_matrix(Z),
        feature_mode=feature_mode,
        epsilon=epsilon,
    )


def _run_plan(
    plan: LoocvPlan,
    config: GrmlrConfig,
    y: Optional[np.ndarray] = None,
    keep_models: bool = False,
) -> EvalReport:
    if y is None:
        y = plan.y
    K = len(plan.label_set)
    n = len(plan.site_ids)
    per_fold: list[FoldPrediction] = []
    skipped: list[str] = []
    models: list[GrmlrModel] = []
    for fold in plan.folds:
        y_train = y[fold.train_idx]
        class_counts = np.bincount(y_train, minlength=K)
        if np.any(class_counts == 0):
            skipped.append(fold.site_id)
            continue
        n_train = len(y_train)
        if config.class_balanced:
            s = n_train / (K * class_counts[y_train].astype(float))
        else:
            s = np.ones(n_train)
        if fold.profiles is not None:
            a_macro = a_macro_from_profiles(fold.profiles, config.tau)
        elif config.alpha > 0.0:
            raise MissingMacrofauna("alpha > 0 requires macrofauna counts")
        else:
            a_macro = np.zeros_like(fold.co_train)
        co = plan.co_all if config.co_occurrence_scope == "all" else fold.co_train
        a_co = a_co_from_correlations(co, config.gamma)
        adjacency = config.alpha * a_macro + (1.0 - config.alpha) * a_co
        laplacian = laplacian_of(adjacency)
        W, b, _ = fit_arrays(plan.features[fold.train_idx], y_train, K, s, laplacian, config)
        scores = plan.features[fold.test_index] @ W.T + b
        pred = int(np.argmax(scores))
        per_fold.append(
            FoldPrediction(
                site_id=fold.site_id,
                true_label=plan.label_set[y[fold.test_index]],
                predicted_label=plan.label_set[pred],
            )
        )
        if keep_models:
            models.append(
                GrmlrModel(
                    weights=W,
                    bias=b,
                    taxa_names=list(plan.taxa_names),
                    label_set=plan.label_set,
                    hyperparams=config,
                    feature_mode=plan.feature_mode,
                )
            )
    correct = sum(1 for f in per_fold if f.true_label == f.predicted_label)
    accuracy = correct / len(per_fold) if per_fold else 0.0
    f1 = (
        macro_f1(
            [f.true_label for f in per_fold],
            [f.predicted_label for f in per_fold],
            plan.label_set,
        )
        if per_fold
        else 0.0
    )
    stage_correct = {lab: 0 for lab in plan.label_set}
    for f in per_fold:
        if f.true_label == f.predicted_label:
            stage_correct[f.true_label] += 1
    return EvalReport(
        per_fold=per_fold,
        accuracy=accuracy,
        macro_f1=f1,
        stage_correct=stage_correct,
        config=config,
        skipped_folds=skipped,
        fold_models=models,
    )


def loocv(
    dataset: Dataset,
    config: GrmlrConfig,
    feature_mode: str = "clr",
    keep_models: bool = False,
) -> EvalReport:
    """Leave-one-out cross validation of the full pipeline.

    Each fold rebuilds features, graph, sample weights and model on the
    n-1 training sites and predicts the held-out site from its abundances
    alone. Folds whose training set loses an entire class are skipped and
    listed in ``skipped_folds``.
    """
    if config.alpha > 0.0 and dataset.macrofauna is None:
        raise MissingMacrofauna("alpha > 0 requires macrofauna counts")
    plan = build_plan(dataset, config.epsilon, feature_mode)
    return _run_plan(plan, config, keep_models=keep_models)


def permutation_test(
    dataset: Dataset,
    config: GrmlrConfig,
    B: int,
    seed: int,
    workers: int = 1,
) -> PermutationReport:
    """Label-permutation null for the LOOCV accuracy.

    Labels are permuted uniformly at random B times (seeded); abundances
    and macrofauna are untouched, so the graph topology of every fold is
    identical across permutations. p = (1 + #{permuted >= observed}) / (1 + B).
    """
    if B < 1:
        raise InvalidValue(f"B must be >= 1, got {B}")
    plan = build_plan(dataset, config.epsilon)
    observed = _run_plan(plan, config).accuracy
    rng = substream(seed, "permutation")
    n = len(plan.site_ids)
    perms = [rng.permutation(n) for _ in range(B)]
    tasks = [(plan, config, plan.y[perm]) for perm in perms]
    accuracies = _map_chunked(_permutation_worker, tasks, workers)
    exceed = sum(1 for a in accuracies if a >= observed)
    p_value = (1 + exceed) / (1 + B)
    return PermutationReport(
        observed_accuracy=observed,
        permuted_accuracies=accuracies,
        p_value=p_value,
    )


def _permutation_worker(task) -> float:
    plan, config, y_perm = task
    return _run_plan(plan, config, y=y_perm).accuracy


def grid_search(
    dataset: Dataset,
    grid: dict[str, list],
    workers: int = 1,
    base_config: Optional[GrmlrConfig] = None,
) -> GridResult:
    """Exhaustive LOOCV evaluation of every configuration in the grid.

    Entries are sorted by accuracy, then macro-F1 (both descending), then
    enumeration order, so the output is deterministic regardless of the
    worker count. A configuration that fails is kept with its error message
    and sorts last.
    """
    if base_config is None:
        base_config = GrmlrConfig()
    if not grid:
        raise InvalidValue("grid must define at least one axis")
    known = set(GrmlrConfig.__dataclass_fields__)
    for name, values in grid.items():
        if name not in known:
            raise UnknownParameter(f"'{name}' is not a config field")
        if not values:
            raise InvalidValue(f"grid axis '{name}' is empty")
    names = list(grid.keys())
    configs = [
        replace(base_config, **dict(zip(names, combo)))
        for combo in itertools.product(*(grid[n] for n in names))
    ]
    plans: dict[float, LoocvPlan] = {}
    for cfg in configs:
        if cfg.epsilon not in plans:
            plans[cfg.epsilon] = build_plan(dataset, cfg.epsilon)
    tasks = [(plans[cfg.epsilon], cfg) for cfg in configs]
    outcomes = _map_chunked(_grid_worker, tasks, workers)
    entries = [
        GridEntry(index=i, config=cfg, accuracy=acc, macro_f1=f1, error=err)
        for i, (cfg, (acc, f1, err)) in enumerate(zip(configs, outcomes))
    ]
    entries.sort(key=_entry_sort_key)
    return GridResult(entries=entries)


def _grid_worker(task) -> tuple[float, float, Optional[str]]:
    plan, config = task
    try:
        report = _run_plan(plan, config)
    except Exception as exc:  # entry marked failed, search continues
        return float("nan"), float("nan"), f"{type(exc).__name__}: {exc}"
    return report.accuracy, report.macro_f1, None


def _entry_sort_key(entry: GridEntry):
    failed = entry.error is not None
    acc = -entry.accuracy if not failed else float("inf")
    f1 = -entry.macro_f1 if not failed else float("inf")
    return (failed, acc, f1, entry.index)


def _map_chunked(fn, tasks: list, workers: int) -> list:
    """Order-preserving parallel map; results identical for any worker count."""
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    chunk_size = max(1, len(tasks) // (workers * 4))
    chunks = [tasks[i : i + chunk_size] for i in range(0, len(tasks), chunk_size)]
    results: list = [None] * len(chunks)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = {pool.submit(_run_chunk, fn, chunk): i for i, chunk in enumerate(chunks)}
        for fut, i in futures.items():
            results[i] = fut.result()
    return [item for chunk in results for item in chunk]


def _run_chunk(fn, chunk: list) -> list:
    return [fn(t) for t in chunk]


def ablate(dataset: Dataset, config: GrmlrConfig) -> dict[str, EvalReport]:
    """LOOCV for the four component-removal variants.

    no_graph: lambda_g = 0; no_macro: alpha = 0; no_co: alpha = 1;
    no_clr: raw relative abundances replace the CLR features. All other
    hyperparameters stay at ``config``.
    """
    return {
        "no_graph": loocv(dataset, replace(config, lambda_g=0.0)),
        "no_macro": loocv(dataset, replace(config, alpha=0.0)),
        "no_co": loocv(dataset, replace(config, alpha=1.0)),
        "no_clr": loocv(dataset, config, feature_mode="raw"),
    }


def alpha_sweep(
    dataset: Dataset,
    config: GrmlrConfig,
    alphas: Sequence[float],
    grid: Optional[dict[str, list]] = None,
    workers: int = 1,
) -> list[tuple[float, float]]:
    """Best grid-search LOOCV accuracy attainable at each mixing weight."""
    axes = dict(DEFAULT_GRID if grid is None else grid)
    axes.pop("alpha", None)
    rows = []
    for alpha in alphas:
        if not 0.0 <= alpha <= 1.0:
            raise InvalidValue(f"alpha values must lie in [0, 1], got {alpha}")
        result = grid_search(
            dataset, axes, workers=workers, base_config=replace(config, alpha=alpha)
        )
        rows.append((float(alpha), result.best().accuracy))
    return rows


def coefficient_ranking(models: Sequence[GrmlrModel]) -> list[tuple[str, float]]:
    """Taxa ranked by cross-class weight magnitude averaged over models.

    For each taxon j this is mean_m ||W_m[:, j]||_2, sorted descending;
    ties keep taxa order.
    """
    if not models:
        raise InvalidValue("coefficient_ranking needs at least one model")
    taxa = models[0].taxa_names
    for m in models[1:]:
        if m.taxa_names != taxa:
            raise TaxaMismatch("models do not share a taxa ordering")
    mags = np.mean(
        [np.linalg.norm(m.weights, axis=0) for m in models],
        axis=0,
    )
    order = np.argsort(-mags, kind="stable")
    return [(taxa[j], float(mags[j])) for j in order]


def write_eval_report(report: EvalReport, path: str | Path) -> None:
    _write_json(report.to_dict(), path)


def write_permutation_report(report: PermutationReport, path: str | Path) -> None:
    _write_json(report.to_dict(), path)


def write_ablation_report(reports: dict[str, EvalReport], path: str | Path) -> None:
    _write_json({name: rep.to_dict() for name, rep in reports.items()}, path)


def write_grid_csv(result: GridResult, path: str | Path) -> None:
    fields = list(GrmlrConfig.__dataclass_fields__)
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["rank", "index", "accuracy", "macro_f1", "error", *fields])
            for rank, e in enumerate(result.entries):
                cfg = e.config.to_dict()
                writer.writerow(
                    [
                        rank,
                        e.index,
                        _fmt(e.accuracy),
                        _fmt(e.macro_f1),
                        e.error or "",
                        *[cfg[f] for f in fields],
                    ]
                )
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def write_alpha_sweep_csv(rows: Sequence[tuple[float, float]], path: str | Path) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["alpha", "best_accuracy"])
            for alpha, acc in rows:
                writer.writerow([_fmt(alpha), _fmt(acc)])
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def write_coefficient_csv(ranking: Sequence[tuple[str, float]], path: str | Path) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["taxon", "mean_weight_magnitude"])
            for taxon, mag in ranking:
                writer.writerow([taxon, _fmt(mag)])
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _fmt(value: float) -> str:
    return repr(float(value))


def _write_json(payload: dict, path: str | Path) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
