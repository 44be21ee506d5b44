"""Graph-regularized multinomial logistic regression.

The classifier maps a p-dimensional feature vector z to K class
probabilities through a softmax over affine scores W z + b and is trained
by minimizing

    (1/n) sum_i s_i * (-log P(y_i | z_i))
        + lambda_l2 * ||W||_F^2
        + lambda_g  * Tr(W L W^T)

where L is the graph Laplacian over taxa and s_i are per-sample weights.
The bias b is excluded from both penalties. The objective is convex
(cross-entropy plus positive semi-definite quadratics), so the quasi-Newton
fit from W = 0, b = 0 is reproducible and initialization-independent.

Training consumes macrofauna counts only through the graph; prediction
needs nothing but an abundance table, which is the whole point of the
decoupled deployment scheme.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from .compositional import FeatureMatrix, clr_transform, raw_features
from .dataset import Dataset, StageLabels
from .ecograph import EcologicalGraph, build_graph
from .errors import (
    EmptyClass,
    InvalidValue,
    IoFailure,
    Misalignment,
    MissingLabels,
    MissingMacrofauna,
    NonConvergenceWarning,
    TaxaMismatch,
)

MODEL_FORMAT = "grmlr-model"
MODEL_FORMAT_VERSION = 1

# Gradient max-norm above which hitting the iteration cap is reported
# as non-convergence.
_NONCONVERGENCE_GRAD_NORM = 1e-3

_SCOPES = ("train", "all")
_FEATURE_MODES = ("clr", "raw")


@dataclass(frozen=True)
class GrmlrConfig:
    """All hyperparameters of the pipeline, grid-searchable by field name."""

    epsilon: float = 1e-6
    tau: float = 0.7
    gamma: float = 0.9
    alpha: float = 0.1
    lambda_l2: float = 0.02
    lambda_g: float = 5.0
    ftol: float = 1e-14
    gtol: float = 1e-9
    max_iters: int = 15000
    class_balanced: bool = True
    co_occurrence_scope: str = "train"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epsilon <= 0:
            raise InvalidValue(f"epsilon must be > 0, got {self.epsilon}")
        for name in ("tau", "gamma", "alpha"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidValue(f"{name} must be in [0, 1], got {v}")
        for name in ("lambda_l2", "lambda_g"):
            if getattr(self, name) < 0:
                raise InvalidValue(f"{name} must be >= 0")
        if self.ftol <= 0 or self.gtol <= 0:
            raise InvalidValue("ftol and gtol must be > 0")
        if self.max_iters < 1:
            raise InvalidValue("max_iters must be >= 1")
        if self.co_occurrence_scope not in _SCOPES:
            raise InvalidValue(
                f"co_occurrence_scope must be one of {_SCOPES}, got {self.co_occurrence_scope!r}"
            )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "GrmlrConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidValue(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)


@dataclass(eq=False)
class GrmlrModel:
    """Trained classifier: weights, bias, taxa ordering and label set."""

    weights: np.ndarray
    bias: np.ndarray
    taxa_names: list[str]
    label_set: tuple[str, ...]
    hyperparams: GrmlrConfig
    feature_mode: str = "clr"
    converged: bool = True
    n_iterations: int = 0
    final_loss: float = float("nan")
    loss_history: Optional[list[float]] = field(default=None, repr=False)

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float)
        K, p = self.weights.shape
        if self.bias.shape != (K,):
            raise InvalidValue(f"bias shape {self.bias.shape} for {K} classes")
        if len(self.taxa_names) != p or len(self.label_set) != K:
            raise InvalidValue("taxa_names/label_set lengths do not match W")
        if not (np.isfinite(self.weights).all() and np.isfinite(self.bias).all()):
            raise InvalidValue("model parameters must be finite")
        if self.feature_mode not in _FEATURE_MODES:
            raise InvalidValue(f"feature_mode must be one of {_FEATURE_MODES}")
        self.weights.setflags(write=False)
        self.bias.setflags(write=False)

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def n_taxa(self) -> int:
        return self.weights.shape[1]


def softmax_rows(scores: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction for overflow safety."""
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _check_taxa(model_taxa: list[str], other_taxa: list[str]) -> None:
    if model_taxa != other_taxa:
        missing = [t for t in model_taxa if t not in other_taxa]
        extra = [t for t in other_taxa if t not in model_taxa]
        if missing or extra:
            raise TaxaMismatch(f"missing taxa {missing}, unexpected taxa {extra}")
        raise TaxaMismatch("taxa are present but ordered differently")


def predict_proba(model: GrmlrModel, features: FeatureMatrix) -> np.ndarray:
    """n x K class probability matrix; rows sum to 1."""
    _check_taxa(model.taxa_names, features.taxa_names)
    return softmax_rows(features.values @ model.weights.T + model.bias)


def class_balanced_weights(labels: StageLabels) -> np.ndarray:
    """Per-sample weights n / (K * n_class); they sum to n."""
    n = len(labels.labels)
    K = len(labels.label_set)
    counts = {lab: 0 for lab in labels.label_set}
    for lab in labels.labels:
        counts[lab] += 1
    missing = [lab for lab, c in counts.items() if c == 0]
    if missing:
        raise EmptyClass(f"no samples for class(es) {missing}")
    return np.array([n / (K * counts[lab]) for lab in labels.labels], dtype=float)


def _aligned_arrays(
    model: GrmlrModel,
    features: FeatureMatrix,
    labels: StageLabels,
    graph: EcologicalGraph,
) -> tuple[np.ndarray, np.ndarray]:
    _check_taxa(model.taxa_names, features.taxa_names)
    if graph.taxa_names != model.taxa_names:
        raise Misalignment("graph taxa order does not match the model")
    if labels.site_ids != features.site_ids:
        raise Misalignment("labels and features are not site-aligned")
    if tuple(labels.label_set) != tuple(model.label_set):
        raise Misalignment("label set does not match the model")
    return features.values, labels.indices()


def loss(
    model: GrmlrModel,
    features: FeatureMatrix,
    labels: StageLabels,
    graph: EcologicalGraph,
    sample_weights: np.ndarray,
) -> float:
    """Weighted cross-entropy plus L2 and graph penalties (bias unpenalized)."""
    Z, y = _aligned_arrays(model, features, labels, graph)
    cfg = model.hyperparams
    value, _ = _objective(
        _pack(model.weights, model.bias),
        Z,
        y,
        model.n_classes,
        np.asarray(sample_weights, dtype=float),
        graph.laplacian,
        cfg.lambda_l2,
        cfg.lambda_g,
    )
    return float(value)


def loss_gradient(
    model: GrmlrModel,
    features: FeatureMatrix,
    labels: StageLabels,
    graph: EcologicalGraph,
    sample_weights: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Analytic gradient of :func:`loss` with respect to (W, b)."""
    Z, y = _aligned_arrays(model, features, labels, graph)
    cfg = model.hyperparams
    _, grad = _objective(
        _pack(model.weights, model.bias),
        Z,
        y,
        model.n_classes,
        np.asarray(sample_weights, dtype=float),
        graph.laplacian,
        cfg.lambda_l2,
        cfg.lambda_g,
    )
    K, p = model.weights.shape
    return grad[: K * p].reshape(K, p), grad[K * p :]


def _pack(W: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.concatenate([np.ravel(W), np.ravel(b)])


def _objective(
    theta: np.ndarray,
    Z: np.ndarray,
    y: np.ndarray,
    K: int,
    s: np.ndarray,
    laplacian: np.ndarray,
    lambda_l2: float,
    lambda_g: float,
) -> tuple[float, np.ndarray]:
    n, p = Z.shape
    W = theta[: K * p].reshape(K, p)
    b = theta[K * p :]
    scores = Z @ W.T + b
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    norm = e.sum(axis=1)
    P = e / norm[:, None]
    log_p_true = shifted[np.arange(n), y] - np.log(norm)
    data = -(s * log_p_true).sum() / n

    WL = W @ laplacian
    value = data + lambda_l2 * float((W * W).sum()) + lambda_g * float((W * WL).sum())

    R = P.copy()
    R[np.arange(n), y] -= 1.0
    R *= (s / n)[:, None]
    GW = R.T @ Z + 2.0 * lambda_l2 * W + 2.0 * lambda_g * WL
    gb = R.sum(axis=0)
    return value, _pack(GW, gb)


def fit_arrays(
    Z: np.ndarray,
    y: np.ndarray,
    K: int,
    sample_weights: np.ndarray,
    laplacian: np.ndarray,
    config: GrmlrConfig,
    track_history: bool = False,
) -> tuple[np.ndarray, np.ndarray, dict]:
    """Quasi-Newton minimization of the regularized objective from zero.

    Low-level core shared by :func:`fit` and the evaluation harness.
    Returns (W, b, info) where info records convergence diagnostics.
    """
    n, p = Z.shape
    args = (Z, y, K, sample_weights, laplacian, config.lambda_l2, config.lambda_g)
    x0 = np.zeros(K * p + K)
    history: Optional[list[float]] = None
    callback = None
    if track_history:
        history = [float(_objective(x0, *args)[0])]

        def callback(xk: np.ndarray) -> None:
            history.append(float(_objective(xk, *args)[0]))

    result = minimize(
        _objective,
        x0,
        args=args,
        jac=True,
        method="L-BFGS-B",
        callback=callback,
        options={"ftol": config.ftol, "gtol": config.gtol, "maxiter": config.max_iters},
    )
    grad_norm = float(np.abs(result.jac).max()) if result.jac is not None else float("inf")
    hit_cap = result.nit >= config.max_iters
    converged = not (hit_cap and grad_norm > _NONCONVERGENCE_GRAD_NORM)
    if not converged:
        warnings.warn(
            f"optimizer hit max_iters={config.max_iters} with gradient max-norm "
            f"{grad_norm:.3e}",
            NonConvergenceWarning,
            stacklevel=2,
        )
    W = result.x[: K * p].reshape(K, p)
    b = result.x[K * p :]
    info = {
        "converged": converged,
        "n_iterations": int(result.nit),
        "final_loss": float(result.fun),
        "grad_max_norm": grad_norm,
        "loss_history": history,
    }
    return W, b, info


def build_features(dataset_or_abundances, epsilon: float, feature_mode: str) -> FeatureMatrix:
    """Feature matrix for the requested mode ('clr' or 'raw')."""
    abundances = getattr(dataset_or_abundances, "abundances", dataset_or_abundances)
    if feature_mode == "clr":
        return clr_transform(abundances, epsilon)
    if feature_mode == "raw":
        return raw_features(abundances)
    raise InvalidValue(f"feature_mode must be one of {_FEATURE_MODES}, got {feature_mode!r}")


def fit(
    dataset: Dataset,
    config: GrmlrConfig,
    feature_mode: str = "clr",
    track_history: bool = False,
) -> tuple[GrmlrModel, EcologicalGraph]:
    """Train a model on a labelled dataset; returns it with the graph used.

    Raises
    ------
    MissingLabels
        If the dataset has no stage labels.
    MissingMacrofauna
        If alpha > 0 but macrofauna counts are absent.
    """
    if dataset.stages is None:
        raise MissingLabels("fit requires stage labels")
    if config.alpha > 0.0 and dataset.macrofauna is None:
        raise MissingMacrofauna("alpha > 0 requires macrofauna counts")
    features = build_features(dataset, config.epsilon, feature_mode)
    graph = build_graph(
        features, dataset.macrofauna, tau=config.tau, gamma=config.gamma, alpha=config.alpha
    )
    labels = dataset.stages
    s = class_balanced_weights(labels) if config.class_balanced else np.ones(dataset.n_sites)
    K = len(labels.label_set)
    W, b, info = fit_arrays(
        features.values,
        labels.indices(),
        K,
        s,
        graph.laplacian,
        config,
        track_history=track_history,
    )
    model = GrmlrModel(
        weights=W,
        bias=b,
        taxa_names=list(features.taxa_names),
        label_set=tuple(labels.label_set),
        hyperparams=config,
        feature_mode=feature_mode,
        converged=info["converged"],
        n_iterations=info["n_iterations"],
        final_loss=info["final_loss"],
        loss_history=info["loss_history"],
    )
    return model, graph


def predict(model: GrmlrModel, abundances) -> StageLabels:
    """Stage labels for an abundance table, using only microbial features.

    Ties in the probability row resolve to the lowest label index.
    """
    features = build_features(abundances, model.hyperparams.epsilon, model.feature_mode)
    proba = predict_proba(model, features)
    picks = np.argmax(proba, axis=1)
    labels = [model.label_set[i] for i in picks]
    return StageLabels(list(features.site_ids), labels, tuple(model.label_set))


def save_model(model: GrmlrModel, path: str | Path) -> None:
    """Serialize to the versioned JSON model format (full precision)."""
    payload = {
        "format": MODEL_FORMAT,
        "format_version": MODEL_FORMAT_VERSION,
        "label_set": list(model.label_set),
        "taxa_names": list(model.taxa_names),
        "weights": [[float(v) for v in row] for row in model.weights],
        "bias": [float(v) for v in model.bias],
        "feature_mode": model.feature_mode,
        "converged": model.converged,
        "n_iterations": model.n_iterations,
        "final_loss": model.final_loss,
        "config": model.hyperparams.to_dict(),
    }
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_model(path: str | Path) -> GrmlrModel:
    """Load a model written by :func:`save_model`."""
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidValue(f"{path}: not a valid model file: {exc}") from exc
    if payload.get("format") != MODEL_FORMAT:
        raise InvalidValue(f"{path}: not a {MODEL_FORMAT} file")
    if payload.get("format_version") != MODEL_FORMAT_VERSION:
        raise InvalidValue(
            f"{path}: unsupported format version {payload.get('format_version')}"
        )
    return GrmlrModel(
        weights=np.array(payload["weights"], dtype=float),
        bias=np.array(payload["bias"], dtype=float),
        taxa_names=list(payload["taxa_names"]),
        label_set=tuple(payload["label_set"]),
        hyperparams=GrmlrConfig.from_dict(payload["config"]),
        feature_mode=payload.get("feature_mode", "clr"),
        converged=bool(payload.get("converged", True)),
        n_iterations=int(payload.get("n_iterations", 0)),
        final_loss=float(payload.get("final_loss", float("nan"))),
    )
