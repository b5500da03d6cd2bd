"""Linear one-vs-rest SVMs, subject-disjoint cross-validation and grid
search over mesh size, PCA dimension, dictionary size and encoder."""

from __future__ import annotations

import itertools
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.exceptions import ConvergenceWarning
from sklearn.svm import LinearSVC

from . import _io
from .clustering import fit_gmm, fit_kmeans, save_gmm, save_kmeans
from .config import PipelineConfig, derive_seed
from .dataio import DatasetManifest, FoldPlan
from .decomp import fit_pca, project, save_pca
from .encoding import encode
from .errors import MeshFVError, ValidationError
from .mesh import NeighborhoodSpec, compute_all_mads

logger = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# SVM


@dataclass(frozen=True, eq=False)
class LinearModel:
    weights: np.ndarray  # (C, F)
    biases: np.ndarray  # (C,)
    classes: np.ndarray  # (C,) sorted labels

    @property
    def n_features(self) -> int:
        return self.weights.shape[1]

    def decision_function(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.n_features:
            raise ValidationError(f"{X.shape[-1]} features given, model expects {self.n_features}")
        return X @ self.weights.T + self.biases

    def predict(self, X) -> np.ndarray:
        # argmax returns the first maximum: ties go to the lowest class
        return self.classes[np.argmax(self.decision_function(X), axis=1)]


def svm_objective(w, b, X, y_pm, svm_C: float) -> float:
    """0.5 (|w|^2 + b^2) + svm_C * mean hinge loss, for labels in {-1, +1}."""
    margins = y_pm * (X @ w + b)
    return 0.5 * (w @ w + b * b) + svm_C * np.mean(np.maximum(0.0, 1.0 - margins))


def train_svm(features, labels, svm_C: float = 1.0, tol: float = 1e-6, max_iter: int = 200_000) -> LinearModel:
    """One-vs-rest linear SVMs.

    Each binary problem minimises ``svm_objective`` (hinge loss averaged over
    samples, bias penalised like a weight) by dual coordinate descent. The
    loss is a mean, so duplicating the training set leaves the optimum
    unchanged.
    """
    X = np.asarray(features, dtype=float)
    y = np.asarray(labels)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValidationError(f"features {X.shape} and labels {y.shape} do not line up")
    if X.shape[1] == 0:
        raise ValidationError("no features to train on")
    classes = np.unique(y)
    if classes.size < 2:
        raise ValidationError("training data holds a single class; need at least two")
    n = X.shape[0]
    W = np.zeros((classes.size, X.shape[1]))
    b = np.zeros(classes.size)
    for c, label in enumerate(classes):
        target = np.where(y == label, 1, -1)
        svc = LinearSVC(
            C=svm_C / n,
            loss="hinge",
            dual=True,
            fit_intercept=True,
            intercept_scaling=1.0,
            tol=tol,
            max_iter=max_iter,
            random_state=0,
        )
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            svc.fit(X, target)
        W[c] = svc.coef_[0]
        b[c] = svc.intercept_[0]
    return LinearModel(W, b, classes)


# --------------------------------------------------------------------------
# per-fold fitting


@dataclass(frozen=True, eq=False)
class FoldEncoder:
    """PCA + dictionary fitted on one fold's training descriptors."""

    encoder: str
    pca: object | None
    dictionary: object | None
    normalize: bool = True

    def descriptors(self, mad_set) -> np.ndarray:
        A = np.asarray(mad_set.weights, dtype=float)
        return project(self.pca, A) if self.pca is not None else A

    def transform(self, mad_sets) -> np.ndarray:
        return np.vstack([encode(self.encoder, self.dictionary, self.descriptors(m), self.normalize) for m in mad_sets])

    def save(self, directory, meta: dict | None = None) -> dict:
        """Write the fitted models; returns {name: sha256 of its JSON}."""
        hashes = {}
        if self.pca is not None:
            path = save_pca(self.pca, f"{directory}/pca", meta)
            hashes["pca"] = _io.sha256_file(path)
        if self.dictionary is not None:
            saver = save_gmm if self.encoder == "fv" else save_kmeans
            path = saver(self.dictionary, f"{directory}/dictionary", meta)
            hashes["dictionary"] = _io.sha256_file(path)
        return hashes


def fit_fold_encoder(train_mads, config: PipelineConfig, fold: int = 0) -> FoldEncoder:
    """Fit PCA and the dictionary on training MADs only."""
    descriptors = np.vstack([m.weights for m in train_mads])
    pca = None
    if config.pca_dim is not None:
        pca = fit_pca(descriptors, config.pca_dim)
        descriptors = project(pca, descriptors)
    dictionary = None
    K = config.dictionary_k
    if config.encoder == "fv":
        dictionary = fit_gmm(
            descriptors,
            K,
            seed=derive_seed(config.seed, "gmm", fold),
            max_iter=config.gmm_max_iter,
            tol=config.gmm_tol,
            floor_scale=config.variance_floor_scale,
        )
    elif config.encoder in ("vlad", "bow"):
        dictionary = fit_kmeans(descriptors, K, seed=derive_seed(config.seed, "kmeans", fold))
    return FoldEncoder(config.encoder, pca, dictionary, config.normalize)


# --------------------------------------------------------------------------
# reports


@dataclass
class CvReport:
    fold_accuracies: list
    confusion_counts: np.ndarray
    classes: list
    hyperparameters: dict
    fold_seed: int | None = None
    n_folds: int = 0
    notes: list = field(default_factory=list)

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.fold_accuracies))

    @property
    def confusion(self) -> np.ndarray:
        counts = np.asarray(self.confusion_counts, dtype=float)
        totals = counts.sum(axis=1, keepdims=True)
        return np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)

    @property
    def per_class_accuracy(self) -> np.ndarray:
        return 100.0 * np.diag(self.confusion)

    def to_dict(self) -> dict:
        return {
            "mean_accuracy": round(self.mean_accuracy, 10),
            "fold_accuracies": [round(a, 10) for a in self.fold_accuracies],
            "classes": [int(c) for c in self.classes],
            "confusion": [[round(v, 12) for v in row] for row in self.confusion.tolist()],
            "confusion_counts": np.asarray(self.confusion_counts, dtype=int).tolist(),
            "per_class_accuracy": [round(v, 10) for v in self.per_class_accuracy.tolist()],
            "hyperparameters": self.hyperparameters,
            "fold_seed": self.fold_seed,
            "n_folds": self.n_folds,
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CvReport":
        return cls(
            list(doc["fold_accuracies"]),
            np.asarray(doc["confusion_counts"]),
            list(doc["classes"]),
            dict(doc["hyperparameters"]),
            doc.get("fold_seed"),
            doc.get("n_folds", len(doc["fold_accuracies"])),
            list(doc.get("notes", [])),
        )

    def confusion_csv(self) -> str:
        header = "true\\pred," + ",".join(str(c) for c in self.classes)
        lines = [header]
        for c, row in zip(self.classes, self.confusion):
            lines.append(f"{c}," + ",".join(f"{v:.12g}" for v in row))
        return "\n".join(lines) + "\n"


def _tally(report_classes, y_true, y_pred):
    index = {c: j for j, c in enumerate(report_classes)}
    counts = np.zeros((len(report_classes), len(report_classes)), dtype=int)
    for t, p in zip(y_true, y_pred):
        counts[index[t], index[p]] += 1
    return counts


def _check_disjoint(subject_ids, fold_plan: FoldPlan):
    missing = set(subject_ids) - set(fold_plan.assignment)
    if missing:
        raise ValidationError(f"fold plan does not cover subjects {sorted(missing)[:5]}")


def evaluate_features(features, labels, subject_ids, fold_plan: FoldPlan, svm_C: float = 1.0, hyperparameters=None):
    """Cross-validate a linear SVM on fixed, precomputed features.

    Only for features computed per sample without any fitted state (e.g.
    the BOLD and Pearson baselines).
    """
    X = np.asarray(features, dtype=float)
    y = np.asarray(labels)
    _check_disjoint(subject_ids, fold_plan)
    classes = sorted(np.unique(y).tolist())
    counts = np.zeros((len(classes), len(classes)), dtype=int)
    accs = []
    for fold in range(fold_plan.n_folds):
        tr, te = fold_plan.split(subject_ids, fold)
        if te.size == 0:
            continue
        model = train_svm(X[tr], y[tr], svm_C)
        pred = model.predict(X[te])
        accs.append(100.0 * float(np.mean(pred == y[te])))
        counts += _tally(classes, y[te], pred)
    return CvReport(accs, counts, classes, dict(hyperparameters or {}, svm_C=svm_C), fold_plan.seed, fold_plan.n_folds)


def _mads_for(data, config: PipelineConfig, mads):
    """Descriptors for ``data`` (a manifest, or already a list of MadSets)."""
    if mads is None and not isinstance(data, DatasetManifest):
        return list(data)
    if mads is not None:
        if len(mads) != len(data.samples if isinstance(data, DatasetManifest) else data):
            raise ValidationError(f"{len(mads)} MadSets for {len(data)} samples")
        return mads
    spec = NeighborhoodSpec(config.p, config.ridge_lambda, config.standardize, config.absolute_correlation)
    return compute_all_mads(data.samples, spec)


def _sample_index(manifest_or_mads):
    if isinstance(manifest_or_mads, DatasetManifest):
        samples = manifest_or_mads.samples
    else:
        samples = manifest_or_mads
    return [s.subject_id for s in samples], np.array([s.task_label for s in samples])


class StageError(MeshFVError):
    """Wraps a failure with the fold and pipeline stage it happened in."""

    def __init__(self, fold, stage, cause):
        super().__init__(f"fold {fold}, stage {stage}: {cause}")
        self.fold, self.stage, self.cause = fold, stage, cause
        self.exit_code = getattr(cause, "exit_code", 1)


def fold_features(mads, labels, subject_ids, config: PipelineConfig, fold_plan: FoldPlan, fold: int):
    """Fit PCA/dictionary on the training folds and encode both splits."""
    tr, te = fold_plan.split(subject_ids, fold)
    try:
        enc = fit_fold_encoder([mads[i] for i in tr], config, fold)
    except MeshFVError as exc:
        raise StageError(fold, "dictionary", exc) from exc
    try:
        Xtr = enc.transform([mads[i] for i in tr])
        Xte = enc.transform([mads[i] for i in te]) if te.size else np.zeros((0, Xtr.shape[1]))
    except MeshFVError as exc:
        raise StageError(fold, "encode", exc) from exc
    return enc, tr, te, Xtr, Xte


def cross_validate(manifest, config: PipelineConfig, fold_plan: FoldPlan, mads=None) -> CvReport:
    """Subject-disjoint CV of the MAD -> (PCA) -> dictionary -> encoder -> SVM pipeline.

    Everything with fitted state is learned from the training folds only.
    ``manifest`` may also be a list of MadSets; otherwise ``mads`` may be
    passed to reuse precomputed descriptors.
    """
    mads = _mads_for(manifest, config, mads)
    subject_ids, labels = _sample_index(manifest)
    _check_disjoint(subject_ids, fold_plan)
    classes = sorted(np.unique(labels).tolist())
    counts = np.zeros((len(classes), len(classes)), dtype=int)
    accs = []
    for fold in range(fold_plan.n_folds):
        _, tr, te, Xtr, Xte = fold_features(mads, labels, subject_ids, config, fold_plan, fold)
        if te.size == 0:
            continue
        try:
            model = train_svm(Xtr, labels[tr], config.svm_C)
        except MeshFVError as exc:
            raise StageError(fold, "svm", exc) from exc
        pred = model.predict(Xte)
        accs.append(100.0 * float(np.mean(pred == labels[te])))
        counts += _tally(classes, labels[te], pred)
    return CvReport(accs, counts, classes, config.hyperparameters(), fold_plan.seed, fold_plan.n_folds)


# --------------------------------------------------------------------------
# grid search


@dataclass
class GridResult:
    cells: list  # dicts: p, d, k, encoder, mean_accuracy, status, error
    reports: list

    def best(self) -> list:
        """Max accuracy over (k, d) for every (p, encoder, with/without PCA)."""
        groups = {}
        for cell in self.cells:
            if cell["status"] != "ok":
                continue
            key = (cell["p"], cell["encoder"], cell["d"] is not None)
            if key not in groups or cell["mean_accuracy"] > groups[key]["mean_accuracy"]:
                groups[key] = cell
        return [
            {"p": p, "encoder": enc, "pca": pca, "mean_accuracy": c["mean_accuracy"], "d": c["d"], "k": c["k"]}
            for (p, enc, pca), c in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1], not kv[0][2]))
        ]

    def to_csv(self) -> str:
        lines = ["row_type,p,encoder,pca,d,k,mean_accuracy,status"]
        for c in self.cells:
            acc = "" if c["mean_accuracy"] is None else f"{c['mean_accuracy']:.10g}"
            d = "none" if c["d"] is None else c["d"]
            pca = "with_pca" if c["d"] is not None else "no_pca"
            lines.append(f"cell,{c['p']},{c['encoder']},{pca},{d},{c['k']},{acc},{c['status']}")
        for b in self.best():
            d = "none" if b["d"] is None else b["d"]
            pca = "with_pca" if b["pca"] else "no_pca"
            lines.append(f"max,{b['p']},{b['encoder']},{pca},{d},{b['k']},{b['mean_accuracy']:.10g},ok")
        return "\n".join(lines) + "\n"


def grid_search(
    manifest: DatasetManifest,
    config: PipelineConfig,
    fold_plan: FoldPlan,
    p_values=None,
    d_values=None,
    k_values=None,
    encoders=None,
    mads_cache: dict | None = None,
) -> GridResult:
    """Cross product of the grids; failed cells are recorded, not raised.

    Grid values default to ``config.grid`` entries, then to the single
    value in ``config``. ``d`` may contain ``None`` for "no PCA".
    """
    grid = config.grid or {}
    p_values = list(p_values or grid.get("p") or [config.p])
    d_values = list(d_values if d_values is not None else grid.get("d", grid.get("pca_dim", [config.pca_dim])))
    d_values = [None if (d is None or str(d).lower() == "none") else int(d) for d in d_values]
    k_values = list(k_values or grid.get("k") or [config.dictionary_k])
    encoders = list(encoders or grid.get("encoder") or [config.encoder])
    cache = {} if mads_cache is None else mads_cache

    cells, reports = [], []
    for p, enc, d, k in itertools.product(p_values, encoders, d_values, k_values):
        cell = {"p": p, "encoder": enc, "d": d, "k": k, "mean_accuracy": None, "status": "ok", "error": None}
        try:
            cfg = config.replace(p=p, encoder=enc, pca_dim=d, dictionary_k=k, dictionary=None)
            if p not in cache:
                cache[p] = _mads_for(manifest, cfg, None)
            report = cross_validate(manifest, cfg, fold_plan, mads=cache[p])
            cell["mean_accuracy"] = report.mean_accuracy
        except MeshFVError as exc:
            logger.warning("grid cell p=%s encoder=%s d=%s k=%s failed: %s", p, enc, d, k, exc)
            cell["status"] = "failed"
            cell["error"] = str(exc)
            report = None
        cells.append(cell)
        reports.append(report)
    return GridResult(cells, reports)
