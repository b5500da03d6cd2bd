"""Local meshes around regions: functional p-nearest neighbours and
ridge-regression arc weights (mesh arc descriptors, MADs)."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _io
from .dataio import RegionSample
from .errors import DimensionError, NumericalError, ValidationError


@dataclass(frozen=True)
class NeighborhoodSpec:
    """Mesh size and ridge penalty.

    ``standardize`` z-scores every region series before fitting;
    ``absolute`` ranks neighbours by |r| instead of signed r.
    """

    p: int
    ridge_lambda: float = 0.5
    standardize: bool = True
    absolute: bool = False

    def __post_init__(self):
        if self.p < 1:
            raise ValidationError(f"p must be >= 1, got {self.p}")
        if self.ridge_lambda < 0:
            raise ValidationError(f"ridge_lambda must be >= 0, got {self.ridge_lambda}")

    def check(self, R: int):
        if self.p > R - 1:
            raise ValidationError(f"p={self.p} exceeds R-1={R - 1}")


@dataclass(frozen=True)
class MadVector:
    seed_region: int
    weights: np.ndarray

    @property
    def neighbors(self) -> np.ndarray:
        return np.flatnonzero(self.weights)


@dataclass(frozen=True, eq=False)
class MadSet:
    """All R descriptors of one sample; row i of ``weights`` is a_i."""

    subject_id: str
    task_label: int
    weights: np.ndarray
    residual_vars: np.ndarray
    p: int
    ridge_lambda: float
    standardized: bool = True

    @property
    def R(self) -> int:
        return self.weights.shape[0]

    def vector(self, i: int) -> MadVector:
        return MadVector(i, self.weights[i])

    @property
    def vectors(self) -> list:
        return [self.vector(i) for i in range(self.R)]

    def meta(self) -> dict:
        return {
            "subject_id": self.subject_id,
            "task_label": self.task_label,
            "p": self.p,
            "ridge_lambda": self.ridge_lambda,
            "standardized": self.standardized,
        }


def standardize_series(series: np.ndarray) -> np.ndarray:
    series = np.asarray(series, dtype=float)
    centered = series - series.mean(axis=1, keepdims=True)
    return centered / centered.std(axis=1, keepdims=True)


def correlation_matrix(series: np.ndarray) -> np.ndarray:
    z = standardize_series(series)
    return (z @ z.T) / z.shape[1]


def _rank_neighbors(corr_row: np.ndarray, i: int, p: int, absolute: bool) -> np.ndarray:
    score = np.abs(corr_row) if absolute else np.asarray(corr_row, dtype=float)
    candidates = np.array([j for j in range(score.size) if j != i])
    # lexsort: last key is primary; ties go to the lower index
    order = np.lexsort((candidates, -score[candidates]))
    return candidates[order[:p]]


def pearson_neighbors(sample, i: int, p: int, absolute: bool = False, corr: np.ndarray | None = None) -> np.ndarray:
    """Indices of the ``p`` regions most correlated with region ``i``.

    Ranks by signed Pearson r (or |r| when ``absolute``), highest first;
    equal scores go to the lower region index.
    """
    series = sample.series if isinstance(sample, RegionSample) else np.asarray(sample, dtype=float)
    R = series.shape[0]
    if not 0 <= i < R:
        raise ValidationError(f"region index {i} out of range for R={R}")
    if not 1 <= p <= R - 1:
        raise ValidationError(f"p={p} must lie in [1, {R - 1}]")
    if corr is None:
        z = standardize_series(series)
        corr_row = z @ z[i] / z.shape[1]
    else:
        corr_row = corr[i]
    return _rank_neighbors(corr_row, i, p, absolute)


def ridge_solve(G: np.ndarray, y: np.ndarray, ridge_lambda: float) -> np.ndarray:
    """Solve (G^T G + lambda I) a = G^T y, G of shape (T, p)."""
    gram = G.T @ G
    if ridge_lambda:
        gram = gram + ridge_lambda * np.eye(gram.shape[0])
    rhs = G.T @ y
    if ridge_lambda == 0 and np.linalg.matrix_rank(gram) < gram.shape[0]:
        raise NumericalError("singular Gram matrix with ridge_lambda=0; use ridge_lambda > 0")
    try:
        return np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"ridge system could not be solved ({exc}); use ridge_lambda > 0") from exc


def fit_mesh(sample, i: int, spec: NeighborhoodSpec, neighbors=None, _prepared=None):
    """Arc weights of the mesh around region ``i``.

    Returns ``(MadVector, residual_variance)``. Non-neighbours get weight 0.
    """
    series = sample.series if isinstance(sample, RegionSample) else np.asarray(sample, dtype=float)
    R, T = series.shape
    spec.check(R)
    if _prepared is None:
        _prepared = standardize_series(series) if spec.standardize else series
    Y = _prepared
    if neighbors is None:
        neighbors = pearson_neighbors(series, i, spec.p, spec.absolute)
    neighbors = np.asarray(neighbors, dtype=int)
    if T <= spec.p:
        warnings.warn(f"T={T} <= p={spec.p}: the mesh regression is underdetermined", RuntimeWarning, stacklevel=2)
    G = Y[neighbors].T
    y = Y[i]
    coef = ridge_solve(G, y, spec.ridge_lambda)
    weights = np.zeros(R)
    weights[neighbors] = coef
    resid = y - G @ coef
    return MadVector(i, weights), float(resid @ resid / T)


def compute_mads(sample: RegionSample, spec: NeighborhoodSpec) -> MadSet:
    """Fit the mesh of every region of ``sample``."""
    R = sample.R
    spec.check(R)
    corr = correlation_matrix(sample.series)
    prepared = standardize_series(sample.series) if spec.standardize else np.asarray(sample.series)
    weights = np.zeros((R, R))
    resid = np.zeros(R)
    for i in range(R):
        nb = _rank_neighbors(corr[i], i, spec.p, spec.absolute)
        try:
            vec, resid[i] = fit_mesh(sample.series, i, spec, neighbors=nb, _prepared=prepared)
        except NumericalError as exc:
            raise NumericalError(f"{sample.key_str()} region {i}: {exc}") from exc
        weights[i] = vec.weights
    if not np.all(np.isfinite(weights)):
        raise NumericalError(f"{sample.key_str()}: non-finite mesh weights")
    weights.setflags(write=False)
    return MadSet(sample.subject_id, sample.task_label, weights, resid, spec.p, spec.ridge_lambda, spec.standardize)


def compute_all_mads(samples, spec: NeighborhoodSpec) -> list:
    return [compute_mads(s, spec) for s in samples]


def concatenate(mad_set) -> np.ndarray:
    """Row-major [a_1, a_2, ..., a_R] of length R^2."""
    W = mad_set.weights if isinstance(mad_set, MadSet) else np.asarray(mad_set)
    return np.asarray(W, dtype=float).reshape(-1).copy()


def split(vector, R: int) -> np.ndarray:
    """Inverse of :func:`concatenate`: the (R, R) weight matrix."""
    vector = np.asarray(vector, dtype=float)
    if vector.size != R * R:
        raise DimensionError(f"vector of length {vector.size} is not R^2 for R={R}")
    return vector.reshape(R, R).copy()


# --------------------------------------------------------------------------
# storage: <stem>.csv (R x R) + <stem>.json sidecar


def save_madset(mad_set: MadSet, stem, provenance: dict | None = None) -> Path:
    stem = Path(stem)
    _io.atomic_write_text(stem.with_suffix(".csv"), _io.matrix_to_csv(mad_set.weights))
    meta = mad_set.meta()
    meta["residual_vars"] = [float(v) for v in mad_set.residual_vars]
    if provenance is not None:
        meta["provenance"] = provenance
    return _io.write_json(stem.with_suffix(".json"), meta)


def load_madset(stem) -> MadSet:
    stem = Path(stem)
    meta = _io.read_json(stem.with_suffix(".json"))
    W = _io.read_csv_matrix(stem.with_suffix(".csv"))
    if W.shape[0] != W.shape[1]:
        raise DimensionError(f"{stem}.csv is {W.shape}, expected square")
    return MadSet(
        meta["subject_id"],
        int(meta["task_label"]),
        W,
        np.asarray(meta.get("residual_vars", np.zeros(W.shape[0])), dtype=float),
        int(meta["p"]),
        float(meta["ridge_lambda"]),
        bool(meta["standardized"]),
    )
