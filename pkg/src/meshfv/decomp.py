"""PCA by SVD of the centred descriptor matrix (no whitening)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _io
from .errors import DimensionError, ValidationError


@dataclass(frozen=True, eq=False)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (D, R), orthonormal rows
    explained_variance: np.ndarray  # (D,), descending

    @property
    def D(self) -> int:
        return self.components.shape[0]

    @property
    def n_features(self) -> int:
        return self.components.shape[1]


def _rank(s: np.ndarray, shape) -> int:
    if s.size == 0:
        return 0
    tol = s[0] * max(shape) * np.finfo(float).eps
    return int(np.sum(s > tol))


def fit_pca(descriptors, D: int) -> PcaModel:
    """Fit a D-component PCA to the rows of ``descriptors``.

    Each component is flipped so its largest-magnitude entry is positive,
    which makes the fit reproducible across LAPACK builds.
    """
    X = np.asarray(descriptors, dtype=float)
    if X.ndim != 2:
        raise DimensionError(f"descriptors must be 2-D, got shape {X.shape}")
    n, R = X.shape
    if not 1 <= D <= R:
        raise ValidationError(f"D={D} must lie in [1, {R}]")
    mean = X.mean(axis=0)
    Xc = X - mean
    _, s, Vt = np.linalg.svd(Xc, full_matrices=False)
    rank = _rank(s, Xc.shape)
    if D > rank:
        raise ValidationError(f"D={D} exceeds the rank of the centred descriptors (achievable rank {rank})")
    comps = Vt[:D].copy()
    pivot = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(D), pivot])
    comps *= signs[:, None]
    var = s[:D] ** 2 / max(n - 1, 1)
    return PcaModel(mean, comps, var)


def project(model: PcaModel, mad) -> np.ndarray:
    """components @ (mad - mean); accepts one vector or a batch of rows."""
    mad = np.asarray(mad, dtype=float)
    if mad.shape[-1] != model.n_features:
        raise DimensionError(f"descriptor length {mad.shape[-1]} != model input dimension {model.n_features}")
    return (mad - model.mean) @ model.components.T


def reconstruct(model: PcaModel, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != model.D:
        raise DimensionError(f"projection length {z.shape[-1]} != D={model.D}")
    return z @ model.components + model.mean


def save_pca(model: PcaModel, path, meta: dict | None = None):
    return _io.save_model(
        path,
        "pca",
        {"mean": model.mean, "components": model.components, "explained_variance": model.explained_variance},
        dict(meta or {}, D=model.D, n_features=model.n_features),
    )


def load_pca(path) -> PcaModel:
    arrays, _ = _io.load_model(path, "pca")
    return PcaModel(arrays["mean"], arrays["components"], arrays["explained_variance"])
