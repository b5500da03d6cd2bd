"""Connectivity dictionaries: k-means (Lloyd iterations from k-means++
seeding) and diagonal-covariance Gaussian mixtures fitted by EM."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import _io
from .errors import DimensionError, NumericalError, ValidationError

logger = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)
_CHUNK = 1 << 20


def _as_2d(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise DimensionError(f"descriptors must be 2-D, got shape {X.shape}")
    return X


def squared_distances(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    """(N, K) squared Euclidean distances, from explicit differences.

    Avoids the |x|^2 - 2x.c + |c|^2 expansion so exact ties stay exact.
    """
    X = _as_2d(X)
    C = _as_2d(C)
    if X.shape[1] != C.shape[1]:
        raise DimensionError(f"descriptor dimension {X.shape[1]} != dictionary dimension {C.shape[1]}")
    out = np.empty((X.shape[0], C.shape[0]))
    rows = max(1, _CHUNK // max(1, C.size))
    for start in range(0, X.shape[0], rows):
        diff = X[start : start + rows, None, :] - C[None, :, :]
        out[start : start + rows] = np.einsum("nkd,nkd->nk", diff, diff)
    return out


# --------------------------------------------------------------------------
# k-means


@dataclass(frozen=True, eq=False)
class KMeansModel:
    centroids: np.ndarray
    seed: int | None = None
    inertia_trace: tuple = ()
    n_iter: int = 0

    @property
    def K(self) -> int:
        return self.centroids.shape[0]

    @property
    def D(self) -> int:
        return self.centroids.shape[1]


def _kmeanspp(X, K, rng):
    n = X.shape[0]
    centers = [X[rng.integers(n)]]
    d2 = squared_distances(X, centers[0][None])[:, 0]
    for _ in range(1, K):
        total = d2.sum()
        idx = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers.append(X[idx])
        d2 = np.minimum(d2, squared_distances(X, X[idx][None])[:, 0])
    return np.array(centers)


def fit_kmeans(descriptors, K: int, seed: int = 0, max_iter: int = 300) -> KMeansModel:
    """Lloyd's algorithm from k-means++ seeding.

    Stops when assignments no longer change. A cluster that goes empty is
    re-seeded at the point farthest from its current centroid.
    """
    X = _as_2d(descriptors)
    if K < 1:
        raise ValidationError(f"K must be >= 1, got {K}")
    n_distinct = np.unique(X, axis=0).shape[0]
    if K > n_distinct:
        raise ValidationError(f"K={K} exceeds the number of distinct descriptors ({n_distinct})")
    rng = np.random.default_rng(seed)
    C = _kmeanspp(X, K, rng)
    labels = None
    trace = []
    it = 0
    for it in range(1, max_iter + 1):
        d2 = squared_distances(X, C)
        new_labels = np.argmin(d2, axis=1)
        trace.append(float(d2[np.arange(X.shape[0]), new_labels].sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        counts = np.bincount(labels, minlength=K)
        C = np.zeros_like(C)
        np.add.at(C, labels, X)
        nonempty = counts > 0
        C[nonempty] /= counts[nonempty, None]
        if not nonempty.all():
            own = d2[np.arange(X.shape[0]), labels].copy()
            for k in np.flatnonzero(~nonempty):
                far = int(np.argmax(own))
                C[k] = X[far]
                own[far] = -1.0
                labels[far] = k
    return KMeansModel(C, seed, tuple(trace), it)


def assign(model, descriptors) -> np.ndarray:
    """Nearest centroid per row; ties go to the lowest index."""
    C = model.centroids if isinstance(model, KMeansModel) else np.asarray(model)
    X = np.asarray(descriptors, dtype=float)
    labels = np.argmin(squared_distances(X, C), axis=1)
    return labels if X.ndim == 2 else int(labels[0])


def inertia(model: KMeansModel, descriptors) -> float:
    d2 = squared_distances(descriptors, model.centroids)
    return float(d2.min(axis=1).sum())


# --------------------------------------------------------------------------
# Gaussian mixture


@dataclass(frozen=True, eq=False)
class GmmModel:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, D)
    variances: np.ndarray  # (K, D), diagonal of each covariance
    seed: int | None = None
    variance_floor: float = 0.0
    log_likelihood_trace: tuple = field(default=())
    converged: bool = True

    @property
    def K(self) -> int:
        return self.means.shape[0]

    @property
    def D(self) -> int:
        return self.means.shape[1]


def _log_gaussians(X: np.ndarray, means, variances) -> np.ndarray:
    """(N, K) matrix of log N(x_n; mu_k, diag(var_k))."""
    D = X.shape[1]
    prec = 1.0 / variances
    quad = (X * X) @ prec.T - 2.0 * X @ (means * prec).T + np.sum(means * means * prec, axis=1)
    # the expansion can go slightly negative from rounding
    np.maximum(quad, 0.0, out=quad)
    return -0.5 * (D * LOG_2PI + np.log(variances).sum(axis=1) + quad)


def _weighted_log_densities(model, X):
    X = _as_2d(X)
    if X.shape[1] != model.D:
        raise DimensionError(f"descriptor dimension {X.shape[1]} != model dimension {model.D}")
    return np.log(model.weights) + _log_gaussians(X, model.means, model.variances)


def posterior(model: GmmModel, descriptors) -> np.ndarray:
    """Soft assignments gamma, shape (N, K) (or (K,) for one descriptor)."""
    single = np.ndim(descriptors) == 1
    logp = _weighted_log_densities(model, descriptors)
    gamma = np.exp(logp - logsumexp(logp, axis=1, keepdims=True))
    return gamma[0] if single else gamma


def log_likelihood(model: GmmModel, descriptors) -> float:
    return float(logsumexp(_weighted_log_densities(model, descriptors), axis=1).sum())


def variance_floor(X: np.ndarray, scale: float = 1e-6) -> float:
    floor = scale * float(np.mean(X.var(axis=0)))
    return floor if floor > 0 else scale


def fit_gmm(
    descriptors,
    K: int,
    seed: int = 0,
    max_iter: int = 200,
    tol: float = 1e-6,
    floor_scale: float = 1e-6,
) -> GmmModel:
    """EM for a K-component diagonal GMM, initialised from k-means.

    Runs until the relative change of the log-likelihood drops below
    ``tol`` or ``max_iter`` M-steps have been taken. Variances are clipped
    at ``floor_scale`` times the mean per-dimension data variance; the
    clipped update is the exact constrained maximiser, so the log-likelihood
    trace stays monotone.
    """
    X = _as_2d(descriptors)
    N, D = X.shape
    if K < 1 or K > N:
        raise ValidationError(f"K={K} must lie in [1, {N}] (number of descriptors)")
    floor = variance_floor(X, floor_scale)

    km = fit_kmeans(X, K, seed=seed)
    labels = assign(km, X)
    counts = np.bincount(labels, minlength=K).astype(float)
    weights = counts / N
    means = km.centroids.copy()
    variances = np.empty((K, D))
    for k in range(K):
        members = X[labels == k]
        variances[k] = ((members - means[k]) ** 2).mean(axis=0) if len(members) else X.var(axis=0)
    variances = np.maximum(variances, floor)

    trace = []
    converged = False
    for it in range(max_iter + 1):
        logp = np.log(weights) + _log_gaussians(X, means, variances)
        ll_n = logsumexp(logp, axis=1)
        ll = float(ll_n.sum())
        if not np.isfinite(ll):
            raise NumericalError(f"GMM log-likelihood became non-finite at iteration {it}")
        trace.append(ll)
        if it > 0 and abs(ll - trace[-2]) <= tol * abs(trace[-2]):
            converged = True
            break
        if it == max_iter:
            break
        resp = np.exp(logp - ll_n[:, None])
        Nk = resp.sum(axis=0)
        alive = Nk > 1e-10 * N
        weights = np.where(alive, Nk / N, 1e-300)
        safe = np.where(alive, Nk, 1.0)[:, None]
        new_means = resp.T @ X / safe
        new_vars = resp.T @ (X * X) / safe - new_means**2
        means = np.where(alive[:, None], new_means, means)
        variances = np.where(alive[:, None], np.maximum(new_vars, floor), variances)
        if not alive.all():
            logger.debug("GMM: %d components lost all responsibility", int((~alive).sum()))
    if not converged:
        logger.info("GMM did not converge within %d iterations", max_iter)
    return GmmModel(weights, means, variances, seed, floor, tuple(trace), converged)


# --------------------------------------------------------------------------
# storage


def save_kmeans(model: KMeansModel, path, meta: dict | None = None):
    return _io.save_model(
        path,
        "kmeans",
        {"centroids": model.centroids},
        dict(meta or {}, K=model.K, D=model.D, seed=model.seed, n_iter=model.n_iter),
    )


def load_kmeans(path) -> KMeansModel:
    arrays, meta = _io.load_model(path, "kmeans")
    return KMeansModel(arrays["centroids"], meta.get("seed"), (), meta.get("n_iter", 0))


def save_gmm(model: GmmModel, path, meta: dict | None = None):
    return _io.save_model(
        path,
        "gmm",
        {"weights": model.weights, "means": model.means, "variances": model.variances},
        dict(
            meta or {},
            K=model.K,
            D=model.D,
            seed=model.seed,
            variance_floor=model.variance_floor,
            converged=model.converged,
            log_likelihood_trace=list(model.log_likelihood_trace),
        ),
    )


def load_gmm(path) -> GmmModel:
    arrays, meta = _io.load_model(path, "gmm")
    return GmmModel(
        arrays["weights"],
        arrays["means"],
        arrays["variances"],
        meta.get("seed"),
        meta.get("variance_floor", 0.0),
        tuple(meta.get("log_likelihood_trace", ())),
        meta.get("converged", True),
    )
