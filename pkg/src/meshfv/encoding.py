"""Encoders turning one sample's descriptor set into a fixed-length vector:
Fisher vectors against a GMM, VLAD and bag-of-words against k-means."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clustering import GmmModel, KMeansModel, _as_2d, assign, posterior
from .errors import DimensionError, NumericalError


@dataclass(frozen=True, eq=False)
class FisherVector:
    """Length 2KD, laid out [G_mu1, G_sigma1, ..., G_muK, G_sigmaK]."""

    values: np.ndarray
    K: int
    D: int
    normalized: bool

    def block(self, k: int) -> np.ndarray:
        return self.values[2 * k * self.D : 2 * (k + 1) * self.D]


@dataclass(frozen=True, eq=False)
class VladVector:
    values: np.ndarray
    K: int
    D: int
    normalized: bool


@dataclass(frozen=True, eq=False)
class BowHistogram:
    counts: np.ndarray

    @property
    def K(self) -> int:
        return self.counts.size

    @property
    def frequencies(self) -> np.ndarray:
        total = self.counts.sum()
        return self.counts / total if total else self.counts.astype(float)


def signed_sqrt_l2(values) -> np.ndarray:
    """sign(z) sqrt|z|, then divide by the l2 norm; zero stays zero."""
    z = np.asarray(values, dtype=float)
    z = np.sign(z) * np.sqrt(np.abs(z))
    norm = np.linalg.norm(z)
    return z / norm if norm > 0 else z


def fv_gradients(gmm: GmmModel, A) -> tuple:
    """Mean and variance gradient blocks, each (K, D), before normalisation."""
    A = _as_2d(A)
    if A.shape[1] != gmm.D:
        raise DimensionError(f"descriptor dimension {A.shape[1]} != GMM dimension {gmm.D}")
    R = A.shape[0]
    g_mu = np.empty((gmm.K, gmm.D))
    g_sigma = np.empty((gmm.K, gmm.D))
    # degenerate components surface as non-finite blocks, reported below
    with np.errstate(divide="ignore", invalid="ignore"):
        gamma = posterior(gmm, A)  # (R, K)
        sigma = np.sqrt(gmm.variances)
        for k in range(gmm.K):
            u = (A - gmm.means[k]) / sigma[k]
            g = gamma[:, k]
            g_mu[k] = g @ u / (R * np.sqrt(gmm.weights[k]))
            g_sigma[k] = g @ (u**2 - 1.0) / (R * np.sqrt(2.0 * gmm.weights[k]))
    for k in range(gmm.K):
        if not (np.all(np.isfinite(g_mu[k])) and np.all(np.isfinite(g_sigma[k]))):
            raise NumericalError(f"non-finite Fisher vector block for Gaussian {k}")
    return g_mu, g_sigma


def normalize_fv(raw) -> FisherVector:
    if isinstance(raw, FisherVector):
        return FisherVector(signed_sqrt_l2(raw.values), raw.K, raw.D, True)
    return signed_sqrt_l2(raw)


def encode_fv(gmm: GmmModel, A, normalize: bool = True) -> FisherVector:
    g_mu, g_sigma = fv_gradients(gmm, A)
    values = np.stack([g_mu, g_sigma], axis=1).reshape(-1)
    fv = FisherVector(values, gmm.K, gmm.D, False)
    return normalize_fv(fv) if normalize else fv


def vlad_residuals(kmeans: KMeansModel, A) -> np.ndarray:
    A = _as_2d(A)
    if A.shape[1] != kmeans.D:
        raise DimensionError(f"descriptor dimension {A.shape[1]} != dictionary dimension {kmeans.D}")
    labels = assign(kmeans, A)
    blocks = np.zeros((kmeans.K, kmeans.D))
    np.add.at(blocks, labels, A - kmeans.centroids[labels])
    return blocks


def encode_vlad(kmeans: KMeansModel, A, normalize: bool = True) -> VladVector:
    values = vlad_residuals(kmeans, A).reshape(-1)
    if normalize:
        values = signed_sqrt_l2(values)
    return VladVector(values, kmeans.K, kmeans.D, normalize)


def encode_bow(kmeans: KMeansModel, A) -> BowHistogram:
    A = _as_2d(A)
    if A.shape[1] != kmeans.D:
        raise DimensionError(f"descriptor dimension {A.shape[1]} != dictionary dimension {kmeans.D}")
    return BowHistogram(np.bincount(assign(kmeans, A), minlength=kmeans.K))


ENCODERS = ("fv", "vlad", "bow", "raw")


def encode(kind: str, dictionary, A, normalize: bool = True) -> np.ndarray:
    """Feature vector for the classifier.

    ``raw`` concatenates the descriptors; ``bow`` returns frequencies.
    """
    if kind == "fv":
        return encode_fv(dictionary, A, normalize).values
    if kind == "vlad":
        return encode_vlad(dictionary, A, normalize).values
    if kind == "bow":
        return encode_bow(dictionary, A).frequencies
    if kind == "raw":
        return np.asarray(A, dtype=float).reshape(-1).copy()
    raise ValueError(f"unknown encoder {kind!r}; expected one of {ENCODERS}")


def encoded_length(kind: str, K: int, D: int, R: int | None = None) -> int:
    return {"fv": 2 * K * D, "vlad": K * D, "bow": K, "raw": (R or 0) * D}[kind]
