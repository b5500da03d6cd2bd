"""Pipeline configuration and named sub-seeds."""

from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import _io
from .errors import ValidationError

P_GRID = (10, 20, 30, 40)
D_GRID = (50, 60, 70, 80, 90)
K_GRID = (20, 40, 60, 80, 100, 120)

DICTIONARY_FOR = {"fv": "gmm", "vlad": "kmeans", "bow": "kmeans", "raw": None}


def derive_seed(seed: int, name: str, *index: int) -> int:
    """Stable 32-bit sub-seed for a named stage (and optional indices)."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode()), *[int(i) for i in index]])
    return int(ss.generate_state(1)[0])


@dataclass
class PipelineConfig:
    seed: int
    dataset: str | None = None
    synth: dict | None = None
    p: int = 10
    ridge_lambda: float = 0.5
    standardize: bool = True
    absolute_correlation: bool = False
    pca_dim: int | None = None
    encoder: str = "fv"
    dictionary: str | None = None
    dictionary_k: int = 20
    normalize: bool = True
    svm_C: float = 1.0
    folds: int = 10
    gmm_max_iter: int = 200
    gmm_tol: float = 1e-6
    variance_floor_scale: float = 1e-6
    grid: dict = field(default_factory=dict)
    ablation: dict = field(default_factory=dict)
    atlas: str | None = None
    empty_features: str = "error"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.seed is None:
            raise ValidationError("config needs a seed")
        if self.p < 1:
            raise ValidationError(f"p must be >= 1, got {self.p}")
        if self.ridge_lambda < 0:
            raise ValidationError("ridge_lambda must be >= 0")
        if self.encoder not in DICTIONARY_FOR:
            raise ValidationError(f"encoder must be one of {sorted(DICTIONARY_FOR)}, got {self.encoder!r}")
        expected = DICTIONARY_FOR[self.encoder]
        if self.dictionary is not None and self.dictionary != expected:
            raise ValidationError(f"encoder {self.encoder!r} needs dictionary {expected!r}, got {self.dictionary!r}")
        if self.pca_dim is not None and self.pca_dim < 1:
            raise ValidationError("pca_dim must be >= 1 or null")
        if self.dictionary_k < 1:
            raise ValidationError("dictionary_k must be >= 1")
        if self.svm_C <= 0:
            raise ValidationError("svm_C must be > 0")
        if self.folds < 2:
            raise ValidationError("folds must be >= 2")
        if self.empty_features not in ("error", "chance"):
            raise ValidationError("empty_features must be 'error' or 'chance'")

    @property
    def dictionary_kind(self) -> str | None:
        return DICTIONARY_FOR[self.encoder]

    def replace(self, **changes) -> "PipelineConfig":
        doc = self.to_dict()
        doc.update(changes)
        return PipelineConfig.from_dict(doc)

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        if "seed" not in doc:
            raise ValidationError("config needs a seed")
        doc = dict(doc)
        if isinstance(doc.get("pca_dim"), str):
            if doc["pca_dim"].lower() != "none":
                raise ValidationError(f"pca_dim must be an integer or 'none', got {doc['pca_dim']!r}")
            doc["pca_dim"] = None
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ValidationError(str(exc)) from exc

    @classmethod
    def from_json(cls, path, overrides: dict | None = None) -> "PipelineConfig":
        doc = _io.read_json(path)
        doc.update(overrides or {})
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return asdict(self)

    def sha256(self) -> str:
        return _io.sha256_json(self.to_dict())

    def hyperparameters(self) -> dict:
        return {
            "p": self.p,
            "d": self.pca_dim,
            "k": self.dictionary_k,
            "encoder": self.encoder,
            "svm_C": self.svm_C,
            "ridge_lambda": self.ridge_lambda,
            "standardize": self.standardize,
            "normalize": self.normalize,
        }


def parse_override(text: str) -> tuple:
    """``key=value`` with ``value`` parsed as JSON when possible."""
    if "=" not in text:
        raise ValidationError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value
