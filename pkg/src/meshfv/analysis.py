"""Dictionary analysis: per-Gaussian Fisher-vector energy, energy-guided
block removal/selection, BOLD and Pearson baselines, and codeword export
for brain-map viewers."""

from __future__ import annotations

import csv
import io
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _io
from .classify import (
    CvReport,
    StageError,
    _check_disjoint,
    _mads_for,
    _sample_index,
    _tally,
    cross_validate,
    evaluate_features,
    fold_features,
    train_svm,
)
from .clustering import GmmModel, fit_gmm
from .config import PipelineConfig, derive_seed
from .dataio import DatasetManifest, FoldPlan
from .encoding import encode_fv
from .errors import ArtifactError, DimensionError, MeshFVError, ValidationError
from .mesh import correlation_matrix

logger = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# energy


@dataclass(frozen=True, eq=False)
class EnergyRanking:
    energies: np.ndarray  # (K,)
    order: np.ndarray  # Gaussian indices, highest energy first

    @property
    def K(self) -> int:
        return self.energies.size

    @property
    def ghe(self) -> int:
        return int(self.order[0])

    @property
    def gle(self) -> int:
        return int(self.order[-1])

    def rank_of(self, k: int) -> int:
        """1-based rank of Gaussian ``k``."""
        return int(np.flatnonzero(self.order == k)[0]) + 1

    def to_csv(self) -> str:
        lines = ["gaussian_index,energy,rank"]
        for k in range(self.K):
            lines.append(f"{k},{_io.format_float(self.energies[k])},{self.rank_of(k)}")
        return "\n".join(lines) + "\n"


def block_columns(k: int, D: int) -> np.ndarray:
    """Columns of Gaussian ``k`` ([G_mu_k, G_sigma_k]) in a 2KD Fisher vector."""
    return np.arange(2 * k * D, 2 * (k + 1) * D)


def gaussian_energy(training_fvs, K: int) -> EnergyRanking:
    """Frobenius norm of each Gaussian's column block over all rows."""
    F = np.atleast_2d(np.asarray(training_fvs, dtype=float))
    if F.shape[1] % (2 * K):
        raise DimensionError(f"{F.shape[1]} columns is not a multiple of 2K={2 * K}")
    D = F.shape[1] // (2 * K)
    blocks = F.reshape(F.shape[0], K, 2 * D)
    energies = np.sqrt(np.einsum("nkd,nkd->k", blocks, blocks))
    order = np.lexsort((np.arange(K), -energies))
    return EnergyRanking(energies, order)


# --------------------------------------------------------------------------
# ablation


@dataclass
class AblationResult:
    baseline: CvReport
    ablated: CvReport
    mode: str
    which: str
    m: int
    chosen: list = field(default_factory=list)  # Gaussian indices per fold


def _pick_blocks(ranking: EnergyRanking, which: str, m: int) -> np.ndarray:
    if which.upper() == "GHE":
        return ranking.order[:m]
    if which.upper() == "GLE":
        return ranking.order[::-1][:m]
    raise ValidationError(f"which must be GHE or GLE, got {which!r}")


def ablate_columns(features: np.ndarray, blocks, K: int, mode: str) -> np.ndarray:
    """Drop (``remove``) or keep only (``select``) the given Gaussian blocks."""
    F = np.asarray(features)
    D = F.shape[1] // (2 * K)
    cols = np.concatenate([block_columns(int(k), D) for k in blocks]) if len(blocks) else np.array([], dtype=int)
    if mode == "remove":
        keep = np.setdiff1d(np.arange(F.shape[1]), cols)
    elif mode == "select":
        keep = np.sort(cols)
    else:
        raise ValidationError(f"mode must be remove or select, got {mode!r}")
    return F[:, keep]


def block_ablation(
    manifest: DatasetManifest,
    config: PipelineConfig,
    fold_plan: FoldPlan,
    mode: str = "remove",
    which: str = "GHE",
    m: int = 1,
    mads=None,
) -> AblationResult:
    """Paired CV: full Fisher vectors vs. vectors with ``m`` blocks removed
    or selected. Energies are ranked per fold on training FVs only."""
    if config.encoder != "fv":
        raise ValidationError("block ablation needs the fv encoder")
    K = config.dictionary_k
    if not 0 <= m <= K:
        raise ValidationError(f"m={m} must lie in [0, K={K}]")
    mads = _mads_for(manifest, config, mads)
    subject_ids, labels = _sample_index(manifest)
    _check_disjoint(subject_ids, fold_plan)
    classes = sorted(np.unique(labels).tolist())
    base_counts = np.zeros((len(classes), len(classes)), dtype=int)
    abl_counts = np.zeros_like(base_counts)
    base_acc, abl_acc, chosen, notes = [], [], [], []
    for fold in range(fold_plan.n_folds):
        _, tr, te, Xtr, Xte = fold_features(mads, labels, subject_ids, config, fold_plan, fold)
        if te.size == 0:
            continue
        try:
            model = train_svm(Xtr, labels[tr], config.svm_C)
        except MeshFVError as exc:
            raise StageError(fold, "svm", exc) from exc
        pred = model.predict(Xte)
        base_acc.append(100.0 * float(np.mean(pred == labels[te])))
        base_counts += _tally(classes, labels[te], pred)

        ranking = gaussian_energy(Xtr, K)
        blocks = _pick_blocks(ranking, which, m)
        chosen.append([int(k) for k in blocks])
        Atr = ablate_columns(Xtr, blocks, K, mode)
        Ate = ablate_columns(Xte, blocks, K, mode)
        if Atr.shape[1] == 0:
            if config.empty_features == "error":
                raise StageError(fold, "ablation", ValidationError("ablation left no features"))
            values, freq = np.unique(labels[tr], return_counts=True)
            pred = np.full(te.size, values[np.argmax(freq)])
            notes.append(f"fold {fold}: no features left, predicted the majority training class")
        else:
            try:
                pred = train_svm(Atr, labels[tr], config.svm_C).predict(Ate)
            except MeshFVError as exc:
                raise StageError(fold, "svm", exc) from exc
        abl_acc.append(100.0 * float(np.mean(pred == labels[te])))
        abl_counts += _tally(classes, labels[te], pred)

    hp = config.hyperparameters()
    baseline = CvReport(base_acc, base_counts, classes, hp, fold_plan.seed, fold_plan.n_folds)
    ablated = CvReport(
        abl_acc, abl_counts, classes, dict(hp, ablation={"mode": mode, "which": which, "m": m}),
        fold_plan.seed, fold_plan.n_folds, notes,
    )
    return AblationResult(baseline, ablated, mode, which, m, chosen)


# --------------------------------------------------------------------------
# baselines


def baseline_features(manifest: DatasetManifest, kind: str):
    """Per-sample features without any fitted state.

    ``bold``: region series concatenated, every sample truncated to the
    shortest T in the dataset. ``pearson``: upper-triangle correlations,
    R(R-1)/2 values. Returns ``(features, info)``.
    """
    if kind == "bold":
        T = min(s.T for s in manifest.samples)
        X = np.vstack([np.asarray(s.series)[:, :T].reshape(-1) for s in manifest.samples])
        return X, {"kind": "bold", "policy": "truncate_to_min_T", "T": T}
    if kind == "pearson":
        iu = np.triu_indices(manifest.R, k=1)
        X = np.vstack([correlation_matrix(s.series)[iu] for s in manifest.samples])
        return X, {"kind": "pearson", "n_features": int(iu[0].size)}
    raise ValidationError(f"baseline kind must be bold or pearson, got {kind!r}")


def compare_baselines(manifest: DatasetManifest, config: PipelineConfig, fold_plan: FoldPlan, mads=None) -> dict:
    """CV reports for BOLD, Pearson and the configured MAD pipeline."""
    subject_ids, labels = _sample_index(manifest)
    out = {}
    for kind in ("bold", "pearson"):
        X, info = baseline_features(manifest, kind)
        out[kind] = evaluate_features(X, labels, subject_ids, fold_plan, config.svm_C, info)
    out["mad"] = cross_validate(manifest, config, fold_plan, mads=mads)
    return out


# --------------------------------------------------------------------------
# codewords


def fit_raw_dictionary(mads, config: PipelineConfig) -> GmmModel:
    """GMM on un-projected R-dimensional MADs, for codeword visualisation."""
    X = np.vstack([m.weights for m in mads])
    return fit_gmm(
        X,
        config.dictionary_k,
        seed=derive_seed(config.seed, "gmm", 0xC0DE),
        max_iter=config.gmm_max_iter,
        tol=config.gmm_tol,
        floor_scale=config.variance_floor_scale,
    )


def raw_energy_ranking(gmm: GmmModel, mads) -> EnergyRanking:
    fvs = np.vstack([encode_fv(gmm, m.weights).values for m in mads])
    return gaussian_energy(fvs, gmm.K)


def read_atlas(path) -> dict:
    """Atlas CSV with columns region_name, x, y, z."""
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"missing atlas coordinate table: {path}")
    coords = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            coords[row["region_name"]] = (float(row["x"]), float(row["y"]), float(row["z"]))
    return coords


def _node_label(name: str) -> str:
    return re.sub(r"\s+", "_", name.strip()) or "-"


def export_codewords(gmm: GmmModel, region_names, ranking: EnergyRanking, out_dir, coords: dict | None = None) -> list:
    """One ``codeword_<rank>.csv`` per Gaussian (rank 1 = highest energy),
    plus a BrainNet ``.node`` file when atlas coordinates are given.

    Node columns are ``x y z color size label`` with color = codeword value
    and size = |value|.
    """
    region_names = list(region_names)
    if gmm.D != len(region_names):
        raise DimensionError(
            f"GMM dimension {gmm.D} != {len(region_names)} regions; codewords need a dictionary fitted without PCA"
        )
    if ranking.K != gmm.K:
        raise DimensionError("energy ranking and GMM disagree on K")
    out_dir = Path(out_dir)
    if coords is None:
        logger.warning("no atlas coordinate table given; writing CSV codewords only")
    else:
        missing = [n for n in region_names if n not in coords]
        if missing:
            raise ValidationError(f"atlas lacks coordinates for {missing[:5]}")
    width = max(2, len(str(gmm.K)))
    written = []
    for rank, k in enumerate(ranking.order, start=1):
        stem = out_dir / f"codeword_{rank:0{width}d}"
        mean = gmm.means[k]
        buf = io.StringIO()
        buf.write("region_name,value\n")
        for name, v in zip(region_names, mean):
            buf.write(f"{name},{_io.format_float(v)}\n")
        written.append(_io.atomic_write_text(stem.with_suffix(".csv"), buf.getvalue()))
        if coords is not None:
            lines = []
            for name, v in zip(region_names, mean):
                x, y, z = coords[name]
                lines.append(f"{x:g} {y:g} {z:g} {v:.10g} {abs(v):.10g} {_node_label(name)}")
            written.append(_io.atomic_write_text(stem.with_suffix(".node"), "\n".join(lines) + "\n"))
    return written


def load_codewords(out_dir) -> tuple:
    """Read exported codeword CSVs back, in rank order: ``(names, matrix)``."""
    paths = sorted(Path(out_dir).glob("codeword_*.csv"))
    if not paths:
        raise ArtifactError(f"no codeword files in {out_dir}")
    rows, names = [], None
    for path in paths:
        with open(path, newline="", encoding="utf-8") as fh:
            records = list(csv.DictReader(fh))
        these = [r["region_name"] for r in records]
        if names is None:
            names = these
        elif these != names:
            raise ArtifactError(f"{path}: region names differ from the other codeword files")
        rows.append([float(r["value"]) for r in records])
    return names, np.array(rows)
