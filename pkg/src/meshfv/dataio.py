"""Region-level time-series datasets: containers, validation, CSV/JSON I/O,
voxel-to-region averaging, a synthetic generator with planted connectivity,
and subject-disjoint fold plans."""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _io
from .errors import ArtifactError, DimensionError, ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class VoxelBlock:
    """Voxel series of one region; ``series`` is (J_i voxels, T)."""

    region_id: int
    series: np.ndarray

    def __post_init__(self):
        series = np.atleast_2d(np.asarray(self.series, dtype=float))
        if series.shape[0] < 1 or series.size == 0:
            raise ValidationError(f"region {self.region_id} has no voxels")
        object.__setattr__(self, "series", series)


@dataclass(frozen=True, eq=False)
class RegionSample:
    """One (subject, task) recording: an (R, T) matrix of region series."""

    subject_id: str
    task_label: int
    series: np.ndarray
    region_names: tuple = ()

    def __post_init__(self):
        series = np.array(self.series, dtype=float)
        if series.ndim != 2:
            raise DimensionError(f"{self.key_str()}: series must be 2-D, got shape {series.shape}")
        R, T = series.shape
        if R < 2:
            raise ValidationError(f"{self.key_str()}: need at least 2 regions, got {R}")
        if T < 2:
            raise ValidationError(f"{self.key_str()}: need at least 2 time points, got {T}")
        if not np.all(np.isfinite(series)):
            raise ValidationError(f"{self.key_str()}: series contains non-finite values")
        names = tuple(self.region_names) if len(self.region_names) else default_region_names(R)
        if len(names) != R:
            raise DimensionError(f"{self.key_str()}: {len(names)} region names for {R} regions")
        constant = np.flatnonzero(np.ptp(series, axis=1) == 0)
        if constant.size:
            i = int(constant[0])
            raise ValidationError(
                f"{self.key_str()}: region {i} ({names[i]}) is constant; "
                "Pearson correlation is undefined for constant series"
            )
        series.setflags(write=False)
        object.__setattr__(self, "series", series)
        object.__setattr__(self, "region_names", names)
        object.__setattr__(self, "task_label", int(self.task_label))
        object.__setattr__(self, "subject_id", str(self.subject_id))

    @property
    def R(self) -> int:
        return self.series.shape[0]

    @property
    def T(self) -> int:
        return self.series.shape[1]

    @property
    def key(self) -> tuple:
        return (self.subject_id, self.task_label)

    def key_str(self) -> str:
        return f"subject {self.subject_id!r} task {self.task_label}"


def default_region_names(R: int) -> tuple:
    width = max(2, len(str(R)))
    return tuple(f"R{i + 1:0{width}d}" for i in range(R))


@dataclass(frozen=True, eq=False)
class DatasetManifest:
    samples: tuple
    C: int
    R: int
    region_names: tuple
    T_per_class: dict = field(default_factory=dict)

    def __post_init__(self):
        samples = tuple(self.samples)
        if not samples:
            raise ValidationError("dataset has no samples")
        seen = set()
        for s in samples:
            if s.R != self.R:
                raise DimensionError(f"{s.key_str()}: has {s.R} regions, dataset has {self.R}")
            if tuple(s.region_names) != tuple(self.region_names):
                raise ValidationError(f"{s.key_str()}: region names differ from the dataset's")
            if s.key in seen:
                raise ValidationError(f"duplicate sample for {s.key_str()}")
            seen.add(s.key)
        labels = sorted({s.task_label for s in samples})
        if labels != list(range(1, self.C + 1)):
            raise ValidationError(f"task labels {labels} do not form the range 1..{self.C}")
        table = {}
        for s in samples:
            table.setdefault(s.task_label, set()).add(s.T)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "region_names", tuple(self.region_names))
        object.__setattr__(
            self, "T_per_class", {c: (ts.pop() if len(ts) == 1 else sorted(ts)) for c, ts in sorted(table.items())}
        )

    @property
    def subjects(self) -> list:
        """Subject ids in first-appearance order."""
        return list(dict.fromkeys(s.subject_id for s in self.samples))

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.task_label for s in self.samples])

    def __len__(self):
        return len(self.samples)

    def with_labels(self, labels) -> "DatasetManifest":
        """Copy with task labels replaced."""
        labels = np.asarray(labels)
        if labels.shape != (len(self.samples),):
            raise DimensionError("one label per sample required")
        samples = tuple(
            RegionSample(s.subject_id, int(c), s.series, s.region_names) for s, c in zip(self.samples, labels)
        )
        return DatasetManifest(samples, self.C, self.R, self.region_names)


def permute_labels(manifest: DatasetManifest, seed: int) -> DatasetManifest:
    """Shuffle task labels among each subject's own samples.

    Keeps (subject, task) keys unique and breaks any link between the
    series and the label; used as the chance-level control.
    """
    labels = manifest.labels.copy()
    ids = np.array([s.subject_id for s in manifest.samples])
    rng = _rng(seed, zlib.crc32(b"permute"))
    for subject in manifest.subjects:
        idx = np.flatnonzero(ids == subject)
        labels[idx] = labels[idx][rng.permutation(idx.size)]
    return manifest.with_labels(labels)


def average_regions(blocks: Sequence[VoxelBlock], subject_id: str, task_label: int, region_names=None) -> RegionSample:
    """Average voxel series within each region.

    Region ids must cover 1..R; row ``i`` of the result is the mean over
    the voxels of region ``i + 1``.
    """
    if not blocks:
        raise ValidationError("no voxel blocks given")
    T = {b.series.shape[1] for b in blocks}
    if len(T) != 1:
        raise DimensionError(f"voxel blocks disagree on the number of time points: {sorted(T)}")
    by_region = {}
    for b in blocks:
        if b.region_id in by_region:
            raise ValidationError(f"region {b.region_id} supplied twice")
        by_region[b.region_id] = b
    R = len(by_region)
    if sorted(by_region) != list(range(1, R + 1)):
        missing = sorted(set(range(1, max(by_region) + 1)) - set(by_region))
        raise ValidationError(f"region ids must cover 1..R; missing {missing}")
    series = np.vstack([by_region[i].series.mean(axis=0) for i in range(1, R + 1)])
    return RegionSample(subject_id, task_label, series, region_names or ())


# --------------------------------------------------------------------------
# on-disk format


def load_dataset(path) -> DatasetManifest:
    """Load a dataset directory (or its ``manifest.json``)."""
    path = Path(path)
    manifest_path = path / "manifest.json" if path.is_dir() else path
    doc = _io.read_json(manifest_path)
    root = manifest_path.parent
    try:
        R = int(doc["R"])
        C = int(doc["C"])
        names = tuple(doc.get("region_names") or default_region_names(R))
        entries = doc["samples"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ArtifactError(f"{manifest_path}: malformed manifest ({exc})") from exc

    samples = []
    for entry in entries:
        sid, task = entry["subject_id"], entry["task_label"]
        mpath = root / entry["matrix_path"]
        if not mpath.exists():
            raise ArtifactError(f"subject {sid!r} task {task}: missing matrix file {mpath}")
        series = _io.read_csv_matrix(mpath)
        if series.shape != (R, int(entry["T"])):
            raise DimensionError(
                f"subject {sid!r} task {task}: {mpath.name} has shape {series.shape}, expected ({R}, {entry['T']})"
            )
        samples.append(RegionSample(sid, task, series, names))
    return DatasetManifest(tuple(samples), C, R, names)


def write_dataset(manifest: DatasetManifest, path, provenance: dict | None = None) -> Path:
    path = Path(path)
    entries = []
    for s in manifest.samples:
        rel = f"matrices/sub-{s.subject_id}_task-{s.task_label}.csv"
        _io.atomic_write_text(path / rel, _io.matrix_to_csv(s.series))
        entries.append({"subject_id": s.subject_id, "task_label": s.task_label, "matrix_path": rel, "T": s.T})
    doc = {"R": manifest.R, "C": manifest.C, "region_names": list(manifest.region_names), "samples": entries}
    if provenance is not None:
        doc["provenance"] = provenance
    return _io.write_json(path / "manifest.json", doc)


# --------------------------------------------------------------------------
# synthetic data


@dataclass
class SynthConfig:
    """Parameters of the planted-connectivity generator.

    ``templates[c][i][j]`` is the weight of region ``j`` in region ``i``'s
    series for class ``c + 1``; all-zero rows are latent drivers. When
    ``templates`` is empty, random templates are drawn with ``template_seed``.

    Drivers are split, in index order, into groups of ``group_size`` whose
    latent series share a common component with correlation
    ``driver_coupling``. Random templates keep each driven region attached
    to the same group in every class and only change which member of the
    group drives it, so classes differ in partial (regression) structure
    far more than in marginal correlations. ``coupling_jitter`` and
    ``noise_spread`` vary the coupling (uniformly, +-) and the noise level
    (log-normally) from subject to subject.
    """

    R: int = 20
    C: int = 7
    subjects: int = 40
    T_per_class: list = field(default_factory=lambda: [150])
    templates: list = field(default_factory=list)
    noise_sigma: float = 0.5
    seed: int = 0
    weight_jitter: float = 0.1
    driver_coupling: float = 0.0
    coupling_jitter: float = 0.0
    noise_spread: float = 0.0
    group_size: int = 1
    min_class_distance: int = 0
    ar_coef: float = 0.0
    n_drivers: int | None = None
    fan_in: int = 1
    template_seed: int | None = None
    region_names: list = field(default_factory=list)

    @classmethod
    def from_dict(cls, doc: dict) -> "SynthConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"unknown SynthConfig fields: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def from_json(cls, path) -> "SynthConfig":
        return cls.from_dict(_io.read_json(path))

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def validate(self):
        if self.R < 2:
            raise ValidationError(f"R must be >= 2, got {self.R}")
        if self.C < 1:
            raise ValidationError(f"C must be >= 1, got {self.C}")
        if self.subjects < 1:
            raise ValidationError("need at least one subject")
        if len(self.T_per_class) not in (1, self.C):
            raise ValidationError(f"T_per_class needs 1 or {self.C} entries")
        if min(self.T_per_class) < 2:
            raise ValidationError("every T must be >= 2")
        if self.noise_sigma < 0:
            raise ValidationError("noise_sigma must be >= 0")
        if not 0 <= self.driver_coupling < 1:
            raise ValidationError("driver_coupling must lie in [0, 1)")
        if self.coupling_jitter < 0 or self.driver_coupling + self.coupling_jitter >= 1:
            raise ValidationError("driver_coupling + coupling_jitter must stay below 1")
        if self.noise_spread < 0:
            raise ValidationError("noise_spread must be >= 0")
        if self.group_size < 1:
            raise ValidationError("group_size must be >= 1")
        if self.templates and len(self.templates) != self.C:
            raise ValidationError(f"{len(self.templates)} templates for {self.C} classes")
        for c, W in enumerate(self.templates):
            W = np.asarray(W, dtype=float)
            if W.shape != (self.R, self.R):
                raise DimensionError(f"template {c} has shape {W.shape}, expected ({self.R}, {self.R})")
            if np.any(np.diag(W) != 0):
                raise ValidationError(f"template {c} has self-loops")


def _rng(*keys) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) & 0xFFFFFFFF for k in keys]))


def random_templates(
    R: int,
    C: int,
    seed: int,
    n_drivers: int | None = None,
    fan_in: int = 1,
    group_size: int = 1,
    min_class_distance: int = 0,
    max_tries: int = 1000,
) -> list:
    """Draw C acyclic driver -> driven templates over R regions.

    Regions ``0..n_drivers-1`` are drivers, grouped consecutively by
    ``group_size``. Each driven region is tied to ``fan_in`` groups with a
    fixed sign and magnitude in [0.6, 1.2]; per class it draws which member
    of each group carries that weight. Member choices are redrawn until
    every pair of classes differs in at least ``min_class_distance`` links.
    """
    if n_drivers is None:
        n_drivers = max(2, R // 3)
    if not 1 <= n_drivers < R:
        raise ValidationError(f"n_drivers must be in [1, R-1], got {n_drivers}")
    groups = [list(range(g, min(g + group_size, n_drivers))) for g in range(0, n_drivers, group_size)]
    fan_in = min(fan_in, len(groups))
    rng = _rng(seed, 0x7E3)
    links = []
    for i in range(n_drivers, R):
        chosen = rng.choice(len(groups), size=fan_in, replace=False)
        signs = rng.choice([-1.0, 1.0], size=fan_in)
        mags = rng.uniform(0.6, 1.2, size=fan_in)
        links.extend((i, g, w) for g, w in zip(chosen, signs * mags))
    patterns = []
    for _ in range(C):
        for _ in range(max_tries):
            cand = np.array([rng.choice(groups[g]) for _, g, _ in links])
            if all(np.sum(cand != other) >= min_class_distance for other in patterns):
                break
        else:
            raise ValidationError(f"could not draw {C} templates at class distance {min_class_distance}")
        patterns.append(cand)
    templates = []
    for members in patterns:
        W = np.zeros((R, R))
        for (i, _, w), j in zip(links, members):
            W[i, j] = w
        templates.append(W)
    return templates


def _latent(rng, T, ar_coef):
    z = rng.standard_normal(T)
    if ar_coef:
        for t in range(1, T):
            z[t] += ar_coef * z[t - 1]
        z *= np.sqrt(1 - ar_coef**2)
    return z


def generate_synthetic(config: SynthConfig, seed: int | None = None) -> DatasetManifest:
    """Simulate every (subject, class) sample with planted connectivity.

    Driver regions carry latent series; within a driver group they share a
    common component (correlation ``driver_coupling``). Driven regions
    follow ``y_i = sum_j W_ij y_j + noise_sigma * e_i``, with W the class
    template perturbed per subject by ``weight_jitter`` on its nonzero
    entries. Class information lives in the connectivity, not in the mean
    signal. Same config and seed give bit-identical output.
    """
    config.validate()
    seed = config.seed if seed is None else seed
    R, C = config.R, config.C
    if config.templates:
        templates = [np.asarray(W, dtype=float) for W in config.templates]
    else:
        tseed = seed if config.template_seed is None else config.template_seed
        templates = random_templates(
            R, C, tseed, config.n_drivers, config.fan_in, config.group_size, config.min_class_distance
        )
    Ts = list(config.T_per_class) * (C if len(config.T_per_class) == 1 else 1)
    names = tuple(config.region_names) if config.region_names else default_region_names(R)
    width = max(3, len(str(config.subjects)))
    eye = np.eye(R)

    samples = []
    for s in range(config.subjects):
        subject_id = f"{s + 1:0{width}d}"
        srng = _rng(seed, s, 0x5B)
        rho = config.driver_coupling + srng.uniform(-1, 1) * config.coupling_jitter
        rho = min(max(rho, 0.0), 1.0)
        sigma = config.noise_sigma * np.exp(config.noise_spread * srng.standard_normal())
        for c in range(C):
            rng = _rng(seed, s, c, 0xD47A)
            W = templates[c]
            if config.weight_jitter:
                W = W + (W != 0) * rng.normal(0.0, config.weight_jitter, size=W.shape)
            T = int(Ts[c])
            drivers = np.flatnonzero(~np.any(W != 0, axis=1))
            U = sigma * rng.standard_normal((R, T))
            for g in range(0, drivers.size, config.group_size):
                shared = _latent(rng, T, config.ar_coef)
                for i in drivers[g : g + config.group_size]:
                    z = _latent(rng, T, config.ar_coef)
                    U[i] = np.sqrt(1 - rho) * z + np.sqrt(rho) * shared
            Y = np.linalg.solve(eye - W, U)
            samples.append(RegionSample(subject_id, c + 1, Y, names))
    return DatasetManifest(tuple(samples), C, R, names)


# --------------------------------------------------------------------------
# folds


@dataclass(frozen=True)
class FoldPlan:
    n_folds: int
    assignment: dict
    seed: int | None = None

    def __post_init__(self):
        counts = np.bincount(list(self.assignment.values()), minlength=self.n_folds)
        if len(counts) != self.n_folds or counts.max() - counts.min() > 1:
            raise ValidationError(f"unbalanced fold plan: sizes {counts.tolist()}")

    def fold_of(self, subject_id) -> int:
        return self.assignment[subject_id]

    def sizes(self) -> list:
        return np.bincount(list(self.assignment.values()), minlength=self.n_folds).tolist()

    def split(self, subject_ids: Sequence[str], fold: int):
        """Train/test index arrays for a per-sample list of subject ids."""
        f = np.array([self.assignment[s] for s in subject_ids])
        return np.flatnonzero(f != fold), np.flatnonzero(f == fold)

    def to_dict(self) -> dict:
        return {"n_folds": self.n_folds, "seed": self.seed, "assignment": dict(sorted(self.assignment.items()))}


def make_folds(subjects, n_folds: int = 10, seed: int = 0) -> FoldPlan:
    """Subject-disjoint fold plan.

    ``subjects`` is a manifest or a sequence of subject ids. Subjects are
    shuffled with ``seed`` and dealt round-robin, so fold sizes differ by at
    most one.
    """
    if isinstance(subjects, DatasetManifest):
        subjects = subjects.subjects
    subjects = list(dict.fromkeys(subjects))
    if n_folds < 2:
        raise ValidationError(f"need at least 2 folds, got {n_folds}")
    if n_folds > len(subjects):
        raise ValidationError(f"{n_folds} folds requested but only {len(subjects)} subjects")
    rng = _rng(seed, zlib.crc32(b"folds"))
    order = rng.permutation(len(subjects))
    assignment = {subjects[j]: int(pos % n_folds) for pos, j in enumerate(order)}
    return FoldPlan(n_folds, assignment, seed)
