"""Mesh arc descriptors (MADs) for region-level fMRI series, with Fisher
vector / VLAD / bag-of-words encoding and linear SVM classification."""

from .errors import ArtifactError, DimensionError, MeshFVError, NumericalError, ValidationError
from .dataio import (
    DatasetManifest,
    FoldPlan,
    RegionSample,
    SynthConfig,
    generate_synthetic,
    load_dataset,
    make_folds,
    permute_labels,
    write_dataset,
)
from .mesh import MadSet, NeighborhoodSpec, compute_all_mads, compute_mads, concatenate, fit_mesh
from .decomp import PcaModel, fit_pca, project
from .clustering import GmmModel, KMeansModel, fit_gmm, fit_kmeans
from .encoding import encode, encode_bow, encode_fv, encode_vlad
from .config import PipelineConfig, derive_seed
from .classify import CvReport, cross_validate, grid_search, train_svm
from .analysis import block_ablation, compare_baselines, gaussian_energy

__version__ = "0.1.0"
