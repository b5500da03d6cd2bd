"""Subject-disjoint cross-validation of the full pipeline.

Runs 5-fold CV on the small example configuration for each encoder and
for the two descriptor baselines (raw region series and Pearson
correlations), then prints the confusion matrix of the FV pipeline.

    python demos/03_cross_validation.py
"""

from pathlib import Path

import numpy as np

from meshfv import SynthConfig, generate_synthetic, make_folds
from meshfv.analysis import compare_baselines
from meshfv.classify import cross_validate
from meshfv.config import PipelineConfig, derive_seed

config = PipelineConfig.from_json(Path(__file__).resolve().parents[1] / "configs" / "example.json")
data = generate_synthetic(SynthConfig.from_dict(config.synth), seed=derive_seed(config.seed, "synth"))
folds = make_folds(data, config.folds, derive_seed(config.seed, "folds"))
print(f"{len(data)} samples from {len(data.subjects)} subjects, {data.C} classes, {folds.n_folds} folds")

for encoder in ("fv", "vlad", "bow", "raw"):
    k = config.dictionary_k if encoder != "raw" else "-"
    rep = cross_validate(data, config.replace(encoder=encoder), folds)
    print(f"{encoder:>5s} (K={k}): {rep.mean_accuracy:6.2f}%  per fold {np.round(rep.fold_accuracies, 1).tolist()}")

for name, rep in compare_baselines(data, config, folds).items():
    print(f"baseline {name:>8s}: {rep.mean_accuracy:6.2f}%")

rep = cross_validate(data, config, folds)
print("FV confusion (rows: true class, row-normalized):")
print(np.round(rep.confusion, 2))
