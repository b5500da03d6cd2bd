"""Which Gaussians carry the signal?

Ranks the dictionary's Gaussians by the energy of their Fisher-vector
blocks, compares removing the highest- and lowest-energy blocks, and
writes the codewords of a dictionary fitted on un-projected MADs as
region-level CSV and BrainNet-style .node files.

    python demos/04_energy_and_codewords.py [OUT_DIR]
"""

import sys
import tempfile
from pathlib import Path

import numpy as np

from meshfv import SynthConfig, generate_synthetic, make_folds
from meshfv.analysis import (
    block_ablation,
    export_codewords,
    fit_raw_dictionary,
    gaussian_energy,
    raw_energy_ranking,
    read_atlas,
)
from meshfv.classify import fold_features
from meshfv.config import PipelineConfig, derive_seed
from meshfv.mesh import NeighborhoodSpec, compute_all_mads

root = Path(__file__).resolve().parents[1]
config = PipelineConfig.from_json(root / "configs" / "example.json")
data = generate_synthetic(SynthConfig.from_dict(config.synth), seed=derive_seed(config.seed, "synth"))
folds = make_folds(data, config.folds, derive_seed(config.seed, "folds"))
mads = compute_all_mads(data.samples, NeighborhoodSpec(config.p, config.ridge_lambda))
ids = [m.subject_id for m in mads]

_, _, _, Xtr, _ = fold_features(mads, data.labels, ids, config, folds, 0)
ranking = gaussian_energy(Xtr, config.dictionary_k)
print("fold 0 training energies, highest first:")
for k in ranking.order:
    print(f"  Gaussian {k}: {ranking.energies[k]:.3f}")
print(f"sum e_k^2 = {np.sum(ranking.energies**2):.6f}, ||F||^2 = {np.sum(Xtr**2):.6f}")

for which in ("GHE", "GLE"):
    res = block_ablation(data, config, folds, "remove", which, 1, mads=mads)
    print(f"remove {which}: {res.baseline.mean_accuracy:.2f}% -> {res.ablated.mean_accuracy:.2f}%")

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="codewords_"))
gmm = fit_raw_dictionary(mads, config)
coords = read_atlas(root / "configs" / "atlas_example.csv")
written = export_codewords(gmm, data.region_names, raw_energy_ranking(gmm, mads), out, coords)
print(f"wrote {len(written)} files to {out}")
