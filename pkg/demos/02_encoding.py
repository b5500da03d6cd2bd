"""From descriptors to fixed-length vectors.

Pools the MADs of a few training samples, reduces them with PCA, fits a
diagonal GMM and a k-means codebook, then encodes one held-out sample as a
Fisher vector, a VLAD vector and a bag-of-words histogram.

    python demos/02_encoding.py
"""

import numpy as np

from meshfv import SynthConfig, generate_synthetic
from meshfv.clustering import fit_gmm, fit_kmeans
from meshfv.decomp import fit_pca, project
from meshfv.encoding import encode_bow, encode_fv, encode_vlad
from meshfv.mesh import NeighborhoodSpec, compute_all_mads

cfg = SynthConfig(R=12, C=4, subjects=8, T_per_class=[100] * 4, noise_sigma=0.3, driver_coupling=0.9,
                  group_size=2, n_drivers=6, fan_in=2)
data = generate_synthetic(cfg, seed=1)
mads = compute_all_mads(data.samples, NeighborhoodSpec(p=4))
train, held_out = mads[:-1], mads[-1]

pool = np.vstack([m.weights for m in train])
print(f"descriptor pool: {pool.shape[0]} MADs of dimension {pool.shape[1]}")

pca = fit_pca(pool, 6)
kept = pca.explained_variance.sum() / np.var(pool, axis=0, ddof=1).sum()
print(f"PCA to D=6 keeps {100 * kept:.1f}% of the variance")
Z = project(pca, pool)

K = 5
gmm = fit_gmm(Z, K, seed=0)
km = fit_kmeans(Z, K, seed=0)
print(f"GMM: {len(gmm.log_likelihood_trace)} EM steps, weights {np.round(gmm.weights, 3).tolist()}")

A = project(pca, held_out.weights)
fv = encode_fv(gmm, A)
vlad = encode_vlad(km, A)
bow = encode_bow(km, A)
print(f"Fisher vector: length {fv.values.size} (2KD), norm {np.linalg.norm(fv.values):.6f}")
print(f"VLAD:          length {vlad.values.size} (KD)")
print(f"BoW counts:    {bow.counts.tolist()} (sum {bow.counts.sum()} = R)")
for k in range(K):
    print(f"  Gaussian {k}: |FV block| = {np.linalg.norm(fv.block(k)):.3f}")
