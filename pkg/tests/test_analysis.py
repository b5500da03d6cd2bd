import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meshfv.analysis import (
    EnergyRanking,
    ablate_columns,
    baseline_features,
    block_ablation,
    compare_baselines,
    export_codewords,
    gaussian_energy,
    load_codewords,
    read_atlas,
)
from meshfv.classify import StageError
from meshfv.clustering import GmmModel
from meshfv.config import PipelineConfig
from meshfv.dataio import DatasetManifest, RegionSample


def energy_double_loop(F, K):
    D = F.shape[1] // (2 * K)
    out = np.zeros(K)
    for k in range(K):
        total = 0.0
        for n in range(F.shape[0]):
            for c in range(2 * k * D, 2 * (k + 1) * D):
                total += F[n, c] ** 2
        out[k] = np.sqrt(total)
    return out


class TestGaussianEnergy:
    def test_zero_block_ranks_last(self, rng):
        F = rng.standard_normal((5, 3 * 2 * 2))
        F[:, 4:8] = 0.0
        r = gaussian_energy(F, 3)
        assert r.energies[1] == 0.0
        assert r.gle == 1

    def test_single_row(self, rng):
        F = rng.standard_normal((1, 2 * 2 * 3))
        r = gaussian_energy(F, 2)
        assert r.energies[0] == pytest.approx(np.linalg.norm(F[0, :6]), rel=1e-14)
        assert r.energies[1] == pytest.approx(np.linalg.norm(F[0, 6:]), rel=1e-14)

    def test_matches_double_loop(self, rng):
        F = rng.standard_normal((7, 2 * 3 * 4))
        np.testing.assert_allclose(gaussian_energy(F, 3).energies, energy_double_loop(F, 3), rtol=1e-13)

    def test_ties_by_index(self):
        r = gaussian_energy(np.ones((2, 8)), 4)
        np.testing.assert_array_equal(r.order, [0, 1, 2, 3])

    def test_csv(self):
        r = EnergyRanking(np.array([1.0, 3.0]), np.array([1, 0]))
        assert r.to_csv() == "gaussian_index,energy,rank\n0,1.0,2\n1,3.0,1\n"

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1), K=st.integers(1, 6), D=st.integers(1, 4), N=st.integers(1, 10))
    def test_decomposition_and_row_order(self, seed, K, D, N):
        r = np.random.default_rng(seed)
        F = r.standard_normal((N, 2 * K * D))
        rank = gaussian_energy(F, K)
        assert np.sum(rank.energies**2) == pytest.approx(np.sum(F**2), rel=1e-9)
        assert np.all(np.diff(rank.energies[rank.order]) <= 0)
        other = gaussian_energy(F[r.permutation(N)], K)
        np.testing.assert_array_equal(other.order, rank.order)
        np.testing.assert_allclose(other.energies, rank.energies, rtol=1e-12)


@pytest.fixture(scope="module")
def config():
    return PipelineConfig(seed=3, p=4, pca_dim=6, encoder="fv", dictionary_k=3, svm_C=10.0, folds=5)


class TestAblation:
    def test_ablate_nothing_is_identity(self, rng):
        F = rng.standard_normal((4, 12))
        assert ablate_columns(F, [], 3, "remove").tobytes() == F.tobytes()

    def test_select_and_remove_columns(self):
        F = np.arange(12.0)[None]
        np.testing.assert_array_equal(ablate_columns(F, [1], 3, "select"), [[4, 5, 6, 7]])
        np.testing.assert_array_equal(ablate_columns(F, [1], 3, "remove"), [[0, 1, 2, 3, 8, 9, 10, 11]])

    def test_m_zero_is_noop(self, small_synth, small_folds, config):
        res = block_ablation(small_synth, config, small_folds, "remove", "GHE", 0)
        assert res.ablated.fold_accuracies == res.baseline.fold_accuracies

    def test_remove_all_errors(self, small_synth, small_folds, config):
        with pytest.raises(StageError, match="no features"):
            block_ablation(small_synth, config, small_folds, "remove", "GHE", 3)

    def test_remove_all_chance(self, small_synth, small_folds, config):
        res = block_ablation(small_synth, config.replace(empty_features="chance"), small_folds, "remove", "GLE", 3)
        assert res.ablated.notes and "majority" in res.ablated.notes[0]
        assert res.ablated.mean_accuracy <= 50.0

    def test_m_above_K(self, small_synth, small_folds, config):
        with pytest.raises(ValueError):
            block_ablation(small_synth, config, small_folds, "remove", "GHE", 4)

    def test_chosen_blocks_follow_energy(self, small_synth, small_folds, config):
        hi = block_ablation(small_synth, config, small_folds, "select", "GHE", 1)
        lo = block_ablation(small_synth, config, small_folds, "select", "GLE", 1)
        assert all(a != b for a, b in zip(hi.chosen, lo.chosen))


class TestBaselines:
    def test_identical_regions_correlate_one(self, rng):
        Y = rng.standard_normal((4, 30))
        Y[2] = Y[0]
        s = RegionSample("a", 1, Y)
        X, _ = baseline_features(DatasetManifest((s,), 1, 4, s.region_names), "pearson")
        # upper triangle order: (0,1), (0,2), ...
        assert X[0, 1] == pytest.approx(1.0, abs=1e-12)

    def test_pearson_count_R98(self, rng):
        s = RegionSample("a", 1, rng.standard_normal((98, 20)))
        X, info = baseline_features(DatasetManifest((s,), 1, 98, s.region_names), "pearson")
        assert X.shape == (1, 4753) and info["n_features"] == 4753

    def test_bold_truncates(self, rng):
        a = RegionSample("a", 1, rng.standard_normal((3, 10)))
        b = RegionSample("a", 2, rng.standard_normal((3, 7)))
        X, info = baseline_features(DatasetManifest((a, b), 2, 3, a.region_names), "bold")
        assert X.shape == (2, 21) and info["T"] == 7
        np.testing.assert_array_equal(X[0], np.asarray(a.series)[:, :7].reshape(-1))

    def test_pearson_beats_bold(self, small_synth, small_folds):
        cfg = PipelineConfig(seed=3, p=4, pca_dim=8, dictionary_k=6, svm_C=10.0, folds=5)
        reports = compare_baselines(small_synth, cfg, small_folds)
        assert reports["pearson"].mean_accuracy > reports["bold"].mean_accuracy
        assert set(reports) == {"bold", "pearson", "mad"}


class TestCodewords:
    @pytest.fixture
    def gmm(self):
        means = np.array([[0.1, -0.2, 0.3], [1.5, 2.5, -3.5]])
        return GmmModel(np.array([0.5, 0.5]), means, np.ones((2, 3)))

    def test_rank_order_and_round_trip(self, tmp_path, gmm):
        ranking = EnergyRanking(np.array([1.0, 4.0]), np.array([1, 0]))
        names = ["L_A", "R_B", "C"]
        export_codewords(gmm, names, ranking, tmp_path)
        assert sorted(p.name for p in tmp_path.glob("codeword_*.csv")) == ["codeword_01.csv", "codeword_02.csv"]
        back_names, M = load_codewords(tmp_path)
        assert back_names == names
        np.testing.assert_array_equal(M, gmm.means[[1, 0]])

    def test_node_files(self, tmp_path, gmm):
        atlas = tmp_path / "atlas.csv"
        atlas.write_text("region_name,x,y,z\nL_A,1,2,3\nR_B,-4,5,6\nC,0,0,0\n")
        ranking = EnergyRanking(np.array([4.0, 1.0]), np.array([0, 1]))
        export_codewords(gmm, ["L_A", "R_B", "C"], ranking, tmp_path / "out", read_atlas(atlas))
        rows = (tmp_path / "out" / "codeword_02.node").read_text().splitlines()
        assert rows[1].split() == ["-4", "5", "6", "2.5", "2.5", "R_B"]
        assert rows[2].split()[3:5] == ["-3.5", "3.5"]

    def test_missing_atlas_warns(self, tmp_path, gmm, caplog):
        ranking = EnergyRanking(np.array([4.0, 1.0]), np.array([0, 1]))
        with caplog.at_level(logging.WARNING):
            export_codewords(gmm, ["a", "b", "c"], ranking, tmp_path)
        assert "CSV codewords only" in caplog.text
        assert not list(tmp_path.glob("*.node"))

    def test_requires_unprojected_dictionary(self, tmp_path, gmm):
        with pytest.raises(ValueError, match="without PCA"):
            export_codewords(gmm, ["a", "b"], EnergyRanking(np.ones(2), np.arange(2)), tmp_path)
