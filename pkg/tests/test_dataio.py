import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meshfv.dataio import (
    DatasetManifest,
    RegionSample,
    SynthConfig,
    VoxelBlock,
    average_regions,
    generate_synthetic,
    load_dataset,
    make_folds,
    permute_labels,
    random_templates,
    write_dataset,
)
from meshfv.errors import ArtifactError, DimensionError, ValidationError
from meshfv.mesh import NeighborhoodSpec, compute_mads


def _naive_region_means(blocks):
    out = []
    for b in sorted(blocks, key=lambda b: b.region_id):
        J, T = b.series.shape
        row = []
        for t in range(T):
            total = 0.0
            for j in range(J):
                total += b.series[j, t]
            row.append(total / J)
        out.append(row)
    return np.array(out)


class TestAverageRegions:
    def test_two_voxel_mean(self):
        blocks = [VoxelBlock(1, [[1, 2, 3], [3, 4, 5]]), VoxelBlock(2, [[0, 1, 0]])]
        sample = average_regions(blocks, "a", 1)
        np.testing.assert_array_equal(sample.series[0], [2, 3, 4])

    def test_single_voxel_unchanged(self):
        blocks = [VoxelBlock(1, [[1.5, -2.0, 7.0]]), VoxelBlock(2, [[0.0, 1.0, 3.0]])]
        sample = average_regions(blocks, "a", 1)
        np.testing.assert_array_equal(sample.series[0], [1.5, -2.0, 7.0])
        np.testing.assert_array_equal(sample.series[1], [0.0, 1.0, 3.0])

    def test_matches_double_loop(self, rng):
        blocks = [VoxelBlock(i, rng.standard_normal((2, 15))) for i in (3, 1, 2)]
        sample = average_regions(blocks, "a", 1)
        np.testing.assert_allclose(sample.series, _naive_region_means(blocks), rtol=0, atol=1e-14)

    def test_mismatched_T(self):
        with pytest.raises(DimensionError):
            average_regions([VoxelBlock(1, np.ones((1, 4)) * [1, 2, 3, 4]), VoxelBlock(2, [[1, 2, 3]])], "a", 1)

    def test_gap_in_region_ids(self):
        with pytest.raises(ValidationError, match="missing"):
            average_regions([VoxelBlock(1, [[1, 2]]), VoxelBlock(3, [[2, 1]])], "a", 1)

    def test_empty_region(self):
        with pytest.raises(ValidationError):
            VoxelBlock(1, np.zeros((0, 5)))

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1), J=st.integers(1, 6))
    def test_voxel_order_invariance(self, seed, J):
        r = np.random.default_rng(seed)
        data = r.standard_normal((J, 12))
        a = average_regions([VoxelBlock(1, data), VoxelBlock(2, r.standard_normal((2, 12)))], "a", 1)
        perm = r.permutation(J)
        b = average_regions([VoxelBlock(1, data[perm]), VoxelBlock(2, a.series[1][None])], "a", 1)
        np.testing.assert_allclose(a.series[0], b.series[0], rtol=1e-12, atol=1e-12)


class TestRegionSample:
    def test_constant_row_names_region(self, rng):
        series = rng.standard_normal((4, 10))
        series[2] = 3.0
        with pytest.raises(ValidationError, match=r"subject 'x' task 2: region 2 \(R03\)"):
            RegionSample("x", 2, series)

    def test_series_is_read_only(self, rng):
        s = RegionSample("x", 1, rng.standard_normal((3, 5)))
        with pytest.raises(ValueError):
            s.series[0, 0] = 1.0

    def test_needs_two_regions(self):
        with pytest.raises(ValidationError):
            RegionSample("x", 1, [[1.0, 2.0, 3.0]])


class TestManifest:
    def test_duplicate_key(self, rng):
        s = RegionSample("a", 1, rng.standard_normal((3, 5)))
        t = RegionSample("a", 1, rng.standard_normal((3, 5)))
        with pytest.raises(ValidationError, match="duplicate"):
            DatasetManifest((s, t), 1, 3, s.region_names)

    def test_labels_contiguous(self, rng):
        s = RegionSample("a", 1, rng.standard_normal((3, 5)))
        t = RegionSample("a", 3, rng.standard_normal((3, 5)))
        with pytest.raises(ValidationError, match="range"):
            DatasetManifest((s, t), 3, 3, s.region_names)

    def test_permute_labels_keeps_keys_unique(self, small_synth):
        shuffled = permute_labels(small_synth, seed=1)
        assert len({s.key for s in shuffled.samples}) == len(shuffled)
        assert sorted(shuffled.labels.tolist()) == sorted(small_synth.labels.tolist())
        assert not np.array_equal(shuffled.labels, small_synth.labels)


def _fixture_manifest(rng):
    samples = [
        RegionSample(sid, task, rng.standard_normal((3, 6 + task)))
        for sid in ("s01", "s02")
        for task in (1, 2)
    ]
    return DatasetManifest(tuple(samples), 2, 3, samples[0].region_names)


class TestLoadDataset:
    def test_round_trip(self, tmp_path, rng):
        manifest = _fixture_manifest(rng)
        write_dataset(manifest, tmp_path)
        loaded = load_dataset(tmp_path)
        assert len(loaded) == 4
        assert loaded.T_per_class == {1: 7, 2: 8}
        for a, b in zip(manifest.samples, loaded.samples):
            assert a.key == b.key
            np.testing.assert_array_equal(a.series, b.series)

    def test_missing_matrix(self, tmp_path, rng):
        write_dataset(_fixture_manifest(rng), tmp_path)
        (tmp_path / "matrices" / "sub-s02_task-1.csv").unlink()
        with pytest.raises(ArtifactError, match="sub-s02_task-1.csv"):
            load_dataset(tmp_path / "manifest.json")

    def test_constant_row(self, tmp_path, rng):
        write_dataset(_fixture_manifest(rng), tmp_path)
        path = tmp_path / "matrices" / "sub-s01_task-2.csv"
        rows = path.read_text().splitlines()
        rows[1] = ",".join(["0.5"] * 8)
        path.write_text("\n".join(rows) + "\n")
        with pytest.raises(ValidationError, match=r"'s01' task 2: region 1"):
            load_dataset(tmp_path)

    def test_shape_mismatch(self, tmp_path, rng):
        write_dataset(_fixture_manifest(rng), tmp_path)
        doc = json.loads((tmp_path / "manifest.json").read_text())
        doc["samples"][0]["T"] = 99
        (tmp_path / "manifest.json").write_text(json.dumps(doc))
        with pytest.raises(DimensionError, match="'s01' task 1"):
            load_dataset(tmp_path)


class TestGenerateSynthetic:
    def test_same_seed_identical(self):
        cfg = SynthConfig(R=6, C=2, subjects=3, T_per_class=[30])
        a = generate_synthetic(cfg, seed=7)
        b = generate_synthetic(cfg, seed=7)
        for x, y in zip(a.samples, b.samples):
            assert x.series.tobytes() == y.series.tobytes()

    def test_written_files_byte_identical(self, tmp_path):
        cfg = SynthConfig(R=5, C=2, subjects=2, T_per_class=[20, 25])
        write_dataset(generate_synthetic(cfg, seed=7), tmp_path / "a")
        write_dataset(generate_synthetic(cfg, seed=7), tmp_path / "b")
        for f in sorted((tmp_path / "a").rglob("*.*")):
            assert f.read_bytes() == (tmp_path / "b" / f.relative_to(tmp_path / "a")).read_bytes()

    def test_noiseless_driven_rows_follow_template(self):
        W = np.zeros((5, 5))
        W[3, 0], W[3, 1], W[4, 2] = 0.8, -0.5, 1.1
        cfg = SynthConfig(R=5, C=1, subjects=2, T_per_class=[50], templates=[W.tolist()], noise_sigma=0.0,
                          weight_jitter=0.0)
        for s in generate_synthetic(cfg, seed=1).samples:
            np.testing.assert_allclose(s.series[3:], W[3:] @ s.series, rtol=0, atol=1e-12)

    def test_planted_edges_dominate(self):
        # two classes with disjoint support
        R = 8
        W1, W2 = np.zeros((R, R)), np.zeros((R, R))
        W1[4, 0], W1[5, 1], W1[6, 2], W1[7, 3] = 0.9, 0.9, 0.9, 0.9
        W2[4, 1], W2[5, 2], W2[6, 3], W2[7, 0] = 0.9, 0.9, 0.9, 0.9
        cfg = SynthConfig(R=R, C=2, subjects=6, T_per_class=[120], templates=[W1.tolist(), W2.tolist()],
                          noise_sigma=0.5)
        manifest = generate_synthetic(cfg, seed=4)
        spec = NeighborhoodSpec(3)
        planted, other = [], []
        for s in manifest.samples:
            A = np.abs(compute_mads(s, spec).weights)
            mask = (W1 if s.task_label == 1 else W2) != 0
            off = ~mask & ~np.eye(R, dtype=bool)
            planted.append(A[mask].mean())
            other.append(A[off].mean())
        assert np.mean(planted) > 3 * np.mean(other)

    def test_degenerate_configs(self):
        with pytest.raises(ValidationError):
            generate_synthetic(SynthConfig(R=1, C=1, subjects=1))
        with pytest.raises(ValidationError):
            generate_synthetic(SynthConfig(R=4, C=1, subjects=0))

    def test_unknown_field(self):
        with pytest.raises(ValidationError, match="bogus"):
            SynthConfig.from_dict({"R": 4, "bogus": 1})

    def test_class_distance(self):
        Ws = random_templates(20, 7, seed=1, n_drivers=8, fan_in=2, group_size=2, min_class_distance=10)
        for a in range(7):
            for b in range(a + 1, 7):
                assert np.sum((Ws[a] != 0) != (Ws[b] != 0)) >= 2 * 10


class TestMakeFolds:
    def test_one_subject_per_fold(self):
        plan = make_folds([f"s{i}" for i in range(10)], 10, seed=0)
        assert plan.sizes() == [1] * 10

    def test_97_subjects(self):
        plan = make_folds([f"s{i:03d}" for i in range(97)], 10, seed=5)
        assert set(plan.sizes()) == {9, 10}
        assert sum(plan.sizes()) == 97

    def test_too_many_folds(self):
        with pytest.raises(ValidationError):
            make_folds(["a", "b"], 3)

    def test_samples_stay_with_subject(self, small_synth, small_folds):
        ids = [s.subject_id for s in small_synth.samples]
        for fold in range(small_folds.n_folds):
            tr, te = small_folds.split(ids, fold)
            assert not {ids[i] for i in tr} & {ids[i] for i in te}

    @settings(max_examples=50, deadline=None)
    @given(n=st.integers(2, 60), k=st.integers(2, 12), seed=st.integers(0, 10**6))
    def test_partition(self, n, k, seed):
        if k > n:
            return
        subjects = [f"s{i}" for i in range(n)]
        plan = make_folds(subjects, k, seed)
        assert sorted(plan.assignment) == sorted(subjects)
        assert all(0 <= f < k for f in plan.assignment.values())
        assert max(plan.sizes()) - min(plan.sizes()) <= 1
