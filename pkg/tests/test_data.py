"""Category splits, the synthetic generator, feature-file I/O and batching."""

import itertools

import numpy as np
import pytest

from ovadapt.data import (
    Dataset,
    FeatureFileError,
    SynthConfig,
    UNLABELED,
    batch_iter,
    generate_synthetic,
    load_feature_file,
    make_category_shift,
    map_to_eval_labels,
    save_feature_file,
)
from ovadapt.numerics import substream


class TestCategoryShift:
    def test_open_set_split(self):
        s = make_category_shift(21, 10, 0, 11)
        assert s.shared == tuple(range(10))
        assert s.source_private == ()
        assert s.target_private == tuple(range(10, 21))
        assert s.num_known == 10

    def test_open_partial_split(self):
        s = make_category_shift(20, 10, 5, 5)
        assert s.shared == tuple(range(10))
        assert s.source_private == tuple(range(10, 15))
        assert s.target_private == tuple(range(15, 20))

    def test_large_split_sizes(self):
        s = make_category_shift(345, 150, 50, 145)
        assert (len(s.shared), len(s.source_private), len(s.target_private)) == (150, 50, 145)
        assert s.num_known == 200

    def test_counts_exceeding_total_rejected(self):
        with pytest.raises(ValueError):
            make_category_shift(10, 6, 3, 3)

    def test_shared_required(self):
        with pytest.raises(ValueError):
            make_category_shift(10, 0, 5, 5)

    def test_class_groups_disjoint(self):
        s = make_category_shift(12, 4, 4, 4)
        assert not set(s.shared) & set(s.source_private)
        assert not set(s.shared) & set(s.target_private)
        assert not set(s.source_private) & set(s.target_private)


class TestSyntheticGenerator:
    def _cfg(self, **kw):
        base = dict(total_classes=6, dim=4, samples_per_class=20,
                    class_center_scale=3.0, noise_sigma=1.0, seed=3)
        base.update(kw)
        return SynthConfig(**base)

    def test_deterministic(self):
        shift = make_category_shift(6, 3, 1, 2)
        a_src, a_tgt = generate_synthetic(shift, self._cfg())
        b_src, b_tgt = generate_synthetic(shift, self._cfg())
        np.testing.assert_array_equal(a_src.features, b_src.features)
        np.testing.assert_array_equal(a_tgt.features, b_tgt.features)
        np.testing.assert_array_equal(a_tgt.labels, b_tgt.labels)

    def test_domain_class_membership(self):
        shift = make_category_shift(6, 3, 1, 2)
        src, tgt = generate_synthetic(shift, self._cfg())
        assert set(np.unique(src.labels)) == set(shift.source_classes)
        assert set(np.unique(tgt.labels)) == set(shift.target_classes)
        assert not set(np.unique(src.labels)) & set(shift.target_private)
        assert not set(np.unique(tgt.labels)) & set(shift.source_private)

    def test_no_shift_limit_collapses_onto_shared_centers(self):
        shift = make_category_shift(4, 2, 1, 1)
        cfg = self._cfg(total_classes=4, noise_sigma=1e-9,
                        shift_rotation_angle=0.0, shift_translation_sigma=0.0)
        src, tgt = generate_synthetic(shift, cfg)
        for c in shift.shared:
            center = src.features[src.labels == c].mean(axis=0)
            pts = tgt.features[tgt.labels == c]
            np.testing.assert_allclose(pts, np.broadcast_to(center, pts.shape), atol=1e-6)

    def test_shift_moves_target_points(self):
        shift = make_category_shift(4, 2, 0, 2)
        plain = generate_synthetic(shift, self._cfg(total_classes=4))[1]
        moved = generate_synthetic(
            shift, self._cfg(total_classes=4, shift_rotation_angle=0.5,
                             shift_translation_sigma=1.0)
        )[1]
        assert np.abs(plain.features - moved.features).max() > 0.1

    def test_min_center_separation_enforced(self):
        shift = make_category_shift(8, 4, 2, 2)
        cfg = self._cfg(total_classes=8, min_center_separation=6.0, noise_sigma=1e-9)
        src, _ = generate_synthetic(shift, cfg)
        centers = np.stack([src.features[src.labels == c].mean(axis=0)
                            for c in shift.source_classes])
        d = np.linalg.norm(centers[:, None] - centers[None, :], axis=2)
        assert d[~np.eye(len(centers), dtype=bool)].min() >= 6.0 - 1e-6

    def test_rotation_needs_two_dims(self):
        with pytest.raises(ValueError, match="dim"):
            self._cfg(dim=1, shift_rotation_angle=0.3).validate()

    def test_split_must_fit_class_budget(self):
        shift = make_category_shift(10, 5, 2, 3)
        with pytest.raises(ValueError, match="classes"):
            generate_synthetic(shift, self._cfg(total_classes=6))


class TestEvalLabelMapping:
    def test_known_ids_pass_through_private_become_sentinel(self):
        labels = np.array([0, 2, 4, 7, 9])
        np.testing.assert_array_equal(map_to_eval_labels(labels, 5), [0, 2, 4, 5, 5])

    def test_unlabeled_rows_rejected(self):
        with pytest.raises(ValueError):
            map_to_eval_labels(np.array([0, UNLABELED]), 5)


class TestFeatureFiles:
    def test_tiny_file(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("label,f0,f1,f2,f3\n0,1.0,2.0,3.0,4.0\n1,0.5,0.5,0.5,0.5\n-1,0,0,0,1\n")
        ds = load_feature_file(path, domain="target")
        assert ds.n == 3 and ds.dim == 4
        np.testing.assert_array_equal(ds.labels, [0, 1, -1])

    def test_round_trip_exact(self, tmp_path):
        rng = substream(17, "csv")
        ds = Dataset(rng.normal(size=(12, 5)) * 1e3, rng.integers(-1, 4, size=12), "source")
        path = tmp_path / "rt.csv"
        save_feature_file(ds, path)
        back = load_feature_file(path)
        np.testing.assert_array_equal(back.features, ds.features)
        np.testing.assert_array_equal(back.labels, ds.labels)

    def test_ragged_row_reports_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("label,f0,f1\n0,1.0,2.0\n1,3.0\n")
        with pytest.raises(FeatureFileError, match="line 3"):
            load_feature_file(path)

    def test_non_numeric_reports_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("label,f0\n0,1.0\n0,abc\n")
        with pytest.raises(FeatureFileError, match="line 3"):
            load_feature_file(path)

    def test_missing_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("0,1.0,2.0\n1,3.0,4.0\n")
        with pytest.raises(FeatureFileError, match="header"):
            load_feature_file(path)

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(FeatureFileError, match="empty"):
            load_feature_file(path)


class TestBatchIter:
    def _dataset(self, n, seed=0):
        rng = substream(seed, "bi")
        return Dataset(rng.normal(size=(n, 3)), rng.integers(0, 2, size=n), "source")

    def test_short_final_batch_kept(self):
        ds = self._dataset(5)
        sizes = [len(b) for b in itertools.islice(batch_iter(ds, 2, substream(0, "it")), 3)]
        assert sizes == [2, 2, 1]

    def test_full_batch_is_permutation(self):
        ds = self._dataset(8)
        batch = next(batch_iter(ds, 8, substream(1, "it")))
        assert sorted(batch.tolist()) == list(range(8))

    def test_deterministic(self):
        ds = self._dataset(10)
        a = list(itertools.islice(batch_iter(ds, 3, substream(2, "it")), 8))
        b = list(itertools.islice(batch_iter(ds, 3, substream(2, "it")), 8))
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)

    def test_epoch_preserves_row_multiset(self):
        ds = self._dataset(7)
        batches = list(itertools.islice(batch_iter(ds, 3, substream(3, "it")), 3))
        seen = np.concatenate(batches)
        assert sorted(seen.tolist()) == list(range(7))

    def test_epochs_reshuffle(self):
        ds = self._dataset(32)
        it = batch_iter(ds, 32, substream(4, "it"))
        assert not np.array_equal(next(it), next(it))

    def test_bad_batch_size(self):
        with pytest.raises(ValueError):
            next(batch_iter(self._dataset(4), 0, substream(0, "it")))
