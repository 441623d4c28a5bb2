import numpy as np
import pytest

from svcomplete import data as D
from svcomplete.config import profile
from svcomplete.errors import DataError

DESK = profile("desk")


class TestXyzFiles:
    def test_round_trip_is_value_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        pts = rng.uniform(-0.5, 0.5, size=(64, 3))
        pts[0] = [1.23456789e-4, -9.87654321e-1, 0.0]
        path = tmp_path / "c.xyz"
        D.write_xyz(path, pts)
        back = D.read_xyz(path)
        # shortest-round-trip formatting: exact, hence exact at 6 digits too
        assert np.array_equal(back, pts)

    def test_comments_and_blank_lines_skipped(self, tmp_path):
        path = tmp_path / "c.xyz"
        path.write_text("# header\n\n1 2 3\n4 5 6  # trailing\n")
        assert np.array_equal(D.read_xyz(path), [[1, 2, 3], [4, 5, 6]])

    def test_malformed_line_names_line_number(self, tmp_path):
        path = tmp_path / "bad.xyz"
        path.write_text("0 0 0\n1 2\n")
        with pytest.raises(DataError, match="line 2"):
            D.read_xyz(path)

    def test_non_numeric_names_line_number(self, tmp_path):
        path = tmp_path / "bad.xyz"
        path.write_text("0 0 0\n0 zero 0\n")
        with pytest.raises(DataError, match="line 2"):
            D.read_xyz(path)

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "e.xyz"
        path.write_text("# nothing\n")
        with pytest.raises(DataError, match="no points"):
            D.read_xyz(path)


class TestSynth:
    def test_same_seed_bit_identical(self):
        a = D.synth_dataset(4, seed=9, cfg=DESK)
        b = D.synth_dataset(4, seed=9, cfg=DESK)
        for pa, pb in zip(a, b):
            assert pa.category == pb.category
            assert np.array_equal(pa.partial, pb.partial)
            assert np.array_equal(pa.complete, pb.complete)

    def test_different_seeds_differ(self):
        a = D.synth_dataset(2, seed=1, cfg=DESK)
        b = D.synth_dataset(2, seed=2, cfg=DESK)
        assert not np.array_equal(a[0].complete, b[0].complete)

    def test_sizes_match_profile(self):
        for pair in D.synth_dataset(3, seed=3, cfg=DESK):
            assert pair.partial.shape == (DESK.n_input, 3)
            assert pair.complete.shape == (DESK.n_gt, 3)

    def test_partial_points_lie_on_complete_surface(self):
        for pair in D.synth_dataset(4, seed=4, cfg=DESK):
            rows = {tuple(np.round(r, 12)) for r in pair.complete.tolist()}
            hit = sum(tuple(np.round(r, 12)) in rows for r in pair.partial.tolist())
            assert hit == pair.partial.shape[0]

    def test_occlusion_fraction_in_band(self):
        rng = np.random.default_rng(5)
        for _ in range(1000):
            pts = rng.uniform(-0.5, 0.5, size=(256, 3))
            kept = D.occlude(pts, rng)
            frac = kept.shape[0] / pts.shape[0]
            assert 0.25 <= frac <= 0.75

    def test_coordinates_inside_profile_range(self):
        for pair in D.synth_dataset(6, seed=6, cfg=DESK):
            assert np.abs(pair.complete).max() <= DESK.half_extent + 1e-9

    def test_count_validation(self):
        with pytest.raises(ValueError):
            D.synth_dataset(0, seed=0, cfg=DESK)

    def test_all_categories_reachable(self):
        cats = {p.category for p in D.synth_dataset(32, seed=7, cfg=DESK)}
        assert cats == set(D.CATEGORIES)


class TestDatasetLayout:
    def test_write_then_load(self, tmp_path):
        pairs = D.synth_dataset(3, seed=8, cfg=DESK)
        D.write_dataset(tmp_path, pairs, "desk", 8)
        assert (tmp_path / "index.json").exists()
        assert len(list((tmp_path / "pairs").glob("*.xyz"))) == 6
        loaded = D.load_dataset(tmp_path)
        assert [p.pair_id for p in loaded] == [p.pair_id for p in pairs]
        assert [p.category for p in loaded] == [p.category for p in pairs]
        # xyz precision: at least 6 significant digits survive
        assert np.allclose(loaded[0].complete, pairs[0].complete, rtol=1e-6, atol=1e-12)

    def test_missing_index_raises(self, tmp_path):
        with pytest.raises(DataError, match="index.json"):
            D.load_dataset(tmp_path)
