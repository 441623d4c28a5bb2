import numpy as np
import pytest

from svcomplete import tensor as T
from svcomplete.coarse import CoarseDecoder, PointEncoder, ViewEncoder, ViewFusion, merge_resample
from svcomplete.config import profile
from svcomplete.model import render_views
from svcomplete.tensor import ShapeError, Tensor

from _oracles import random_cloud

DESK = profile("desk")


def _rng(seed=0):
    return np.random.default_rng(seed)


class TestPointEncoder:
    def test_desk_output_dimension(self):
        enc = PointEncoder(_rng(), DESK)
        out = enc(random_cloud(_rng(1), DESK.n_input, scale=0.5).astype(np.float32))
        assert out.shape == (DESK.point_feat_dim,)
        assert np.all(np.isfinite(out.data))

    def test_permutation_invariance(self):
        enc = PointEncoder(_rng(2), DESK)
        pts = random_cloud(_rng(3), DESK.n_input, scale=0.5).astype(np.float32)
        a = enc(pts).data
        b = enc(pts[_rng(4).permutation(len(pts))]).data
        assert np.max(np.abs(a - b)) <= 1e-5

    def test_degenerate_duplicated_point_is_finite(self):
        enc = PointEncoder(_rng(5), DESK)
        pts = np.tile(np.array([[0.1, -0.2, 0.3]], dtype=np.float32), (DESK.n_input, 1))
        out = enc(pts)
        assert np.all(np.isfinite(out.data))

    def test_empty_cloud_errors(self):
        enc = PointEncoder(_rng(6), DESK)
        with pytest.raises(ValueError):
            enc(np.zeros((0, 3), dtype=np.float32))


class TestViewEncoder:
    def test_row_per_view(self):
        enc = ViewEncoder(_rng(7), DESK)
        cloud = random_cloud(_rng(8), 128, scale=0.5)
        views = render_views(cloud, DESK)
        out = enc(views)
        assert out.shape == (3, DESK.view_channels[-1])

    def test_empty_maps_give_identical_rows(self):
        enc = ViewEncoder(_rng(9), DESK)
        views = render_views(np.full((4, 3), 100.0), DESK)  # everything out of frame
        assert all(np.count_nonzero(m.depth) == 0 for m in views.maps)
        out = enc(views).data
        assert np.array_equal(out[0], out[1])
        assert np.array_equal(out[1], out[2])

    def test_depth_scaling_changes_output(self):
        enc = ViewEncoder(_rng(10), DESK)
        cloud = random_cloud(_rng(11), 128, scale=0.45)
        views = render_views(cloud, DESK)
        base = enc(views).data.copy()
        for m in views.maps:
            m.depth = m.depth * 2.0
        scaled = enc(views).data
        assert not np.allclose(base, scaled)

    def test_resolution_mismatch_rejected(self):
        enc = ViewEncoder(_rng(12), DESK)
        cloud = random_cloud(_rng(13), 64, scale=0.5)
        views = render_views(cloud, DESK)
        views.maps[1].depth = np.zeros((32, 32), dtype=np.float32)
        with pytest.raises(ValueError, match="resolution"):
            enc(views)


class TestViewFusion:
    def _fused(self, seed, n_views=3):
        rng = _rng(seed)
        fusion = ViewFusion(rng, view_dim=6, point_dim=5, embed=8)
        fv = Tensor(rng.normal(size=(n_views, 6)).astype(np.float32))
        fp = Tensor(rng.normal(size=5).astype(np.float32))
        vp = rng.normal(size=(n_views, 3))
        return fusion, fv, fp, vp

    def test_single_view_weight_is_one(self):
        fusion, fv, fp, vp = self._fused(14, n_views=1)
        out = fusion(fv, fp, vp)
        assert fusion.last_weights.shape == (1, 1)
        assert fusion.last_weights[0, 0] == pytest.approx(1.0)
        assert out.shape == (13,)

    def test_joint_permutation_invariance(self):
        fusion, fv, fp, vp = self._fused(15)
        base = fusion(fv, fp, vp).data.copy()
        perm = np.array([2, 0, 1])
        out = fusion(T.gather_rows(fv, perm), fp, vp[perm]).data
        assert np.max(np.abs(base - out)) <= 1e-6

    def test_attention_rows_sum_to_one(self):
        fusion, fv, fp, vp = self._fused(16)
        fusion(fv, fp, vp)
        assert np.allclose(fusion.last_weights.sum(axis=1), 1.0, atol=1e-6)

    def test_vp_row_mismatch_rejected(self):
        fusion, fv, fp, vp = self._fused(17)
        with pytest.raises(ShapeError):
            fusion(fv, fp, vp[:2])


class TestCoarseDecoder:
    def test_output_shape_and_finite(self):
        rng = _rng(18)
        dec = CoarseDecoder(rng, code_dim=16, n_points=128, point_dim=8, attn_dim=12)
        out = dec(Tensor(rng.normal(size=16).astype(np.float32)))
        assert out.shape == (128, 3)
        assert np.all(np.isfinite(out.data))

    def test_different_codes_give_different_clouds(self):
        rng = _rng(19)
        dec = CoarseDecoder(rng, code_dim=16, n_points=32, point_dim=8, attn_dim=12)
        a = dec(Tensor(rng.normal(size=16).astype(np.float32))).data
        b = dec(Tensor(rng.normal(size=16).astype(np.float32))).data
        assert not np.allclose(a, b)


class TestMergeResample:
    def test_desk_profile_size(self):
        rng = _rng(20)
        coarse = Tensor(random_cloud(rng, DESK.n_coarse, 0.5).astype(np.float32))
        partial = random_cloud(rng, DESK.n_input, 0.5).astype(np.float32)
        out = merge_resample(coarse, partial, DESK.n_merged)
        assert out.shape == (DESK.n_merged, 3)

    def test_identical_inputs_stay_subset(self):
        rng = _rng(21)
        pts = random_cloud(rng, 64, 0.5).astype(np.float32)
        out = merge_resample(Tensor(pts), pts, 32).data
        rows = {tuple(r) for r in pts.tolist()}
        assert all(tuple(r) in rows for r in out.tolist())

    def test_membership_row_for_row(self):
        rng = _rng(22)
        coarse = Tensor(random_cloud(rng, 40, 0.5).astype(np.float32))
        partial = random_cloud(rng, 50, 0.5).astype(np.float32)
        out = merge_resample(coarse, partial, 60).data
        pool = np.concatenate([coarse.data, partial])
        rows = {tuple(r) for r in pool.tolist()}
        assert all(tuple(r) in rows for r in out.tolist())

    def test_too_large_target_errors(self):
        rng = _rng(23)
        with pytest.raises(ValueError):
            merge_resample(Tensor(np.zeros((4, 3), dtype=np.float32)),
                           random_cloud(rng, 4, 0.5), 9)

    def test_gradients_reach_selected_coarse_points(self):
        rng = _rng(24)
        coarse = Tensor(random_cloud(rng, 30, 0.5).astype(np.float32), requires_grad=True)
        partial = random_cloud(rng, 10, 0.5).astype(np.float32)
        out = merge_resample(coarse, partial, 25)
        T.sum_reduce(out).backward()
        assert coarse.grad is not None
        assert np.any(coarse.grad != 0)
