import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import horn_similarity, quaternion_angle_deg
from ttacope.errors import DegenerateInput, SizeMismatch
from ttacope.geometry import (
    RansacConfig,
    SimilarityTransform,
    apply_similarity,
    compose_similarity,
    invert_similarity,
    nocs_residuals,
    random_rotation,
    ransac_umeyama,
    rotation_about_axis,
    rotation_geodesic_deg,
    umeyama_fit,
)

CUBE = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float)


def random_pose(rng, scale_range=(0.2, 5.0)):
    return SimilarityTransform(random_rotation(rng), rng.normal(size=3), rng.uniform(*scale_range))


def assert_pose_close(a, b, atol):
    np.testing.assert_allclose(a.rotation, b.rotation, atol=atol)
    np.testing.assert_allclose(a.translation, b.translation, atol=atol)
    assert abs(a.scale - b.scale) <= atol


seeds = st.integers(0, 2**32 - 1)


class TestSimilarityTransform:
    def test_rejects_nonpositive_scale(self):
        with pytest.raises(ValueError):
            SimilarityTransform(np.eye(3), np.zeros(3), 0.0)

    def test_list_round_trip(self, rng):
        pose = random_pose(rng)
        back = SimilarityTransform.from_list(pose.to_list())
        assert back.to_list() == pose.to_list()
        assert len(pose.to_list()) == 13

    def test_validity_check(self, rng):
        assert random_pose(rng).is_valid()
        assert not SimilarityTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3), 1.0).is_valid()


class TestApplyInvert:
    def test_identity_leaves_cloud(self, rng):
        pts = rng.normal(size=(10, 3))
        np.testing.assert_array_equal(apply_similarity(SimilarityTransform.identity(), pts), pts)

    def test_scale_only(self):
        pose = SimilarityTransform(np.eye(3), np.zeros(3), 2.0)
        np.testing.assert_allclose(apply_similarity(pose, [[1.0, 0, 0]]), [[2.0, 0, 0]])

    def test_inverse_closed_form(self):
        inv = invert_similarity(SimilarityTransform(np.eye(3), [1.0, 0, 0], 2.0))
        assert inv.scale == 0.5
        np.testing.assert_allclose(inv.rotation, np.eye(3))
        np.testing.assert_allclose(inv.translation, [-0.5, 0, 0])

    def test_inverse_of_identity(self):
        inv = invert_similarity(SimilarityTransform.identity())
        assert_pose_close(inv, SimilarityTransform.identity(), 0)

    @given(seeds)
    def test_round_trip(self, seed):
        rng = np.random.default_rng(seed)
        pose = random_pose(rng)
        pts = rng.normal(size=(15, 3))
        back = apply_similarity(invert_similarity(pose), apply_similarity(pose, pts))
        np.testing.assert_allclose(back, pts, atol=1e-9)

    @given(seeds)
    def test_composition_with_inverse_is_identity(self, seed):
        pose = random_pose(np.random.default_rng(seed))
        ident = compose_similarity(pose, invert_similarity(pose))
        np.testing.assert_allclose(ident.rotation, np.eye(3), atol=1e-12)
        assert np.linalg.norm(ident.translation) < 1e-9
        assert abs(ident.scale - 1) < 1e-12

    @given(seeds)
    def test_compose_matches_sequential_application(self, seed):
        rng = np.random.default_rng(seed)
        a, b = random_pose(rng), random_pose(rng)
        pts = rng.normal(size=(7, 3))
        np.testing.assert_allclose(
            apply_similarity(compose_similarity(a, b), pts),
            apply_similarity(a, apply_similarity(b, pts)),
            atol=1e-9,
        )


class TestUmeyama:
    def test_cube_identity(self):
        pose = umeyama_fit(CUBE, CUBE)
        np.testing.assert_allclose(pose.rotation, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(pose.translation, 0, atol=1e-12)
        assert pose.scale == pytest.approx(1.0, abs=1e-12)

    def test_known_transform_recovered(self, rng):
        src = rng.random((20, 3))
        truth = SimilarityTransform(random_rotation(rng), rng.normal(size=3), 1.7)
        assert_pose_close(umeyama_fit(src, apply_similarity(truth, src)), truth, 1e-9)

    def test_collinear_rejected(self):
        src = np.array([[0, 0, 0], [1, 1, 1], [2, 2, 2]], dtype=float)
        with pytest.raises(DegenerateInput):
            umeyama_fit(src, src)

    def test_coincident_rejected(self):
        src = np.ones((5, 3))
        with pytest.raises(DegenerateInput):
            umeyama_fit(src, src)

    def test_too_few_points(self):
        with pytest.raises(DegenerateInput):
            umeyama_fit(CUBE[:2], CUBE[:2])

    def test_size_mismatch(self):
        with pytest.raises(SizeMismatch):
            umeyama_fit(CUBE, CUBE[:5])

    def test_coplanar_points_are_fine(self, rng):
        # a planar cloud still fixes the similarity; only rank < 2 is degenerate
        src = np.c_[rng.random((12, 2)), np.zeros(12)]
        truth = random_pose(rng)
        assert_pose_close(umeyama_fit(src, apply_similarity(truth, src)), truth, 1e-9)

    def test_reflection_is_corrected(self, rng):
        src = rng.normal(size=(30, 3))
        mirrored = src * np.array([1.0, 1.0, -1.0])
        pose = umeyama_fit(src, mirrored)
        assert np.linalg.det(pose.rotation) == pytest.approx(1.0, abs=1e-12)
        assert pose.is_valid()

    @given(seeds)
    def test_exact_recovery(self, seed):
        rng = np.random.default_rng(seed)
        src = rng.random((rng.integers(4, 40), 3))
        truth = random_pose(rng)
        assert_pose_close(umeyama_fit(src, apply_similarity(truth, src)), truth, 1e-9)

    @given(seeds)
    def test_matches_quaternion_oracle_on_noisy_data(self, seed):
        rng = np.random.default_rng(seed)
        src = rng.random((25, 3))
        dst = apply_similarity(random_pose(rng), src) + rng.normal(0, 0.05, size=(25, 3))
        pose = umeyama_fit(src, dst)
        r, t, s = horn_similarity(src, dst)
        np.testing.assert_allclose(pose.rotation, r, atol=1e-8)
        np.testing.assert_allclose(pose.translation, t, atol=1e-8)
        assert pose.scale == pytest.approx(s, rel=1e-9)

    @given(seeds)
    def test_left_equivariance(self, seed):
        rng = np.random.default_rng(seed)
        src = rng.random((20, 3))
        dst = apply_similarity(random_pose(rng), src) + rng.normal(0, 0.02, size=(20, 3))
        g = random_pose(rng)
        lhs = umeyama_fit(src, apply_similarity(g, dst))
        rhs = compose_similarity(g, umeyama_fit(src, dst))
        assert_pose_close(lhs, rhs, 1e-8)


def outlier_problem(rng, n=100, n_out=30):
    """NOCS-like source, metric destination, ``n_out`` destination points replaced by clutter."""
    src = rng.random((n, 3))
    truth = SimilarityTransform(random_rotation(rng), rng.uniform(-0.3, 0.3, 3) + [0, 0, 0.8], rng.uniform(0.15, 0.35))
    dst = apply_similarity(truth, src - 0.5)
    bad = rng.choice(n, size=n_out, replace=False)
    dst[bad] = truth.translation + rng.uniform(-0.3, 0.3, size=(n_out, 3))
    return src, dst, truth, bad


class TestRansac:
    def test_noiseless_all_inliers(self, rng):
        src = rng.random((50, 3))
        truth = random_pose(rng)
        pose, mask = ransac_umeyama(src, apply_similarity(truth, src))
        assert mask.all()
        assert_pose_close(pose, truth, 1e-9)

    def test_outliers_rejected(self, rng):
        src, dst, truth, bad = outlier_problem(rng)
        pose, mask = ransac_umeyama(src - 0.5, dst, RansacConfig(inlier_threshold=0.05, rng_seed=3))
        assert rotation_geodesic_deg(pose.rotation, truth.rotation) < 0.5
        assert np.linalg.norm(pose.translation - truth.translation) < 0.005
        # oracle: a plain fit on the true inliers
        good = np.setdiff1d(np.arange(len(src)), bad)
        exact = umeyama_fit(src[good] - 0.5, dst[good])
        assert_pose_close(pose, exact, 1e-8)

    def test_mask_matches_residuals_under_returned_pose(self, rng):
        src, dst, _, _ = outlier_problem(rng)
        cfg = RansacConfig(inlier_threshold=0.05, rng_seed=1)
        pose, mask = ransac_umeyama(src, dst, cfg)
        np.testing.assert_array_equal(mask, nocs_residuals(pose, src, dst) <= 0.05)

    def test_deterministic(self, rng):
        src, dst, _, _ = outlier_problem(rng)
        cfg = RansacConfig(rng_seed=99)
        p1, m1 = ransac_umeyama(src, dst, cfg)
        p2, m2 = ransac_umeyama(src, dst, cfg)
        assert p1.to_list() == p2.to_list()
        np.testing.assert_array_equal(m1, m2)

    def test_size_mismatch(self):
        with pytest.raises(SizeMismatch):
            ransac_umeyama(CUBE, CUBE[:6])

    def test_fewer_points_than_sample(self):
        with pytest.raises(SizeMismatch):
            ransac_umeyama(CUBE[:3], CUBE[:3])

    def test_all_degenerate_samples(self):
        line = np.outer(np.arange(10.0), [1.0, 2.0, 3.0])
        with pytest.raises(DegenerateInput):
            ransac_umeyama(line, line)

    @pytest.mark.parametrize("field,value", [
        ("max_iterations", 0), ("sample_size", 2), ("inlier_threshold", 0.0),
    ])
    def test_config_validation(self, field, value):
        with pytest.raises(ValueError):
            RansacConfig(**{field: value})


class TestRotationAngle:
    def test_same_rotation(self, rng):
        r = random_rotation(rng)
        assert rotation_geodesic_deg(r, r) == pytest.approx(0.0, abs=1e-6)

    def test_quarter_turn(self, rng):
        r = random_rotation(rng)
        assert rotation_geodesic_deg(r, r @ rotation_about_axis([0, 0, 1], np.pi / 2)) == pytest.approx(90.0)

    def test_half_turn_clamped(self):
        assert rotation_geodesic_deg(np.eye(3), rotation_about_axis([1, 0, 0], np.pi)) == pytest.approx(180.0)

    @given(seeds)
    def test_matches_quaternion_oracle(self, seed):
        rng = np.random.default_rng(seed)
        r1, r2 = random_rotation(rng), random_rotation(rng)
        assert abs(rotation_geodesic_deg(r1, r2) - quaternion_angle_deg(r1, r2)) < 1e-6

    @given(seeds)
    def test_random_rotation_is_proper(self, seed):
        r = random_rotation(np.random.default_rng(seed))
        np.testing.assert_allclose(r.T @ r, np.eye(3), atol=1e-12)
        assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-12)
