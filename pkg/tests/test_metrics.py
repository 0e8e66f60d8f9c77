import numpy as np
import pytest

from sonomesh.errors import EmptyCloudError, ValidationError
from sonomesh.metrics import chamfer_exact, chamfer_sampled
from sonomesh.mesh_io import PointCloud


def cloud(rng, n, scale=100.0):
    return rng.uniform(0, scale, size=(n, 3))


class TestChamferExact:
    def test_identical_clouds(self):
        rng = np.random.default_rng(0)
        pts = cloud(rng, 50)
        assert chamfer_exact(pts, pts) == 0.0

    def test_two_unit_separated_points(self):
        s = np.array([[0.0, 0.0, 0.0]])
        t = np.array([[1.0, 0.0, 0.0]])
        assert chamfer_exact(s, t) == pytest.approx(2.0)

    def test_hand_derived_three_points(self):
        # S -> T: both points at squared distance 1, mean 1; T -> S: nearest is 1
        s = np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
        t = np.array([[1.0, 0.0, 0.0]])
        assert chamfer_exact(s, t) == pytest.approx(2.0)
        assert chamfer_exact(s, t, backend="brute") == pytest.approx(2.0)

    def test_symmetry_exact(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            s, t = cloud(rng, 40), cloud(rng, 25)
            assert chamfer_exact(s, t) == chamfer_exact(t, s)

    def test_translation_invariance(self):
        rng = np.random.default_rng(2)
        s, t = cloud(rng, 60), cloud(rng, 45)
        shift = np.array([12.3, -4.5, 6.7])
        base = chamfer_exact(s, t)
        moved = chamfer_exact(s + shift, t + shift)
        assert abs(moved - base) <= 1e-9 * max(base, 1.0)

    def test_squared_scaling_law(self):
        rng = np.random.default_rng(3)
        s, t = cloud(rng, 30), cloud(rng, 30)
        base = chamfer_exact(s, t)
        for a in (0.5, 2.0, 7.0):
            scaled = chamfer_exact(a * s, a * t)
            assert abs(scaled - a * a * base) <= 1e-9 * max(scaled, 1.0)

    def test_backends_agree(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            s = cloud(rng, int(rng.integers(1, 200)))
            t = cloud(rng, int(rng.integers(1, 200)))
            kd = chamfer_exact(s, t, backend="kdtree")
            brute = chamfer_exact(s, t, backend="brute")
            assert abs(kd - brute) <= 1e-9 * max(kd, 1e-30)

    def test_empty_cloud_rejected(self):
        with pytest.raises(EmptyCloudError):
            chamfer_exact(np.zeros((0, 3)), np.zeros((3, 3)))

    def test_accepts_point_cloud_objects(self):
        rng = np.random.default_rng(5)
        s = PointCloud(points=cloud(rng, 10))
        assert chamfer_exact(s, s) == 0.0

    def test_unknown_backend(self):
        with pytest.raises(ValidationError):
            chamfer_exact(np.ones((2, 3)), np.ones((2, 3)), backend="gpu")


class TestChamferSampled:
    def test_small_clouds_equal_exact(self):
        rng = np.random.default_rng(6)
        s, t = cloud(rng, 100), cloud(rng, 80)
        result = chamfer_sampled(s, t, v=200, seed=0)
        assert result.value == chamfer_exact(s, t)
        assert result.v_used == "exact"

    def test_sampling_reported(self):
        rng = np.random.default_rng(7)
        s, t = cloud(rng, 500), cloud(rng, 100)
        result = chamfer_sampled(s, t, v=200, seed=0)
        assert result.v_used == 200

    def test_seed_determinism(self):
        rng = np.random.default_rng(8)
        s, t = cloud(rng, 1000), cloud(rng, 900)
        a = chamfer_sampled(s, t, v=100, seed=42)
        b = chamfer_sampled(s, t, v=100, seed=42)
        assert a.value == b.value

    def test_stable_across_seeds(self):
        rng = np.random.default_rng(9)
        s, t = cloud(rng, 20_000), cloud(rng, 20_000)
        values = np.array([chamfer_sampled(s, t, v=2000, seed=k).value for k in range(8)])
        assert values.std() / values.mean() < 0.05

    def test_large_misfits_approximated_closely(self):
        # sampling granularity is negligible once the true distance dominates it
        rng = np.random.default_rng(10)
        theta = rng.uniform(0, 2 * np.pi, size=20_000)
        z = rng.uniform(0, 30, size=20_000)
        s = np.stack([10 * np.cos(theta), 10 * np.sin(theta), z], axis=1)
        t = s[rng.permutation(len(s))[:15_000]] + np.array([4.0, 0.0, 0.0])
        exact = chamfer_exact(s, t)
        approx = chamfer_sampled(s, t, v=5000, seed=0).value
        assert exact > 5.0
        assert approx == pytest.approx(exact, rel=0.1)

    def test_v_validated(self):
        with pytest.raises(ValidationError):
            chamfer_sampled(np.ones((2, 3)), np.ones((2, 3)), v=0)
