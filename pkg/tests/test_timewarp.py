import math

import numpy as np
import pytest
from scipy.special import logsumexp

from scankit.exceptions import TimewarpError
from scankit.geometry import sample_uniform_sphere
from scankit.timewarp import (
    CostMatrix,
    SoftDtwConfig,
    cost_matrix_spherical,
    dtw_hard,
    expected_alignment,
    soft_dtw,
    soft_dtw_grad,
    soft_dtw_spherical,
    soft_dtw_value_and_grad,
)

from conftest import random_rotation


def monotone_paths(n: int, m: int):
    """穷举 (0,0) 到 (n-1,m-1) 的全部单调路径"""

    def walk(i, j, path):
        if (i, j) == (n - 1, m - 1):
            yield path
            return
        for di, dj in ((1, 0), (0, 1), (1, 1)):
            if i + di < n and j + dj < m:
                yield from walk(i + di, j + dj, path + [(i + di, j + dj)])

    yield from walk(0, 0, [(0, 0)])


def path_costs(values: np.ndarray) -> np.ndarray:
    n, m = values.shape
    return np.array([sum(values[i, j] for i, j in path) for path in monotone_paths(n, m)])


def random_instances(rng, count=50):
    for _ in range(count):
        n, m = rng.integers(1, 7, size=2)
        yield rng.uniform(0.5, 1.5, size=(n, m))


class TestCostMatrix:
    def test_identical_zero_diagonal(self, rng):
        r = sample_uniform_sphere(5, rng)
        assert np.allclose(np.diag(cost_matrix_spherical(r, r).values), 0.0)

    def test_single_points(self):
        cost = cost_matrix_spherical(np.array([[1.0, 0, 0]]), np.array([[0, 1.0, 0]]))
        assert cost.shape == (1, 1)
        assert cost.values[0, 0] == pytest.approx(math.pi / 2)

    def test_rejects_negative(self):
        with pytest.raises(TimewarpError):
            CostMatrix(np.array([[-1.0]]))


class TestHardDtw:
    def test_identical_is_diagonal(self, rng):
        r = sample_uniform_sphere(6, rng)
        value, alignment = dtw_hard(cost_matrix_spherical(r, r))
        assert value == pytest.approx(0.0, abs=1e-12)
        assert alignment.path == tuple((i, i) for i in range(6))

    def test_single_row_sums(self):
        values = np.array([[0.3, 1.2, 0.5, 2.0]])
        value, alignment = dtw_hard(CostMatrix(values))
        assert value == pytest.approx(values.sum())
        assert alignment.cells.sum() == 4

    def test_exhaustive_minimum(self, rng):
        for values in random_instances(rng):
            value, alignment = dtw_hard(CostMatrix(values))
            assert value == pytest.approx(path_costs(values).min(), rel=1e-12)
            assert alignment.cost(CostMatrix(values)) == pytest.approx(value, rel=1e-12)

    def test_small_gamma_close_to_hard(self, rng):
        for values in random_instances(rng):
            cost = CostMatrix(values)
            hard = dtw_hard(cost)[0]
            assert soft_dtw(cost, SoftDtwConfig(1e-3)) == pytest.approx(hard, rel=1e-2)


class TestSoftDtw:
    @pytest.mark.parametrize("gamma", [0.1, 1.0])
    def test_exhaustive_softmin(self, rng, gamma):
        for values in random_instances(rng):
            expected = -gamma * logsumexp(-path_costs(values) / gamma)
            assert soft_dtw(CostMatrix(values), SoftDtwConfig(gamma)) == pytest.approx(expected, rel=1e-6)

    def test_gamma_zero_is_hard(self, rng):
        for values in random_instances(rng, 10):
            cost = CostMatrix(values)
            assert soft_dtw(cost, SoftDtwConfig(0.0)) == dtw_hard(cost)[0]

    def test_identical_not_positive(self, rng):
        r = sample_uniform_sphere(5, rng)
        assert soft_dtw_spherical(r, r, SoftDtwConfig(1.0)) <= 0.0

    def test_spherical_composition(self, rng):
        r, s = sample_uniform_sphere(5, rng), sample_uniform_sphere(4, rng)
        cfg = SoftDtwConfig(0.5)
        assert soft_dtw_spherical(r, s, cfg) == soft_dtw(cost_matrix_spherical(r, s), cfg)

    def test_rotation_invariance(self, rng):
        r, s = sample_uniform_sphere(6, rng), sample_uniform_sphere(6, rng)
        rotation = random_rotation(rng)
        before = soft_dtw_spherical(r, s)
        after = soft_dtw_spherical(r @ rotation.T, s @ rotation.T)
        assert after == pytest.approx(before, abs=1e-9)

    def test_nonincreasing_in_gamma(self, rng):
        gammas = [0.0, 0.01, 0.1, 0.5, 1.0, 2.0]
        for values in random_instances(rng, 20):
            cost = CostMatrix(values)
            ladder = [soft_dtw(cost, SoftDtwConfig(gamma)) for gamma in gammas]
            assert all(later <= earlier + 1e-12 for earlier, later in zip(ladder, ladder[1:]))

    @pytest.mark.parametrize("gamma", [0.05, 0.5, 2.0])
    def test_bounded_by_path_count(self, rng, gamma):
        for values in random_instances(rng, 30):
            cost = CostMatrix(values)
            hard = dtw_hard(cost)[0]
            n_paths = len(path_costs(values))
            soft = soft_dtw(cost, SoftDtwConfig(gamma))
            assert hard - gamma * math.log(n_paths) - 1e-9 <= soft <= hard + 1e-9

    def test_negative_gamma_rejected(self):
        with pytest.raises(TimewarpError):
            SoftDtwConfig(-0.1)


class TestGradient:
    def test_expected_alignment_single_row(self):
        _, E = expected_alignment(CostMatrix(np.array([[0.4, 0.9, 0.1]])), SoftDtwConfig(1.0))
        assert np.allclose(E, 1.0)

    def test_expected_alignment_finite_differences(self, rng):
        values = rng.uniform(0.5, 1.5, size=(4, 5))
        cfg = SoftDtwConfig(0.7)
        _, E = expected_alignment(CostMatrix(values), cfg)
        h = 1e-6
        for i in range(4):
            for j in range(5):
                plus, minus = values.copy(), values.copy()
                plus[i, j] += h
                minus[i, j] -= h
                fd = (soft_dtw(CostMatrix(plus), cfg) - soft_dtw(CostMatrix(minus), cfg)) / (2 * h)
                assert E[i, j] == pytest.approx(fd, abs=1e-7)

    @pytest.mark.parametrize("gamma", [0.1, 1.0])
    def test_finite_differences(self, rng, gamma):
        cfg = SoftDtwConfig(gamma)
        h = 1e-5
        for _ in range(5):
            r, s = sample_uniform_sphere(6, rng), sample_uniform_sphere(6, rng)
            grad = soft_dtw_grad(r, s, cfg)
            fd = np.zeros_like(r)
            for i in range(6):
                for k in range(3):
                    plus, minus = r.copy(), r.copy()
                    plus[i, k] += h
                    minus[i, k] -= h
                    fd[i, k] = (soft_dtw_spherical(plus, s, cfg) - soft_dtw_spherical(minus, s, cfg)) / (2 * h)
            assert np.max(np.abs(grad - fd)) / np.max(np.abs(fd)) <= 1e-4

    def test_euclidean_ground(self, rng):
        r, s = sample_uniform_sphere(4, rng), sample_uniform_sphere(5, rng)
        cfg = SoftDtwConfig(1.0)
        value, grad = soft_dtw_value_and_grad(r, s, cfg, ground="euclid")
        h = 1e-5
        plus = r.copy()
        plus[2, 1] += h
        minus = r.copy()
        minus[2, 1] -= h
        value_plus, _ = soft_dtw_value_and_grad(plus, s, cfg, ground="euclid")
        value_minus, _ = soft_dtw_value_and_grad(minus, s, cfg, ground="euclid")
        assert grad[2, 1] == pytest.approx((value_plus - value_minus) / (2 * h), rel=1e-4, abs=1e-8)

    def test_small_gamma_follows_hard_path(self, rng):
        r = sample_uniform_sphere(5, rng)
        _, alignment = dtw_hard(cost_matrix_spherical(r, r))
        _, E = expected_alignment(cost_matrix_spherical(r, r), SoftDtwConfig(1e-3))
        assert np.allclose(E, alignment.cells, atol=1e-6)

    def test_gradient_needs_gamma(self, rng):
        r = sample_uniform_sphere(3, rng)
        with pytest.raises(TimewarpError):
            soft_dtw_grad(r, r, SoftDtwConfig(0.0))

    def test_underflowed_alignment_gives_zero_gradient(self):
        # 赤道上相隔 50°, 非对角格子的权重 exp(-0.87 / 1e-3) 下溢为 0
        lon = np.radians(np.arange(5) * 50.0)
        r = np.stack([np.cos(lon), np.sin(lon), np.zeros(5)], axis=1)
        cfg = SoftDtwConfig(1e-3)
        _, E = expected_alignment(cost_matrix_spherical(r, r), cfg)
        assert np.all(E[~np.eye(5, dtype=bool)] < 1e-300)
        _, grad = soft_dtw_value_and_grad(r, r.copy(), cfg)
        assert np.all(np.isfinite(grad))
        assert np.allclose(grad, 0.0, atol=1e-12)
