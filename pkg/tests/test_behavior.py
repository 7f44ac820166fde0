import math

import numpy as np
import pytest

from scankit.behavior import (
    DensityMap,
    aggregate_map,
    exploration_time,
    kde_by_start_region,
    kde_mode_and_spread,
    kde_timestamp,
    latitude_marginal,
    layout_kde_comparison,
    region_bounds,
    roc_congruency,
    start_region_partition,
)
from scankit.exceptions import MetricError
from scankit.geometry import (
    equirect_pixel_to_latlon,
    latlon_to_unit_array,
    pixel_solid_angle,
    rotate_lon,
    sample_uniform_sphere,
    sample_vmf,
    spherical_distance_array,
)
from scankit.model import Scanpath, ScanpathSet

from conftest import random_set, scanpath_from_degrees


def pixel_center_vector(row: int, col: int, height: int, width: int) -> np.ndarray:
    p = equirect_pixel_to_latlon(row, col, height, width)
    return latlon_to_unit_array(p.lat, p.lon)


def sweep(start_lon_deg: float, step_deg: float, length: int = 30) -> Scanpath:
    return scanpath_from_degrees([[0.0, start_lon_deg + step_deg * k] for k in range(length)])


def rotated(sps: ScanpathSet, angle: float) -> ScanpathSet:
    return ScanpathSet([Scanpath(rotate_lon(sp.points, angle)) for sp in sps], image_id=sps.image_id)


class TestAggregateMap:
    def test_sums_to_one(self, rng):
        agg = aggregate_map(random_set(rng, 10))
        assert agg.shape == (64, 128)
        assert np.all(agg.values >= 0)
        assert agg.values.sum() == pytest.approx(1.0, abs=1e-9)

    def test_single_point_without_blur(self):
        agg = aggregate_map(ScanpathSet([scanpath_from_degrees([[10.0, 20.0]])]), 16, 32, blur_sigma=0.0)
        row, col = np.unravel_index(np.argmax(agg.values), agg.shape)
        assert agg.values[row, col] == 1.0
        assert (row, col) == (7, 17)

    def test_uniform_points_follow_pixel_area(self, rng):
        sps = ScanpathSet([Scanpath(sample_uniform_sphere(100_000, rng))])
        _, marginal = latitude_marginal(aggregate_map(sps, 16, 32, blur_sigma=0.0))
        expected = pixel_solid_angle(16, 32).sum(axis=1) / (4 * math.pi)
        assert np.allclose(marginal, expected, atol=5e-3)

    def test_order_invariant(self, rng):
        sps = random_set(rng, 8)
        shuffled = ScanpathSet([sps[i] for i in rng.permutation(len(sps))])
        assert np.allclose(aggregate_map(sps).values, aggregate_map(shuffled).values, rtol=1e-12, atol=0)

    def test_commutes_with_longitude_shift(self, rng):
        sps = random_set(rng, 5)
        for shift in (1, 7, 64):
            angle = shift * 2 * math.pi / 128
            before = aggregate_map(sps, blur_sigma=0.0).values
            after = aggregate_map(rotated(sps, angle), blur_sigma=0.0).values
            assert np.array_equal(np.roll(before, shift, axis=1), after)

            before = aggregate_map(sps).values
            after = aggregate_map(rotated(sps, angle)).values
            assert np.allclose(np.roll(before, shift, axis=1), after, rtol=1e-12, atol=1e-15)

    def test_latitude_marginal_rows(self, rng):
        lat, marginal = latitude_marginal(aggregate_map(random_set(rng, 4), 8, 16))
        assert lat[0] == pytest.approx(78.75)
        assert lat[-1] == pytest.approx(-78.75)
        assert marginal.sum() == pytest.approx(1.0)


class TestKde:
    def test_integral(self, rng):
        for kappa in (5.0, 80.0, 400.0):
            assert kde_timestamp(random_set(rng, 6), 3.0, kappa).integral() == pytest.approx(1.0, abs=1e-3)

    def test_single_scanpath_mode(self):
        sp = scanpath_from_degrees([[33.0, -121.0], [0.0, 0.0]])
        mode, _ = kde_mode_and_spread(kde_timestamp(ScanpathSet([sp]), 0.0))
        # 一个像素对角线
        assert spherical_distance_array(latlon_to_unit_array(mode.lat, mode.lon), sp.points[0]) <= math.hypot(
            math.pi / 64, 2 * math.pi / 128
        )

    def test_time_index(self):
        sp = scanpath_from_degrees([[0.0, 0.0], [0.0, 90.0], [0.0, 180.0]])
        mode, _ = kde_mode_and_spread(kde_timestamp(ScanpathSet([sp]), 1.2))
        assert math.degrees(mode.lon) == pytest.approx(90.0, abs=1.5)

    def test_entropy_decreases_with_kappa(self, rng):
        sps = random_set(rng, 3)
        entropies = []
        for kappa in (5.0, 20.0, 80.0, 200.0):
            d = kde_timestamp(sps, 0.0, kappa)
            entropies.append(-float(np.sum(d.mass * np.log(d.values))))
        assert all(a > b for a, b in zip(entropies, entropies[1:]))

    def test_tie_breaks_to_lowest_index(self):
        values = np.zeros((8, 16))
        values[3, 5] = values[6, 2] = 1.0
        mode, _ = kde_mode_and_spread(DensityMap(values, kappa=80.0))
        p = equirect_pixel_to_latlon(3, 5, 8, 16)
        assert (mode.lat, mode.lon) == pytest.approx((p.lat, p.lon))

    def test_spread_matches_sampling(self, rng):
        mu = pixel_center_vector(64, 128, 128, 256)
        sp = Scanpath(np.stack([mu, mu]))
        mode, spread = kde_mode_and_spread(kde_timestamp(ScanpathSet([sp]), 0.0, 80.0, 128, 256))
        samples = sample_vmf(mu, 80.0, 200_000, rng)
        expected = float(np.mean(spherical_distance_array(samples, mu)))
        assert spherical_distance_array(latlon_to_unit_array(mode.lat, mode.lon), mu) < 1e-9
        assert spread == pytest.approx(expected, rel=0.02)

    def test_commutes_with_longitude_shift(self, rng):
        sps = random_set(rng, 4)
        before = kde_timestamp(sps, 2.0).values
        after = kde_timestamp(rotated(sps, 5 * 2 * math.pi / 128), 2.0).values
        assert np.allclose(np.roll(before, 5, axis=1), after, rtol=1e-9)

    def test_short_scanpaths_skipped(self, rng):
        sps = ScanpathSet([scanpath_from_degrees([[0.0, 0.0]] * 3), scanpath_from_degrees([[0.0, 90.0]] * 10)])
        mode, _ = kde_mode_and_spread(kde_timestamp(sps, 5.0))
        assert math.degrees(mode.lon) == pytest.approx(90.0, abs=1.5)

    def test_errors(self, rng):
        sps = random_set(rng, 2, length=5)
        with pytest.raises(MetricError):
            kde_timestamp(sps, 10.0)
        with pytest.raises(MetricError):
            kde_timestamp(sps, 0.0, kappa=0.0)
        with pytest.raises(MetricError):
            kde_timestamp(sps, -1.0)


class TestStartRegions:
    def test_one_scanpath_per_bin(self):
        sps = ScanpathSet([sweep(lon, 0.0, 3) for lon in range(-170, 171, 40)])
        groups = start_region_partition(sps)
        assert list(groups) == list(range(9))
        assert all(len(group) == 1 for group in groups.values())

    def test_same_start(self, rng):
        sps = ScanpathSet([scanpath_from_degrees([[lat, 0.0], [0.0, 90.0]]) for lat in (-30.0, 0.0, 45.0)])
        groups = start_region_partition(sps)
        assert list(groups) == [4]
        assert len(groups[4]) == 3

    def test_single_bin(self, rng):
        sps = random_set(rng, 12)
        groups = start_region_partition(sps, bin_deg=360.0)
        assert list(groups) == [0]
        assert groups[0].user_ids == sps.user_ids

    def test_bounds(self):
        assert region_bounds(0) == (-180.0, -140.0)
        assert region_bounds(8) == (140.0, 180.0)
        assert region_bounds(4, 80.0) == (140.0, 180.0)

    def test_invalid_bin(self, rng):
        with pytest.raises(MetricError):
            start_region_partition(random_set(rng, 2), bin_deg=0.0)

    def test_kde_per_region(self, rng):
        sps = ScanpathSet([sweep(-170.0, 1.0, 5), sweep(-165.0, 1.0, 5), sweep(100.0, 1.0, 5)])
        maps = kde_by_start_region(sps, [0.0, 2.0])
        assert list(maps) == [0, 7]
        assert all(len(row) == 2 for row in maps.values())


class TestExploration:
    def test_constant_velocity(self):
        curve = exploration_time(ScanpathSet([sweep(0.0, 12.0)]))
        assert np.allclose(curve.mean_time, curve.offsets_deg / 12.0, atol=1e-9)
        assert np.all(curve.coverage == 1.0)
        assert np.all(np.diff(curve.mean_time) >= 0)

    def test_date_line_crossing(self):
        curve = exploration_time(ScanpathSet([sweep(170.0, 5.0)]), offsets_deg=[0, 10, 20])
        assert np.allclose(curve.mean_time, [0.0, 2.0, 4.0], atol=1e-9)

    def test_stationary(self):
        curve = exploration_time(ScanpathSet([sweep(45.0, 0.0)]))
        assert curve.mean_time[0] == 0.0
        assert np.all(np.isnan(curve.mean_time[1:]))
        assert curve.coverage.tolist() == [1.0] + [0.0] * 9
        assert curve.rows()[1] == {"offset_deg": 20.0, "mean_time": None, "coverage": 0.0}

    def test_mean_over_reaching_scanpaths(self):
        sps = ScanpathSet([sweep(0.0, 12.0), sweep(0.0, 6.0, 5), sweep(0.0, 0.0)])
        curve = exploration_time(sps, offsets_deg=[0, 24])
        assert curve.coverage.tolist() == pytest.approx([1.0, 2 / 3])
        assert curve.mean_time[1] == pytest.approx((2.0 + 4.0) / 2)

    def test_invalid_offsets(self, rng):
        with pytest.raises(MetricError):
            exploration_time(random_set(rng, 2), offsets_deg=[0, 200])


class TestRoc:
    def test_monotone_with_endpoints(self, rng):
        curve = roc_congruency(random_set(rng, 10))
        assert curve.ladder[0] == 0.0 and curve.ladder[-1] == 100.0
        assert curve.hit_rate[0] == 0.0 and curve.hit_rate[-1] == 100.0
        assert np.all(np.diff(curve.per_scanpath, axis=1) >= 0)
        assert curve.per_scanpath.shape == (10, 101)

    def test_uniform_is_diagonal(self, rng):
        sps = ScanpathSet([Scanpath(sample_uniform_sphere(30, rng)) for _ in range(200)])
        curve = roc_congruency(sps)
        assert np.max(np.abs(curve.hit_rate - curve.ladder)) <= 5.0

    def test_identical_single_point(self):
        sps = ScanpathSet([scanpath_from_degrees([[1.0, 1.0]]) for _ in range(5)])
        curve = roc_congruency(sps)
        assert np.all(curve.hit_rate[1:] == 100.0)
        assert np.all(curve.hit_rate_std == 0.0)

    def test_custom_ladder(self, rng):
        curve = roc_congruency(random_set(rng, 4), ladder=[50])
        assert curve.ladder.tolist() == [0.0, 50.0, 100.0]
        assert [row["n"] for row in curve.rows()] == [0.0, 50.0, 100.0]

    def test_needs_two_scanpaths(self, rng):
        with pytest.raises(MetricError):
            roc_congruency(random_set(rng, 1))


class TestLayoutComparison:
    def test_identical_layouts(self, rng):
        sps = random_set(rng, 5)
        (result,) = layout_kde_comparison(sps, sps, [1.0])
        assert result.mode_distance == 0.0
        assert result.js_divergence == pytest.approx(0.0, abs=1e-12)

    def test_distinct_layouts(self):
        a = ScanpathSet([scanpath_from_degrees([[0.0, 0.0]] * 3)] * 3)
        b = ScanpathSet([scanpath_from_degrees([[0.0, 90.0]] * 3)] * 3)
        results = layout_kde_comparison(a, b, [0.0, 2.0])
        assert len(results) == 2
        for result in results:
            assert result.mode_distance == pytest.approx(math.pi / 2, abs=math.radians(3.0))
            assert result.js_divergence > 0.6
