"""Temporal blends and spatial interpolation exactness properties."""

import math
from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

from tapercal.errors import EmptyOverlap, StepMismatch
from tapercal.grid import GeoTransform, Grid, GridSeries, grid_sample
from tapercal.resample import ResampleMethod, TimeInterpSpec, interp_time, resample_space

T0 = datetime(2020, 6, 1, tzinfo=timezone.utc)
HOUR = timedelta(hours=1)


def series_of(frames, transform, step=HOUR):
    return GridSeries(
        tuple(
            Grid(v, transform, T0 + i * step)
            for i, v in enumerate(frames)
        )
    )


class TestInterpTime:
    def test_midpoint_blend(self, transform):
        s = series_of([np.zeros((2, 2)), np.full((2, 2), 2.0)], transform)
        out = interp_time(s, TimeInterpSpec(HOUR, timedelta(minutes=30)))
        assert len(out) == 3
        assert np.all(out[1].values == 1.0)
        assert out[1].timestamp == T0 + timedelta(minutes=30)

    def test_constant_series_stays_constant(self, transform):
        s = series_of([np.full((3, 3), 0.7)] * 3, transform)
        out = interp_time(s, TimeInterpSpec(HOUR, timedelta(minutes=15)))
        for g in out:
            assert np.all(g.values == 0.7)

    def test_endpoints_bit_exact(self, transform):
        rng = np.random.default_rng(1)
        frames = [rng.uniform(0, 5, (4, 5)) for _ in range(3)]
        s = series_of(frames, transform)
        out = interp_time(s, TimeInterpSpec(HOUR, timedelta(minutes=20)))
        assert len(out) == 7
        for i, orig in enumerate(s.grids):
            assert np.array_equal(out[3 * i].values, orig.values)

    def test_quarter_step_matches_per_pixel_oracle(self, transform):
        rng = np.random.default_rng(2)
        v0 = rng.uniform(0, 5, (6, 6))
        v1 = rng.uniform(0, 5, (6, 6))
        s = series_of([v0, v1], transform)
        out = interp_time(s, TimeInterpSpec(HOUR, timedelta(minutes=15)))
        for k in range(1, 4):
            theta = k / 4
            want = (1.0 - theta) * v0 + theta * v1
            np.testing.assert_allclose(out[k].values, want, rtol=1e-12, atol=1e-15)

    def test_missing_propagates(self, transform):
        v0 = np.array([[1.0, math.nan]])
        v1 = np.array([[3.0, 5.0]])
        s = series_of([v0, v1], transform)
        out = interp_time(s, TimeInterpSpec(HOUR, timedelta(minutes=30)))
        assert math.isnan(out[1].values[0, 1])
        assert out[1].values[0, 0] == 2.0

    def test_step_mismatch(self, transform):
        s = series_of([np.ones((2, 2))] * 2, transform)
        with pytest.raises(StepMismatch):
            interp_time(s, TimeInterpSpec(timedelta(minutes=90), timedelta(minutes=30)))
        with pytest.raises(StepMismatch):
            TimeInterpSpec(HOUR, timedelta(minutes=25))


def coarse_transform(fine: GeoTransform, factor: int) -> GeoTransform:
    """Coarse grid whose first center averages the first fine block."""
    lat0 = fine.lat_origin + fine.dlat * (factor - 1) / 2.0
    lon0 = fine.lon_origin + fine.dlon * (factor - 1) / 2.0
    return GeoTransform(lat0, lon0, fine.dlat * factor, fine.dlon * factor)


class TestResampleSpace:
    @pytest.mark.parametrize("mode", ["nearest", "bilinear", "bicubic"])
    def test_constant_field_reproduced_exactly(self, transform, mode):
        g = Grid(np.full((10, 12), 1.37), transform)
        target = coarse_transform(transform, 2)
        out = resample_space(g, target, 5, 6, ResampleMethod(mode))
        assert np.all(out.values == 1.37)

    def test_bilinear_exact_on_planar_ramp(self):
        # 0.05 deg -> 0.1 deg, v = a * lat + b * lon + c
        fine = GeoTransform(40.0, 100.0, -0.05, 0.05)
        rows, cols = 20, 24
        rr = np.arange(rows)[:, None]
        cc = np.arange(cols)[None, :]
        lat = 40.0 + rr * fine.dlat
        lon = 100.0 + cc * fine.dlon
        a, b, c = 0.8, 1.1, 60.0
        vals = a * lat + b * lon + c
        g = Grid(vals, fine)
        target = coarse_transform(fine, 2)
        out = resample_space(g, target, rows // 2, cols // 2, ResampleMethod("bilinear"))
        t_lat = target.lat_origin + np.arange(rows // 2)[:, None] * target.dlat
        t_lon = target.lon_origin + np.arange(cols // 2)[None, :] * target.dlon
        want = a * t_lat + b * t_lon + c
        np.testing.assert_allclose(out.values, want, rtol=1e-13, atol=1e-12)

    def test_nearest_equals_grid_sample(self, transform):
        rng = np.random.default_rng(3)
        g = Grid(rng.uniform(0, 5, (9, 11)), transform)
        target = GeoTransform(39.97, 100.02, -0.13, 0.11)
        out = resample_space(g, target, 6, 7, ResampleMethod("nearest"))
        for r in range(6):
            for c in range(7):
                lat, lon = target.index_to_coords(r, c)
                if g.in_extent(lat, lon):
                    assert out.values[r, c] == grid_sample(g, lat, lon)
                else:
                    assert math.isnan(out.values[r, c])

    def test_identity_nearest_idempotent(self, transform):
        rng = np.random.default_rng(4)
        g = Grid(rng.uniform(0, 5, (7, 8)), transform)
        out = resample_space(g, transform, 7, 8, ResampleMethod("nearest"))
        assert np.array_equal(out.values, g.values)

    def test_outside_extent_becomes_missing(self, transform):
        g = Grid(np.ones((4, 4)), transform)
        # target wider than the source
        target = GeoTransform(40.2, 99.8, -0.1, 0.1)
        out = resample_space(g, target, 8, 8, ResampleMethod("bilinear"))
        assert math.isnan(out.values[0, 0])
        assert out.values[2, 2] == 1.0

    def test_bicubic_overshoot_clamped_to_zero(self, transform):
        vals = np.zeros((8, 8))
        vals[3:5, 3:5] = 10.0  # sharp edge induces undershoot
        g = Grid(vals, transform)
        target = GeoTransform(39.99, 100.01, -0.07, 0.07)
        out = resample_space(g, target, 10, 10, ResampleMethod("bicubic"))
        ok = ~out.missing_mask()
        assert np.all(out.values[ok] >= 0.0)

    def test_missing_contributor_makes_missing(self, transform):
        vals = np.ones((6, 6))
        vals[2, 2] = math.nan
        g = Grid(vals, transform)
        # query between centers (2,2) and (2,3): bilinear taps include the hole
        lat = 40.0 + 2 * transform.dlat
        lon = 100.0 + 2.5 * transform.dlon
        target = GeoTransform(lat, lon, transform.dlat, transform.dlon)
        out = resample_space(g, target, 1, 1, ResampleMethod("bilinear"))
        assert math.isnan(out.values[0, 0])

    def test_empty_overlap(self, transform):
        g = Grid(np.ones((4, 4)), transform)
        far = GeoTransform(10.0, 10.0, -0.1, 0.1)
        with pytest.raises(EmptyOverlap):
            resample_space(g, far, 4, 4, ResampleMethod("bilinear"))

    def test_bicubic_smooth_field_accuracy(self, transform):
        # cubic convolution should track a smooth field closely
        rows, cols = 24, 24
        rr = np.arange(rows)[:, None]
        cc = np.arange(cols)[None, :]
        vals = 2.0 + np.sin(rr / 6.0) * np.cos(cc / 7.0)
        g = Grid(vals, transform)
        target = GeoTransform(
            transform.lat_origin + 5.3 * transform.dlat,
            transform.lon_origin + 5.3 * transform.dlon,
            transform.dlat,
            transform.dlon,
        )
        out = resample_space(g, target, 12, 12, ResampleMethod("bicubic"))
        frow = 5.3 + np.arange(12)[:, None]
        fcol = 5.3 + np.arange(12)[None, :]
        want = 2.0 + np.sin(frow / 6.0) * np.cos(fcol / 7.0)
        assert np.max(np.abs(out.values - want)) < 5e-3
