"""Scene generator determinism, structure/noise stream separation, RNG."""

import numpy as np
import pytest

from tapercal.errors import TooManyStations
from tapercal.stations import sample_at_stations
from tapercal.synth import (
    SceneSpec,
    Xoshiro256StarStar,
    generate_scene,
    generate_series,
    with_noise_seed,
)


class TestRng:
    def test_stream_is_deterministic(self):
        a = Xoshiro256StarStar(123)
        b = Xoshiro256StarStar(123)
        assert [a.next_u64() for _ in range(20)] == [b.next_u64() for _ in range(20)]

    def test_different_seeds_differ(self):
        a = Xoshiro256StarStar(1)
        b = Xoshiro256StarStar(2)
        assert [a.next_u64() for _ in range(4)] != [b.next_u64() for _ in range(4)]

    def test_uniform_range(self):
        rng = Xoshiro256StarStar(7)
        xs = [rng.random() for _ in range(2000)]
        assert all(0.0 <= x < 1.0 for x in xs)
        assert 0.4 < sum(xs) / len(xs) < 0.6

    def test_normal_moments(self):
        rng = Xoshiro256StarStar(8)
        xs = np.array([rng.normal() for _ in range(4000)])
        assert abs(xs.mean()) < 0.08
        assert abs(xs.std() - 1.0) < 0.08

    def test_randbelow_unbiased_range(self):
        rng = Xoshiro256StarStar(9)
        xs = [rng.randbelow(7) for _ in range(2000)]
        assert set(xs) == set(range(7))

    def test_sample_without_replacement_distinct(self):
        rng = Xoshiro256StarStar(10)
        picks = rng.sample_without_replacement(50, 20)
        assert len(set(picks)) == 20
        assert all(0 <= p < 50 for p in picks)


BASE = SceneSpec(rows=24, cols=28, n_bumps=4, n_stations=15, seed=5)


class TestGenerateScene:
    def test_same_seed_bit_identical(self):
        a = generate_scene(BASE)
        b = generate_scene(BASE)
        assert np.array_equal(a.truth.values, b.truth.values)
        assert np.array_equal(a.satellite.values, b.satellite.values)
        assert [s.id for s in a.stations] == [s.id for s in b.stations]
        assert np.array_equal(a.stations.values, b.stations.values)

    def test_no_bumps_gives_zero_truth(self):
        spec = SceneSpec(rows=8, cols=8, n_bumps=0, n_stations=4, seed=1)
        scene = generate_scene(spec)
        assert np.all(scene.truth.values == 0.0)

    def test_identity_bias_no_noise(self):
        spec = SceneSpec(
            rows=16, cols=16, n_bumps=3, n_stations=10,
            bias_gain=1.0, bias_offset=0.0, noise_sigma=0.0,
            station_noise_sigma=0.0, seed=3,
        )
        scene = generate_scene(spec)
        assert np.array_equal(scene.satellite.values, scene.truth.values)
        vals, valid = sample_at_stations(scene.truth, scene.stations)
        assert valid.all()
        assert np.array_equal(vals, scene.stations.values)

    def test_all_values_nonnegative_and_stations_inside(self):
        scene = generate_scene(BASE)
        assert np.all(scene.truth.values >= 0.0)
        assert np.all(scene.satellite.values >= 0.0)
        for s in scene.stations:
            assert scene.truth.in_extent(s.lat, s.lon)

    def test_zero_fraction_hit_within_tolerance(self):
        spec = SceneSpec(rows=48, cols=48, n_bumps=6, n_stations=5,
                         zero_fraction=0.4, seed=11)
        scene = generate_scene(spec)
        frac = float(np.mean(scene.truth.values == 0.0))
        assert abs(frac - 0.4) <= 0.05

    def test_noise_seed_changes_only_noise(self):
        spec = SceneSpec(rows=16, cols=16, n_bumps=3, n_stations=8,
                         noise_sigma=0.1, seed=4)
        a = generate_scene(spec)
        b = generate_scene(with_noise_seed(spec, 999))
        assert np.array_equal(a.truth.values, b.truth.values)
        assert [(s.lat, s.lon) for s in a.stations] == [(s.lat, s.lon) for s in b.stations]
        assert not np.array_equal(a.satellite.values, b.satellite.values)

    def test_zero_noise_ignores_noise_seed(self):
        spec = SceneSpec(rows=16, cols=16, n_bumps=3, n_stations=8,
                         noise_sigma=0.0, station_noise_sigma=0.0, seed=4)
        a = generate_scene(spec)
        b = generate_scene(with_noise_seed(spec, 999))
        assert np.array_equal(a.satellite.values, b.satellite.values)
        assert np.array_equal(a.stations.values, b.stations.values)

    def test_too_many_stations(self):
        with pytest.raises(TooManyStations):
            generate_scene(SceneSpec(rows=3, cols=3, n_stations=10, seed=0))

    def test_station_noise_clamped_nonnegative(self):
        spec = SceneSpec(rows=16, cols=16, n_bumps=2, n_stations=30,
                         station_noise_sigma=2.0, zero_fraction=0.6, seed=6)
        scene = generate_scene(spec)
        assert np.all(scene.stations.values >= 0.0)


class TestGenerateSeries:
    def test_static_advection_identical_frames(self):
        truth, sat = generate_series(BASE, 4, advection=(0.0, 0.0))
        for g in truth.grids[1:]:
            assert np.array_equal(g.values, truth[0].values)
        for g in sat.grids[1:]:
            assert np.array_equal(g.values, sat[0].values)

    def test_single_frame_equals_scene(self):
        truth, sat = generate_series(BASE, 1)
        scene = generate_scene(BASE)
        assert np.array_equal(truth[0].values, scene.truth.values)
        assert np.array_equal(sat[0].values, scene.satellite.values)

    def test_advection_moves_argmax(self):
        spec = SceneSpec(
            rows=40, cols=40, n_bumps=1, amp_range=(1.0, 1.0),
            sigma_range=(3.0, 3.0), n_stations=2, zero_fraction=0.0, seed=12,
        )
        truth, _ = generate_series(spec, 4, advection=(1.0, 0.0))
        centers = [np.unravel_index(np.argmax(g.values), g.values.shape) for g in truth]
        rows = [c[0] for c in centers]
        assert rows == [rows[0] + i for i in range(4)]

    def test_uniform_timestamps(self):
        truth, _ = generate_series(BASE, 3)
        assert truth.step is not None
        assert truth.step.total_seconds() == 1800
