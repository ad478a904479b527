"""Shared fixtures and small builders for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from tapercal.grid import GeoTransform, Grid
from tapercal.stations import Station, StationSet


@pytest.fixture
def transform() -> GeoTransform:
    return GeoTransform(lat_origin=40.0, lon_origin=100.0, dlat=-0.1, dlon=0.1)


def make_grid(values, transform=None, missing=float("nan")) -> Grid:
    values = np.asarray(values, dtype=np.float64)
    if transform is None:
        transform = GeoTransform(40.0, 100.0, -0.1, 0.1)
    return Grid(values, transform, missing=missing)


def random_grid(rng: np.random.Generator, rows: int, cols: int, transform=None) -> Grid:
    return make_grid(rng.uniform(0.0, 5.0, (rows, cols)), transform)


def make_stations(coords_values) -> StationSet:
    """StationSet from (lat, lon, value) triples."""
    return StationSet(
        tuple(
            Station(f"s{i:03d}", lat, lon, value)
            for i, (lat, lon, value) in enumerate(coords_values)
        )
    )


def random_stations(
    rng: np.random.Generator,
    n: int,
    lat_range=(35.0, 40.0),
    lon_range=(100.0, 105.0),
    value_range=(0.0, 5.0),
) -> StationSet:
    lats = rng.uniform(*lat_range, n)
    lons = rng.uniform(*lon_range, n)
    vals = rng.uniform(*value_range, n)
    return make_stations(zip(lats, lons, vals))
