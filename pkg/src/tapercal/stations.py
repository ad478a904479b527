"""Reliable station observations and nearest-neighbor machinery.

A station's nearest-neighbor distance is the distance to its nearest
OTHER station in the same set, under a configurable metric (haversine in
kilometers by default; kernel decay parameters are metric-relative and
must be chosen together with the metric).

The spatial index is a uniform bucket grid over (lat, lon).  Its contract
is oracle-equivalence with a linear scan, not a particular structure; for
degenerate geometry (longitude span over 180 degrees, near-polar
latitudes) queries silently fall back to the linear scan so the contract
holds everywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import (
    AllStationsOutOfBounds,
    InvalidStation,
    TooFewStations,
)
from .grid import GeoTransform, Grid

EARTH_RADIUS_KM = 6371.0
_KM_PER_DEG = EARTH_RADIUS_KM * math.pi / 180.0


@dataclass(frozen=True)
class Station:
    """One reliable ground observation."""

    id: str
    lat: float
    lon: float
    value: float

    def __post_init__(self):
        if not (math.isfinite(self.value) and self.value >= 0.0):
            raise InvalidStation(f"station {self.id!r}: value must be finite and >= 0")
        if not (math.isfinite(self.lat) and -90.0 <= self.lat <= 90.0):
            raise InvalidStation(f"station {self.id!r}: lat must be in [-90, 90]")
        if not (math.isfinite(self.lon) and -180.0 <= self.lon <= 180.0):
            raise InvalidStation(f"station {self.id!r}: lon must be in [-180, 180]")


@dataclass(frozen=True, eq=False)
class StationSet:
    """An ordered set of stations with unique ids.

    May be empty; operations that need observations (losses, distances)
    raise their own typed errors on sets that are too small.
    """

    stations: tuple[Station, ...]

    def __post_init__(self):
        stations = tuple(self.stations)
        ids = [s.id for s in stations]
        if len(set(ids)) != len(ids):
            raise InvalidStation("station ids must be unique")
        object.__setattr__(self, "stations", stations)

    @property
    def n(self) -> int:
        return len(self.stations)

    def __len__(self) -> int:
        return len(self.stations)

    def __iter__(self):
        return iter(self.stations)

    def __getitem__(self, i: int) -> Station:
        return self.stations[i]

    @cached_property
    def lats(self) -> np.ndarray:
        a = np.array([s.lat for s in self.stations], dtype=np.float64)
        a.setflags(write=False)
        return a

    @cached_property
    def lons(self) -> np.ndarray:
        a = np.array([s.lon for s in self.stations], dtype=np.float64)
        a.setflags(write=False)
        return a

    @cached_property
    def values(self) -> np.ndarray:
        a = np.array([s.value for s in self.stations], dtype=np.float64)
        a.setflags(write=False)
        return a

    def subset(self, indices) -> "StationSet":
        return StationSet(tuple(self.stations[i] for i in indices))


def haversine_km(lat1, lon1, lat2, lon2):
    """Great-circle distance in kilometers; accepts arrays."""
    lat1, lon1 = np.radians(lat1), np.radians(lon1)
    lat2, lon2 = np.radians(lat2), np.radians(lon2)
    s1 = np.sin((lat2 - lat1) * 0.5)
    s2 = np.sin((lon2 - lon1) * 0.5)
    h = s1 * s1 + np.cos(lat1) * np.cos(lat2) * s2 * s2
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


@dataclass(frozen=True)
class DistanceMetric:
    """Pairwise distance between coordinates.

    Modes: ``haversine_km`` (default), ``euclidean_degrees``, and
    ``grid_pixels`` (euclidean in index space of a geotransform).
    """

    mode: str = "haversine_km"
    transform: GeoTransform | None = None

    _MODES = ("haversine_km", "euclidean_degrees", "grid_pixels")

    def __post_init__(self):
        if self.mode not in self._MODES:
            raise InvalidStation(f"unknown distance mode {self.mode!r}")
        if self.mode == "grid_pixels" and self.transform is None:
            raise InvalidStation("grid_pixels metric needs a geotransform")

    @staticmethod
    def haversine() -> "DistanceMetric":
        return DistanceMetric("haversine_km")

    @staticmethod
    def euclidean() -> "DistanceMetric":
        return DistanceMetric("euclidean_degrees")

    @staticmethod
    def pixels(transform: GeoTransform) -> "DistanceMetric":
        return DistanceMetric("grid_pixels", transform)

    def distance(self, lat1, lon1, lat2, lon2):
        """Distance between two points; vectorizes over array inputs."""
        if self.mode == "haversine_km":
            return haversine_km(lat1, lon1, lat2, lon2)
        if self.mode == "euclidean_degrees":
            dlat = np.asarray(lat1, dtype=np.float64) - lat2
            dlon = np.asarray(lon1, dtype=np.float64) - lon2
            return np.hypot(dlat, dlon)
        fr1, fc1 = self.transform.fractional_index(lat1, lon1)
        fr2, fc2 = self.transform.fractional_index(lat2, lon2)
        return np.hypot(np.asarray(fr1) - fr2, np.asarray(fc1) - fc2)

    def degree_bound(self, d: float) -> float:
        """Degrees of lat/lon beyond which no point can be closer than d.

        Conservative: any point within distance ``d`` of a query lies
        within ``degree_bound(d)`` degrees in both latitude and longitude
        (longitude bound is only valid away from the poles; callers fall
        back to linear scans there).
        """
        if self.mode == "euclidean_degrees":
            return d
        if self.mode == "grid_pixels":
            return d * max(abs(self.transform.dlat), abs(self.transform.dlon))
        # haversine: central angle >= |dlat|; the longitude bound is handled
        # by the caller-supplied cos(lat) floor in SpatialIndex.
        return math.degrees(d / EARTH_RADIUS_KM)


class SpatialIndex:
    """Uniform bucket-grid index over station coordinates."""

    def __init__(self, stations: StationSet, metric: DistanceMetric | None = None):
        if stations.n < 1:
            raise TooFewStations("index needs at least one station")
        self.stations = stations
        self.metric = metric or DistanceMetric.haversine()
        lats, lons = stations.lats, stations.lons
        self._lat_min = float(lats.min())
        self._lat_max = float(lats.max())
        self._lon_min = float(lons.min())
        self._lon_max = float(lons.max())
        # Degenerate geometry: let queries fall back to the linear scan.
        self._fallback = (
            self._lon_max - self._lon_min > 180.0
            or max(abs(self._lat_min), abs(self._lat_max)) > 89.0
        )
        n_cells = max(1, int(math.ceil(math.sqrt(stations.n))))
        self._cell_lat = max((self._lat_max - self._lat_min) / n_cells, 1e-9)
        self._cell_lon = max((self._lon_max - self._lon_min) / n_cells, 1e-9)
        self._buckets: dict[tuple[int, int], list[int]] = {}
        for i in range(stations.n):
            key = self._cell_of(lats[i], lons[i])
            self._buckets.setdefault(key, []).append(i)

    def _cell_of(self, lat: float, lon: float) -> tuple[int, int]:
        return (
            int(math.floor((lat - self._lat_min) / self._cell_lat)),
            int(math.floor((lon - self._lon_min) / self._cell_lon)),
        )

    def _linear_scan(self, lat: float, lon: float, exclude: int | None):
        d = self.metric.distance(lat, lon, self.stations.lats, self.stations.lons)
        d = np.atleast_1d(np.asarray(d, dtype=np.float64)).copy()
        if exclude is not None:
            d[exclude] = np.inf
        j = int(np.argmin(d))
        return j, float(d[j])

    def nearest(self, lat: float, lon: float, exclude: int | None = None):
        """Index and distance of the nearest station to a query point.

        Ties resolve to the smallest station index (same as linear scan).
        """
        n = self.stations.n
        if self._fallback or n <= 8:
            return self._linear_scan(lat, lon, exclude)
        lats, lons = self.stations.lats, self.stations.lons
        # Worst-case cos(lat) over the data region, for the longitude bound.
        max_abs_lat = max(abs(self._lat_min), abs(self._lat_max), abs(lat))
        cos_floor = math.cos(math.radians(min(max_abs_lat, 89.0)))
        qi, qj = self._cell_of(lat, lon)
        best_j, best_d = -1, math.inf
        max_ring = self._max_ring(qi, qj)
        for ring in range(max_ring + 1):
            if best_j >= 0 and self._ring_is_beyond(ring, qi, qj, lat, best_d, cos_floor):
                break
            for ci, cj in self._ring_cells(qi, qj, ring):
                for k in self._buckets.get((ci, cj), ()):
                    if k == exclude:
                        continue
                    d = float(self.metric.distance(lat, lon, lats[k], lons[k]))
                    if d < best_d or (d == best_d and k < best_j):
                        best_j, best_d = k, d
        return best_j, best_d

    def _max_ring(self, qi: int, qj: int) -> int:
        keys = self._buckets.keys()
        return max(max(abs(ci - qi), abs(cj - qj)) for ci, cj in keys)

    def _ring_cells(self, qi: int, qj: int, ring: int):
        if ring == 0:
            yield (qi, qj)
            return
        for cj in range(qj - ring, qj + ring + 1):
            yield (qi - ring, cj)
            yield (qi + ring, cj)
        for ci in range(qi - ring + 1, qi + ring):
            yield (ci, qj - ring)
            yield (ci, qj + ring)

    def _ring_is_beyond(self, ring, qi, qj, lat, best_d, cos_floor) -> bool:
        """True if no cell at Chebyshev distance >= ring can beat best_d."""
        if ring < 1:
            return False
        gap_lat = (ring - 1) * self._cell_lat
        gap_lon = (ring - 1) * self._cell_lon
        if self.metric.mode == "euclidean_degrees":
            return max(gap_lat, gap_lon) > best_d
        if self.metric.mode == "grid_pixels":
            tr = self.metric.transform
            return min(gap_lat / abs(tr.dlat), gap_lon / abs(tr.dlon)) > best_d
        # haversine: lat separation alone gives distance >= R * dlat_rad;
        # lon separation gives distance >= R * dlon_rad * cos_floor.
        min_km = min(gap_lat * _KM_PER_DEG, gap_lon * _KM_PER_DEG * cos_floor)
        return min_km > best_d


def build_spatial_index(stations: StationSet, metric: DistanceMetric | None = None) -> SpatialIndex:
    """Spatial index whose queries match a linear scan exactly."""
    return SpatialIndex(stations, metric)


def nn_distances(stations: StationSet, metric: DistanceMetric | None = None) -> np.ndarray:
    """Distance from each station to its nearest other station.

    Output order matches the input station order.
    """
    if stations.n < 2:
        raise TooFewStations("nearest-neighbor distances need at least 2 stations")
    metric = metric or DistanceMetric.haversine()
    index = SpatialIndex(stations, metric)
    out = np.empty(stations.n, dtype=np.float64)
    for j, s in enumerate(stations):
        _, out[j] = index.nearest(s.lat, s.lon, exclude=j)
    return out


def station_pixel_indices(transform: GeoTransform, shape: tuple[int, int], stations: StationSet):
    """Nearest pixel (row, col) per station plus an in-extent mask.

    Indices are clamped into the grid; out-of-extent stations are only
    identified by the mask.
    """
    rows, cols = shape
    fr, fc = transform.fractional_index(stations.lats, stations.lons)
    fr = np.atleast_1d(np.asarray(fr, dtype=np.float64))
    fc = np.atleast_1d(np.asarray(fc, dtype=np.float64))
    inside = (fr >= -0.5) & (fr <= rows - 0.5) & (fc >= -0.5) & (fc <= cols - 0.5)
    r = np.clip(np.where(fr >= 0, np.floor(fr + 0.5), np.ceil(fr - 0.5)).astype(np.int64), 0, rows - 1)
    c = np.clip(np.where(fc >= 0, np.floor(fc + 0.5), np.ceil(fc - 0.5)).astype(np.int64), 0, cols - 1)
    return r, c, inside


def sample_at_stations(grid: Grid, stations: StationSet):
    """Nearest-pixel grid values at station locations.

    Returns ``(values, valid)`` arrays in station order.  A station is
    invalid if it lies outside the padded extent or lands on a missing
    pixel; invalid entries carry the grid's missing sentinel.  Raises
    AllStationsOutOfBounds when nothing is valid.
    """
    n = stations.n
    values = np.full(n, grid.missing, dtype=np.float64)
    valid = np.zeros(n, dtype=bool)
    if n:
        r, c, inside = station_pixel_indices(grid.transform, grid.shape, stations)
        mask = grid.missing_mask()
        idx = np.nonzero(inside)[0]
        hit_missing = mask[r[idx], c[idx]]
        ok = idx[~hit_missing]
        values[ok] = grid.values[r[ok], c[ok]]
        valid[ok] = True
    if not np.any(valid):
        raise AllStationsOutOfBounds("no station produced a valid sample")
    return values, valid
