"""Raster data model: plate-carree geotransform, grids, grid series.

Conventions
- Values live at pixel CENTERS.  ``lat_origin``/``lon_origin`` are the
  center of row 0 / column 0; ``dlat`` is degrees per row (negative for
  north-up rasters) and ``dlon`` degrees per column.
- A point is inside the grid extent iff its fractional index lies in
  ``[-0.5, rows - 0.5] x [-0.5, cols - 0.5]`` (half-pixel padding).
- Missing data is a sentinel value (NaN by default); all non-missing
  values are finite and non-negative.
- Grids are immutable after construction (the value buffer is read-only),
  so they are safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import datetime, timedelta
from functools import cached_property

import numpy as np

from .errors import InvalidGrid, OutOfBounds, ShapeMismatch


def round_half_away(x):
    """Round to the nearest integer with ties going away from zero.

    Accepts scalars or arrays; returns a python int for scalar input and
    an int64 array otherwise.
    """
    if np.ndim(x) == 0:
        x = float(x)
        return int(math.floor(x + 0.5)) if x >= 0.0 else int(math.ceil(x - 0.5))
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0.0, np.floor(x + 0.5), np.ceil(x - 0.5)).astype(np.int64)


@dataclass(frozen=True)
class GeoTransform:
    """Affine mapping between (row, col) indices and (lat, lon) degrees."""

    lat_origin: float
    lon_origin: float
    dlat: float
    dlon: float

    def __post_init__(self):
        for name in ("lat_origin", "lon_origin", "dlat", "dlon"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidGrid(f"geotransform field {name} must be finite")
        if self.dlat == 0.0 or self.dlon == 0.0:
            raise InvalidGrid("dlat and dlon must be nonzero")

    def index_to_coords(self, row, col):
        """Pixel-center (lat, lon) of an index pair; accepts arrays."""
        return (
            self.lat_origin + np.asarray(row, dtype=np.float64) * self.dlat
            if np.ndim(row) else self.lat_origin + row * self.dlat,
            self.lon_origin + np.asarray(col, dtype=np.float64) * self.dlon
            if np.ndim(col) else self.lon_origin + col * self.dlon,
        )

    def fractional_index(self, lat, lon):
        """Continuous (row, col) of a coordinate; accepts arrays."""
        if np.ndim(lat) or np.ndim(lon):
            lat = np.asarray(lat, dtype=np.float64)
            lon = np.asarray(lon, dtype=np.float64)
        return (lat - self.lat_origin) / self.dlat, (lon - self.lon_origin) / self.dlon

    def coords_to_index(self, lat, lon):
        """Nearest pixel-center (row, col); may fall outside the grid."""
        fr, fc = self.fractional_index(lat, lon)
        return round_half_away(fr), round_half_away(fc)


def coords_to_index(transform: GeoTransform, lat, lon):
    """Nearest pixel-center index for a coordinate (no bound check)."""
    return transform.coords_to_index(lat, lon)


def index_to_coords(transform: GeoTransform, row, col):
    """Pixel-center coordinate of an index pair."""
    return transform.index_to_coords(row, col)


@dataclass(frozen=True, eq=False)
class Grid:
    """An immutable 2-D precipitation raster with georeferencing."""

    values: np.ndarray
    transform: GeoTransform
    timestamp: datetime | None = None
    missing: float = math.nan

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64, copy=True, order="C")
        if vals.ndim != 2:
            raise InvalidGrid(f"values must be 2-D, got ndim={vals.ndim}")
        if vals.shape[0] < 1 or vals.shape[1] < 1:
            raise InvalidGrid(f"grid must be at least 1x1, got {vals.shape}")
        mask = _missing_mask(vals, self.missing)
        present = vals[~mask]
        if present.size and not np.all(np.isfinite(present)):
            raise InvalidGrid("non-missing values must be finite")
        if present.size and np.any(present < 0.0):
            raise InvalidGrid("non-missing values must be >= 0")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @cached_property
    def _mask(self) -> np.ndarray:
        m = _missing_mask(self.values, self.missing)
        m.setflags(write=False)
        return m

    def missing_mask(self) -> np.ndarray:
        """Boolean mask of missing pixels (read-only view)."""
        return self._mask

    def in_extent(self, lat: float, lon: float) -> bool:
        """True iff the point is inside the half-pixel-padded extent."""
        fr, fc = self.transform.fractional_index(lat, lon)
        return -0.5 <= fr <= self.rows - 0.5 and -0.5 <= fc <= self.cols - 0.5

    def sample(self, lat: float, lon: float) -> float:
        """Value of the pixel whose center is nearest to (lat, lon).

        Missing pixels return the missing sentinel.  Raises OutOfBounds
        outside the padded extent.
        """
        if not self.in_extent(lat, lon):
            raise OutOfBounds(f"({lat}, {lon}) outside grid extent")
        r, c = self.transform.coords_to_index(lat, lon)
        r = min(max(r, 0), self.rows - 1)
        c = min(max(c, 0), self.cols - 1)
        if self._mask[r, c]:
            return self.missing
        return float(self.values[r, c])

    def _with_values(self, values: np.ndarray, *, validate: bool = True) -> "Grid":
        """New grid sharing transform/timestamp/missing with new values.

        ``validate=False`` skips the non-negativity check; internal callers
        use it for grids in non-physical units (unclamped model output,
        unclamped normalization).
        """
        if validate:
            return Grid(values, self.transform, self.timestamp, self.missing)
        new = object.__new__(Grid)
        vals = np.array(values, dtype=np.float64, copy=True, order="C")
        if vals.shape != self.values.shape:
            raise ShapeMismatch(f"replacement shape {vals.shape} != {self.values.shape}")
        vals.setflags(write=False)
        object.__setattr__(new, "values", vals)
        object.__setattr__(new, "transform", self.transform)
        object.__setattr__(new, "timestamp", self.timestamp)
        object.__setattr__(new, "missing", self.missing)
        return new


def _missing_mask(values: np.ndarray, missing: float) -> np.ndarray:
    if math.isnan(missing):
        return np.isnan(values)
    return values == missing


def grid_sample(grid: Grid, lat: float, lon: float) -> float:
    """Nearest-pixel-center sample; see :meth:`Grid.sample`."""
    return grid.sample(lat, lon)


def check_same_layout(a: Grid, b: Grid, what: str = "grids") -> None:
    """Raise ShapeMismatch unless two grids share shape and transform."""
    if a.shape != b.shape:
        raise ShapeMismatch(f"{what}: shape {a.shape} != {b.shape}")
    if a.transform != b.transform:
        raise ShapeMismatch(f"{what}: geotransforms differ")


@dataclass(frozen=True, eq=False)
class GridSeries:
    """Ordered grids on one geotransform with uniform, increasing steps."""

    grids: tuple[Grid, ...]

    def __post_init__(self):
        grids = tuple(self.grids)
        if not grids:
            raise InvalidGrid("series needs at least one frame")
        first = grids[0]
        for g in grids[1:]:
            check_same_layout(first, g, "series frames")
        times = [g.timestamp for g in grids]
        if any(t is None for t in times):
            raise InvalidGrid("every series frame needs a timestamp")
        steps = [t1 - t0 for t0, t1 in zip(times, times[1:])]
        if any(s <= timedelta(0) for s in steps):
            raise InvalidGrid("timestamps must be strictly increasing")
        if steps and any(s != steps[0] for s in steps[1:]):
            raise InvalidGrid("timestamps must have a constant step")
        object.__setattr__(self, "grids", grids)

    @property
    def step(self) -> timedelta | None:
        if len(self.grids) < 2:
            return None
        return self.grids[1].timestamp - self.grids[0].timestamp

    @property
    def transform(self) -> GeoTransform:
        return self.grids[0].transform

    @property
    def shape(self) -> tuple[int, int]:
        return self.grids[0].shape

    def __len__(self) -> int:
        return len(self.grids)

    def __iter__(self):
        return iter(self.grids)

    def __getitem__(self, i: int) -> Grid:
        return self.grids[i]
