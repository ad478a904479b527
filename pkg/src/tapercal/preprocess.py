"""Station-density crop search, dataset statistics, truncation normalization.

The crop search finds the square window covering the most stations via a
station-count raster and an integer summed-area table (O(rows * cols));
ties break to the smallest row, then the smallest column.  A station
belongs to a window iff its nearest pixel index lies inside the window's
half-open index range.

Normalization is min-max against a truncation maximum (typically the
99th percentile of the pooled nonzero values), clamped to [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, EmptyAfterFilter, WindowTooLarge
from .grid import GeoTransform, Grid
from .stations import StationSet, station_pixel_indices


@dataclass(frozen=True)
class CropWindow:
    """A size x size pixel window and the number of stations inside."""

    row0: int
    col0: int
    size: int
    station_count: int

    def contains_index(self, row: int, col: int) -> bool:
        return self.row0 <= row < self.row0 + self.size and self.col0 <= col < self.col0 + self.size


@dataclass(frozen=True)
class QuantileStats:
    """Min/max/mean and the quartile + Q99 summary of a value pool."""

    min: float
    max: float
    avg: float
    q1: float
    q2: float
    q3: float
    q99: float
    zero_filtered: bool
    count: int

    FIELDS = ("min", "max", "avg", "q1", "q2", "q3", "q99")


@dataclass(frozen=True)
class NormSpec:
    """Min-max normalization bounds with optional clamping."""

    x_min: float = 0.0
    x_max: float = 1.0
    clamp: bool = True

    def __post_init__(self):
        if not (math.isfinite(self.x_min) and math.isfinite(self.x_max)):
            raise ConfigError("normalization bounds must be finite")
        if self.x_max <= self.x_min:
            raise ConfigError(f"x_max ({self.x_max}) must exceed x_min ({self.x_min})")


def _station_count_raster(shape, stations, transform) -> np.ndarray:
    rows, cols = shape
    counts = np.zeros((rows, cols), dtype=np.int64)
    if stations is not None and stations.n:
        r, c, inside = station_pixel_indices(transform, (rows, cols), stations)
        np.add.at(counts, (r[inside], c[inside]), 1)
    return counts


def _best_window(counts: np.ndarray, size: int) -> CropWindow:
    """Argmax window over a count raster via an integer summed-area table.

    np.argmax scans in row-major order, which is exactly the smallest-row0,
    then smallest-col0 tie-break.
    """
    rows, cols = counts.shape
    sat = np.zeros((rows + 1, cols + 1), dtype=np.int64)
    np.cumsum(counts, axis=0, out=sat[1:, 1:])
    np.cumsum(sat[1:, 1:], axis=1, out=sat[1:, 1:])
    win = (
        sat[size:, size:]
        - sat[: rows - size + 1, size:]
        - sat[size:, : cols - size + 1]
        + sat[: rows - size + 1, : cols - size + 1]
    )
    flat = int(np.argmax(win))
    row0, col0 = divmod(flat, win.shape[1])
    return CropWindow(row0, col0, size, int(win[row0, col0]))


def crop_search(
    grid_shape: tuple[int, int],
    stations: StationSet | None,
    transform: GeoTransform,
    size: int = 256,
) -> CropWindow:
    """The size x size window holding the most stations.

    Ties break to the smallest row0, then the smallest col0; an empty
    station set yields the window at (0, 0) with count 0.
    """
    rows, cols = grid_shape
    if size < 1 or size > rows or size > cols:
        raise WindowTooLarge(f"window {size} does not fit a {rows}x{cols} grid")
    return _best_window(_station_count_raster(grid_shape, stations, transform), size)


def crop_search_series(
    grid_shape: tuple[int, int],
    station_sets,
    transform: GeoTransform,
    size: int = 256,
) -> CropWindow:
    """One window maximizing the pooled station count across frames."""
    rows, cols = grid_shape
    if size < 1 or size > rows or size > cols:
        raise WindowTooLarge(f"window {size} does not fit a {rows}x{cols} grid")
    counts = np.zeros((rows, cols), dtype=np.int64)
    for s in station_sets:
        counts += _station_count_raster(grid_shape, s, transform)
    return _best_window(counts, size)


def apply_window(grid: Grid, window: CropWindow) -> Grid:
    """Crop a grid to a window, shifting the geotransform origin."""
    if window.row0 + window.size > grid.rows or window.col0 + window.size > grid.cols:
        raise WindowTooLarge("window extends past the grid")
    tr = grid.transform
    lat0, lon0 = tr.index_to_coords(window.row0, window.col0)
    sub = grid.values[
        window.row0 : window.row0 + window.size,
        window.col0 : window.col0 + window.size,
    ]
    return Grid(sub, GeoTransform(lat0, lon0, tr.dlat, tr.dlon), grid.timestamp, grid.missing)


def compute_stats(values, drop_zeros: bool = False) -> QuantileStats:
    """Summary statistics with quantiles by linear interpolation
    between closest ranks (inclusive method)."""
    vals = np.asarray(values, dtype=np.float64).ravel()
    vals = vals[np.isfinite(vals)]
    if drop_zeros:
        vals = vals[vals != 0.0]
    if vals.size == 0:
        raise EmptyAfterFilter("no values to summarize" + (" after zero removal" if drop_zeros else ""))
    q1, q2, q3, q99 = np.quantile(vals, (0.25, 0.5, 0.75, 0.99), method="linear")
    return QuantileStats(
        min=float(vals.min()),
        max=float(vals.max()),
        avg=float(vals.mean()),
        q1=float(q1),
        q2=float(q2),
        q3=float(q3),
        q99=float(q99),
        zero_filtered=drop_zeros,
        count=int(vals.size),
    )


def grid_stats(grid: Grid, drop_zeros: bool = False) -> QuantileStats:
    """Stats over a grid's non-missing values."""
    return compute_stats(grid.values[~grid.missing_mask()], drop_zeros)


def normalize(grid: Grid, spec: NormSpec) -> Grid:
    """x' = (x - x_min) / (x_max - x_min), clamped to [0, 1] when set.

    Missing pixels stay missing.
    """
    scale = spec.x_max - spec.x_min
    mask = grid.missing_mask()
    vals = (grid.values - spec.x_min) / scale
    if spec.clamp:
        vals = np.clip(vals, 0.0, 1.0)
    vals = np.where(mask, grid.missing, vals)
    return grid._with_values(vals, validate=False)


def denormalize(grid: Grid, spec: NormSpec) -> Grid:
    """Inverse of :func:`normalize` on its unclamped range."""
    mask = grid.missing_mask()
    vals = grid.values * (spec.x_max - spec.x_min) + spec.x_min
    vals = np.where(mask, grid.missing, vals)
    return grid._with_values(vals, validate=False)
