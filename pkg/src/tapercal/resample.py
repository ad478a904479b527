"""Temporal and spatial resampling.

Temporal: per-pixel linear blends between consecutive frames, refining a
uniform step to an exact divisor (e.g. 60 min -> 30 min).  Original
frames are preserved bit-exactly.

Spatial: each target pixel center is interpolated from source pixel
centers (nearest, bilinear, or cubic-convolution with a = -0.5).  Taps
beyond the border are edge-clamped; target centers outside the source's
half-pixel-padded extent become missing; any missing contributor makes
the output pixel missing; negative interpolation overshoot is clamped
to 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import timedelta

import numpy as np

from . import _kernels
from .errors import ConfigError, EmptyOverlap, InvalidGrid, StepMismatch
from .grid import GeoTransform, Grid, GridSeries

RESAMPLE_MODES = ("nearest", "bilinear", "bicubic")


@dataclass(frozen=True)
class ResampleMethod:
    """Spatial interpolation mode."""

    mode: str = "bilinear"

    def __post_init__(self):
        if self.mode not in RESAMPLE_MODES:
            raise ConfigError(f"unknown resample mode {self.mode!r}")


@dataclass(frozen=True)
class TimeInterpSpec:
    """Refinement of a uniform time step to an exact divisor."""

    source_step: timedelta
    target_step: timedelta

    def __post_init__(self):
        if self.source_step <= timedelta(0) or self.target_step <= timedelta(0):
            raise StepMismatch("steps must be positive")
        if self.source_step % self.target_step != timedelta(0):
            raise StepMismatch(
                f"target step {self.target_step} must divide source step {self.source_step}"
            )

    @property
    def factor(self) -> int:
        return self.source_step // self.target_step


def interp_time(series: GridSeries, spec: TimeInterpSpec) -> GridSeries:
    """Linear per-pixel interpolation to the target step.

    Missing in either endpoint makes the blended pixel missing.
    """
    if len(series) < 2:
        raise StepMismatch("temporal interpolation needs at least 2 frames")
    if series.step != spec.source_step:
        raise StepMismatch(
            f"series step {series.step} does not match spec source step {spec.source_step}"
        )
    factor = spec.factor
    frames: list[Grid] = []
    for a, b in zip(series.grids, series.grids[1:]):
        frames.append(a)
        if factor == 1:
            continue
        mask = a.missing_mask() | b.missing_mask()
        for k in range(1, factor):
            theta = k / factor
            # Lerp form: constant series interpolate to the constant exactly.
            vals = a.values + theta * (b.values - a.values)
            vals = np.where(mask, a.missing, vals)
            frames.append(
                Grid(vals, a.transform, a.timestamp + k * spec.target_step, a.missing)
            )
    frames.append(series.grids[-1])
    return GridSeries(tuple(frames))


def resample_space(
    src: Grid,
    target: GeoTransform,
    target_rows: int,
    target_cols: int,
    method: ResampleMethod | str = "bilinear",
) -> Grid:
    """Interpolate a grid onto a new geotransform and shape."""
    if isinstance(method, str):
        method = ResampleMethod(method)
    if target_rows < 1 or target_cols < 1:
        raise InvalidGrid("target shape must be at least 1x1")

    t_rows = np.arange(target_rows, dtype=np.float64)
    t_cols = np.arange(target_cols, dtype=np.float64)
    lat = target.lat_origin + t_rows * target.dlat
    lon = target.lon_origin + t_cols * target.dlon
    lat2 = np.repeat(lat, target_cols)
    lon2 = np.tile(lon, target_rows)
    fr, fc = src.transform.fractional_index(lat2, lon2)

    inside = (
        (fr >= -0.5) & (fr <= src.rows - 0.5)
        & (fc >= -0.5) & (fc <= src.cols - 0.5)
    )
    if not np.any(inside):
        raise EmptyOverlap("no target pixel center falls inside the source extent")

    out = np.full(target_rows * target_cols, src.missing, dtype=np.float64)
    src_vals = np.ascontiguousarray(src.values, dtype=np.float64)
    src_mask8 = np.ascontiguousarray(src.missing_mask()).view(np.uint8)
    fri = np.ascontiguousarray(fr[inside])
    fci = np.ascontiguousarray(fc[inside])

    if method.mode == "nearest":
        r = np.where(fri >= 0, np.floor(fri + 0.5), np.ceil(fri - 0.5)).astype(np.int64)
        c = np.where(fci >= 0, np.floor(fci + 0.5), np.ceil(fci - 0.5)).astype(np.int64)
        r = np.clip(r, 0, src.rows - 1)
        c = np.clip(c, 0, src.cols - 1)
        vals = src.values[r, c]
        miss = src.missing_mask()[r, c]
    elif method.mode == "bilinear":
        vals, miss = _kernels.bilinear_gather(src_vals, src_mask8, fri, fci)
    else:
        vals, miss = _kernels.bicubic_gather(src_vals, src_mask8, fri, fci)

    vals = np.where(miss, src.missing, np.maximum(vals, 0.0))
    out[np.nonzero(inside)[0]] = vals
    out = out.reshape(target_rows, target_cols)
    return Grid(out, target, src.timestamp, src.missing)
