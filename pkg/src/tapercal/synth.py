"""Seeded synthetic scenes: truth fields, biased satellite views, stations.

The generator is a splitmix64-seeded xoshiro256** stream, implemented
here so a scene is a pure function of its spec (including seeds) and can
be reproduced bit-exactly from the seed alone, in any implementation of
the same stream.

Structure (bump placement, station placement) is drawn from ``seed``;
noise (satellite and station perturbations) from ``noise_seed`` (which
defaults to ``seed``).  Varying only ``noise_seed`` across repeated
trials keeps the geometry fixed, which is what the sweep driver does.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from datetime import datetime, timedelta, timezone

import numpy as np

from .errors import ConfigError, InvalidGrid, TooManyStations
from .grid import GeoTransform, Grid, GridSeries
from .stations import Station, StationSet

_MASK64 = (1 << 64) - 1


def _splitmix64(state: int):
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


class Xoshiro256StarStar:
    """xoshiro256** with splitmix64 seeding; deterministic per seed."""

    def __init__(self, seed: int):
        seed &= _MASK64
        s = []
        state = seed
        for _ in range(4):
            state, z = _splitmix64(state)
            s.append(z)
        if not any(s):
            s[0] = 1  # all-zero state is invalid for xoshiro
        self._s = s

    @staticmethod
    def _rotl(x: int, k: int) -> int:
        return ((x << k) | (x >> (64 - k))) & _MASK64

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (self._rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = self._rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def random(self) -> float:
        """Uniform in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (2.0 ** -53)

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def normal(self) -> float:
        """Standard normal via Box-Muller (two uniforms per draw)."""
        u1 = ((self.next_u64() >> 11) + 1) * (2.0 ** -53)  # (0, 1]
        u2 = (self.next_u64() >> 11) * (2.0 ** -53)
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def randbelow(self, n: int) -> int:
        """Unbiased integer in [0, n) by rejection."""
        if n <= 0:
            raise ValueError("randbelow needs n >= 1")
        bits = (n - 1).bit_length() or 1
        while True:
            r = self.next_u64() >> (64 - bits)
            if r < n:
                return r

    def sample_without_replacement(self, n: int, k: int) -> list[int]:
        """k distinct integers from [0, n), by partial Fisher-Yates."""
        pool = list(range(n))
        out = []
        for i in range(k):
            j = i + self.randbelow(n - i)
            pool[i], pool[j] = pool[j], pool[i]
            out.append(pool[i])
        return out

    def shuffled(self, items: list) -> list:
        items = list(items)
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]
        return items


DEFAULT_EPOCH = datetime(2000, 1, 1, tzinfo=timezone.utc)


@dataclass(frozen=True)
class SceneSpec:
    """Everything needed to generate one synthetic scene."""

    rows: int = 64
    cols: int = 64
    transform: GeoTransform = GeoTransform(40.0, 100.0, -0.1, 0.1)
    n_bumps: int = 6
    amp_range: tuple[float, float] = (0.2, 1.0)
    sigma_range: tuple[float, float] = (3.0, 10.0)
    bias_gain: float = 1.0
    bias_offset: float = 0.0
    noise_sigma: float = 0.0
    n_stations: int = 40
    station_noise_sigma: float = 0.0
    zero_fraction: float = 0.3
    seed: int = 0
    noise_seed: int | None = None

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ConfigError("scene needs at least one pixel")
        if self.n_bumps < 0 or self.n_stations < 0:
            raise ConfigError("counts must be >= 0")
        if self.amp_range[0] > self.amp_range[1] or self.amp_range[0] < 0:
            raise ConfigError("bad amplitude range")
        if self.sigma_range[0] > self.sigma_range[1] or self.sigma_range[0] <= 0:
            raise ConfigError("bad sigma range")
        if not 0.0 <= self.zero_fraction < 1.0:
            raise ConfigError("zero_fraction must be in [0, 1)")
        if self.noise_sigma < 0 or self.station_noise_sigma < 0:
            raise ConfigError("noise sigmas must be >= 0")


@dataclass(frozen=True, eq=False)
class Scene:
    """A generated truth grid, its satellite view, and a station network."""

    truth: Grid
    satellite: Grid
    stations: StationSet
    spec: SceneSpec


def _bump_field(rows, cols, bumps) -> np.ndarray:
    rr = np.arange(rows, dtype=np.float64)[:, None]
    cc = np.arange(cols, dtype=np.float64)[None, :]
    field = np.zeros((rows, cols), dtype=np.float64)
    for (br, bc, amp, sig) in bumps:
        d2 = (rr - br) ** 2 + (cc - bc) ** 2
        field += amp * np.exp(-d2 / (2.0 * sig * sig))
    return field


def _zero_inflate(field: np.ndarray, target: float) -> np.ndarray:
    """Subtract a floor and clamp at 0 so ~target of pixels are exactly 0.

    The floor is found by bisection; no randomness involved.
    """
    if target <= 0.0 or not np.any(field > 0.0):
        return np.maximum(field, 0.0)
    frac0 = np.count_nonzero(field <= 0.0) / field.size
    if frac0 >= target:
        return np.maximum(field, 0.0)
    lo, hi = 0.0, float(field.max())
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        frac = np.count_nonzero(field <= mid) / field.size
        if frac < target:
            lo = mid
        else:
            hi = mid
    return np.maximum(field - hi, 0.0)


def _draw_bumps(rng: Xoshiro256StarStar, spec: SceneSpec):
    bumps = []
    for _ in range(spec.n_bumps):
        br = rng.uniform(0.0, spec.rows - 1.0)
        bc = rng.uniform(0.0, spec.cols - 1.0)
        amp = rng.uniform(*spec.amp_range)
        sig = rng.uniform(*spec.sigma_range)
        bumps.append((br, bc, amp, sig))
    return bumps


def _noise_field(rng: Xoshiro256StarStar, rows: int, cols: int, sigma: float) -> np.ndarray:
    noise = np.empty((rows, cols), dtype=np.float64)
    flat = noise.ravel()
    for i in range(flat.size):
        flat[i] = rng.normal()
    return noise * sigma


def _satellite_from(truth: np.ndarray, spec: SceneSpec, noise: np.ndarray) -> np.ndarray:
    return np.maximum(spec.bias_gain * truth + spec.bias_offset + noise, 0.0)


def _draw_stations(rng_struct, rng_noise, truth: np.ndarray, spec: SceneSpec) -> StationSet:
    rows, cols = truth.shape
    if spec.n_stations > rows * cols:
        raise TooManyStations(
            f"{spec.n_stations} stations requested on a {rows}x{cols} grid"
        )
    picks = rng_struct.sample_without_replacement(rows * cols, spec.n_stations)
    stations = []
    for i, flat in enumerate(picks):
        r, c = divmod(flat, cols)
        lat, lon = spec.transform.index_to_coords(r, c)
        value = truth[r, c]
        if spec.station_noise_sigma > 0.0:
            value += spec.station_noise_sigma * rng_noise.normal()
        else:
            rng_noise.normal()  # keep the noise stream aligned either way
        stations.append(Station(f"s{i:04d}", lat, lon, max(value, 0.0)))
    return StationSet(tuple(stations))


def generate_scene(spec: SceneSpec) -> Scene:
    """Deterministic scene from a spec: truth, satellite view, stations."""
    rng_struct = Xoshiro256StarStar(spec.seed)
    noise_seed = spec.seed if spec.noise_seed is None else spec.noise_seed
    rng_noise = Xoshiro256StarStar(noise_seed ^ 0xD1B54A32D192ED03)

    bumps = _draw_bumps(rng_struct, spec)
    truth = _zero_inflate(_bump_field(spec.rows, spec.cols, bumps), spec.zero_fraction)
    noise = _noise_field(rng_noise, spec.rows, spec.cols, spec.noise_sigma)
    sat = _satellite_from(truth, spec, noise)
    stations = _draw_stations(rng_struct, rng_noise, truth, spec)

    truth_grid = Grid(truth, spec.transform, DEFAULT_EPOCH)
    sat_grid = Grid(sat, spec.transform, DEFAULT_EPOCH)
    return Scene(truth_grid, sat_grid, stations, spec)


def generate_series(
    spec: SceneSpec,
    n_frames: int,
    advection: tuple[float, float] = (0.0, 0.0),
    step: timedelta = timedelta(minutes=30),
) -> tuple[GridSeries, GridSeries]:
    """Truth and satellite series with bump centers advected per frame.

    The satellite noise pattern is drawn once per scene and shared by all
    frames, so zero advection gives identical frames.
    """
    if n_frames < 1:
        raise InvalidGrid("series needs at least one frame")
    rng_struct = Xoshiro256StarStar(spec.seed)
    noise_seed = spec.seed if spec.noise_seed is None else spec.noise_seed
    rng_noise = Xoshiro256StarStar(noise_seed ^ 0xD1B54A32D192ED03)

    bumps = _draw_bumps(rng_struct, spec)
    noise = _noise_field(rng_noise, spec.rows, spec.cols, spec.noise_sigma)

    truth_frames = []
    sat_frames = []
    for f in range(n_frames):
        moved = [
            (br + f * advection[0], bc + f * advection[1], amp, sig)
            for (br, bc, amp, sig) in bumps
        ]
        truth = _zero_inflate(_bump_field(spec.rows, spec.cols, moved), spec.zero_fraction)
        sat = _satellite_from(truth, spec, noise)
        t = DEFAULT_EPOCH + f * step
        truth_frames.append(Grid(truth, spec.transform, t))
        sat_frames.append(Grid(sat, spec.transform, t))
    return GridSeries(tuple(truth_frames)), GridSeries(tuple(sat_frames))


def with_noise_seed(spec: SceneSpec, noise_seed: int) -> SceneSpec:
    """Copy of a spec with only the noise stream reseeded."""
    return replace(spec, noise_seed=noise_seed)
