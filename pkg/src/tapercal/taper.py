"""Distance-tapered station loss: kernels, weights, losses, gradients.

The taper loss is a kernel-weighted squared error over reliable station
points.  Each station j carries a nearest-neighbor distance d_j; a decay
kernel K turns it into a weight, optionally normalized so the weights sum
to one.  Isolated stations (large d_j) are down-weighted, so a single
far-off (or corrupt) gauge cannot dominate the fit.

Distances are in whatever unit the chosen DistanceMetric produces, so the
kernel decay parameter must be scaled to that unit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateKernel,
    EmptyAfterMasking,
    NonPositiveParam,
    ShapeMismatch,
)
from .grid import Grid, check_same_layout
from .stations import (
    DistanceMetric,
    StationSet,
    nn_distances,
    sample_at_stations,
    station_pixel_indices,
)

KERNEL_FAMILIES = ("exponential", "linear", "power_law", "gaussian")


@dataclass(frozen=True)
class KernelSpec:
    """A decay-kernel family and its parameter.

    ``param`` is the decay rate (exponential), slope (linear), exponent
    (power law), or width (gaussian).  ``d_floor`` clamps the power-law
    singularity at d -> 0.
    """

    family: str = "exponential"
    param: float = 1.0
    d_floor: float = 1e-6

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise NonPositiveParam(f"unknown kernel family {self.family!r}")
        if not (math.isfinite(self.param) and self.param > 0.0):
            raise NonPositiveParam(f"kernel param must be > 0, got {self.param}")
        if not (math.isfinite(self.d_floor) and self.d_floor > 0.0):
            raise NonPositiveParam(f"d_floor must be > 0, got {self.d_floor}")

    def weight(self, d):
        """K(d) for scalar or array d >= 0."""
        d = np.asarray(d, dtype=np.float64)
        if self.family == "exponential":
            out = np.exp(-self.param * d)
        elif self.family == "linear":
            out = np.maximum(0.0, 1.0 - self.param * d)
        elif self.family == "power_law":
            out = 1.0 / np.maximum(d, self.d_floor) ** self.param
        else:  # gaussian
            out = np.exp(-(d * d) / (2.0 * self.param * self.param))
        return out if out.ndim else float(out)


def kernel_weight(spec: KernelSpec, d):
    """Decay weight K(d); see :meth:`KernelSpec.weight`."""
    return spec.weight(d)


@dataclass(frozen=True, eq=False)
class TaperWeights:
    """Per-station distances, raw kernel weights, and normalized weights."""

    distances: np.ndarray
    raw: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.distances, dtype=np.float64)
        raw = np.asarray(self.raw, dtype=np.float64)
        if d.shape != raw.shape or d.ndim != 1 or d.size == 0:
            raise ShapeMismatch("distances and raw weights must be equal-length 1-D")
        if np.any(raw < 0.0) or not np.all(np.isfinite(raw)):
            raise DegenerateKernel("raw weights must be finite and >= 0")
        object.__setattr__(self, "distances", d)
        object.__setattr__(self, "raw", raw)

    @property
    def normalized(self) -> np.ndarray:
        total = float(np.sum(self.raw))
        if total <= 0.0:
            raise DegenerateKernel("all kernel weights are zero; check the decay parameter")
        return self.raw / total

    @property
    def n(self) -> int:
        return self.raw.size


def compute_weights(
    stations: StationSet,
    kernel: KernelSpec,
    metric: DistanceMetric | None = None,
    distances: np.ndarray | None = None,
) -> TaperWeights:
    """Taper weights for a station set.

    ``distances`` overrides the nearest-neighbor computation so an
    externally supplied d_j (for alternative distance readings) can be
    injected without code changes.
    """
    if distances is None:
        distances = nn_distances(stations, metric)
    distances = np.asarray(distances, dtype=np.float64)
    if distances.shape != (stations.n,):
        raise ShapeMismatch("distances must have one entry per station")
    return TaperWeights(distances, kernel.weight(distances))


def _masked_weights(weights: TaperWeights, valid: np.ndarray | None, normalized: bool):
    """Effective per-station weights, renormalized over the valid subset."""
    raw = weights.raw
    if valid is None:
        valid = np.ones(raw.size, dtype=bool)
    else:
        valid = np.asarray(valid, dtype=bool)
        if valid.shape != raw.shape:
            raise ShapeMismatch("validity mask length must match weights")
    if not np.any(valid):
        raise EmptyAfterMasking("no valid station remains")
    w = np.where(valid, raw, 0.0)
    if normalized:
        total = float(np.sum(w))
        if total <= 0.0:
            raise DegenerateKernel("all valid stations have zero kernel weight")
        w = w / total
    return w, valid


def taper_loss(
    preds,
    truths,
    weights: TaperWeights,
    normalized: bool = True,
    valid: np.ndarray | None = None,
) -> float:
    """Kernel-weighted squared error over stations.

    Raw form: sum_j K(d_j) * (pred_j - z_j)^2.  Normalized form divides
    the weights by their sum (over the valid subset) first.
    """
    preds = np.asarray(preds, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    if preds.shape != truths.shape or preds.shape != weights.raw.shape:
        raise ShapeMismatch("preds, truths, and weights must be equal-length")
    w, valid = _masked_weights(weights, valid, normalized)
    r = np.where(valid, preds - truths, 0.0)
    return float(np.sum(w * r * r))


def taper_loss_grad(
    preds,
    truths,
    weights: TaperWeights,
    normalized: bool = True,
    valid: np.ndarray | None = None,
) -> np.ndarray:
    """d(loss)/d(pred_j); zero for masked stations."""
    preds = np.asarray(preds, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    if preds.shape != truths.shape or preds.shape != weights.raw.shape:
        raise ShapeMismatch("preds, truths, and weights must be equal-length")
    w, valid = _masked_weights(weights, valid, normalized)
    r = np.where(valid, preds - truths, 0.0)
    return 2.0 * w * r


@dataclass(frozen=True)
class TotalLossConfig:
    """Mix of the taper term and a conventional term.

    ``mix_taper``/``mix_other`` weight the two terms (both default 1).
    ``other`` is L1 (mean absolute error) or L2 (mean squared error),
    computed over station residuals or the full non-missing grid.
    """

    mix_taper: float = 1.0
    mix_other: float = 1.0
    other: str = "L2"
    other_domain: str = "full_grid"
    normalized: bool = True

    def __post_init__(self):
        if self.mix_taper < 0.0 or self.mix_other < 0.0:
            raise NonPositiveParam("mix weights must be >= 0")
        if self.mix_taper + self.mix_other <= 0.0:
            raise NonPositiveParam("at least one mix weight must be positive")
        if self.other not in ("L1", "L2"):
            raise NonPositiveParam(f"other loss must be L1 or L2, got {self.other!r}")
        if self.other_domain not in ("stations", "full_grid"):
            raise NonPositiveParam(
                f"other_domain must be stations or full_grid, got {self.other_domain!r}"
            )


def total_loss(
    pred_grid: Grid,
    truth_grid: Grid | None,
    stations: StationSet | None,
    kernel: KernelSpec,
    cfg: TotalLossConfig,
    metric: DistanceMetric | None = None,
    weights: TaperWeights | None = None,
):
    """Mixed loss over a prediction grid, with its gradient grid.

    Returns ``(value, grad)`` where grad[r, c] = d(loss)/d(pred[r, c]).
    The taper term reads station values as truth; the other term compares
    against ``truth_grid`` (full_grid domain) or station values (stations
    domain).  The L1 subgradient at zero residual is 0.
    """
    loss = 0.0
    grad = np.zeros(pred_grid.shape, dtype=np.float64)
    pred_mask = pred_grid.missing_mask()

    need_stations = cfg.mix_taper > 0.0 or (cfg.mix_other > 0.0 and cfg.other_domain == "stations")
    rows = cols = s_valid = s_preds = None
    if need_stations:
        if stations is None:
            raise EmptyAfterMasking("loss configuration needs stations")
        s_preds, s_valid = sample_at_stations(pred_grid, stations)
        rows, cols, _ = station_pixel_indices(pred_grid.transform, pred_grid.shape, stations)

    if cfg.mix_taper > 0.0:
        if weights is None:
            weights = compute_weights(stations, kernel, metric)
        z = stations.values
        loss += cfg.mix_taper * taper_loss(s_preds, z, weights, cfg.normalized, s_valid)
        g = cfg.mix_taper * taper_loss_grad(s_preds, z, weights, cfg.normalized, s_valid)
        np.add.at(grad, (rows[s_valid], cols[s_valid]), g[s_valid])

    if cfg.mix_other > 0.0:
        if cfg.other_domain == "full_grid":
            if truth_grid is None:
                raise EmptyAfterMasking("full-grid loss needs a truth grid")
            check_same_layout(pred_grid, truth_grid, "prediction vs truth")
            ok = ~(pred_mask | truth_grid.missing_mask())
            n_ok = int(np.count_nonzero(ok))
            if n_ok == 0:
                raise EmptyAfterMasking("no jointly non-missing pixel for the full-grid term")
            r = pred_grid.values[ok] - truth_grid.values[ok]
            if cfg.other == "L2":
                loss += cfg.mix_other * float(np.sum(r * r)) / n_ok
                grad[ok] += cfg.mix_other * 2.0 * r / n_ok
            else:
                loss += cfg.mix_other * float(np.sum(np.abs(r))) / n_ok
                grad[ok] += cfg.mix_other * np.sign(r) / n_ok
        else:
            n_ok = int(np.count_nonzero(s_valid))
            if n_ok == 0:
                raise EmptyAfterMasking("no valid station for the station-domain term")
            r = np.where(s_valid, s_preds - stations.values, 0.0)
            if cfg.other == "L2":
                loss += cfg.mix_other * float(np.sum(r * r)) / n_ok
                g = cfg.mix_other * 2.0 * r / n_ok
            else:
                loss += cfg.mix_other * float(np.sum(np.abs(r))) / n_ok
                g = cfg.mix_other * np.sign(r) / n_ok
            np.add.at(grad, (rows[s_valid], cols[s_valid]), g[s_valid])

    grad[pred_mask] = 0.0
    return loss, grad
