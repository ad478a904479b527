"""Verification metrics: event scores, biases, regression, image quality.

Event categories come from thresholding paired satellite/ground samples
(0.2 mm/h by default): hit when both reach the threshold, miss when only
the ground does, false alarm when only the satellite does.  Signed bias
metrics (TB/HB/MB/FB) are percentages of the total ground precipitation;
all four share the all-sample denominator.

Metrics with a zero denominator are reported as None ("undefined") in
the report instead of poisoning downstream tables with NaN.  Sum terms
use compensated (Kahan) summation so long series of small values stay
accurate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from . import _kernels
from .errors import LabelOutOfRange, ShapeMismatch, TooSmall, UndefinedMetric
from .grid import Grid

DEFAULT_EVENT_THRESHOLD = 0.2

# 24-hour precipitation level bounds (mm): level i covers
# [LEVEL_BOUNDS[i], LEVEL_BOUNDS[i+1]).
LEVEL_BOUNDS = (0.0, 0.1, 10.0, 25.0, 50.0, 100.0, 250.0)
LEVEL_NAMES = (
    "no rain",
    "light rain",
    "moderate rain",
    "heavy rain",
    "storm rain",
    "severe storm",
    "extraordinary storm",
)


def stable_sum(values) -> float:
    """Compensated summation (exactly rounded) over an array."""
    return math.fsum(np.asarray(values, dtype=np.float64).ravel())


@dataclass(frozen=True, eq=False)
class PairedSamples:
    """Aligned satellite (S) and ground (G) sample vectors."""

    s: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.s, dtype=np.float64).ravel()
        g = np.asarray(self.g, dtype=np.float64).ravel()
        if s.shape != g.shape:
            raise ShapeMismatch(f"paired samples differ in length: {s.size} vs {g.size}")
        if s.size == 0:
            raise ShapeMismatch("paired samples must be non-empty")
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(g))):
            raise ShapeMismatch("paired samples must be finite")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "g", g)

    @property
    def n(self) -> int:
        return self.s.size

    @staticmethod
    def from_grids(pred: Grid, truth: Grid) -> "PairedSamples":
        """Pairs over pixels non-missing in both grids."""
        from .grid import check_same_layout

        check_same_layout(pred, truth, "paired grids")
        ok = ~(pred.missing_mask() | truth.missing_mask())
        if not np.any(ok):
            raise ShapeMismatch("no jointly non-missing pixel")
        return PairedSamples(pred.values[ok], truth.values[ok])


@dataclass(frozen=True)
class EventCounts:
    """Hit/miss/false-alarm/correct-negative counts at a threshold."""

    hits: int
    misses: int
    false_alarms: int
    correct_negatives: int
    threshold: float = DEFAULT_EVENT_THRESHOLD

    @property
    def n(self) -> int:
        return self.hits + self.misses + self.false_alarms + self.correct_negatives


def event_counts(p: PairedSamples, threshold: float = DEFAULT_EVENT_THRESHOLD) -> EventCounts:
    """Categorize each pair by thresholding both sides."""
    s_wet = p.s >= threshold
    g_wet = p.g >= threshold
    h = int(np.count_nonzero(s_wet & g_wet))
    m = int(np.count_nonzero(~s_wet & g_wet))
    f = int(np.count_nonzero(s_wet & ~g_wet))
    return EventCounts(h, m, f, p.n - h - m - f, threshold)


@dataclass
class MetricsReport:
    """One evaluation run's metric bundle; None marks an undefined metric."""

    pod: float | None = None
    far: float | None = None
    cc: float | None = None
    rmse: float | None = None
    nmae: float | None = None
    nrmse: float | None = None
    tb: float | None = None
    hb: float | None = None
    mb: float | None = None
    fb: float | None = None
    mse: float | None = None
    mae: float | None = None
    r2: float | None = None
    accuracy: float | None = None
    precision_macro: float | None = None
    recall_macro: float | None = None
    f1_macro: float | None = None
    psnr: float | None = None
    ssim: float | None = None
    counts: EventCounts | None = None

    def defined(self) -> dict[str, float]:
        out = {}
        for f in fields(self):
            if f.name == "counts":
                continue
            v = getattr(self, f.name)
            if v is not None:
                out[f.name] = v
        return out

    def merged(self, other: "MetricsReport") -> "MetricsReport":
        """Fields of ``other`` fill any None fields of self."""
        kw = {}
        for f in fields(self):
            mine = getattr(self, f.name)
            kw[f.name] = mine if mine is not None else getattr(other, f.name)
        return MetricsReport(**kw)

    def to_kv_lines(self) -> list[str]:
        """Machine-readable ``metric=value`` lines (17 significant digits)."""
        lines = []
        for f in fields(self):
            if f.name == "counts":
                continue
            v = getattr(self, f.name)
            if v is None:
                lines.append(f"{f.name}=undefined")
            elif math.isinf(v):
                lines.append(f"{f.name}=inf")
            else:
                lines.append(f"{f.name}={v:.17g}")
        if self.counts is not None:
            c = self.counts
            lines.append(f"hits={c.hits}")
            lines.append(f"misses={c.misses}")
            lines.append(f"false_alarms={c.false_alarms}")
            lines.append(f"correct_negatives={c.correct_negatives}")
        return lines

    def to_table(self) -> str:
        """Aligned human-readable table (6 significant digits)."""
        rows = []
        for f in fields(self):
            if f.name == "counts":
                continue
            v = getattr(self, f.name)
            if v is None:
                rows.append((f.name, "undefined"))
            elif math.isinf(v):
                rows.append((f.name, "inf"))
            else:
                rows.append((f.name, f"{v:.6g}"))
        if self.counts is not None:
            c = self.counts
            rows.append(("hits", str(c.hits)))
            rows.append(("misses", str(c.misses)))
            rows.append(("false_alarms", str(c.false_alarms)))
            rows.append(("correct_negatives", str(c.correct_negatives)))
        width = max(len(name) for name, _ in rows)
        return "\n".join(f"{name:<{width}}  {val}" for name, val in rows)


def table_a1_metrics(
    p: PairedSamples, threshold: float = DEFAULT_EVENT_THRESHOLD
) -> MetricsReport:
    """The hydrological verification suite over paired samples.

    POD = H/(H+M), FAR = F/(H+F), CC = Pearson correlation,
    RMSE = sqrt(mean squared difference), NMAE and NRMSE normalize by the
    ground total/mean, and TB/HB/MB/FB are signed percentage biases with
    the all-sample ground total as the shared denominator.
    """
    c = event_counts(p, threshold)
    rep = MetricsReport(counts=c)

    if c.hits + c.misses > 0:
        rep.pod = c.hits / (c.hits + c.misses)
    if c.hits + c.false_alarms > 0:
        rep.far = c.false_alarms / (c.hits + c.false_alarms)

    n = p.n
    diff = p.s - p.g
    mse = stable_sum(diff * diff) / n
    rep.rmse = math.sqrt(mse)

    if n >= 2:
        g_mean = float(np.mean(p.g))
        s_mean = float(np.mean(p.s))
        dg = p.g - g_mean
        ds = p.s - s_mean
        var_g = stable_sum(dg * dg)
        var_s = stable_sum(ds * ds)
        if var_g > 0.0 and var_s > 0.0:
            # Single sqrt of the product keeps CC exactly 1 when S == G.
            rep.cc = stable_sum(dg * ds) / math.sqrt(var_g * var_s)

    sum_g = stable_sum(p.g)
    if sum_g > 0.0:
        rep.nmae = stable_sum(np.abs(diff)) / sum_g
        g_mean = sum_g / n
        rep.nrmse = rep.rmse / g_mean
        s_wet = p.s >= threshold
        g_wet = p.g >= threshold
        hit = s_wet & g_wet
        miss = ~s_wet & g_wet
        false = s_wet & ~g_wet
        rep.tb = stable_sum(diff) / sum_g * 100.0
        rep.hb = stable_sum(diff[hit]) / sum_g * 100.0
        rep.mb = stable_sum(-p.g[miss]) / sum_g * 100.0
        rep.fb = stable_sum(p.s[false]) / sum_g * 100.0
    return rep


def regression_metrics(p: PairedSamples) -> tuple[float, float, float]:
    """(MSE, MAE, R^2) with S as prediction and G as truth.

    Raises UndefinedMetric for R^2 when n < 2 or G is constant.
    """
    diff = p.s - p.g
    mse = stable_sum(diff * diff) / p.n
    mae = stable_sum(np.abs(diff)) / p.n
    if p.n < 2:
        raise UndefinedMetric("r2", "needs at least 2 samples")
    g_mean = float(np.mean(p.g))
    dg = p.g - g_mean
    ss_tot = stable_sum(dg * dg)
    if ss_tot <= 0.0:
        raise UndefinedMetric("r2", "ground samples are constant")
    r2 = 1.0 - stable_sum(diff * diff) / ss_tot
    return mse, mae, r2


def classification_metrics(pred_labels, true_labels, num_classes: int):
    """Accuracy plus per-class precision/recall/F1 and macro averages.

    Classes absent from both predictions and truth are excluded from the
    macro averages; their per-class entries are None.
    """
    pred = np.asarray(pred_labels, dtype=np.int64).ravel()
    true = np.asarray(true_labels, dtype=np.int64).ravel()
    if pred.shape != true.shape or pred.size == 0:
        raise ShapeMismatch("label vectors must be equal-length and non-empty")
    for arr, name in ((pred, "pred"), (true, "true")):
        if arr.min() < 0 or arr.max() >= num_classes:
            raise LabelOutOfRange(f"{name} labels outside [0, {num_classes})")
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (true, pred), 1)
    accuracy = float(np.trace(confusion)) / pred.size

    precision: list[float | None] = []
    recall: list[float | None] = []
    f1: list[float | None] = []
    for k in range(num_classes):
        tp = int(confusion[k, k])
        predicted = int(confusion[:, k].sum())
        actual = int(confusion[k, :].sum())
        p_k = tp / predicted if predicted else None
        r_k = tp / actual if actual else None
        precision.append(p_k)
        recall.append(r_k)
        if p_k is None and r_k is None:
            f1.append(None)
        elif not p_k or not r_k:
            f1.append(0.0)
        else:
            f1.append(2.0 * p_k * r_k / (p_k + r_k))

    def macro(vals):
        present = [v for v in vals if v is not None]
        return sum(present) / len(present) if present else None

    return {
        "accuracy": accuracy,
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "precision_macro": macro(precision),
        "recall_macro": macro(recall),
        "f1_macro": macro(f1),
    }


def classify_level(daily_total_mm: float) -> int:
    """24-hour precipitation level, 0 (no rain) .. 6 (extraordinary storm)."""
    if not (math.isfinite(daily_total_mm) and daily_total_mm >= 0.0):
        raise LabelOutOfRange(f"daily total must be finite and >= 0, got {daily_total_mm}")
    level = 0
    for bound in LEVEL_BOUNDS[1:]:
        if daily_total_mm >= bound:
            level += 1
        else:
            break
    return level


def psnr(pred: Grid, truth: Grid, data_range: float) -> float:
    """10*log10(range^2 / MSE) in dB over jointly non-missing pixels.

    Identical grids yield +inf (a distinguished value, not an error).
    """
    if data_range <= 0.0:
        raise ShapeMismatch("data_range must be positive")
    p = PairedSamples.from_grids(pred, truth)
    diff = p.s - p.g
    mse = stable_sum(diff * diff) / p.n
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range * data_range / mse)


SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _gaussian_taps(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def ssim(pred: Grid, truth: Grid, data_range: float) -> float:
    """Mean local structural similarity with an 11x11 Gaussian window.

    Windows touching a missing pixel in either grid are excluded from
    the mean.  Symmetric in its two arguments.
    """
    from .grid import check_same_layout

    check_same_layout(pred, truth, "ssim grids")
    if data_range <= 0.0:
        raise ShapeMismatch("data_range must be positive")
    if min(pred.rows, pred.cols) < SSIM_WINDOW:
        raise TooSmall(f"ssim needs grids of at least {SSIM_WINDOW}x{SSIM_WINDOW}")

    x = np.ascontiguousarray(pred.values, dtype=np.float64)
    y = np.ascontiguousarray(truth.values, dtype=np.float64)
    bad = pred.missing_mask() | truth.missing_mask()
    if np.any(bad):
        x = np.where(bad, 0.0, x)
        y = np.where(bad, 0.0, y)

    taps = _gaussian_taps()
    mu_x = _kernels.sep_correlate_valid(x, taps)
    mu_y = _kernels.sep_correlate_valid(y, taps)
    xx = _kernels.sep_correlate_valid(np.ascontiguousarray(x * x), taps)
    yy = _kernels.sep_correlate_valid(np.ascontiguousarray(y * y), taps)
    xy = _kernels.sep_correlate_valid(np.ascontiguousarray(x * y), taps)

    var_x = xx - mu_x * mu_x
    var_y = yy - mu_y * mu_y
    cov = xy - mu_x * mu_y
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    ssim_map = num / den

    if np.any(bad):
        box = np.ones(SSIM_WINDOW, dtype=np.float64)
        touched = _kernels.sep_correlate_valid(
            np.ascontiguousarray(bad.astype(np.float64)), box
        )
        keep = touched == 0.0
        if not np.any(keep):
            raise TooSmall("every window touches a missing pixel")
        return float(np.mean(ssim_map[keep]))
    return float(np.mean(ssim_map))
