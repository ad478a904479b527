"""End-to-end drivers: preprocessing chain, calibration run, sweeps.

Pipeline order: temporal interpolation -> spatial resampling -> station-
density crop -> truncation normalization -> train/eval station split ->
calibrator training -> application -> denormalization -> metrics.  Any
stage error propagates with its stage name attached.

Station metrics are computed on the held-out split (seeded 80/20
shuffle) in physical units; image metrics compare normalized grids with
a data range of 1.  Sweeps rerun the pipeline over seeded trials where
only the scene's noise stream varies, and report mean and sample
standard deviation per metric.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    AllStationsOutOfBounds,
    ConfigError,
    EmptyAfterMasking,
    InvalidGrid,
    TaperCalError,
    UndefinedMetric,
)
from .grid import GeoTransform, Grid, GridSeries
from .io import write_npy, write_pgm, write_station_csv
from .metrics import MetricsReport, PairedSamples, psnr, regression_metrics, ssim, table_a1_metrics
from .models import AffineCalibrator, MlpCalibrator, TrainConfig, apply, train
from .preprocess import CropWindow, NormSpec, apply_window, crop_search, normalize, denormalize
from .resample import ResampleMethod, TimeInterpSpec, interp_time, resample_space
from .stations import Station, StationSet, sample_at_stations
from .synth import SceneSpec, Xoshiro256StarStar, generate_scene, with_noise_seed


@dataclass(frozen=True)
class ResampleTarget:
    """Target geometry for the spatial resampling stage."""

    transform: GeoTransform
    rows: int
    cols: int
    method: str = "bilinear"


@dataclass(frozen=True)
class PipelineConfig:
    """Everything one calibration run needs besides its input data."""

    interp: TimeInterpSpec | None = None
    resample_to: ResampleTarget | None = None
    crop_size: int | None = None
    crop_mode: str = "global"
    norm: NormSpec = NormSpec(0.0, 1.0, True)
    model: str = "affine"
    mlp_hidden: int = 8
    mlp_activation: str = "tanh"
    mlp_neighborhood: bool = True
    train: TrainConfig = TrainConfig()
    eval_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.model not in ("affine", "mlp"):
            raise ConfigError(f"unknown model {self.model!r}")
        if self.crop_mode not in ("global", "per_frame"):
            raise ConfigError(f"unknown crop mode {self.crop_mode!r}")
        if not 0.0 <= self.eval_fraction < 1.0:
            raise ConfigError("eval_fraction must be in [0, 1)")


@dataclass(frozen=True, eq=False)
class PipelineResult:
    calibrated: tuple[Grid, ...]
    report: MetricsReport
    model: object
    loss_history: tuple[float, ...]
    window: CropWindow | None
    train_stations: StationSet
    eval_stations: StationSet | None


def _staged(stage: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except TaperCalError as exc:
        if exc.stage is None:
            exc.stage = stage
        raise


def _as_frame_list(obj) -> list[Grid]:
    if obj is None:
        return []
    if isinstance(obj, Grid):
        return [obj]
    if isinstance(obj, GridSeries):
        return list(obj.grids)
    return list(obj)


def split_stations(stations: StationSet, eval_fraction: float, seed: int):
    """Seeded-shuffle split; at least one station stays in training."""
    n = stations.n
    if n < 1:
        raise EmptyAfterMasking("cannot split an empty station set")
    order = Xoshiro256StarStar(seed).shuffled(list(range(n)))
    n_eval = int(round(eval_fraction * n))
    n_eval = min(n_eval, n - 1)
    eval_idx = sorted(order[:n_eval])
    train_idx = sorted(order[n_eval:])
    train_set = stations.subset(train_idx)
    eval_set = stations.subset(eval_idx) if eval_idx else None
    return train_set, eval_set


def _normalized_stations(stations: StationSet, norm: NormSpec) -> StationSet:
    scale = norm.x_max - norm.x_min
    out = []
    for s in stations:
        v = (s.value - norm.x_min) / scale
        if norm.clamp:
            v = min(max(v, 0.0), 1.0)
        out.append(Station(s.id, s.lat, s.lon, max(v, 0.0)))
    return StationSet(tuple(out))


def _station_pairs(frames: list[Grid], stations: StationSet):
    """Pooled (prediction, observation) pairs at valid station pixels.

    Frames where no station is valid (e.g. all outside a crop) contribute
    nothing instead of failing.
    """
    preds: list[float] = []
    obs: list[float] = []
    for g in frames:
        try:
            vals, valid = sample_at_stations(g, stations)
        except AllStationsOutOfBounds:
            continue
        preds.extend(vals[valid])
        obs.extend(stations.values[valid])
    return np.asarray(preds), np.asarray(obs)


def run_pipeline(
    cfg: PipelineConfig,
    satellite,
    truth=None,
    stations: StationSet | None = None,
    out_dir: str | None = None,
) -> PipelineResult:
    """Execute the full calibration chain on in-memory inputs.

    ``satellite``/``truth`` accept a Grid, a GridSeries, or a list of
    Grids; ``truth`` is optional when the loss never reads it.  With
    ``out_dir`` set, stage outputs are persisted as NPY (+ sidecar),
    station CSV, PGM quick-looks, and the metric report.
    """
    if stations is None or stations.n < 2:
        raise EmptyAfterMasking("pipeline needs at least two stations")

    sat_frames = _as_frame_list(satellite)
    truth_frames = _as_frame_list(truth)
    if truth_frames and len(truth_frames) != len(sat_frames):
        raise InvalidGrid("need one truth frame per satellite frame")

    if cfg.interp is not None:
        if isinstance(satellite, GridSeries):
            sat_frames = list(_staged("interp", interp_time, satellite, cfg.interp).grids)
        if isinstance(truth, GridSeries):
            truth_frames = list(_staged("interp", interp_time, truth, cfg.interp).grids)
        if truth_frames and len(truth_frames) != len(sat_frames):
            raise InvalidGrid("interpolated series lengths disagree")

    if cfg.resample_to is not None:
        t = cfg.resample_to
        method = ResampleMethod(t.method)
        sat_frames = [
            _staged("resample", resample_space, g, t.transform, t.rows, t.cols, method)
            for g in sat_frames
        ]
        truth_frames = [
            _staged("resample", resample_space, g, t.transform, t.rows, t.cols, method)
            for g in truth_frames
        ]

    window: CropWindow | None = None
    if cfg.crop_size is not None:
        shape = sat_frames[0].shape
        if cfg.crop_mode == "global":
            window = _staged(
                "crop", crop_search, shape, stations, sat_frames[0].transform, cfg.crop_size
            )
            sat_frames = [_staged("crop", apply_window, g, window) for g in sat_frames]
            truth_frames = [_staged("crop", apply_window, g, window) for g in truth_frames]
        else:
            new_sat, new_truth = [], []
            for i, g in enumerate(sat_frames):
                w = _staged("crop", crop_search, g.shape, stations, g.transform, cfg.crop_size)
                new_sat.append(_staged("crop", apply_window, g, w))
                if truth_frames:
                    new_truth.append(_staged("crop", apply_window, truth_frames[i], w))
                window = w
            sat_frames, truth_frames = new_sat, new_truth

    sat_norm = [_staged("normalize", normalize, g, cfg.norm) for g in sat_frames]
    truth_norm = [_staged("normalize", normalize, g, cfg.norm) for g in truth_frames]

    train_set, eval_set = _staged("split", split_stations, stations, cfg.eval_fraction, cfg.seed)
    train_norm = _normalized_stations(train_set, cfg.norm)

    if cfg.model == "affine":
        model = AffineCalibrator()
    else:
        model = MlpCalibrator(
            hidden=cfg.mlp_hidden,
            activation=cfg.mlp_activation,
            use_neighborhood=cfg.mlp_neighborhood,
            seed=cfg.train.seed,
        )

    model, history = _staged(
        "train",
        train,
        model,
        sat_norm,
        cfg.train,
        stations=train_norm,
        truth=truth_norm if truth_norm else None,
    )

    pred_norm = [_staged("apply", apply, model, g) for g in sat_norm]
    pred_mm = [_staged("denormalize", denormalize, g, cfg.norm) for g in pred_norm]

    report = MetricsReport()
    if eval_set is not None:
        pv, ov = _staged("metrics", _station_pairs, pred_mm, eval_set)
        if pv.size:
            pairs = PairedSamples(pv, ov)
            report = table_a1_metrics(pairs)
            try:
                mse, mae, r2 = regression_metrics(pairs)
                report.mse, report.mae, report.r2 = mse, mae, r2
            except UndefinedMetric:
                diff = pv - ov
                report.mse = float(np.mean(diff * diff))
                report.mae = float(np.mean(np.abs(diff)))
    if truth_norm:
        ps = [psnr(p, t, 1.0) for p, t in zip(pred_norm, truth_norm)]
        report.psnr = float(np.mean([p for p in ps if math.isfinite(p)])) if any(
            math.isfinite(p) for p in ps
        ) else math.inf
        if min(pred_norm[0].rows, pred_norm[0].cols) >= 11:
            report.ssim = float(
                np.mean([ssim(p, t, 1.0) for p, t in zip(pred_norm, truth_norm)])
            )

    result = PipelineResult(
        calibrated=tuple(pred_mm),
        report=report,
        model=model,
        loss_history=tuple(history),
        window=window,
        train_stations=train_set,
        eval_stations=eval_set,
    )
    if out_dir is not None:
        _persist(out_dir, cfg, sat_frames, truth_frames, result)
    return result


def _persist(out_dir, cfg, sat_frames, truth_frames, result: PipelineResult) -> None:
    os.makedirs(out_dir, exist_ok=True)
    for i, g in enumerate(sat_frames):
        write_npy(g, os.path.join(out_dir, f"satellite_{i:05d}.npy"))
    for i, g in enumerate(truth_frames):
        write_npy(g, os.path.join(out_dir, f"truth_{i:05d}.npy"))
    for i, g in enumerate(result.calibrated):
        write_npy(g, os.path.join(out_dir, f"calibrated_{i:05d}.npy"))
        write_pgm(g, cfg.norm, os.path.join(out_dir, f"calibrated_{i:05d}.pgm"))
    write_station_csv(result.train_stations, os.path.join(out_dir, "stations_train.csv"))
    if result.eval_stations is not None:
        write_station_csv(result.eval_stations, os.path.join(out_dir, "stations_eval.csv"))
    with open(os.path.join(out_dir, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(result.report.to_table() + "\n")
    with open(os.path.join(out_dir, "report.kv"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(result.report.to_kv_lines()) + "\n")


SWEEP_PARAMETERS = ("kernel_param", "mix_taper")
SWEEP_METRICS = ("rmse", "mae", "r2")


@dataclass(frozen=True)
class SweepSpec:
    """A one-parameter sweep over seeded synthetic trials."""

    parameter: str
    values: tuple[float, ...]
    repeats: int = 5
    base: PipelineConfig = PipelineConfig()
    scene: SceneSpec = SceneSpec()

    def __post_init__(self):
        if self.parameter not in SWEEP_PARAMETERS:
            raise ConfigError(f"unknown sweep parameter {self.parameter!r}")
        if not self.values:
            raise ConfigError("sweep needs at least one value")
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))


@dataclass(frozen=True)
class SweepRow:
    value: float
    metric: str
    mean: float
    std: float


def _config_with(base: PipelineConfig, parameter: str, value: float) -> PipelineConfig:
    if parameter == "kernel_param":
        kernel = replace(base.train.kernel, param=value)
        return replace(base, train=replace(base.train, kernel=kernel))
    loss = replace(base.train.loss, mix_taper=value)
    return replace(base, train=replace(base.train, loss=loss))


def run_sweep(spec: SweepSpec) -> list[SweepRow]:
    """Seeded trials per value; each trial reseeds only the scene noise.

    Station-eval RMSE/MAE/R2 are aggregated as mean and sample standard
    deviation (0 for a single repeat).
    """
    rows: list[SweepRow] = []
    noise_base = spec.scene.noise_seed if spec.scene.noise_seed is not None else spec.scene.seed
    for value in spec.values:
        cfg = _config_with(spec.base, spec.parameter, value)
        collected: dict[str, list[float]] = {m: [] for m in SWEEP_METRICS}
        for trial in range(spec.repeats):
            scene_spec = with_noise_seed(spec.scene, noise_base + trial)
            scene = generate_scene(scene_spec)
            result = run_pipeline(cfg, scene.satellite, scene.truth, scene.stations)
            rep = result.report
            rmse = rep.rmse if rep.rmse is not None else math.nan
            mae = rep.mae if rep.mae is not None else math.nan
            r2 = rep.r2 if rep.r2 is not None else math.nan
            collected["rmse"].append(rmse)
            collected["mae"].append(mae)
            collected["r2"].append(r2)
        for metric in SWEEP_METRICS:
            vals = np.asarray(collected[metric], dtype=np.float64)
            mean = float(np.mean(vals))
            std = float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0
            rows.append(SweepRow(value, metric, mean, std))
    return rows


def sweep_to_tsv(rows: list[SweepRow]) -> str:
    """Machine-readable table: ``value<TAB>metric<TAB>mean<TAB>std``."""
    lines = ["value\tmetric\tmean\tstd"]
    for r in rows:
        lines.append(f"{r.value:.17g}\t{r.metric}\t{r.mean:.17g}\t{r.std:.17g}")
    return "\n".join(lines) + "\n"
