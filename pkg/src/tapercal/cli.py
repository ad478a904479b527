"""Command-line surface; every subcommand is a thin shell over library ops.

Exit codes: 0 success, 1 usage error (message + synopsis on stderr),
2 data/format error, 3 numerical failure.  ``--config FILE`` supplies
flat ``key=value`` defaults (keys are flag dests); explicit flags
override the file.  Human-readable floats print with 6 significant
digits, machine output with 17.
"""

from __future__ import annotations

import argparse
import os
import sys
from datetime import timedelta

import numpy as np

from .errors import ConfigError, TaperCalError, UndefinedMetric
from .grid import GeoTransform
from .io import (
    read_npy,
    read_series_npz,
    read_station_csv,
    write_npy,
    write_series_npz,
    write_station_csv,
)
from .metrics import (
    DEFAULT_EVENT_THRESHOLD,
    PairedSamples,
    classify_level,
    psnr,
    regression_metrics,
    ssim,
    table_a1_metrics,
)
from .models import (
    AffineCalibrator,
    MlpCalibrator,
    OptimizerSpec,
    TrainConfig,
    apply,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .pipeline import (
    PipelineConfig,
    SweepSpec,
    run_pipeline,
    run_sweep,
    sweep_to_tsv,
)
from .preprocess import NormSpec, apply_window, crop_search, denormalize, grid_stats, normalize
from .resample import ResampleMethod, TimeInterpSpec, interp_time, resample_space
from .stations import DistanceMetric
from .synth import SceneSpec, generate_scene, generate_series
from .taper import KernelSpec, TotalLossConfig

THREADS_ENV = "TAPER_CALIB_THREADS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that raises instead of exiting."""

    def error(self, message):
        raise UsageError(message)


def _fmt(x: float, machine: bool) -> str:
    return f"{x:.17g}" if machine else f"{x:.6g}"


def _add_common(p: _Parser) -> None:
    p.add_argument("--config", default=None, help="key=value defaults file")
    p.add_argument("--seed", type=int, default=0)


def _add_scene_flags(p: _Parser) -> None:
    p.add_argument("--rows", type=int, default=64)
    p.add_argument("--cols", type=int, default=64)
    p.add_argument("--lat0", type=float, default=40.0)
    p.add_argument("--lon0", type=float, default=100.0)
    p.add_argument("--dlat", type=float, default=-0.1)
    p.add_argument("--dlon", type=float, default=0.1)
    p.add_argument("--bumps", type=int, default=6)
    p.add_argument("--amp-min", type=float, default=0.2)
    p.add_argument("--amp-max", type=float, default=1.0)
    p.add_argument("--sigma-min", type=float, default=3.0)
    p.add_argument("--sigma-max", type=float, default=10.0)
    p.add_argument("--gain", type=float, default=1.0)
    p.add_argument("--offset", type=float, default=0.0)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--stations-count", type=int, default=40)
    p.add_argument("--station-noise-sigma", type=float, default=0.0)
    p.add_argument("--zero-fraction", type=float, default=0.3)
    p.add_argument("--noise-seed", type=int, default=None)


def _scene_spec(args) -> SceneSpec:
    return SceneSpec(
        rows=args.rows,
        cols=args.cols,
        transform=GeoTransform(args.lat0, args.lon0, args.dlat, args.dlon),
        n_bumps=args.bumps,
        amp_range=(args.amp_min, args.amp_max),
        sigma_range=(args.sigma_min, args.sigma_max),
        bias_gain=args.gain,
        bias_offset=args.offset,
        noise_sigma=args.noise_sigma,
        n_stations=args.stations_count,
        station_noise_sigma=args.station_noise_sigma,
        zero_fraction=args.zero_fraction,
        seed=args.seed,
        noise_seed=args.noise_seed,
    )


def _add_loss_flags(p: _Parser) -> None:
    p.add_argument("--kernel", default="exponential",
                   choices=["exponential", "linear", "power_law", "gaussian"])
    p.add_argument("--kernel-param", type=float, default=1.0)
    p.add_argument("--d-floor", type=float, default=1e-6)
    p.add_argument("--mix-taper", type=float, default=1.0)
    p.add_argument("--mix-other", type=float, default=1.0)
    p.add_argument("--other", default="L2", choices=["L1", "L2"])
    p.add_argument("--other-domain", default="full_grid", choices=["stations", "full_grid"])
    p.add_argument("--distance-metric", default="haversine_km",
                   choices=["haversine_km", "euclidean_degrees", "grid_pixels"])


def _add_train_flags(p: _Parser) -> None:
    p.add_argument("--model", default="affine", choices=["affine", "mlp"])
    p.add_argument("--hidden", type=int, default=8)
    p.add_argument("--activation", default="tanh", choices=["relu", "tanh"])
    p.add_argument("--no-neighborhood", action="store_true")
    p.add_argument("--optimizer", default="adam", choices=["sgd", "adam"])
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--momentum", type=float, default=0.0)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--patience", type=int, default=20)
    p.add_argument("--no-early-stop", action="store_true")


def _train_config(args, transform=None) -> TrainConfig:
    metric = DistanceMetric(args.distance_metric, transform) if (
        args.distance_metric == "grid_pixels"
    ) else DistanceMetric(args.distance_metric)
    return TrainConfig(
        optimizer=OptimizerSpec(args.optimizer, lr=args.lr, momentum=args.momentum),
        epochs=args.epochs,
        seed=args.seed,
        kernel=KernelSpec(args.kernel, args.kernel_param, args.d_floor),
        loss=TotalLossConfig(args.mix_taper, args.mix_other, args.other, args.other_domain),
        metric=metric,
        patience=None if args.no_early_stop else args.patience,
    )


def _read_frames(path):
    """A GridSeries from .npz or a single Grid from .npy."""
    if str(path).endswith(".npz"):
        return read_series_npz(path)
    return read_npy(path)


def build_parser() -> _Parser:
    parser = _Parser(prog="tapercal", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("synth", help="generate a synthetic scene or series")
    _add_common(p)
    _add_scene_flags(p)
    p.add_argument("--frames", type=int, default=1)
    p.add_argument("--advect-row", type=float, default=0.0)
    p.add_argument("--advect-col", type=float, default=0.0)
    p.add_argument("--step-minutes", type=int, default=30)
    p.add_argument("--out-truth", required=True)
    p.add_argument("--out-sat", required=True)
    p.add_argument("--out-stations", default=None)

    p = sub.add_parser("interp-time", help="refine a series' time step")
    _add_common(p)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--source-step-minutes", type=int, required=True)
    p.add_argument("--target-step-minutes", type=int, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("resample", help="resample a grid onto a new geometry")
    _add_common(p)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--cols", type=int, required=True)
    p.add_argument("--lat0", type=float, default=None)
    p.add_argument("--lon0", type=float, default=None)
    p.add_argument("--dlat", type=float, default=None)
    p.add_argument("--dlon", type=float, default=None)
    p.add_argument("--method", default="bilinear", choices=["nearest", "bilinear", "bicubic"])
    p.add_argument("--out", required=True)

    p = sub.add_parser("crop", help="crop to the densest station window")
    _add_common(p)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--stations", required=True)
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--out", default=None)

    p = sub.add_parser("normalize", help="truncation min-max normalization")
    _add_common(p)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--x-min", type=float, default=0.0)
    p.add_argument("--x-max", type=float, required=True)
    p.add_argument("--no-clamp", action="store_true")
    p.add_argument("--invert", action="store_true", help="denormalize instead")
    p.add_argument("--out", required=True)

    p = sub.add_parser("stats", help="min/max/avg and quantile table")
    _add_common(p)
    p.add_argument("inputs", nargs="+")
    p.add_argument("--drop-zeros", action="store_true")
    p.add_argument("--machine", action="store_true")

    p = sub.add_parser("train", help="fit a calibration model")
    _add_common(p)
    p.add_argument("--sat", required=True)
    p.add_argument("--stations", required=True)
    p.add_argument("--truth", default=None)
    _add_loss_flags(p)
    _add_train_flags(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("calibrate", help="apply a trained model to a grid")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="verification metrics for a prediction")
    _add_common(p)
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", default=None)
    p.add_argument("--stations", default=None)
    p.add_argument("--threshold", type=float, default=DEFAULT_EVENT_THRESHOLD)
    p.add_argument("--data-range", type=float, default=None)
    p.add_argument("--machine", action="store_true")

    p = sub.add_parser("level", help="24-hour precipitation level")
    _add_common(p)
    p.add_argument("--value", type=float, default=None)
    p.add_argument("--in", dest="input", default=None)

    p = sub.add_parser("sweep", help="parameter sweep over seeded trials")
    _add_common(p)
    _add_scene_flags(p)
    _add_loss_flags(p)
    _add_train_flags(p)
    p.add_argument("--parameter", required=True, choices=["kernel_param", "mix_taper"])
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--x-max", type=float, default=1.0)
    p.add_argument("--eval-fraction", type=float, default=0.2)
    p.add_argument("--out", default=None)

    p = sub.add_parser("pipeline", help="end-to-end calibration run")
    _add_common(p)
    _add_scene_flags(p)
    _add_loss_flags(p)
    _add_train_flags(p)
    p.add_argument("--sat", default=None, help="satellite input (.npy/.npz); default: synthesize")
    p.add_argument("--truth", default=None)
    p.add_argument("--stations", default=None)
    p.add_argument("--crop-size", type=int, default=None)
    p.add_argument("--x-min", type=float, default=0.0)
    p.add_argument("--x-max", type=float, default=1.0)
    p.add_argument("--eval-fraction", type=float, default=0.2)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--machine", action="store_true")

    return parser


def _apply_config_file(parser: _Parser, argv, args):
    """Reparse with defaults taken from the config file; flags win."""
    path = args.config
    values: dict[str, str] = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for raw in fh:
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(f"config line without '=': {line!r}")
                key, _, val = line.partition("=")
                values[key.strip()] = val.strip()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc

    subparsers = next(
        a for a in parser._actions if isinstance(a, argparse._SubParsersAction)
    )
    sub = subparsers.choices[args.command]
    actions = {a.dest: a for a in sub._actions if a.dest != "help"}
    defaults = {}
    for key, val in values.items():
        dest = key.replace("-", "_")
        if dest not in actions:
            raise ConfigError(f"unknown config key {key!r}")
        action = actions[dest]
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            low = val.lower()
            if low not in ("0", "1", "true", "false", "yes", "no"):
                raise ConfigError(f"config key {key!r} needs a boolean, got {val!r}")
            defaults[dest] = low in ("1", "true", "yes")
        elif action.type is not None:
            try:
                defaults[dest] = action.type(val)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"config key {key!r}: {exc}") from exc
        else:
            defaults[dest] = val
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


# --- command bodies -------------------------------------------------------

def _cmd_synth(args) -> int:
    spec = _scene_spec(args)
    if args.frames <= 1:
        scene = generate_scene(spec)
        write_npy(scene.truth, args.out_truth)
        write_npy(scene.satellite, args.out_sat)
        if args.out_stations:
            write_station_csv(scene.stations, args.out_stations)
        print(f"scene rows={spec.rows} cols={spec.cols} stations={scene.stations.n}")
        return 0
    truth, sat = generate_series(
        spec,
        args.frames,
        (args.advect_row, args.advect_col),
        timedelta(minutes=args.step_minutes),
    )
    write_series_npz(truth, args.out_truth)
    write_series_npz(sat, args.out_sat)
    if args.out_stations:
        write_station_csv(generate_scene(spec).stations, args.out_stations)
    print(f"series frames={args.frames} rows={spec.rows} cols={spec.cols}")
    return 0


def _cmd_interp_time(args) -> int:
    series = read_series_npz(args.input)
    spec = TimeInterpSpec(
        timedelta(minutes=args.source_step_minutes),
        timedelta(minutes=args.target_step_minutes),
    )
    out = interp_time(series, spec)
    write_series_npz(out, args.out)
    print(f"frames_in={len(series)} frames_out={len(out)}")
    return 0


def _cmd_resample(args) -> int:
    grid = read_npy(args.input)
    tr = grid.transform
    target = GeoTransform(
        tr.lat_origin if args.lat0 is None else args.lat0,
        tr.lon_origin if args.lon0 is None else args.lon0,
        tr.dlat if args.dlat is None else args.dlat,
        tr.dlon if args.dlon is None else args.dlon,
    )
    out = resample_space(grid, target, args.rows, args.cols, ResampleMethod(args.method))
    write_npy(out, args.out)
    print(f"resampled {grid.rows}x{grid.cols} -> {out.rows}x{out.cols} ({args.method})")
    return 0


def _cmd_crop(args) -> int:
    stations = read_station_csv(args.stations)
    if str(args.input).endswith(".npz"):
        series = read_series_npz(args.input)
        window = crop_search(series.shape, stations, series.transform, args.size)
        if args.out:
            from .grid import GridSeries

            cropped = GridSeries(tuple(apply_window(g, window) for g in series))
            write_series_npz(cropped, args.out)
    else:
        grid = read_npy(args.input)
        window = crop_search(grid.shape, stations, grid.transform, args.size)
        if args.out:
            write_npy(apply_window(grid, window), args.out)
    print(f"row0={window.row0} col0={window.col0} size={window.size} stations={window.station_count}")
    return 0


def _cmd_normalize(args) -> int:
    grid = read_npy(args.input)
    spec = NormSpec(args.x_min, args.x_max, clamp=not args.no_clamp)
    out = denormalize(grid, spec) if args.invert else normalize(grid, spec)
    write_npy(out, args.out)
    print(("denormalized" if args.invert else "normalized") + f" x_min={args.x_min} x_max={args.x_max}")
    return 0


def _cmd_stats(args) -> int:
    machine = args.machine
    pools = []
    rows = []
    for path in args.inputs:
        grid = read_npy(path)
        vals = grid.values[~grid.missing_mask()]
        pools.append(vals)
        rows.append((os.path.basename(path), grid_stats(grid, args.drop_zeros)))
    if len(args.inputs) > 1:
        from .preprocess import compute_stats

        rows.append(("All", compute_stats(np.concatenate(pools), args.drop_zeros)))
    if machine:
        for name, st in rows:
            for fname in st.FIELDS:
                print(f"{name}.{fname}={getattr(st, fname):.17g}")
            print(f"{name}.count={st.count}")
    else:
        header = ["input", "min", "max", "avg", "q1", "q2", "q3", "q99"]
        table = [header]
        for name, st in rows:
            table.append([name] + [f"{getattr(st, f):.6g}" for f in st.FIELDS])
        widths = [max(len(r[i]) for r in table) for i in range(len(header))]
        for r in table:
            print("  ".join(f"{cell:>{w}}" for cell, w in zip(r, widths)))
    return 0


def _cmd_train(args) -> int:
    sat = _read_frames(args.sat)
    truth = _read_frames(args.truth) if args.truth else None
    stations = read_station_csv(args.stations)
    cfg = _train_config(args, sat.transform)
    if args.model == "affine":
        model = AffineCalibrator()
    else:
        model = MlpCalibrator(
            hidden=args.hidden,
            activation=args.activation,
            use_neighborhood=not args.no_neighborhood,
            seed=args.seed,
        )
    model, history = train(model, sat, cfg, stations=stations, truth=truth)
    save_checkpoint(model, args.out)
    print(f"epochs={len(history)}")
    print(f"loss_first={history[0]:.17g}")
    print(f"loss_final={history[-1]:.17g}")
    return 0


def _cmd_calibrate(args) -> int:
    model = load_checkpoint(args.model)
    grid = read_npy(args.input)
    write_npy(apply(model, grid), args.out)
    print(f"calibrated {grid.rows}x{grid.cols} with {model.kind}")
    return 0


def _cmd_eval(args) -> int:
    pred = read_npy(args.pred)
    if args.stations:
        stations = read_station_csv(args.stations)
        from .stations import sample_at_stations

        vals, valid = sample_at_stations(pred, stations)
        pairs = PairedSamples(vals[valid], stations.values[valid])
    elif args.truth:
        truth = read_npy(args.truth)
        pairs = PairedSamples.from_grids(pred, truth)
    else:
        raise ConfigError("eval needs --truth or --stations")
    report = table_a1_metrics(pairs, args.threshold)
    try:
        report.mse, report.mae, report.r2 = regression_metrics(pairs)
    except UndefinedMetric:
        pass
    if args.truth and args.data_range:
        truth = read_npy(args.truth)
        report.psnr = psnr(pred, truth, args.data_range)
        if min(pred.rows, pred.cols) >= 11:
            report.ssim = ssim(pred, truth, args.data_range)
    print("\n".join(report.to_kv_lines()) if args.machine else report.to_table())
    return 0


def _cmd_level(args) -> int:
    if (args.value is None) == (args.input is None):
        raise ConfigError("level needs exactly one of --value or --in")
    if args.value is not None:
        print(classify_level(args.value))
        return 0
    grid = read_npy(args.input)
    vals = grid.values[~grid.missing_mask()]
    counts = [0] * 7
    for v in vals:
        counts[classify_level(float(v))] += 1
    for lvl, count in enumerate(counts):
        print(f"level_{lvl}={count}")
    return 0


def _pipeline_config(args, crop_size=None) -> PipelineConfig:
    transform = GeoTransform(args.lat0, args.lon0, args.dlat, args.dlon)
    return PipelineConfig(
        crop_size=crop_size,
        norm=NormSpec(getattr(args, "x_min", 0.0), args.x_max, True),
        model=args.model,
        mlp_hidden=args.hidden,
        mlp_activation=args.activation,
        mlp_neighborhood=not args.no_neighborhood,
        train=_train_config(args, transform),
        eval_fraction=args.eval_fraction,
        seed=args.seed,
    )


def _cmd_sweep(args) -> int:
    values = tuple(float(v) for v in args.values.split(",") if v.strip())
    if not values:
        raise ConfigError("--values needs at least one number")
    spec = SweepSpec(
        parameter=args.parameter,
        values=values,
        repeats=args.repeats,
        base=_pipeline_config(args),
        scene=_scene_spec(args),
    )
    tsv = sweep_to_tsv(run_sweep(spec))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(tsv)
    print(tsv, end="")
    return 0


def _cmd_pipeline(args) -> int:
    if args.sat:
        satellite = _read_frames(args.sat)
        truth = _read_frames(args.truth) if args.truth else None
        if not args.stations:
            raise ConfigError("pipeline with file inputs needs --stations")
        stations = read_station_csv(args.stations)
    else:
        scene = generate_scene(_scene_spec(args))
        satellite, truth, stations = scene.satellite, scene.truth, scene.stations
    cfg = _pipeline_config(args, crop_size=args.crop_size)
    result = run_pipeline(cfg, satellite, truth, stations, out_dir=args.out_dir)
    print("\n".join(result.report.to_kv_lines()) if args.machine else result.report.to_table())
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "interp-time": _cmd_interp_time,
    "resample": _cmd_resample,
    "crop": _cmd_crop,
    "normalize": _cmd_normalize,
    "stats": _cmd_stats,
    "train": _cmd_train,
    "calibrate": _cmd_calibrate,
    "eval": _cmd_eval,
    "level": _cmd_level,
    "sweep": _cmd_sweep,
    "pipeline": _cmd_pipeline,
}


def _check_threads_env() -> None:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}")
    if n < 0:
        raise ConfigError(f"{THREADS_ENV} must be >= 0")
    # Execution is currently single-threaded everywhere, which respects
    # any cap; the variable is validated so misconfigurations surface.


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _check_threads_env()
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("missing COMMAND")
        if args.config:
            args = _apply_config_file(parser, argv, args)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except TaperCalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
