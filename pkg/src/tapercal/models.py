"""Trainable calibration models optimized on the mixed station/grid loss.

Two desk-scale models: an affine gain/offset calibrator and a one-hidden-
layer per-pixel MLP (pixel value plus an optional 3x3 neighborhood-mean
feature).  Training is full-batch gradient descent (SGD with momentum or
Adam) driven by analytic gradients chained through the total loss; runs
are bit-reproducible given the seed.

Inference (``apply``) clamps outputs at zero since precipitation is
non-negative; the training forward pass does not, keeping gradients
exact.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadCheckpoint,
    BadMagic,
    ConfigError,
    DivergedLoss,
    EmptyAfterMasking,
    InvalidGrid,
    TruncatedFile,
)
from .grid import Grid, GridSeries
from .stations import DistanceMetric, StationSet
from .synth import Xoshiro256StarStar
from .taper import KernelSpec, TaperWeights, TotalLossConfig, compute_weights, total_loss

CHECKPOINT_MAGIC = b"TCAL1"


@dataclass(frozen=True)
class OptimizerSpec:
    """SGD (lr, momentum) or Adam (lr, beta1, beta2, eps)."""

    kind: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.kind!r}")
        if not (self.lr > 0.0 and math.isfinite(self.lr)):
            raise ConfigError("learning rate must be positive")

    @staticmethod
    def sgd(lr: float, momentum: float = 0.0) -> "OptimizerSpec":
        return OptimizerSpec("sgd", lr=lr, momentum=momentum)

    @staticmethod
    def adam(lr: float = 1e-3) -> "OptimizerSpec":
        return OptimizerSpec("adam", lr=lr)


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer, loss mix, kernel, and stopping policy for one run."""

    optimizer: OptimizerSpec = OptimizerSpec()
    epochs: int = 100
    seed: int = 0
    kernel: KernelSpec = KernelSpec()
    loss: TotalLossConfig = TotalLossConfig()
    metric: DistanceMetric = DistanceMetric()
    patience: int | None = 20
    min_delta: float = 1e-7

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.patience is not None and self.patience < 1:
            raise ConfigError("patience must be >= 1 (or None to disable)")


class AffineCalibrator:
    """out = a * x + b per pixel; identity prior (a=1, b=0)."""

    kind = "affine"

    def __init__(self, a: float = 1.0, b: float = 0.0):
        if not (math.isfinite(a) and math.isfinite(b)):
            raise ConfigError("affine parameters must be finite")
        self.a = float(a)
        self.b = float(b)

    def get_params(self) -> np.ndarray:
        return np.array([self.a, self.b], dtype=np.float64)

    def set_params(self, params) -> None:
        self.a, self.b = float(params[0]), float(params[1])

    def forward_values(self, grid: Grid) -> np.ndarray:
        """Unclamped per-pixel transform; missing pixels stay missing."""
        mask = grid.missing_mask()
        out = self.a * grid.values + self.b
        return np.where(mask, grid.missing, out)

    def param_grad(self, grid: Grid, dl_dpred: np.ndarray) -> np.ndarray:
        mask = grid.missing_mask()
        g = np.where(mask, 0.0, dl_dpred)
        x = np.where(mask, 0.0, grid.values)
        return np.array([float(np.sum(g * x)), float(np.sum(g))], dtype=np.float64)


def neighborhood_mean(grid: Grid) -> np.ndarray:
    """Mean over the in-bounds, non-missing 3x3 patch of each pixel."""
    mask = grid.missing_mask()
    vals = np.where(mask, 0.0, grid.values)
    ok = (~mask).astype(np.float64)
    pad_v = np.pad(vals, 1)
    pad_n = np.pad(ok, 1)
    total = np.zeros_like(vals)
    count = np.zeros_like(vals)
    rows, cols = vals.shape
    for dr in range(3):
        for dc in range(3):
            total += pad_v[dr : dr + rows, dc : dc + cols]
            count += pad_n[dr : dr + rows, dc : dc + cols]
    out = np.divide(total, count, out=np.zeros_like(total), where=count > 0)
    return out


class MlpCalibrator:
    """Per-pixel MLP: value (+ optional 3x3 mean) -> hidden -> estimate."""

    kind = "mlp"

    def __init__(
        self,
        hidden: int = 8,
        activation: str = "tanh",
        use_neighborhood: bool = True,
        seed: int = 0,
    ):
        if hidden < 1:
            raise ConfigError("hidden width must be >= 1")
        if activation not in ("relu", "tanh"):
            raise ConfigError(f"unknown activation {activation!r}")
        self.hidden = hidden
        self.activation = activation
        self.use_neighborhood = use_neighborhood
        n_in = 2 if use_neighborhood else 1
        rng = Xoshiro256StarStar(seed)

        def init(fan_in, fan_out, shape):
            s = math.sqrt(6.0 / (fan_in + fan_out))
            flat = np.array([rng.uniform(-s, s) for _ in range(int(np.prod(shape)))])
            return flat.reshape(shape)

        self.w1 = init(n_in, hidden, (n_in, hidden))
        self.b1 = np.zeros(hidden, dtype=np.float64)
        self.w2 = init(hidden, 1, (hidden, 1))
        self.b2 = np.zeros(1, dtype=np.float64)

    @property
    def n_in(self) -> int:
        return 2 if self.use_neighborhood else 1

    def get_params(self) -> np.ndarray:
        return np.concatenate(
            [self.w1.ravel(), self.b1.ravel(), self.w2.ravel(), self.b2.ravel()]
        )

    def set_params(self, params) -> None:
        params = np.asarray(params, dtype=np.float64)
        sizes = [self.w1.size, self.b1.size, self.w2.size, self.b2.size]
        if params.size != sum(sizes):
            raise InvalidGrid("parameter vector has the wrong length")
        i = 0
        self.w1 = params[i : i + sizes[0]].reshape(self.w1.shape).copy(); i += sizes[0]
        self.b1 = params[i : i + sizes[1]].copy(); i += sizes[1]
        self.w2 = params[i : i + sizes[2]].reshape(self.w2.shape).copy(); i += sizes[2]
        self.b2 = params[i : i + sizes[3]].copy()

    def _features(self, grid: Grid) -> np.ndarray:
        x = grid.values.reshape(-1, 1)
        x = np.where(grid.missing_mask().reshape(-1, 1), 0.0, x)
        if not self.use_neighborhood:
            return x
        return np.concatenate([x, neighborhood_mean(grid).reshape(-1, 1)], axis=1)

    def _act(self, z: np.ndarray) -> np.ndarray:
        if self.activation == "relu":
            return np.maximum(z, 0.0)
        return np.tanh(z)

    def _act_grad(self, z: np.ndarray) -> np.ndarray:
        if self.activation == "relu":
            return (z > 0.0).astype(np.float64)
        t = np.tanh(z)
        return 1.0 - t * t

    def forward_values(self, grid: Grid) -> np.ndarray:
        feats = self._features(grid)
        z1 = feats @ self.w1 + self.b1
        out = (self._act(z1) @ self.w2 + self.b2).ravel()
        out = out.reshape(grid.shape)
        return np.where(grid.missing_mask(), grid.missing, out)

    def param_grad(self, grid: Grid, dl_dpred: np.ndarray) -> np.ndarray:
        feats = self._features(grid)
        z1 = feats @ self.w1 + self.b1
        a1 = self._act(z1)
        dout = np.where(grid.missing_mask(), 0.0, dl_dpred).reshape(-1, 1)
        dw2 = a1.T @ dout
        db2 = dout.sum(axis=0)
        da1 = dout @ self.w2.T
        dz1 = da1 * self._act_grad(z1)
        dw1 = feats.T @ dz1
        db1 = dz1.sum(axis=0)
        return np.concatenate([dw1.ravel(), db1.ravel(), dw2.ravel(), db2.ravel()])


Calibrator = AffineCalibrator | MlpCalibrator


def apply(model: Calibrator, sat_grid: Grid, clamp: bool = True) -> Grid:
    """Calibrated grid; output clamped at 0 unless ``clamp=False``."""
    out = model.forward_values(sat_grid)
    mask = sat_grid.missing_mask()
    if clamp:
        out = np.where(mask, sat_grid.missing, np.maximum(out, 0.0))
        return sat_grid._with_values(out)
    return sat_grid._with_values(out, validate=False)


def _as_frames(obj) -> list[Grid]:
    if obj is None:
        return []
    if isinstance(obj, Grid):
        return [obj]
    if isinstance(obj, GridSeries):
        return list(obj.grids)
    return list(obj)


def _station_sets_for(stations, n_frames: int):
    if stations is None:
        return [None] * n_frames
    if isinstance(stations, StationSet):
        return [stations] * n_frames
    sets = list(stations)
    if len(sets) != n_frames:
        raise EmptyAfterMasking("need one station set per frame")
    return sets


class _Optimizer:
    def __init__(self, spec: OptimizerSpec, n_params: int):
        self.spec = spec
        self.velocity = np.zeros(n_params, dtype=np.float64)
        self.m = np.zeros(n_params, dtype=np.float64)
        self.v = np.zeros(n_params, dtype=np.float64)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        s = self.spec
        if s.kind == "sgd":
            self.velocity = s.momentum * self.velocity - s.lr * grad
            return params + self.velocity
        self.t += 1
        self.m = s.beta1 * self.m + (1.0 - s.beta1) * grad
        self.v = s.beta2 * self.v + (1.0 - s.beta2) * grad * grad
        m_hat = self.m / (1.0 - s.beta1 ** self.t)
        v_hat = self.v / (1.0 - s.beta2 ** self.t)
        return params - s.lr * m_hat / (np.sqrt(v_hat) + s.eps)


def train(
    model: Calibrator,
    sat,
    cfg: TrainConfig,
    stations: StationSet | list | None = None,
    truth=None,
):
    """Fit a calibrator by full-batch gradient descent on the total loss.

    ``sat``/``truth`` are a Grid, GridSeries, or list of Grids (one truth
    frame per satellite frame; truth may be None when the loss never
    reads it).  ``stations`` is one StationSet shared by every frame or a
    per-frame list.  Returns ``(model, loss_history)``.
    """
    sat_frames = _as_frames(sat)
    if not sat_frames:
        raise EmptyAfterMasking("no satellite frames to train on")
    truth_frames = _as_frames(truth)
    if truth_frames and len(truth_frames) != len(sat_frames):
        raise EmptyAfterMasking("need one truth frame per satellite frame")
    sets = _station_sets_for(stations, len(sat_frames))

    need_stations = cfg.loss.mix_taper > 0.0 or (
        cfg.loss.mix_other > 0.0 and cfg.loss.other_domain == "stations"
    )
    if need_stations and any(s is None for s in sets):
        raise EmptyAfterMasking("loss configuration needs stations")

    weights_cache: dict[int, TaperWeights] = {}

    def weights_for(s: StationSet) -> TaperWeights:
        key = id(s)
        if key not in weights_cache:
            weights_cache[key] = compute_weights(s, cfg.kernel, cfg.metric)
        return weights_cache[key]

    params = model.get_params()
    opt = _Optimizer(cfg.optimizer, params.size)
    history: list[float] = []
    best = math.inf
    stale = 0

    for _epoch in range(cfg.epochs):
        model.set_params(params)
        loss_total = 0.0
        grad_total = np.zeros_like(params)
        for i, sat_g in enumerate(sat_frames):
            pred = apply(model, sat_g, clamp=False)
            truth_g = truth_frames[i] if truth_frames else None
            w = weights_for(sets[i]) if (sets[i] is not None and cfg.loss.mix_taper > 0) else None
            value, grad_grid = total_loss(
                pred, truth_g, sets[i], cfg.kernel, cfg.loss, cfg.metric, weights=w
            )
            loss_total += value
            grad_total += model.param_grad(sat_g, grad_grid)
        loss_total /= len(sat_frames)
        grad_total /= len(sat_frames)

        if not math.isfinite(loss_total):
            raise DivergedLoss(f"loss became {loss_total} at epoch {len(history)}")
        history.append(loss_total)

        params = opt.step(params, grad_total)
        if not np.all(np.isfinite(params)):
            raise DivergedLoss(f"parameters diverged at epoch {len(history)}")

        if cfg.patience is not None:
            if loss_total < best - cfg.min_delta:
                best = loss_total
                stale = 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break

    model.set_params(params)
    return model, history


def backprop_check(
    model: Calibrator,
    grid: Grid,
    cfg: TrainConfig,
    stations: StationSet | None = None,
    truth: Grid | None = None,
    step: float = 1e-5,
) -> float:
    """Max relative error of analytic parameter gradients vs central
    finite differences of the total loss."""
    w = None
    if stations is not None and cfg.loss.mix_taper > 0:
        w = compute_weights(stations, cfg.kernel, cfg.metric)

    def loss_at(params) -> float:
        model.set_params(params)
        pred = apply(model, grid, clamp=False)
        value, _ = total_loss(pred, truth, stations, cfg.kernel, cfg.loss, cfg.metric, weights=w)
        return value

    base = model.get_params()
    model.set_params(base)
    pred = apply(model, grid, clamp=False)
    _, grad_grid = total_loss(pred, truth, stations, cfg.kernel, cfg.loss, cfg.metric, weights=w)
    analytic = model.param_grad(grid, grad_grid)

    worst = 0.0
    for k in range(base.size):
        up = base.copy(); up[k] += step
        dn = base.copy(); dn[k] -= step
        fd = (loss_at(up) - loss_at(dn)) / (2.0 * step)
        denom = max(abs(analytic[k]), abs(fd), 1e-8)
        worst = max(worst, abs(analytic[k] - fd) / denom)
    model.set_params(base)
    return worst


# --- checkpoint codec ----------------------------------------------------
# Layout: magic "TCAL1", u32 entry count, then per entry
#   u16 key length, utf-8 key, u8 ndim, ndim x u32 dims, f8-LE payload.
# Scalars (kind, activation, flags, hidden width) travel as 0-dim entries.

def _pack_entry(key: str, arr: np.ndarray) -> bytes:
    kb = key.encode("utf-8")
    arr = np.asarray(arr, dtype="<f8")
    head = struct.pack("<H", len(kb)) + kb + struct.pack("<B", arr.ndim)
    head += b"".join(struct.pack("<I", d) for d in arr.shape)
    return head + arr.tobytes(order="C")


def save_checkpoint(model: Calibrator, path) -> None:
    entries: list[tuple[str, np.ndarray]] = []
    if isinstance(model, AffineCalibrator):
        entries = [
            ("kind", np.float64(0.0)),
            ("a", np.float64(model.a)),
            ("b", np.float64(model.b)),
        ]
    elif isinstance(model, MlpCalibrator):
        entries = [
            ("kind", np.float64(1.0)),
            ("activation", np.float64(0.0 if model.activation == "relu" else 1.0)),
            ("use_neighborhood", np.float64(1.0 if model.use_neighborhood else 0.0)),
            ("hidden", np.float64(model.hidden)),
            ("w1", model.w1),
            ("b1", model.b1),
            ("w2", model.w2),
            ("b2", model.b2),
        ]
    else:
        raise BadCheckpoint(f"cannot checkpoint {type(model).__name__}")
    blob = CHECKPOINT_MAGIC + struct.pack("<I", len(entries))
    for key, arr in entries:
        blob += _pack_entry(key, np.asarray(arr))
    with open(path, "wb") as fh:
        fh.write(blob)


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise TruncatedFile(f"checkpoint ended inside {what}")
    return data


def load_checkpoint(path) -> Calibrator:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if len(magic) < len(CHECKPOINT_MAGIC):
            raise TruncatedFile("checkpoint shorter than its magic")
        if magic != CHECKPOINT_MAGIC:
            raise BadMagic(f"bad checkpoint magic {magic!r}")
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "entry count"))
        entries: dict[str, np.ndarray] = {}
        for _ in range(count):
            (klen,) = struct.unpack("<H", _read_exact(fh, 2, "key length"))
            key = _read_exact(fh, klen, "key").decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1, "ndim"))
            shape = tuple(
                struct.unpack("<I", _read_exact(fh, 4, "shape"))[0] for _ in range(ndim)
            )
            n_items = int(np.prod(shape)) if shape else 1
            payload = _read_exact(fh, 8 * n_items, f"payload of {key!r}")
            arr = np.frombuffer(payload, dtype="<f8").reshape(shape)
            if key in entries:
                raise BadCheckpoint(f"duplicate checkpoint key {key!r}")
            entries[key] = arr

    def scalar(key: str) -> float:
        if key not in entries:
            raise BadCheckpoint(f"checkpoint missing {key!r}")
        return float(entries[key])

    kind = scalar("kind")
    if kind == 0.0:
        return AffineCalibrator(scalar("a"), scalar("b"))
    if kind == 1.0:
        model = MlpCalibrator(
            hidden=int(scalar("hidden")),
            activation="relu" if scalar("activation") == 0.0 else "tanh",
            use_neighborhood=scalar("use_neighborhood") != 0.0,
        )
        for key in ("w1", "b1", "w2", "b2"):
            if key not in entries:
                raise BadCheckpoint(f"checkpoint missing {key!r}")
        for key in ("w1", "b1", "w2", "b2"):
            if entries[key].shape != getattr(model, key).shape:
                raise BadCheckpoint("checkpoint weight shapes do not match the header")
        model.w1 = entries["w1"].astype(np.float64).copy()
        model.b1 = entries["b1"].astype(np.float64).copy()
        model.w2 = entries["w2"].astype(np.float64).copy()
        model.b2 = entries["b2"].astype(np.float64).copy()
        return model
    raise BadCheckpoint(f"unknown model kind {kind}")
