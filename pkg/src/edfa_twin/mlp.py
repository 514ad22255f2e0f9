"""Two-hidden-layer perceptron baseline, written directly in numpy.

Features are the per-channel input powers (dBm), the total input power (dBm)
and the setpoint; targets are per-channel gains (dB). Features and targets
are standardized with statistics stored in the model. The loss is the mean
squared error over valid gain entries only.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .datasets import Dataset, Setting
from .errors import GridMismatchError, SchemaError, TrainingError
from .spectral import ChannelGrid, GainSpectrum, PowerSpectrum, total_power

MLP_SCHEMA = "edfa-twin.mlp/1"

__all__ = [
    "MlpConfig",
    "MlpModel",
    "default_hidden",
    "features",
    "init_params",
    "forward",
    "loss_and_grads",
    "train",
    "predict_nn",
    "predict_nn_batch",
    "save_mlp",
    "load_mlp",
]

_ACTIVATIONS = {
    "tanh": (np.tanh, lambda a: 1.0 - a * a),
    "softplus": (lambda z: np.logaddexp(0.0, z), lambda a: -np.expm1(-a)),
}


def default_hidden(n_channels: int) -> tuple:
    """(128, 64) up to 40 output channels, (256, 128) above."""
    return (128, 64) if n_channels <= 40 else (256, 128)


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int
    output_dim: int
    hidden: tuple = (128, 64)
    activation: str = "tanh"
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int | None = 32  # None: full batch
    epochs: int = 2000
    seed: int = 0
    validation_fraction: float = 0.1
    patience: int = 100
    init: str = "xavier"  # or "zeros"

    def __post_init__(self):
        h1, h2 = self.hidden
        if min(self.input_dim, self.output_dim, h1, h2) <= 0:
            raise ValueError("layer sizes must be positive")
        if h1 < h2:
            raise ValueError("first hidden layer must be at least as wide as the second")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.init not in ("xavier", "zeros"):
            raise ValueError(f"unknown init {self.init!r}")

    @classmethod
    def for_grid(cls, n_channels: int, **kw) -> "MlpConfig":
        kw.setdefault("hidden", default_hidden(n_channels))
        return cls(input_dim=n_channels + 2, output_dim=n_channels, **kw)


@dataclass(frozen=True, eq=False)
class MlpModel:
    """Trained network: weights ``[W1, b1, W2, b2, W3, b3]`` plus normalization."""

    config: MlpConfig
    params: tuple
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: np.ndarray
    y_scale: np.ndarray
    grid: ChannelGrid
    output_valid: np.ndarray
    history: dict = field(default_factory=dict)


def features(inputs, setpoint: float) -> np.ndarray:
    """Network input rows: channel powers, total input power, setpoint."""
    rows = []
    for s in inputs:
        rows.append(np.r_[s.values_dbm, total_power(s, "all"), float(setpoint)])
    return np.vstack(rows)


def init_params(config: MlpConfig, rng: np.random.Generator):
    dims = [config.input_dim, *config.hidden, config.output_dim]
    params = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        if config.init == "zeros":
            w = np.zeros((fan_in, fan_out))
        else:
            w = rng.normal(0.0, np.sqrt(2.0 / (fan_in + fan_out)), size=(fan_in, fan_out))
        params += [w, np.zeros(fan_out)]
    return params


def forward(params, x, activation="tanh"):
    """Returns the output and the hidden activations needed for backprop."""
    act = _ACTIVATIONS[activation][0]
    w1, b1, w2, b2, w3, b3 = params
    a1 = act(x @ w1 + b1)
    a2 = act(a1 @ w2 + b2)
    return a2 @ w3 + b3, (a1, a2)


def loss_and_grads(params, x, y, mask, activation="tanh"):
    """Masked mean squared error and its gradient with respect to every parameter."""
    dact = _ACTIVATIONS[activation][1]
    w1, b1, w2, b2, w3, b3 = params
    out, (a1, a2) = forward(params, x, activation)
    denom = max(float(mask.sum()), 1.0)
    diff = np.where(mask, out - y, 0.0)
    loss = float(np.sum(diff * diff) / denom)
    d_out = 2.0 * diff / denom
    g_w3 = a2.T @ d_out
    g_b3 = d_out.sum(axis=0)
    d_z2 = (d_out @ w3.T) * dact(a2)
    g_w2 = a1.T @ d_z2
    g_b2 = d_z2.sum(axis=0)
    d_z1 = (d_z2 @ w2.T) * dact(a1)
    g_w1 = x.T @ d_z1
    g_b1 = d_z1.sum(axis=0)
    return loss, [g_w1, g_b1, g_w2, g_b2, g_w3, g_b3]


def _standardize(a, mask=None):
    if mask is None:
        mean = a.mean(axis=0)
        std = a.std(axis=0)
    else:
        cnt = np.maximum(mask.sum(axis=0), 1)
        mean = np.where(mask, a, 0.0).sum(axis=0) / cnt
        std = np.sqrt(np.where(mask, (a - mean) ** 2, 0.0).sum(axis=0) / cnt)
    return mean, np.where(std > 1e-12, std, 1.0)


def train(dataset: Dataset, config: MlpConfig) -> MlpModel:
    """Train with mini-batch gradient descent plus momentum and early stopping.

    A ``validation_fraction`` of the records is held out for early stopping
    (``patience`` epochs without improvement); the best weights are kept.
    With ``validation_fraction=0`` the training loss is monitored instead.
    """
    if len(dataset) == 0:
        raise TrainingError("cannot train on an empty dataset")
    n_ch = len(dataset.grid)
    if config.output_dim != n_ch or config.input_dim != n_ch + 2:
        raise GridMismatchError("network dimensions do not match the dataset grid")
    rng = np.random.default_rng(config.seed)
    x_all = features(dataset.inputs, dataset.setting.setpoint)
    y_all = np.vstack([np.where(r.gain.valid, r.gain.values_db, 0.0) for r in dataset.records])
    m_all = np.vstack([r.gain.valid for r in dataset.records])

    n = len(dataset)
    perm = rng.permutation(n)
    n_val = int(round(config.validation_fraction * n)) if n >= 10 else 0
    val_idx, tr_idx = perm[:n_val], perm[n_val:]

    x_mean, x_scale = _standardize(x_all[tr_idx])
    y_mean, y_scale = _standardize(y_all[tr_idx], m_all[tr_idx])
    xs = (x_all - x_mean) / x_scale
    ys = np.where(m_all, (y_all - y_mean) / y_scale, 0.0)

    params = init_params(config, rng)
    velocity = [np.zeros_like(p) for p in params]
    batch = len(tr_idx) if config.batch_size is None else min(config.batch_size, len(tr_idx))
    history = {"train_loss": [], "val_loss": []}
    best = (np.inf, [p.copy() for p in params], 0)
    stale = 0
    for epoch in range(config.epochs):
        order = rng.permutation(tr_idx) if config.batch_size is not None else tr_idx
        for start in range(0, len(order), batch):
            rows = order[start:start + batch]
            loss, grads = loss_and_grads(params, xs[rows], ys[rows], m_all[rows], config.activation)
            if not np.isfinite(loss):
                raise TrainingError(
                    f"loss became non-finite at epoch {epoch}; lower the learning rate"
                )
            for p, v, g in zip(params, velocity, grads):
                v *= config.momentum
                v -= config.learning_rate * g
                p += v
        tr_loss, _ = loss_and_grads(params, xs[tr_idx], ys[tr_idx], m_all[tr_idx], config.activation)
        if not np.isfinite(tr_loss):
            raise TrainingError(f"loss became non-finite at epoch {epoch}; lower the learning rate")
        history["train_loss"].append(tr_loss)
        if n_val:
            monitor, _ = loss_and_grads(params, xs[val_idx], ys[val_idx], m_all[val_idx],
                                        config.activation)
            history["val_loss"].append(monitor)
        else:
            monitor = tr_loss
        if monitor < best[0]:
            best = (monitor, [p.copy() for p in params], epoch)
            stale = 0
        else:
            stale += 1
            if n_val and stale >= config.patience:
                break
    history["best_epoch"] = best[2]
    final = best[1] if n_val else params
    return MlpModel(config, tuple(final), x_mean, x_scale, y_mean, y_scale, dataset.grid,
                    m_all.any(axis=0), history)


def predict_nn_batch(model: MlpModel, inputs, setting: Setting | float):
    setpoint = setting.setpoint if isinstance(setting, Setting) else float(setting)
    for s in inputs:
        if s.grid != model.grid:
            raise GridMismatchError(
                f"input grid ({len(s.grid)} channels) does not match the network "
                f"({len(model.grid)} channels)"
            )
    xs = (features(inputs, setpoint) - model.x_mean) / model.x_scale
    out, _ = forward(model.params, xs, model.config.activation)
    gains = out * model.y_scale + model.y_mean
    return [GainSpectrum(model.grid, g, model.output_valid) for g in gains]


def predict_nn(model: MlpModel, spectrum: PowerSpectrum, setting: Setting | float) -> GainSpectrum:
    """Forward pass for one input; gain is reported on channels seen in training."""
    return predict_nn_batch(model, [spectrum], setting)[0]


def save_mlp(model: MlpModel, path) -> None:
    doc = {
        "schema": MLP_SCHEMA,
        "config": {k: (list(v) if isinstance(v, tuple) else v)
                   for k, v in asdict(model.config).items()},
        "grid": {"frequencies_thz": [float(f) for f in model.grid.frequencies],
                 "channel_bandwidth_ghz": model.grid.channel_bandwidth},
        "params": [p.tolist() for p in model.params],
        "normalization": {k: getattr(model, k).tolist()
                          for k in ("x_mean", "x_scale", "y_mean", "y_scale")},
        "output_valid": "".join("1" if b else "0" for b in model.output_valid),
        "history": model.history,
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_mlp(path) -> MlpModel:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("schema") != MLP_SCHEMA:
        raise SchemaError(f"{path}: network schema {doc.get('schema')!r}, expected {MLP_SCHEMA!r}")
    cfg = doc["config"]
    cfg["hidden"] = tuple(cfg["hidden"])
    config = MlpConfig(**cfg)
    grid = ChannelGrid(doc["grid"]["frequencies_thz"], doc["grid"]["channel_bandwidth_ghz"])
    params = tuple(np.array(p, dtype=float) for p in doc["params"])
    norm = {k: np.array(v, dtype=float) for k, v in doc["normalization"].items()}
    valid = np.frombuffer(doc["output_valid"].encode(), dtype=np.uint8) == ord("1")
    return MlpModel(config, params, grid=grid, output_valid=valid,
                    history=doc.get("history", {}), **norm)
