"""Grey-box EDFA gain model.

The gain spectrum of an amplifier whose doped-fiber stages share one fiber
type is an affine function of a single hidden variable::

    G(x) = delta_g * x + g0

``delta_g`` and ``g0`` are estimated from a handful of measured spectra
(difference of the extreme spectra, and their overall mean). For a new input
the hidden variable ``x`` is the unique root of the AGC/APC power balance

    sum_ch 10**((delta_g*x + g0 + P_in) / 10) = target total output (mW),

which is strictly increasing in ``x`` when ``delta_g > 0``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .datasets import Setting
from .errors import (
    GridMismatchError,
    InsufficientSamplesError,
    NonMonotoneFamilyError,
    SchemaError,
    SolveError,
    SpectrumError,
)
from .integrate import bisect_increasing
from .spectral import ChannelGrid, GainSpectrum, PowerSpectrum

MODEL_SCHEMA = "edfa-twin.greybox/1"
SOLVE_TOL_DB = 1e-11
X_BRACKET = (-3.0, 4.0)
MAX_BRACKET_DOUBLINGS = 4

__all__ = [
    "GreyBoxModel",
    "FitReport",
    "fit",
    "solve_x",
    "solve_x_batch",
    "predict",
    "predict_batch",
    "constraint_residual_db",
    "implied_output_dbm",
    "save_model",
    "load_model",
    "default_extremes",
]


@dataclass(frozen=True, eq=False)
class GreyBoxModel:
    """Fitted gain family plus the operating setting it was fitted under.

    ``setpoint`` is the nominal setting; the solver targets
    ``setpoint + calibration_db``. ``delta_g`` and ``g0`` are NaN on channels
    outside ``valid``.
    """

    grid: ChannelGrid
    delta_g: np.ndarray
    g0: np.ndarray
    mode: str
    setpoint: float
    calibration_db: float = 0.0
    valid: np.ndarray | None = None
    n_samples: int = 0
    extremes_averaged: int = 0

    def __post_init__(self):
        n = len(self.grid)
        dg = np.array(self.delta_g, dtype=float)
        g0 = np.array(self.g0, dtype=float)
        valid = np.isfinite(dg) & np.isfinite(g0) if self.valid is None \
            else np.array(self.valid, dtype=bool)
        if dg.shape != (n,) or g0.shape != (n,) or valid.shape != (n,):
            raise SpectrumError("model spectra must match the grid length")
        if not valid.any():
            raise SpectrumError("model has no valid channels")
        if not (np.all(np.isfinite(dg[valid])) and np.all(np.isfinite(g0[valid]))):
            raise SpectrumError("delta_g and g0 must be finite on valid channels")
        if np.any(dg[valid] <= 0):
            bad = [int(i) + 1 for i in np.flatnonzero(valid & ~(dg > 0))]
            raise NonMonotoneFamilyError(f"delta_g must be positive; channels {bad}", bad)
        dg[~valid] = np.nan
        g0[~valid] = np.nan
        for a in (dg, g0, valid):
            a.setflags(write=False)
        object.__setattr__(self, "delta_g", dg)
        object.__setattr__(self, "g0", g0)
        object.__setattr__(self, "valid", valid)
        object.__setattr__(self, "mode", Setting(self.mode, self.setpoint).mode)
        object.__setattr__(self, "setpoint", float(self.setpoint))
        object.__setattr__(self, "calibration_db", float(self.calibration_db))

    @property
    def target_level(self) -> float:
        """Calibrated setpoint: dB gain (AGC) or dBm output (APC)."""
        return self.setpoint + self.calibration_db

    @property
    def setting(self) -> Setting:
        return Setting(self.mode, self.setpoint)

    def gain_at(self, x) -> np.ndarray:
        """Gain spectra for hidden-variable values ``x`` (shape (..., n_channels))."""
        return np.multiply.outer(np.asarray(x, dtype=float), self.delta_g) + self.g0

    def __eq__(self, other):
        if not isinstance(other, GreyBoxModel):
            return NotImplemented
        return (
            self.grid == other.grid
            and np.array_equal(self.valid, other.valid)
            and np.array_equal(self.delta_g, other.delta_g, equal_nan=True)
            and np.array_equal(self.g0, other.g0, equal_nan=True)
            and (self.mode, self.setpoint, self.calibration_db, self.n_samples,
                 self.extremes_averaged)
            == (other.mode, other.setpoint, other.calibration_db, other.n_samples,
                other.extremes_averaged)
        )

    __hash__ = None


@dataclass(frozen=True)
class FitReport:
    n_samples: int
    extremes_averaged: int
    residual_rmse_db: np.ndarray
    calibration_db: float
    x_train: np.ndarray
    range_scale: float = 1.0
    invalid_channels: tuple = ()
    warnings: tuple = field(default_factory=tuple)


def default_extremes(n_samples: int) -> int:
    return 2 if n_samples >= 8 else 1


# --- power balance ----------------------------------------------------------------

def _check_input(model: GreyBoxModel, spectrum: PowerSpectrum):
    if spectrum.grid != model.grid:
        raise GridMismatchError(
            f"input grid ({len(spectrum.grid)} channels) does not match the model grid "
            f"({len(model.grid)} channels)"
        )


def _balance_terms(model: GreyBoxModel, inputs: Sequence[PowerSpectrum]):
    """Per-input constant parts of the power balance over the model's channels.

    Returns ``(base, target_dbm)`` where ``base[i] = g0 + P_in`` on valid
    channels, so that output power is ``sum 10**((delta_g*x + base)/10)``.
    """
    for s in inputs:
        _check_input(model, s)
    sel = model.valid
    p_in = np.vstack([s.values_dbm[sel] for s in inputs])
    base = model.g0[sel] + p_in
    if model.mode == "AGC":
        tot_in = 10.0 * np.log10(np.power(10.0, p_in / 10.0).sum(axis=1))
        target = tot_in + model.target_level
    else:
        target = np.full(len(inputs), model.target_level)
    return base, target


def _log_sum_dbm(values_dbm):
    """10*log10(sum 10**(v/10)) along the last axis, overflow-safe."""
    peak = values_dbm.max(axis=-1, keepdims=True)
    return (peak + 10.0 * np.log10(np.power(10.0, (values_dbm - peak) / 10.0).sum(
        axis=-1, keepdims=True)))[..., 0]


def implied_output_dbm(model: GreyBoxModel, spectrum: PowerSpectrum, gain: GainSpectrum) -> float:
    """Total output power (dBm) implied by ``gain`` over the model's channels."""
    sel = model.valid
    return float(_log_sum_dbm(spectrum.values_dbm[sel] + gain.values_db[sel]))


def constraint_residual_db(model: GreyBoxModel, spectrum: PowerSpectrum, x) -> np.ndarray:
    """Residual (dB) of the power balance at hidden-variable values ``x``."""
    base, target = _balance_terms(model, [spectrum])
    dg = model.delta_g[model.valid]
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = _log_sum_dbm(x[:, None] * dg + base[0])
    return out - target[0]


def solve_x_batch(model: GreyBoxModel, inputs: Sequence[PowerSpectrum], *, tol=SOLVE_TOL_DB,
                  return_iterations=False):
    """Solve the power balance for many inputs at once (vectorized bisection)."""
    if len(inputs) == 0:
        return np.zeros(0)
    base, target = _balance_terms(model, inputs)
    dg = model.delta_g[model.valid]

    def residual(x, rows):
        return _log_sum_dbm(x[:, None] * dg + base[rows]) - target[rows]

    rows = np.arange(len(inputs))
    lo = np.full(rows.size, X_BRACKET[0])
    hi = np.full(rows.size, X_BRACKET[1])
    r_lo, r_hi = residual(lo, rows), residual(hi, rows)
    for _ in range(MAX_BRACKET_DOUBLINGS):
        bad = (r_lo > 0) | (r_hi < 0)
        if not bad.any():
            break
        half = 0.5 * (hi[bad] - lo[bad])
        lo[bad] -= half
        hi[bad] += half
        r_lo[bad] = residual(lo[bad], rows[bad])
        r_hi[bad] = residual(hi[bad], rows[bad])
    bad = (r_lo > 0) | (r_hi < 0)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise SolveError(
            f"target not attainable for x in [{lo[i]:g}, {hi[i]:g}] (input {i}); the input is "
            "far outside the training conditions",
            bracket=(float(lo[i]), float(hi[i])),
        )
    x, n_iter, ok = bisect_increasing(residual, lo, hi, tol=tol, max_iter=200,
                                      r_lo=r_lo, r_hi=r_hi)
    if not np.all(ok):
        i = int(np.flatnonzero(~ok)[0])
        raise SolveError(f"bisection stalled before reaching {tol:g} dB (input {i})",
                         bracket=(float(lo[i]), float(hi[i])))
    return (x, n_iter) if return_iterations else x


def solve_x(model: GreyBoxModel, spectrum: PowerSpectrum) -> float:
    """Hidden variable ``x`` satisfying the AGC/APC power balance for ``spectrum``."""
    return float(solve_x_batch(model, [spectrum])[0])


def predict_batch(model: GreyBoxModel, inputs: Sequence[PowerSpectrum]):
    x = solve_x_batch(model, inputs)
    return [GainSpectrum(model.grid, model.gain_at(xi), model.valid) for xi in x]


def predict(model: GreyBoxModel, spectrum: PowerSpectrum) -> GainSpectrum:
    """Predicted gain spectrum (dB) on the model's valid channels."""
    return predict_batch(model, [spectrum])[0]


# --- fitting ---------------------------------------------------------------------

def _nanmean_rows(g, rows):
    sub = g[rows]
    cnt = np.isfinite(sub).sum(axis=0)
    with np.errstate(invalid="ignore"):
        return np.where(cnt > 0, np.nansum(sub, axis=0) / np.maximum(cnt, 1), np.nan)


def fit(samples, setting: Setting, extremes: int | None = None):
    """Fit ``(delta_g, g0)`` and the setpoint calibration from measured samples.

    Parameters
    ----------
    samples : sequence of (PowerSpectrum, GainSpectrum)
        Input spectra and measured gains, all taken under ``setting``.
    setting : Setting
        Nominal mode and setpoint.
    extremes : int, optional
        Number of highest- and lowest-gain spectra averaged for ``delta_g``
        (default 2 for eight or more samples, else 1).

    Returns
    -------
    (GreyBoxModel, FitReport)

    Notes
    -----
    Samples are ranked by mean dB gain over the channels valid in every
    sample. When more than one spectrum is averaged at each end, ``delta_g``
    is rescaled so that the training values of ``x`` span exactly 1; this
    leaves predictions unchanged.
    """
    samples = list(samples)
    n = len(samples)
    if n < 2:
        raise InsufficientSamplesError(f"fit needs at least 2 samples, got {n}")
    m = default_extremes(n) if extremes is None else int(extremes)
    if m < 1:
        raise ValueError("extremes must be at least 1")
    if n < 2 * m:
        raise InsufficientSamplesError(f"{n} samples cannot supply {m} highest and {m} lowest")
    grid = samples[0][0].grid
    for pin, g in samples:
        grid.check_same(pin.grid, "fit input")
        grid.check_same(g.grid, "fit gain")
    notes = []
    gains = np.vstack([np.where(g.valid, g.values_db, np.nan) for _, g in samples])
    observed = np.isfinite(gains)

    common = observed.all(axis=0)
    if common.any():
        score = gains[:, common].mean(axis=1)
    else:
        notes.append("no channel is valid in every sample; ranking uses per-sample mean gain")
        score = np.nanmean(gains, axis=1)
    order = np.argsort(score, kind="stable")
    low, high = order[:m], order[-m:]

    delta_g = _nanmean_rows(gains, high) - _nanmean_rows(gains, low)
    g0 = _nanmean_rows(gains, np.arange(n))
    valid = np.isfinite(delta_g) & np.isfinite(g0)
    never = ~observed.any(axis=0)
    if never.any():
        notes.append(f"channels never observed: {[int(i) + 1 for i in np.flatnonzero(never)]}")
    partial = ~valid & ~never
    if partial.any():
        notes.append("channels missing from the extreme spectra: "
                     f"{[int(i) + 1 for i in np.flatnonzero(partial)]}")
    if not valid.any():
        raise InsufficientSamplesError("no channel is observed in both extreme groups")
    nonpos = valid & ~(delta_g > 0)
    if nonpos.any():
        bad = [int(i) + 1 for i in np.flatnonzero(nonpos)]
        raise NonMonotoneFamilyError(
            f"gain variation is not positive on channel(s) {bad}; data are inconsistent with "
            "a monotone one-parameter gain family", bad,
        )

    calib = _calibration(samples, gains, valid, Setting(setting.mode, setting.setpoint))
    model = GreyBoxModel(grid, delta_g, g0, setting.mode, setting.setpoint, calib, valid, n, m)
    inputs = [pin for pin, _ in samples]
    x = solve_x_batch(model, inputs)
    scale = 1.0
    if m > 1:
        scale = float(x.max() - x.min())
        if scale > 0:
            model = GreyBoxModel(grid, delta_g * scale, g0, setting.mode, setting.setpoint,
                                 calib, valid, n, m)
            x = x / scale
    fitted = model.gain_at(x)
    resid = np.where(observed & valid, gains - fitted, np.nan)
    cnt = np.isfinite(resid).sum(axis=0)
    with np.errstate(invalid="ignore"):
        rmse = np.where(cnt > 0, np.sqrt(np.nansum(resid ** 2, axis=0) / np.maximum(cnt, 1)), np.nan)
    for note in notes:
        warnings.warn(note, stacklevel=2)
    report = FitReport(n, m, rmse, calib, x, scale,
                       tuple(int(i) + 1 for i in np.flatnonzero(~valid)), tuple(notes))
    return model, report


def _calibration(samples, gains, valid, setting: Setting) -> float:
    """Mean of (realized total output - nominal target), dB, over the training samples."""
    offsets = []
    for (pin, _), g in zip(samples, gains):
        sel = valid & np.isfinite(g)
        if not sel.any():
            continue
        realized = _log_sum_dbm(pin.values_dbm[sel] + g[sel])
        if setting.mode == "AGC":
            nominal = _log_sum_dbm(pin.values_dbm[sel]) + setting.setpoint
        else:
            nominal = setting.setpoint
        offsets.append(realized - nominal)
    return float(np.mean(offsets))


# --- persistence -----------------------------------------------------------------

def _num(v):
    return None if not np.isfinite(v) else float(v)


def save_model(model: GreyBoxModel, path) -> None:
    """Write a model as versioned JSON (floats in shortest round-trip form)."""
    doc = {
        "schema": MODEL_SCHEMA,
        "grid": {
            "frequencies_thz": [float(f) for f in model.grid.frequencies],
            "channel_bandwidth_ghz": model.grid.channel_bandwidth,
        },
        "mode": model.mode,
        "setpoint": model.setpoint,
        "calibration_db": model.calibration_db,
        "delta_g": [_num(v) for v in model.delta_g],
        "g0": [_num(v) for v in model.g0],
        "fit_meta": {
            "n_samples": model.n_samples,
            "extremes_averaged": model.extremes_averaged,
            "valid": "".join("1" if b else "0" for b in model.valid),
        },
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_model(path) -> GreyBoxModel:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not a model file ({exc})") from None
    if doc.get("schema") != MODEL_SCHEMA:
        raise SchemaError(f"{path}: model schema {doc.get('schema')!r}, expected {MODEL_SCHEMA!r}")
    missing = [k for k in ("grid", "mode", "setpoint", "delta_g", "g0", "fit_meta") if k not in doc]
    if missing:
        raise SchemaError(f"{path}: model file (schema {MODEL_SCHEMA}) is missing {missing}")
    g = doc["grid"]
    grid = ChannelGrid(g["frequencies_thz"], g.get("channel_bandwidth_ghz", 50.0))
    meta = doc["fit_meta"]
    valid = np.frombuffer(meta["valid"].encode(), dtype=np.uint8) == ord("1")

    def arr(key):
        return np.array([np.nan if v is None else v for v in doc[key]], dtype=float)

    return GreyBoxModel(grid, arr("delta_g"), arr("g0"), doc["mode"], doc["setpoint"],
                        doc.get("calibration_db", 0.0), valid, int(meta.get("n_samples", 0)),
                        int(meta.get("extremes_averaged", 0)))
