"""Multi-stage amplifier with AGC/APC pump control."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from ..errors import ConfigError, SetpointUnreachableError, SpectrumError
from ..integrate import bisect_increasing
from ..spectral import GainSpectrum, PowerSpectrum
from .edf import EdfStageParams, StageLoss, gain_coefficients, propagate_batch

__all__ = [
    "AmplifierConfig",
    "SimulationResult",
    "LinearFamilyCheck",
    "run_amplifier",
    "run_amplifier_batch",
    "output_at_pump",
    "verify_linear_family",
    "family_constants",
]

MODES = ("AGC", "APC")


def normalize_mode(mode: str) -> str:
    m = str(mode).upper()
    if m not in MODES:
        raise ConfigError(f"mode must be AGC or APC, got {mode!r}")
    return m


@dataclass(frozen=True)
class AmplifierConfig:
    """A full amplifier: ordered stages, operating mode and setpoint.

    ``setpoint`` is the target gain in dB (AGC) or total output power in dBm
    (APC). ``monitor_offset_db`` models the power-monitor inaccuracy: the
    control loop actually settles at ``setpoint + monitor_offset_db``.
    The pump control is one scalar applied to every stage.
    """

    stages: tuple
    mode: str
    setpoint: float
    pump_limits: tuple = (0.0, 1000.0)
    monitor_offset_db: float = 0.0
    control_tol_db: float = 1e-10
    integration_tol: float = 1e-9

    def __post_init__(self):
        stages = tuple((p, l if isinstance(l, StageLoss) else StageLoss(l)) for p, l in self.stages)
        if not stages:
            raise ConfigError("amplifier needs at least one stage")
        first = stages[0][0]
        for params, loss in stages:
            if not isinstance(params, EdfStageParams):
                raise ConfigError("stage parameters must be EdfStageParams")
            if not params.same_fiber(first):
                raise ConfigError("all stages must use the same fiber specification (up to length)")
            if loss.loss_db.shape != (first.n_channels,):
                raise ConfigError("stage loss spectrum length does not match the channel count")
        lo, hi = (float(v) for v in self.pump_limits)
        if lo < 0 or not hi > lo:
            raise ConfigError("pump limits must satisfy 0 <= min < max")
        object.__setattr__(self, "stages", stages)
        object.__setattr__(self, "mode", normalize_mode(self.mode))
        object.__setattr__(self, "setpoint", float(self.setpoint))
        object.__setattr__(self, "pump_limits", (lo, hi))

    @property
    def n_channels(self) -> int:
        return self.stages[0][0].n_channels

    @property
    def signal_frequencies(self) -> np.ndarray:
        return self.stages[0][0].signal_frequencies

    def with_setting(self, mode=None, setpoint=None) -> "AmplifierConfig":
        return AmplifierConfig(
            self.stages,
            self.mode if mode is None else mode,
            self.setpoint if setpoint is None else setpoint,
            self.pump_limits,
            self.monitor_offset_db,
            self.control_tol_db,
            self.integration_tol,
        )


@dataclass(frozen=True, eq=False)
class SimulationResult:
    gain: GainSpectrum
    output: PowerSpectrum
    pump_power: float
    n2_integrals: tuple
    k_total: float


class LinearFamilyCheck(NamedTuple):
    singular_ratio: float
    a_fit: np.ndarray
    c_fit: np.ndarray
    max_residual_db: float


def _chain(config: AmplifierConfig, p_in_mw, pump_mw):
    """Run every stage for a batch; returns (p_out_mw, per-stage <N2> array (B, n_stages))."""
    p = np.asarray(p_in_mw, dtype=float)
    n2 = []
    for params, loss in config.stages:
        p, n2_i, _, _ = propagate_batch(params, p, pump_mw, tol=config.integration_tol)
        p = p * np.power(10.0, -loss.loss_db / 10.0)
        n2.append(n2_i)
    return p, np.column_stack(n2)


def _target_dbm(config: AmplifierConfig, p_in_mw):
    level = config.setpoint + config.monitor_offset_db
    if config.mode == "AGC":
        return 10.0 * np.log10(p_in_mw.sum(axis=1)) + level
    return np.full(p_in_mw.shape[0], level)


def output_at_pump(config: AmplifierConfig, inputs: Sequence[PowerSpectrum], pump_mw):
    """Total output power (dBm) of each input at a fixed per-stage pump power."""
    p_in = np.vstack([s.values_mw for s in inputs])
    p_out, _ = _chain(config, p_in, pump_mw)
    return 10.0 * np.log10(p_out.sum(axis=1))


def run_amplifier_batch(config: AmplifierConfig, inputs: Sequence[PowerSpectrum]):
    """Simulate many inputs, solving the pump control for each.

    The constraint is on total signal power over every channel, as a power
    monitor would see it. Gain is reported on every channel (the simulator
    has no noise floor, so gain is defined wherever there is input power).
    """
    if len(inputs) == 0:
        return []
    n = config.n_channels
    for s in inputs:
        if len(s.grid) != n:
            raise SpectrumError(f"input has {len(s.grid)} channels, amplifier expects {n}")
        if s.loaded_count < 1:
            raise SpectrumError("input must have at least one loaded channel")
    p_in = np.vstack([s.values_mw for s in inputs])
    target = _target_dbm(config, p_in)
    lo_pump, hi_pump = config.pump_limits
    tol = config.control_tol_db

    def residual(pump, rows):
        p_out, _ = _chain(config, p_in[rows], pump)
        return 10.0 * np.log10(p_out.sum(axis=1)) - target[rows]

    rows = np.arange(len(inputs))
    r_hi = residual(np.full(rows.size, hi_pump), rows)
    if np.any(r_hi < -tol):
        bad = int(np.flatnonzero(r_hi < -tol)[0])
        raise SetpointUnreachableError(
            f"setpoint unreachable: sample {bad} is {-r_hi[bad]:.4g} dB short at the "
            f"maximum pump power {hi_pump} mW",
            bound="max",
        )
    r_lo = residual(np.full(rows.size, lo_pump), rows)
    if np.any(r_lo > tol):
        bad = int(np.flatnonzero(r_lo > tol)[0])
        raise SetpointUnreachableError(
            f"setpoint unreachable: sample {bad} exceeds the target by {r_lo[bad]:.4g} dB "
            f"at the minimum pump power {lo_pump} mW",
            bound="min",
        )
    pump, _, ok = bisect_increasing(residual, np.full(rows.size, lo_pump),
                                    np.full(rows.size, hi_pump), tol=tol, max_iter=200,
                                    r_lo=r_lo, r_hi=r_hi)
    if not np.all(ok):
        bad = int(np.flatnonzero(~ok)[0])
        raise SetpointUnreachableError(
            f"pump control did not converge to {tol:g} dB for sample {bad}", bound=None
        )

    p_out, n2 = _chain(config, p_in, pump)
    results = []
    for i, s in enumerate(inputs):
        out_dbm = 10.0 * np.log10(p_out[i])
        gain = GainSpectrum(s.grid, out_dbm - s.values_dbm, np.ones(n, dtype=bool))
        results.append(
            SimulationResult(
                gain=gain,
                output=PowerSpectrum(s.grid, out_dbm, s.loaded),
                pump_power=float(pump[i]),
                n2_integrals=tuple(float(v) for v in n2[i]),
                k_total=float(n2[i].sum()),
            )
        )
    return results


def run_amplifier(config: AmplifierConfig, spectrum: PowerSpectrum) -> SimulationResult:
    """Simulate one input spectrum under the configured AGC/APC setpoint."""
    return run_amplifier_batch(config, [spectrum])[0]


def family_constants(config: AmplifierConfig):
    """Analytic ``(A_const, C_const)`` with ``G = A_const * k + C_const``."""
    params0 = config.stages[0][0]
    a, b = gain_coefficients(params0)
    total_len = sum(p.length_m for p, _ in config.stages)
    total_loss = sum(l.loss_db for _, l in config.stages)
    return a, b * total_len - total_loss


def verify_linear_family(config: AmplifierConfig, inputs: Sequence[PowerSpectrum]) -> LinearFamilyCheck:
    """Check numerically that simulated gain spectra form a one-parameter affine family.

    Returns the ratio of the second to the first singular value of the
    mean-centred gain matrix, and the per-channel regression of gain on the
    total integrated inversion ``k``.
    """
    if len(inputs) < 3:
        raise ValueError("verify_linear_family needs at least 3 inputs")
    masks = np.vstack([s.loaded for s in inputs])
    if np.any(masks != masks[0]):
        raise ValueError("all inputs must share the same loaded-channel mask")
    results = run_amplifier_batch(config, inputs)
    gains = np.vstack([r.gain.values_db for r in results])
    k = np.array([r.k_total for r in results])
    centred = gains - gains.mean(axis=0)
    sv = np.linalg.svd(centred, compute_uv=False)
    ratio = 0.0 if sv[0] == 0 else float(sv[1] / sv[0]) if sv.size > 1 else 0.0
    design = np.column_stack([k, np.ones_like(k)])
    coef, *_ = np.linalg.lstsq(design, gains, rcond=None)
    resid = gains - design @ coef
    return LinearFamilyCheck(ratio, coef[0], coef[1], float(np.abs(resid).max()))
