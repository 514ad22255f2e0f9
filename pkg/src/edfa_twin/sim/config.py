"""Amplifier parameter files (YAML) and the bundled default amplifier."""

from __future__ import annotations

import os
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from ..errors import ConfigError, SchemaError
from ..spectral import ChannelGrid
from .amplifier import AmplifierConfig
from .edf import EdfStageParams, StageLoss

AMPLIFIER_SCHEMA = "edfa-twin.amplifier/1"
CONFIG_DIR_ENV = "EDFA_TWIN_CONFIG_DIR"

__all__ = [
    "AMPLIFIER_SCHEMA",
    "CONFIG_DIR_ENV",
    "parametric_cross_sections",
    "grid_from_config",
    "amplifier_from_dict",
    "load_amplifier_config",
    "default_amplifier_dict",
    "default_amplifier_config",
    "resolve_config_path",
    "read_yaml",
]


def parametric_cross_sections(freq_thz):
    """Smooth C-band absorption/emission cross sections (m^2).

    Absorption peaks near 195.8 THz; emission has the same main peak shifted
    slightly red plus a broad red shoulder. Magnitudes follow typical
    alumino-silicate erbium fiber (about 5e-25 m^2 at 1530 nm). Only used to generate tables.
    """
    f = np.asarray(freq_thz, dtype=float)

    def bump(c, w):
        return np.exp(-0.5 * ((f - c) / w) ** 2)

    sigma_abs = 1e-25 * (2.1 * bump(195.8, 0.35) + 3.14 * bump(195.0, 1.9) + 0.2)
    sigma_emi = 1e-25 * (2.9 * bump(195.75, 0.35) + 1.91 * bump(194.2, 1.8) + 1.27)
    return sigma_abs, sigma_emi


def read_yaml(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping at top level")
    return data


def resolve_config_path(path) -> Path:
    """Resolve a config path, falling back to ``$EDFA_TWIN_CONFIG_DIR``."""
    p = Path(path)
    if p.exists() or p.is_absolute():
        return p
    base = os.environ.get(CONFIG_DIR_ENV)
    if base and (Path(base) / p).exists():
        return Path(base) / p
    return p


def grid_from_config(grid: dict) -> ChannelGrid:
    if "frequencies_thz" in grid:
        return ChannelGrid(grid["frequencies_thz"], grid.get("spacing_ghz", 50.0))
    try:
        return ChannelGrid.uniform(float(grid["start_thz"]), float(grid["spacing_ghz"]),
                                   int(grid["n_channels"]))
    except KeyError as exc:
        raise ConfigError(f"grid section is missing {exc}") from None


def _per_channel(value, n, name):
    a = np.asarray(value, dtype=float)
    if a.ndim == 0:
        return np.full(n, float(a))
    if a.shape != (n,):
        raise ConfigError(f"{name}: expected a scalar or {n} values, got {a.size}")
    return a


def amplifier_from_dict(cfg: dict, *, mode=None, setpoint=None):
    """Build ``(ChannelGrid, AmplifierConfig)`` from a parsed parameter file."""
    schema = cfg.get("schema")
    if schema != AMPLIFIER_SCHEMA:
        raise SchemaError(f"amplifier config schema {schema!r}, expected {AMPLIFIER_SCHEMA!r}")
    try:
        grid = grid_from_config(cfg["grid"])
        fiber = cfg["fiber"]
        xs = cfg["cross_sections"]
        stage_list = cfg["stages"]
        control = cfg["control"]
    except KeyError as exc:
        raise ConfigError(f"amplifier config is missing section {exc}") from None
    n = len(grid)
    f = grid.frequencies
    table_f = np.asarray(xs["frequency_thz"], dtype=float)
    if np.any(np.diff(table_f) <= 0):
        raise ConfigError("cross-section table frequencies must be increasing")
    if f[0] < table_f[0] or f[-1] > table_f[-1]:
        raise ConfigError("channel grid extends beyond the cross-section table")
    sigma_abs = np.interp(f, table_f, np.asarray(xs["sigma_abs"], dtype=float))
    sigma_emi = np.interp(f, table_f, np.asarray(xs["sigma_emi"], dtype=float))

    base = EdfStageParams(
        length_m=float(stage_list[0]["length_m"]),
        ion_density=float(fiber["ion_density"]),
        overlap=_per_channel(fiber.get("overlap", 0.45), n, "overlap"),
        sigma_abs=sigma_abs,
        sigma_emi=sigma_emi,
        signal_frequencies=f,
        overlap_pump=float(fiber.get("overlap_pump", 0.7)),
        sigma_abs_pump=float(fiber.get("sigma_abs_pump", 2.5e-25)),
        sigma_emi_pump=float(fiber.get("sigma_emi_pump", 0.0)),
        background_loss=float(fiber.get("background_loss", 0.0)),
        core_area=float(fiber["core_area"]),
        lifetime=float(fiber["lifetime"]),
        pump_frequency=float(fiber.get("pump_frequency_thz", 305.9)),
    )
    stages = []
    for i, st in enumerate(stage_list):
        loss = _per_channel(st.get("loss_db", 0.0), n, f"stages[{i}].loss_db")
        stages.append((base.with_length(float(st["length_m"])), StageLoss(loss)))
    amp = AmplifierConfig(
        stages=tuple(stages),
        mode=mode if mode is not None else control.get("mode", "AGC"),
        setpoint=setpoint if setpoint is not None else control.get("setpoint", 18.0),
        pump_limits=tuple(control.get("pump_limits_mw", (0.0, 1000.0))),
        monitor_offset_db=float(control.get("monitor_offset_db", 0.0)),
        control_tol_db=float(control.get("tolerance_db", 1e-10)),
        integration_tol=float(control.get("integration_tol", 1e-9)),
    )
    return grid, amp


def load_amplifier_config(path, *, mode=None, setpoint=None):
    return amplifier_from_dict(read_yaml(resolve_config_path(path)), mode=mode, setpoint=setpoint)


def default_amplifier_dict() -> dict:
    text = resources.files("edfa_twin").joinpath("data/default_amplifier.yaml").read_text("utf-8")
    return yaml.safe_load(text)


def default_amplifier_config(*, mode=None, setpoint=None):
    """The bundled two-stage C-band amplifier on the 80 x 50 GHz grid."""
    return amplifier_from_dict(default_amplifier_dict(), mode=mode, setpoint=setpoint)
