"""Channel grids, power and gain spectra, and dB/linear conversions.

Powers are carried in dBm and gains in dB everywhere in the public API;
linear milliwatt values only appear inside computations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GridMismatchError, SpectrumError

__all__ = [
    "ChannelGrid",
    "PowerSpectrum",
    "GainSpectrum",
    "dbm_to_mw",
    "mw_to_dbm",
    "total_power",
]


def _frozen(values, dtype=float):
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


def dbm_to_mw(p):
    """Convert power in dBm to mW. Accepts scalars or arrays."""
    arr = np.asarray(p, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise SpectrumError("dbm_to_mw: non-finite power")
    out = np.power(10.0, arr / 10.0)
    return float(out) if out.ndim == 0 else out


def mw_to_dbm(p):
    """Convert power in mW to dBm. Zero or negative power is an error."""
    arr = np.asarray(p, dtype=float)
    if np.any(~(arr > 0)):
        raise SpectrumError("mw_to_dbm: power must be strictly positive")
    if not np.all(np.isfinite(arr)):
        raise SpectrumError("mw_to_dbm: non-finite power")
    out = 10.0 * np.log10(arr)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class ChannelGrid:
    """Ordered channel center frequencies (THz) with a common bandwidth (GHz)."""

    frequencies: np.ndarray
    channel_bandwidth: float = 50.0

    def __post_init__(self):
        f = _frozen(self.frequencies)
        if f.ndim != 1 or f.size == 0:
            raise SpectrumError("channel grid must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(f)) or np.any(f <= 0):
            raise SpectrumError("channel frequencies must be finite and positive")
        if np.any(np.diff(f) <= 0):
            raise SpectrumError("channel frequencies must be strictly increasing")
        if not self.channel_bandwidth > 0:
            raise SpectrumError("channel bandwidth must be positive")
        object.__setattr__(self, "frequencies", f)
        object.__setattr__(self, "channel_bandwidth", float(self.channel_bandwidth))

    @classmethod
    def uniform(cls, start_thz: float, spacing_ghz: float, n_channels: int) -> "ChannelGrid":
        freqs = start_thz + spacing_ghz * 1e-3 * np.arange(n_channels)
        return cls(freqs, spacing_ghz)

    def __len__(self):
        return self.frequencies.size

    def __eq__(self, other):
        if not isinstance(other, ChannelGrid):
            return NotImplemented
        return (
            self.channel_bandwidth == other.channel_bandwidth
            and self.frequencies.shape == other.frequencies.shape
            and bool(np.all(self.frequencies == other.frequencies))
        )

    def __hash__(self):
        return hash((self.channel_bandwidth, self.frequencies.tobytes()))

    def check_same(self, other: "ChannelGrid", what: str = "spectrum"):
        if self != other:
            raise GridMismatchError(
                f"{what}: channel grid mismatch ({len(self)} vs {len(other)} channels)"
            )


@dataclass(frozen=True, eq=False)
class PowerSpectrum:
    """Per-channel power in dBm plus the loaded-channel mask.

    Unloaded channels keep their residual power (e.g. -28 dBm); the mask,
    not a sentinel value, says which channels carry signal.
    """

    grid: ChannelGrid
    values_dbm: np.ndarray
    loaded: np.ndarray | None = None

    def __post_init__(self):
        v = _frozen(self.values_dbm)
        n = len(self.grid)
        if v.shape != (n,):
            raise SpectrumError(f"power spectrum has {v.size} values for {n} channels")
        if not np.all(np.isfinite(v)):
            raise SpectrumError("power spectrum values must be finite")
        loaded = np.ones(n, dtype=bool) if self.loaded is None else self.loaded
        m = _frozen(loaded, dtype=bool)
        if m.shape != (n,):
            raise SpectrumError("loaded mask length does not match the grid")
        object.__setattr__(self, "values_dbm", v)
        object.__setattr__(self, "loaded", m)

    @property
    def values_mw(self) -> np.ndarray:
        return np.power(10.0, self.values_dbm / 10.0)

    @property
    def loaded_count(self) -> int:
        return int(self.loaded.sum())

    def total_dbm(self, mask_policy: str = "all") -> float:
        return total_power(self, mask_policy)

    def __eq__(self, other):
        if not isinstance(other, PowerSpectrum):
            return NotImplemented
        return (
            self.grid == other.grid
            and bool(np.array_equal(self.values_dbm, other.values_dbm))
            and bool(np.array_equal(self.loaded, other.loaded))
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class GainSpectrum:
    """Per-channel gain in dB with a validity mask.

    Values on invalid channels are NaN.
    """

    grid: ChannelGrid
    values_db: np.ndarray
    valid: np.ndarray | None = None

    def __post_init__(self):
        v = np.array(self.values_db, dtype=float)
        n = len(self.grid)
        if v.shape != (n,):
            raise SpectrumError(f"gain spectrum has {v.size} values for {n} channels")
        valid = np.isfinite(v) if self.valid is None else np.array(self.valid, dtype=bool)
        if valid.shape != (n,):
            raise SpectrumError("validity mask length does not match the grid")
        if not np.all(np.isfinite(v[valid])):
            raise SpectrumError("gain must be finite on every valid channel")
        v[~valid] = np.nan
        object.__setattr__(self, "values_db", _frozen(v))
        object.__setattr__(self, "valid", _frozen(valid, dtype=bool))

    def __eq__(self, other):
        if not isinstance(other, GainSpectrum):
            return NotImplemented
        return (
            self.grid == other.grid
            and bool(np.array_equal(self.valid, other.valid))
            and bool(np.array_equal(self.values_db[self.valid], other.values_db[other.valid]))
        )

    __hash__ = None


def total_power(s: PowerSpectrum, mask_policy: str = "all") -> float:
    """Total power of a spectrum in dBm.

    Parameters
    ----------
    s : PowerSpectrum
    mask_policy : {"all", "loaded_only"}
        Which channels enter the linear sum.
    """
    if mask_policy == "all":
        sel = np.ones(len(s.grid), dtype=bool)
    elif mask_policy == "loaded_only":
        sel = s.loaded
    else:
        raise ValueError(f"unknown mask policy {mask_policy!r}")
    if not sel.any():
        raise SpectrumError("total_power: no channels selected")
    return float(10.0 * np.log10(np.sum(s.values_mw[sel])))
