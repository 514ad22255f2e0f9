"""Synthetic ground-truth datasets from the simulator."""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ..datasets import Dataset, DatasetProtocol, SampleRecord, Setting, draw_input, sample_rng
from ..errors import ConfigError
from ..spectral import ChannelGrid, GainSpectrum, PowerSpectrum
from .amplifier import AmplifierConfig, run_amplifier_batch

__all__ = ["generate_dataset", "config_fingerprint"]


def config_fingerprint(config: AmplifierConfig) -> str:
    """Short content hash of an amplifier configuration."""
    h = hashlib.sha256()
    for params, loss in config.stages:
        for k in params.__dataclass_fields__:
            h.update(k.encode())
            h.update(np.ascontiguousarray(getattr(params, k), dtype=float).tobytes())
        h.update(loss.loss_db.tobytes())
    h.update(json.dumps([config.mode, config.setpoint, list(config.pump_limits),
                         config.monitor_offset_db]).encode())
    return h.hexdigest()[:16]


def generate_dataset(config: AmplifierConfig, protocol: DatasetProtocol, n: int,
                     noise_db: float = 0.0, seed: int = 0, *, grid: ChannelGrid | None = None,
                     ase_floor_dbm: float | None = None, batch_size: int = 500,
                     workers: int = 1) -> Dataset:
    """Draw ``n`` inputs per ``protocol``, simulate them and record the gains.

    Sample ``i`` uses its own random stream derived from ``(seed, i)``: the
    input spectrum is drawn first, then one standard normal per channel that
    is scaled by ``noise_db`` and added to the gain. Inputs are therefore the
    same for every noise level.

    With ``ase_floor_dbm`` set, a flat ASE floor of that power per channel is
    added (in mW) to the simulated output and stored as the raw output.
    ASE subtraction recovers the gain exactly only when the probe channels
    are truly empty (set ``protocol.empty_power_dbm`` far below the floor);
    otherwise their amplified residual input is counted as noise.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if not protocol.loadable_channels.any():
        raise ConfigError("protocol has no loadable channels")
    if grid is None:
        grid = ChannelGrid(config.signal_frequencies)
    n_ch = len(grid)
    inputs, noises = [], []
    for i in range(n):
        rng = sample_rng(seed, i)
        inputs.append(draw_input(rng, grid, protocol))
        noises.append(rng.standard_normal(n_ch))

    batches = [inputs[i:i + batch_size] for i in range(0, n, batch_size)]
    if workers > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(lambda b: run_amplifier_batch(config, b), batches))
    else:
        chunks = [run_amplifier_batch(config, b) for b in batches]
    results = [r for chunk in chunks for r in chunk]

    setting = Setting(config.mode, config.setpoint)
    records = []
    for i, (pin, res, z) in enumerate(zip(inputs, results, noises)):
        gain = GainSpectrum(grid, res.gain.values_db + noise_db * z, res.gain.valid)
        raw = None
        if ase_floor_dbm is not None:
            raw_mw = res.output.values_mw + 10.0 ** (ase_floor_dbm / 10.0)
            raw = PowerSpectrum(grid, 10.0 * np.log10(raw_mw), pin.loaded)
        records.append(SampleRecord(pin, setting, gain, raw, sample_id=f"{seed}-{i}",
                                    source="simulator"))
    prov = (f"simulator:{config_fingerprint(config)};protocol="
            f"{hashlib.sha256(json.dumps(protocol.to_dict()).encode()).hexdigest()[:12]};"
            f"n={n};noise_db={noise_db:g};seed={seed}")
    return Dataset(grid, setting, tuple(records), prov)
