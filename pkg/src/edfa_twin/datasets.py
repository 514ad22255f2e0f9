"""Dataset records, the native dataset file format, ASE subtraction, public
dataset ingestion and train/test splitting.

Native format (``*.ds``): UTF-8 JSON lines. The first line is a header with
the schema id, channel grid, setting and provenance; every following line is
one record. Channel values are written with 9 significant digits, grid
frequencies exactly.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import AseSubtractionError, ConfigError, DataFormatError, SchemaError, SplitError
from .spectral import ChannelGrid, GainSpectrum, PowerSpectrum, mw_to_dbm, total_power

DATASET_SCHEMA = "edfa-twin.dataset/1"
PROTOCOL_SCHEMA = "edfa-twin.protocol/1"
MAPPING_SCHEMA = "edfa-twin.ingest-map/1"

__all__ = [
    "Setting",
    "DatasetProtocol",
    "SampleRecord",
    "Dataset",
    "draw_input",
    "draw_inputs",
    "sample_rng",
    "write_dataset",
    "read_dataset",
    "subtract_ase",
    "subtract_ase_dataset",
    "ingest_public",
    "RandomSplit",
    "ByLoadedCount",
    "ByTotalPower",
    "split",
    "odd_channel_mask",
    "protocol_from_dict",
]


@dataclass(frozen=True)
class Setting:
    """Operating mode and nominal setpoint (dB gain for AGC, dBm output for APC)."""

    mode: str
    setpoint: float

    def __post_init__(self):
        mode = str(self.mode).upper()
        if mode not in ("AGC", "APC"):
            raise ConfigError(f"mode must be AGC or APC, got {self.mode!r}")
        object.__setattr__(self, "mode", mode)
        object.__setattr__(self, "setpoint", float(self.setpoint))

    def to_dict(self):
        return {"mode": self.mode, "setpoint": self.setpoint}


def odd_channel_mask(n_channels: int) -> np.ndarray:
    """Channels numbered 1, 3, 5, ... (1-based), i.e. indices 0, 2, 4, ..."""
    m = np.zeros(n_channels, dtype=bool)
    m[0::2] = True
    return m


@dataclass(frozen=True, eq=False)
class DatasetProtocol:
    """How random input spectra are drawn.

    Every sample draws a loading probability uniformly from
    ``load_probability``, loads each loadable channel with that probability,
    draws an average loaded power from ``avg_power_range_dbm`` and adds an
    independent uniform perturbation from ``perturbation_range_db`` to every
    loaded channel. Unloaded loadable channels sit at ``unloaded_power_dbm``;
    non-loadable channels at ``empty_power_dbm`` (defaults to the unloaded
    level).
    """

    loadable_channels: np.ndarray
    load_probability: tuple = (0.05, 0.95)
    avg_power_range_dbm: tuple = (-18.0, -14.0)
    unloaded_power_dbm: float = -28.0
    perturbation_range_db: tuple = (-1.5, 1.5)
    empty_power_dbm: float | None = None

    def __post_init__(self):
        mask = np.array(self.loadable_channels, dtype=bool)
        mask.setflags(write=False)
        object.__setattr__(self, "loadable_channels", mask)
        lp = _pair(self.load_probability, "load_probability")
        if not 0.0 <= lp[0] <= lp[1] <= 1.0:
            raise ConfigError("load_probability must be an ordered range inside [0, 1]")
        object.__setattr__(self, "load_probability", lp)
        object.__setattr__(self, "avg_power_range_dbm",
                           _pair(self.avg_power_range_dbm, "avg_power_range_dbm"))
        object.__setattr__(self, "perturbation_range_db",
                           _pair(self.perturbation_range_db, "perturbation_range_db"))
        if self.empty_power_dbm is None:
            object.__setattr__(self, "empty_power_dbm", float(self.unloaded_power_dbm))

    @classmethod
    def table1(cls, n_channels: int = 80, **overrides) -> "DatasetProtocol":
        """Odd channels loaded at random, even channels empty, -18..-14 dBm, +-1.5 dB."""
        return cls(odd_channel_mask(n_channels), **overrides)

    @property
    def n_loadable(self) -> int:
        return int(self.loadable_channels.sum())

    def to_dict(self):
        return {
            "schema": PROTOCOL_SCHEMA,
            "loadable_channels": [int(i) + 1 for i in np.flatnonzero(self.loadable_channels)],
            "n_channels": int(self.loadable_channels.size),
            "load_probability": list(self.load_probability),
            "avg_power_range_dbm": list(self.avg_power_range_dbm),
            "unloaded_power_dbm": float(self.unloaded_power_dbm),
            "perturbation_range_db": list(self.perturbation_range_db),
            "empty_power_dbm": float(self.empty_power_dbm),
        }


def _pair(v, name):
    try:
        lo, hi = (float(x) for x in v)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a (lo, hi) pair") from None
    if lo > hi:
        raise ConfigError(f"{name} must be ordered (lo <= hi)")
    return (lo, hi)


def protocol_from_dict(cfg: dict, n_channels: int) -> DatasetProtocol:
    """Build a protocol from a parsed YAML mapping.

    ``loadable`` may be ``"odd"``, ``"all"`` or a list of 1-based channel numbers.
    """
    if cfg.get("schema", PROTOCOL_SCHEMA) != PROTOCOL_SCHEMA:
        raise SchemaError(f"protocol schema {cfg.get('schema')!r}, expected {PROTOCOL_SCHEMA!r}")
    loadable = cfg.get("loadable", cfg.get("loadable_channels", "odd"))
    if loadable == "odd":
        mask = odd_channel_mask(n_channels)
    elif loadable == "all":
        mask = np.ones(n_channels, dtype=bool)
    else:
        mask = np.zeros(n_channels, dtype=bool)
        idx = np.asarray(loadable, dtype=int) - 1
        if np.any(idx < 0) or np.any(idx >= n_channels):
            raise ConfigError("loadable channel numbers out of range")
        mask[idx] = True
    kw = {k: cfg[k] for k in ("load_probability", "avg_power_range_dbm", "unloaded_power_dbm",
                              "perturbation_range_db", "empty_power_dbm") if k in cfg}
    return DatasetProtocol(mask, **kw)


def draw_input(rng: np.random.Generator, grid: ChannelGrid, protocol: DatasetProtocol) -> PowerSpectrum:
    """Draw one input spectrum. Consumes a fixed number of variates from ``rng``."""
    n = len(grid)
    loadable = protocol.loadable_channels
    if loadable.shape != (n,):
        raise ConfigError("protocol channel mask does not match the grid")
    if not loadable.any():
        raise ConfigError("protocol has no loadable channels")
    p = rng.uniform(*protocol.load_probability)
    u = rng.random(n)
    fallback = rng.integers(protocol.n_loadable)
    avg = rng.uniform(*protocol.avg_power_range_dbm)
    perturb = rng.uniform(*protocol.perturbation_range_db, size=n)
    loaded = loadable & (u < p)
    if not loaded.any():
        loaded[np.flatnonzero(loadable)[fallback]] = True
    values = np.where(loadable, protocol.unloaded_power_dbm, protocol.empty_power_dbm)
    values = np.where(loaded, avg + perturb, values)
    return PowerSpectrum(grid, values, loaded)


def sample_rng(seed: int, index: int) -> np.random.Generator:
    """Independent random stream for sample ``index`` of a run seeded with ``seed``."""
    return np.random.default_rng([int(seed), int(index)])


def draw_inputs(grid: ChannelGrid, protocol: DatasetProtocol, n: int, seed: int):
    return [draw_input(sample_rng(seed, i), grid, protocol) for i in range(n)]


@dataclass(frozen=True, eq=False)
class SampleRecord:
    """One measured or simulated sample.

    ``loaded_count`` and ``total_input_dbm`` are derived from ``input``.
    """

    input: PowerSpectrum
    setting: Setting
    gain: GainSpectrum | None = None
    output_raw: PowerSpectrum | None = None
    sample_id: str = ""
    source: str = ""

    def __post_init__(self):
        if self.gain is None and self.output_raw is None:
            raise DataFormatError("record needs a gain spectrum or a raw output spectrum")
        for s in (self.gain, self.output_raw):
            if s is not None:
                self.input.grid.check_same(s.grid, "record")

    @property
    def loaded_count(self) -> int:
        return self.input.loaded_count

    @property
    def total_input_dbm(self) -> float:
        return total_power(self.input, "all")

    def __eq__(self, other):
        if not isinstance(other, SampleRecord):
            return NotImplemented
        return (self.input == other.input and self.setting == other.setting
                and self.gain == other.gain and self.output_raw == other.output_raw
                and self.sample_id == other.sample_id and self.source == other.source)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Dataset:
    grid: ChannelGrid
    setting: Setting
    records: tuple = ()
    provenance: str = ""

    def __post_init__(self):
        recs = tuple(self.records)
        for r in recs:
            self.grid.check_same(r.input.grid, "dataset")
            if r.setting != self.setting:
                raise DataFormatError("all records in a dataset must share one setting")
        object.__setattr__(self, "records", recs)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def subset(self, indices: Iterable[int]) -> "Dataset":
        return replace(self, records=tuple(self.records[i] for i in indices))

    @property
    def inputs(self):
        return [r.input for r in self.records]

    @property
    def gains(self):
        return [r.gain for r in self.records]

    @property
    def pairs(self):
        """``(input, gain)`` pairs for model fitting."""
        return [(r.input, r.gain) for r in self.records]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.grid == other.grid and self.setting == other.setting
                and self.provenance == other.provenance and self.records == other.records)

    __hash__ = None


# --- native file format ----------------------------------------------------

def _fmt(v: float) -> str:
    return "null" if not math.isfinite(v) else format(float(v), ".9g")


def _fmt_array(values) -> str:
    return "[" + ",".join(_fmt(v) for v in values) + "]"


def _mask_str(mask) -> str:
    return "".join("1" if b else "0" for b in mask)


def _parse_mask(s: str, n: int, where: str) -> np.ndarray:
    if len(s) != n or set(s) - {"0", "1"}:
        raise DataFormatError(f"{where}: malformed mask")
    return np.frombuffer(s.encode(), dtype=np.uint8) == ord("1")


def write_dataset(dataset: Dataset, path) -> None:
    """Write the native JSON-lines format."""
    header = {
        "schema": DATASET_SCHEMA,
        "grid": {
            "frequencies_thz": [float(f) for f in dataset.grid.frequencies],
            "channel_bandwidth_ghz": dataset.grid.channel_bandwidth,
        },
        "setting": dataset.setting.to_dict(),
        "provenance": dataset.provenance,
        "n_records": len(dataset),
    }
    lines = [json.dumps(header)]
    for r in dataset.records:
        parts = [
            f'"id":{json.dumps(r.sample_id)}',
            f'"source":{json.dumps(r.source)}',
            f'"input_dbm":{_fmt_array(r.input.values_dbm)}',
            f'"loaded":"{_mask_str(r.input.loaded)}"',
        ]
        if r.gain is not None:
            parts.append(f'"gain_db":{_fmt_array(r.gain.values_db)}')
            parts.append(f'"gain_valid":"{_mask_str(r.gain.valid)}"')
        if r.output_raw is not None:
            parts.append(f'"output_dbm":{_fmt_array(r.output_raw.values_dbm)}')
        lines.append("{" + ",".join(parts) + "}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_dataset(path) -> Dataset:
    """Read the native JSON-lines format."""
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text:
        raise DataFormatError(f"{path}: empty dataset file")
    try:
        header = json.loads(text[0])
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: bad header ({exc})", row=0) from None
    if header.get("schema") != DATASET_SCHEMA:
        raise SchemaError(f"{path}: dataset schema {header.get('schema')!r}, "
                          f"expected {DATASET_SCHEMA!r}")
    g = header["grid"]
    grid = ChannelGrid(g["frequencies_thz"], g.get("channel_bandwidth_ghz", 50.0))
    setting = Setting(**header["setting"])
    n = len(grid)
    records = []
    for row, line in enumerate(text[1:], start=1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
            pin = PowerSpectrum(grid, d["input_dbm"], _parse_mask(d["loaded"], n, f"row {row}"))
            gain = None
            if "gain_db" in d:
                vals = np.array([np.nan if v is None else v for v in d["gain_db"]], dtype=float)
                gain = GainSpectrum(grid, vals, _parse_mask(d["gain_valid"], n, f"row {row}"))
            out = PowerSpectrum(grid, d["output_dbm"], pin.loaded) if "output_dbm" in d else None
            records.append(SampleRecord(pin, setting, gain, out, d.get("id", ""), d.get("source", "")))
        except (KeyError, ValueError, TypeError) as exc:
            raise DataFormatError(f"{path}: row {row}: {exc}", row=row) from None
    if "n_records" in header and header["n_records"] != len(records):
        raise DataFormatError(f"{path}: header declares {header['n_records']} records, "
                              f"found {len(records)}")
    return Dataset(grid, setting, tuple(records), header.get("provenance", ""))


# --- ASE subtraction ----------------------------------------------------------

def subtract_ase(record: SampleRecord, signal_channels: str | np.ndarray = "odd") -> SampleRecord:
    """Remove ASE from a raw output spectrum using empty probe channels.

    The noise power at every channel is interpolated linearly in mW over
    frequency from the outputs of the probe (empty) channels, with
    nearest-probe extension at the band edges. Gain on signal channels is
    ``(P_out - P_noise) / P_in``. Probe channels are invalid in the result;
    signal channels whose output does not clear the noise floor are an error
    when loaded and are marked invalid otherwise.
    """
    if record.output_raw is None:
        raise AseSubtractionError("record has no raw output spectrum")
    grid = record.input.grid
    n = len(grid)
    sig = odd_channel_mask(n) if isinstance(signal_channels, str) and signal_channels == "odd" \
        else np.asarray(signal_channels, dtype=bool)
    probes = ~sig
    if not probes.any():
        raise AseSubtractionError("no empty probe channels to measure ASE on")
    if np.any(record.input.loaded & probes):
        ch = [int(i) + 1 for i in np.flatnonzero(record.input.loaded & probes)]
        raise AseSubtractionError(f"probe channels {ch} are loaded in the input", channels=ch)
    f = grid.frequencies
    p_out = record.output_raw.values_mw
    noise = np.interp(f, f[probes], p_out[probes])
    net = p_out - noise
    bad = sig & record.input.loaded & ~(net > 0)
    if bad.any():
        ch = [int(i) + 1 for i in np.flatnonzero(bad)]
        raise AseSubtractionError(
            f"output below interpolated ASE floor on loaded channel(s) {ch}", channels=ch
        )
    valid = sig & (net > 0)
    gain = np.full(n, np.nan)
    gain[valid] = mw_to_dbm(net[valid]) - record.input.values_dbm[valid]
    return replace(record, gain=GainSpectrum(grid, gain, valid))


def subtract_ase_dataset(dataset: Dataset, signal_channels="odd") -> Dataset:
    recs = tuple(subtract_ase(r, signal_channels) for r in dataset.records)
    return replace(dataset, records=recs, provenance=dataset.provenance + " | ase-subtracted")


# --- public dataset ingestion ---------------------------------------------

def _columns(spec, header, n, what):
    if "names" in spec:
        names = list(spec["names"])
    elif "prefix" in spec:
        start = int(spec.get("first", 1))
        names = [f"{spec['prefix']}{i}" for i in range(start, start + n)]
    elif "start" in spec:
        return list(range(int(spec["start"]), int(spec["start"]) + n))
    else:
        raise ConfigError(f"mapping for {what} needs names, prefix or start")
    if header is None:
        raise ConfigError(f"mapping for {what} uses column names but the file has no header")
    missing = [c for c in names if c not in header]
    if missing:
        raise DataFormatError(f"{what}: columns not found in header: {missing[:3]}")
    if len(names) != n:
        raise ConfigError(f"mapping for {what} lists {len(names)} columns for {n} channels")
    return [header.index(c) for c in names]


def ingest_public(path, mapping: dict) -> Dataset:
    """Read a public input/output power-spectrum CSV into a Dataset.

    Gain is ``P_out - P_in`` per channel; every channel counts as loaded.
    The column layout is described by ``mapping`` (see ``configs/public_map.yaml``).
    """
    from .sim.config import grid_from_config

    if mapping.get("schema", MAPPING_SCHEMA) != MAPPING_SCHEMA:
        raise SchemaError(f"mapping schema {mapping.get('schema')!r}, expected {MAPPING_SCHEMA!r}")
    try:
        grid = grid_from_config(mapping["grid"])
        setting = Setting(**mapping["setting"])
        in_spec, out_spec = mapping["input_columns"], mapping["output_columns"]
    except KeyError as exc:
        raise ConfigError(f"ingest mapping is missing {exc}") from None
    n = len(grid)
    delim = mapping.get("delimiter", ",")
    has_header = bool(mapping.get("header", True))
    id_col = mapping.get("id_column")
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delim)
        header = [h.strip() for h in next(reader)] if has_header else None
        in_idx = _columns(in_spec, header, n, "input_columns")
        out_idx = _columns(out_spec, header, n, "output_columns")
        width = len(header) if header is not None else None
        id_idx = header.index(id_col) if (id_col and header) else None
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if width is None:
                width = len(row)
            if len(row) != width:
                raise DataFormatError(
                    f"{path}: row {row_no} has {len(row)} fields, expected {width}", row=row_no
                )
            try:
                pin = np.array([float(row[i]) for i in in_idx])
                pout = np.array([float(row[i]) for i in out_idx])
                spec_in = PowerSpectrum(grid, pin)
            except (ValueError, IndexError) as exc:
                raise DataFormatError(f"{path}: row {row_no}: {exc}", row=row_no) from None
            if not np.all(np.isfinite(pout)):
                raise DataFormatError(f"{path}: row {row_no}: non-finite output power", row=row_no)
            sid = row[id_idx] if id_idx is not None else str(row_no)
            records.append(SampleRecord(
                spec_in, setting, GainSpectrum(grid, pout - pin, np.ones(n, dtype=bool)),
                PowerSpectrum(grid, pout), sample_id=sid, source=Path(path).name,
            ))
    return Dataset(grid, setting, tuple(records), f"file:{Path(path).name}")


# --- splitting -----------------------------------------------------------------

@dataclass(frozen=True)
class RandomSplit:
    n_train: int
    n_test: int
    seed: int = 0


@dataclass(frozen=True)
class ByLoadedCount:
    """Train on records with more than ``threshold`` loaded channels, test on fewer.

    Records with exactly ``threshold`` loaded channels are left out.
    """

    threshold: int = 12


@dataclass(frozen=True)
class ByTotalPower:
    """Train/test by total input power ranges (dBm, inclusive)."""

    train_range: tuple = (-6.5, -4.5)
    test_range: tuple = (-3.5, 1.5)


def split(dataset: Dataset, strategy) -> tuple[Dataset, Dataset]:
    """Disjoint train/test split of ``dataset``."""
    n = len(dataset)
    if isinstance(strategy, RandomSplit):
        if strategy.n_train < 0 or strategy.n_test < 0 or strategy.n_train + strategy.n_test > n:
            raise SplitError(
                f"random split of {strategy.n_train}+{strategy.n_test} from {n} records"
            )
        perm = np.random.default_rng(strategy.seed).permutation(n)
        train_idx = np.sort(perm[:strategy.n_train])
        test_idx = np.sort(perm[strategy.n_train:strategy.n_train + strategy.n_test])
    elif isinstance(strategy, ByLoadedCount):
        counts = np.array([r.loaded_count for r in dataset.records])
        train_idx = np.flatnonzero(counts > strategy.threshold)
        test_idx = np.flatnonzero(counts < strategy.threshold)
    elif isinstance(strategy, ByTotalPower):
        tot = np.array([r.total_input_dbm for r in dataset.records])
        lo, hi = _pair(strategy.train_range, "train_range")
        train_idx = np.flatnonzero((tot >= lo) & (tot <= hi))
        lo, hi = _pair(strategy.test_range, "test_range")
        test_idx = np.flatnonzero((tot >= lo) & (tot <= hi))
        if np.intersect1d(train_idx, test_idx).size:
            raise SplitError("train and test power ranges overlap")
    else:
        raise TypeError(f"unknown split strategy {strategy!r}")
    if len(train_idx) == 0 or len(test_idx) == 0:
        raise SplitError(f"split leaves an empty side (train={len(train_idx)}, test={len(test_idx)})")
    return dataset.subset(train_idx), dataset.subset(test_idx)
