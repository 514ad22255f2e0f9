import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from edfa_twin.datasets import (
    ByLoadedCount,
    ByTotalPower,
    Dataset,
    DatasetProtocol,
    RandomSplit,
    SampleRecord,
    Setting,
    draw_input,
    ingest_public,
    odd_channel_mask,
    protocol_from_dict,
    read_dataset,
    sample_rng,
    split,
    subtract_ase,
    write_dataset,
)
from edfa_twin.errors import (
    AseSubtractionError,
    ConfigError,
    DataFormatError,
    SchemaError,
    SplitError,
)
from edfa_twin.spectral import ChannelGrid, GainSpectrum, PowerSpectrum

AGC18 = Setting("AGC", 18.0)


def _three_channel_record(out_dbm, in_dbm=(-20.0, -40.0, -20.0), loaded=(True, False, True)):
    g = ChannelGrid.uniform(192.1, 50.0, len(out_dbm))
    pin = PowerSpectrum(g, in_dbm, loaded)
    return SampleRecord(pin, AGC18, output_raw=PowerSpectrum(g, out_dbm, loaded))


# --- protocol ----------------------------------------------------------------------

def test_odd_mask():
    assert odd_channel_mask(5).tolist() == [True, False, True, False, True]


@given(seed=st.integers(0, 2**31), n=st.integers(2, 90))
def test_draw_respects_protocol(seed, n):
    g = ChannelGrid.uniform(192.1, 50.0, n)
    proto = DatasetProtocol.table1(n)
    s = draw_input(np.random.default_rng(seed), g, proto)
    odd = odd_channel_mask(n)
    assert s.loaded_count >= 1
    assert not np.any(s.loaded & ~odd)
    np.testing.assert_array_equal(s.values_dbm[~s.loaded], -28.0)
    loaded = s.values_dbm[s.loaded]
    assert np.all(loaded >= -19.5) and np.all(loaded <= -12.5)
    # one shared average: spread of loaded powers is bounded by the perturbation range
    assert np.ptp(loaded) <= 3.0 + 1e-12


def test_draws_are_reproducible(grid, protocol):
    a = draw_input(sample_rng(4, 9), grid, protocol)
    b = draw_input(sample_rng(4, 9), grid, protocol)
    c = draw_input(sample_rng(4, 10), grid, protocol)
    assert a == b and a != c


def test_loaded_count_spread(agc_clean):
    counts = np.array([r.loaded_count for r in agc_clean.records])
    assert counts.min() <= 8 and counts.max() >= 32
    assert np.sum(counts > 12) > 100 and np.sum(counts < 12) > 50


def test_protocol_validation():
    with pytest.raises(ConfigError):
        DatasetProtocol(odd_channel_mask(4), load_probability=(0.9, 0.1))
    with pytest.raises(ConfigError):
        DatasetProtocol(odd_channel_mask(4), avg_power_range_dbm=(-10.0, -20.0))


def test_protocol_from_dict():
    p = protocol_from_dict({"loadable": [1, 2], "unloaded_power_dbm": -30.0}, 4)
    assert p.loadable_channels.tolist() == [True, True, False, False]
    assert p.empty_power_dbm == -30.0
    assert protocol_from_dict({"loadable": "all"}, 3).n_loadable == 3
    with pytest.raises(ConfigError):
        protocol_from_dict({"loadable": [9]}, 4)
    with pytest.raises(SchemaError):
        protocol_from_dict({"schema": "x/1"}, 4)


# --- ASE subtraction ---------------------------------------------------------------

def test_ase_hand_example():
    rec = _three_channel_record([-5.0, -20.0, -5.0])
    out = subtract_ase(rec)
    expected = 10 * math.log10(10 ** -0.5 - 0.01) + 20.0
    assert expected == pytest.approx(14.860, abs=5e-4)
    assert out.gain.values_db[0] == pytest.approx(expected, abs=1e-12)
    assert not out.gain.valid[1]


def test_ase_interpolates_linearly_in_mw():
    # probes at -20 and -17 dBm (0.01 and ~0.02 mW); middle signal sees their mean
    g = ChannelGrid.uniform(192.1, 50.0, 5)
    pin = PowerSpectrum(g, [-20, -40, -20, -40, -20], [True, False, True, False, True])
    rec = SampleRecord(pin, AGC18, output_raw=PowerSpectrum(g, [-5, -20, -5, -17, -5]))
    out = subtract_ase(rec)
    noise = 0.5 * (0.01 + 10 ** -1.7)
    assert out.gain.values_db[2] == pytest.approx(10 * math.log10(10 ** -0.5 - noise) + 20, abs=1e-12)
    # edge channels use the nearest probe
    assert out.gain.values_db[4] == pytest.approx(10 * math.log10(10 ** -0.5 - 10 ** -1.7) + 20,
                                                  abs=1e-12)


def test_ase_zero_floor_identity():
    rec = _three_channel_record([-5.0, -90.0, -5.0])
    assert subtract_ase(rec).gain.values_db[0] == pytest.approx(15.0, abs=1e-3)


def test_ase_errors():
    with pytest.raises(AseSubtractionError) as err:
        subtract_ase(_three_channel_record([-25.0, -20.0, -5.0]))
    assert list(err.value.channels) == [1]
    with pytest.raises(AseSubtractionError):
        subtract_ase(_three_channel_record([-5.0, -20.0, -5.0], loaded=(True, True, True)))
    with pytest.raises(AseSubtractionError):
        subtract_ase(_three_channel_record([-5.0, -20.0, -5.0]), signal_channels=[True] * 3)
    g = ChannelGrid.uniform(192.1, 50.0, 1)
    no_raw = SampleRecord(PowerSpectrum(g, [-20.0]), AGC18, gain=GainSpectrum(g, [10.0]))
    with pytest.raises(AseSubtractionError):
        subtract_ase(no_raw)


def test_ase_recovers_simulated_gain(agc_amp):
    from edfa_twin.sim import generate_dataset

    grid, amp = agc_amp
    # probe channels carry no signal, so their raw output is the floor alone
    protocol = DatasetProtocol.table1(len(grid), empty_power_dbm=-200.0)
    ds = generate_dataset(amp, protocol, 5, seed=8, grid=grid, ase_floor_dbm=-35.0)
    for rec in ds.records:
        clean = subtract_ase(rec)
        sel = clean.gain.valid & rec.input.loaded
        # flat floor is interpolated exactly, so the true gain is recovered
        np.testing.assert_allclose(clean.gain.values_db[sel], rec.gain.values_db[sel], atol=1e-9)


# --- file format -------------------------------------------------------------------

def test_dataset_roundtrip(tmp_path, small_agc):
    p = tmp_path / "d.ds"
    write_dataset(small_agc, p)
    back = read_dataset(p)
    assert len(back) == len(small_agc)
    assert back.grid == small_agc.grid and back.setting == small_agc.setting
    for a, b in zip(back.records, small_agc.records):
        np.testing.assert_allclose(a.gain.values_db, b.gain.values_db, atol=1e-7)
        np.testing.assert_allclose(a.input.values_dbm, b.input.values_dbm, atol=1e-7)
        assert np.array_equal(a.input.loaded, b.input.loaded)
    # writing what was read is byte-stable
    p2 = tmp_path / "d2.ds"
    write_dataset(back, p2)
    assert p.read_bytes() == p2.read_bytes()


def test_dataset_roundtrip_with_invalid_channels(tmp_path):
    rec = subtract_ase(_three_channel_record([-5.0, -20.0, -5.0]))
    ds = Dataset(rec.input.grid, AGC18, (rec,), "test")
    write_dataset(ds, tmp_path / "x.ds")
    back = read_dataset(tmp_path / "x.ds").records[0]
    assert back.gain.valid.tolist() == [True, False, True]
    assert back.output_raw is not None


def test_read_dataset_rejects_foreign_schema(tmp_path):
    p = tmp_path / "bad.ds"
    p.write_text('{"schema": "something/9"}\n')
    with pytest.raises(SchemaError):
        read_dataset(p)


def test_dataset_requires_common_setting():
    a = _three_channel_record([-5.0, -20.0, -5.0])
    b = SampleRecord(a.input, Setting("APC", 5.0), output_raw=a.output_raw)
    with pytest.raises(Exception):
        Dataset(a.input.grid, AGC18, (a, b), "mixed")


# --- public ingestion -------------------------------------------------------------

MAP = {
    "grid": {"start_thz": 192.0, "spacing_ghz": 100.0, "n_channels": 3},
    "setting": {"mode": "APC", "setpoint": 15.0},
    "input_columns": {"prefix": "in", "first": 1},
    "output_columns": {"prefix": "out", "first": 1},
    "id_column": "id",
}


def test_ingest_gain_is_output_minus_input(tmp_path):
    p = tmp_path / "pub.csv"
    p.write_text("id,in1,in2,in3,out1,out2,out3\n"
                 "a,-12,-12,-12,3,3,3\n"
                 "b,-10,-11,-12,5,4.5,2\n")
    ds = ingest_public(p, MAP)
    assert len(ds) == 2 and ds.setting == Setting("APC", 15.0)
    np.testing.assert_allclose(ds.records[0].gain.values_db, 15.0)
    np.testing.assert_allclose(ds.records[1].gain.values_db, [15.0, 15.5, 14.0])
    assert ds.records[1].sample_id == "b"
    assert ds.records[0].total_input_dbm == pytest.approx(-12 + 10 * math.log10(3))


def test_ingest_names_malformed_row(tmp_path):
    p = tmp_path / "pub.csv"
    p.write_text("id,in1,in2,in3,out1,out2,out3\na,-12,-12,-12,3,3,3\nb,-12,-12,3,3\n")
    with pytest.raises(DataFormatError) as err:
        ingest_public(p, MAP)
    assert err.value.row == 2 and "row 2" in str(err.value)


def test_ingest_positional_columns(tmp_path):
    p = tmp_path / "pub.csv"
    p.write_text("-12;-12;-12;3;3;4\n")
    m = {**MAP, "delimiter": ";", "header": False, "id_column": None,
         "input_columns": {"start": 0}, "output_columns": {"start": 3}}
    ds = ingest_public(p, m)
    np.testing.assert_allclose(ds.records[0].gain.values_db, [15, 15, 16])


def test_ingest_example_file():
    from edfa_twin.sim.config import read_yaml

    ds = ingest_public("configs/example_public.csv", read_yaml("configs/public_map.yaml"))
    assert len(ds) == 20 and len(ds.grid) == 80


# --- splits ------------------------------------------------------------------------

def test_random_split_is_reproducible(small_agc):
    a_tr, a_te = split(small_agc, RandomSplit(10, 5, seed=3))
    b_tr, b_te = split(small_agc, RandomSplit(10, 5, seed=3))
    assert a_tr == b_tr and a_te == b_te
    ids_tr = {r.sample_id for r in a_tr.records}
    assert not ids_tr & {r.sample_id for r in a_te.records}
    with pytest.raises(SplitError):
        split(small_agc, RandomSplit(30, 30))


def test_loaded_count_split(agc_clean):
    tr, te = split(agc_clean, ByLoadedCount(12))
    assert all(r.loaded_count > 12 for r in tr.records)
    assert all(r.loaded_count < 12 for r in te.records)
    n_equal = sum(r.loaded_count == 12 for r in agc_clean.records)
    assert len(tr) + len(te) + n_equal == len(agc_clean)


def test_total_power_split(agc_clean):
    tr, te = split(agc_clean, ByTotalPower((-6.5, -4.5), (-3.5, 1.5)))
    assert all(-6.5 <= r.total_input_dbm <= -4.5 for r in tr.records)
    assert all(-3.5 <= r.total_input_dbm <= 1.5 for r in te.records)
    with pytest.raises(SplitError):
        split(agc_clean, ByTotalPower((-6.5, -2.0), (-3.0, 1.5)))
    with pytest.raises(SplitError):
        split(agc_clean, ByTotalPower((20.0, 21.0), (-3.0, 1.5)))
