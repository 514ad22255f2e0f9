import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edfa_twin import greybox
from edfa_twin.datasets import Setting
from edfa_twin.errors import (
    GridMismatchError,
    InsufficientSamplesError,
    NonMonotoneFamilyError,
    SchemaError,
    SolveError,
)
from edfa_twin.greybox import (
    GreyBoxModel,
    constraint_residual_db,
    fit,
    load_model,
    predict,
    predict_batch,
    save_model,
    solve_x,
    solve_x_batch,
)
from edfa_twin.spectral import ChannelGrid, GainSpectrum, PowerSpectrum

G2 = ChannelGrid.uniform(192.1, 50.0, 2)


def _flat_model(mode, setpoint, g0=20.0, dg=1.0):
    return GreyBoxModel(G2, np.full(2, dg), np.full(2, g0), mode, setpoint)


def _total_out(model, spec, gain):
    return 10 * math.log10(np.sum(10 ** ((spec.values_dbm + gain.values_db)[model.valid] / 10)))


# --- hand examples -----------------------------------------------------------------

def test_fit_two_sample_arithmetic():
    pin = PowerSpectrum(G2, [-20.0, -20.0])
    a = (pin, GainSpectrum(G2, [10.0, 12.0]))
    b = (pin, GainSpectrum(G2, [11.0, 14.0]))
    model, report = fit([b, a], Setting("AGC", 12.0), extremes=1)
    np.testing.assert_allclose(model.delta_g, [1.0, 2.0])
    np.testing.assert_allclose(model.g0, [10.5, 13.0])
    assert report.n_samples == 2 and report.extremes_averaged == 1
    assert np.all(report.residual_rmse_db >= 0)


def test_apc_flat_closed_form():
    model = _flat_model("APC", 18.0)
    spec = PowerSpectrum(G2, [0.0, 0.0])
    x = solve_x(model, spec)
    expected = 18.0 - 10 * math.log10(2) - 20.0
    assert x == pytest.approx(expected, abs=1e-10)
    assert x == pytest.approx(-5.0103, abs=5e-5)
    gain = predict(model, spec)
    np.testing.assert_allclose(gain.values_db, 20.0 + expected, atol=1e-10)
    assert gain.values_db[0] == pytest.approx(14.9897, abs=5e-5)
    assert _total_out(model, spec, gain) == pytest.approx(18.0, abs=1e-10)


@given(st.lists(st.floats(-30, 0), min_size=2, max_size=2))
def test_agc_flat_solution_is_zero(p):
    model = _flat_model("AGC", 18.0, g0=18.0)
    spec = PowerSpectrum(G2, p)
    assert abs(solve_x(model, spec)) < 1e-9
    np.testing.assert_allclose(predict(model, spec).values_db, 18.0, atol=1e-9)


def test_residual_strictly_increasing():
    model = GreyBoxModel(G2, np.array([0.3, 2.0]), np.array([15.0, 17.0]), "AGC", 16.0)
    spec = PowerSpectrum(G2, [-18.0, -15.0])
    xs = np.linspace(-3, 4, 200)
    r = constraint_residual_db(model, spec, xs)
    assert np.all(np.diff(r) > 0)
    r2 = constraint_residual_db(model, spec, xs + 0.1)
    assert np.all(r2 > r)


def test_target_outside_bracket():
    model = _flat_model("APC", 18.0, dg=0.01)
    with pytest.raises(SolveError) as err:
        solve_x(model, PowerSpectrum(G2, [0.0, 0.0]))
    lo, hi = err.value.bracket
    assert lo < -3 and hi > 4


def test_positive_delta_g_required():
    with pytest.raises(ValueError):
        GreyBoxModel(G2, np.array([1.0, 0.0]), np.array([10.0, 10.0]), "AGC", 10.0)


def test_fit_errors():
    pin = PowerSpectrum(G2, [-20.0, -20.0])
    s = (pin, GainSpectrum(G2, [10.0, 12.0]))
    with pytest.raises(InsufficientSamplesError):
        fit([s], Setting("AGC", 11.0))
    with pytest.raises(InsufficientSamplesError):
        fit([s, s, s], Setting("AGC", 11.0), extremes=2)
    # second channel moves against the first: not a monotone family
    hi = (pin, GainSpectrum(G2, [12.0, 11.0]))
    lo = (pin, GainSpectrum(G2, [10.0, 11.5]))
    with pytest.raises(NonMonotoneFamilyError) as err:
        fit([hi, lo], Setting("AGC", 11.0))
    assert list(err.value.channels) == [2]


def test_never_observed_channel_is_masked():
    g3 = ChannelGrid.uniform(192.1, 50.0, 3)
    pin = PowerSpectrum(g3, [-20.0, -20.0, -20.0])
    va = [True, True, False]
    a = (pin, GainSpectrum(g3, [10.0, 12.0, 0.0], va))
    b = (pin, GainSpectrum(g3, [11.0, 14.0, 0.0], va))
    with pytest.warns(UserWarning):
        model, report = fit([a, b], Setting("AGC", 12.0))
    assert model.valid.tolist() == [True, True, False]
    assert report.invalid_channels == (3,)
    gain = predict(model, pin)
    assert not gain.valid[2] and math.isnan(gain.values_db[2])


def test_grid_mismatch():
    model = _flat_model("APC", 18.0)
    with pytest.raises(GridMismatchError):
        predict(model, PowerSpectrum(ChannelGrid.uniform(192.1, 50.0, 3), [0.0] * 3))


# --- persistence --------------------------------------------------------------------

def test_save_load_roundtrip(tmp_path, small_agc):
    model, _ = fit(small_agc.pairs[:8], small_agc.setting)
    p = tmp_path / "m.gbx"
    save_model(model, p)
    back = load_model(p)
    assert back == model
    np.testing.assert_array_equal(back.delta_g, model.delta_g)
    assert back.calibration_db == model.calibration_db
    assert back.extremes_averaged == 2 and back.n_samples == 8


def test_load_missing_field(tmp_path, small_agc):
    model, _ = fit(small_agc.pairs[:8], small_agc.setting)
    p = tmp_path / "m.gbx"
    save_model(model, p)
    doc = json.loads(p.read_text())
    del doc["delta_g"]
    p.write_text(json.dumps(doc))
    with pytest.raises(SchemaError):
        load_model(p)
    doc["schema"] = "edfa-twin.greybox/0"
    p.write_text(json.dumps(doc))
    with pytest.raises(SchemaError) as err:
        load_model(p)
    assert "greybox/0" in str(err.value)


# --- properties on simulator data -----------------------------------------------------

def test_noise_free_fit_is_exact(agc_clean):
    train = agc_clean.subset(range(400, 408))
    model, report = fit(train.pairs, train.setting)
    preds = predict_batch(model, agc_clean.inputs[:100])
    err = np.concatenate([p.values_db - t.values_db for p, t in zip(preds, agc_clean.gains[:100])])
    assert np.sqrt(np.mean(err ** 2)) < 1e-6
    assert abs(report.calibration_db) < 1e-8
    assert np.nanmax(report.residual_rmse_db) < 1e-6


def test_normalization_convention_m1(agc_clean):
    train = agc_clean.subset(range(400, 416))
    model, report = fit(train.pairs, train.setting, extremes=1)
    x = report.x_train
    assert x.max() - x.min() == pytest.approx(1.0, abs=1e-6)
    # mean of x over training is ~0 when g0 is the mean spectrum of an affine family
    assert abs(x.mean()) < 1e-6


def test_range_rescaling_m2(agc_clean):
    train = agc_clean.subset(range(400, 416))
    m1, _ = fit(train.pairs, train.setting, extremes=1)
    m2, r2 = fit(train.pairs, train.setting, extremes=2)
    assert r2.x_train.max() - r2.x_train.min() == pytest.approx(1.0, abs=1e-12)
    a = predict_batch(m1, agc_clean.inputs[:20])
    b = predict_batch(m2, agc_clean.inputs[:20])
    for p, q in zip(a, b):
        np.testing.assert_allclose(p.values_db, q.values_db, atol=1e-8)


def test_affine_closure_parameters(agc_clean):
    train = agc_clean.subset(range(400, 408))
    model, _ = fit(train.pairs, train.setting, extremes=1)
    preds = predict_batch(model, train.inputs)
    refit, _ = fit(list(zip(train.inputs, preds)), train.setting, extremes=1)
    np.testing.assert_allclose(refit.g0, model.g0, atol=1e-9)
    np.testing.assert_allclose(refit.delta_g, model.delta_g, atol=1e-9)
    assert refit.calibration_db == pytest.approx(model.calibration_db, abs=1e-9)


def test_affine_closure_predictions_with_noise(agc_noisy):
    """With noisy training data x no longer has mean 0 and range 1, so the
    refit parameters move along the family, but the family itself is fixed."""
    train = agc_noisy.subset(range(400, 408))
    model, _ = fit(train.pairs, train.setting)
    preds = predict_batch(model, train.inputs)
    refit, _ = fit(list(zip(train.inputs, preds)), train.setting)
    ratio = refit.delta_g / model.delta_g
    np.testing.assert_allclose(ratio, ratio[0], rtol=1e-9)
    others = agc_noisy.inputs[:50]
    for p, q in zip(predict_batch(refit, others), predict_batch(model, others)):
        np.testing.assert_allclose(p.values_db, q.values_db, atol=1e-9)


def test_calibration_absorbs_setpoint_offset(agc_amp, protocol):
    from edfa_twin.sim import AmplifierConfig, generate_dataset

    grid, amp = agc_amp
    off = AmplifierConfig(amp.stages, amp.mode, amp.setpoint, amp.pump_limits,
                          monitor_offset_db=0.25)
    ds = generate_dataset(off, protocol, 24, seed=5, grid=grid)
    model, report = fit(ds.pairs[:8], ds.setting)
    assert report.calibration_db == pytest.approx(0.25, abs=1e-8)
    preds = predict_batch(model, ds.inputs[8:])
    for p, t in zip(preds, ds.gains[8:]):
        np.testing.assert_allclose(p.values_db, t.values_db, atol=1e-6)


@pytest.mark.parametrize("mode", ["AGC", "APC"])
def test_out_of_distribution_loading(mode, agc_clean, apc_clean, agc_amp, apc_amp):
    """Fit on heavily loaded spectra, predict on sparse ones: still exact."""
    ds = agc_clean if mode == "AGC" else apc_clean
    heavy = [r for r in ds.records if r.loaded_count > 25][:8]
    sparse = [r for r in ds.records if r.loaded_count < 6][:30]
    model, _ = fit([(r.input, r.gain) for r in heavy], ds.setting)
    for r, p in zip(sparse, predict_batch(model, [r.input for r in sparse])):
        np.testing.assert_allclose(p.values_db, r.gain.values_db, atol=1e-6)


@given(seed=st.integers(0, 2**32 - 1), mode=st.sampled_from(["AGC", "APC"]))
@settings(max_examples=40)
def test_solve_recovers_planted_root(seed, mode):
    """Plant x*, derive the setpoint it implies, and check the solver finds it."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 40))
    g = ChannelGrid.uniform(192.1, 50.0, n)
    dg, g0 = rng.uniform(0.05, 3.0, n), rng.uniform(10, 25, n)
    spec = PowerSpectrum(g, rng.uniform(-30, -10, n))
    x_star = rng.uniform(-1.5, 2.5)
    out = 10 * math.log10(np.sum(10 ** ((dg * x_star + g0 + spec.values_dbm) / 10)))
    tin = 10 * math.log10(np.sum(10 ** (spec.values_dbm / 10)))
    calib = rng.uniform(-0.5, 0.5)
    setpoint = (out - tin if mode == "AGC" else out) - calib
    model = GreyBoxModel(g, dg, g0, mode, setpoint, calibration_db=calib)
    x, it = solve_x_batch(model, [spec], return_iterations=True)
    assert it[0] <= 60
    assert abs(constraint_residual_db(model, spec, x)[0]) < 1e-10
    assert x[0] == pytest.approx(x_star, abs=1e-9)
    gain = GainSpectrum(g, model.gain_at(x[0]))
    assert abs(greybox.implied_output_dbm(model, spec, gain) - out) < 1e-9
