import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from edfa_twin.errors import ConfigError, ExperimentError, SchemaError, SpectrumError
from edfa_twin.evaluation import (
    CSV_COLUMNS,
    abs_error_at_cdf,
    error_cdf,
    evaluate_model,
    experiment_from_dict,
    load_experiment,
    per_sample_rmse,
    rmse,
    run_experiment,
)
from edfa_twin.greybox import fit
from edfa_twin.spectral import ChannelGrid, GainSpectrum

G3 = ChannelGrid.uniform(192.1, 50.0, 3)


def _gains(rows, valid=None):
    return [GainSpectrum(G3, r, valid) for r in rows]


# --- hand examples -------------------------------------------------------------------

def test_rmse_examples():
    t = _gains([[15.0, 15.0, 15.0], [16.0, 16.0, 16.0]])
    assert rmse(t, t) == 0.0
    assert rmse(_gains([[15.1, 14.9, 15.1], [16.1, 15.9, 16.1]]), t) == pytest.approx(0.1, abs=1e-12)
    # two errors of 0.5 pooled over six values
    p = _gains([[15.5, 15.0, 15.0], [16.0, 16.0, 15.5]])
    assert rmse(p, t) == pytest.approx(math.sqrt(0.5 / 6), abs=1e-12)
    single = [GainSpectrum(ChannelGrid.uniform(192.1, 50.0, 2), [15.5, 15.0])]
    truth = [GainSpectrum(ChannelGrid.uniform(192.1, 50.0, 2), [15.0, 15.0])]
    assert rmse(single, truth) == pytest.approx(0.35355, abs=5e-6)


def test_cdf_example():
    errors = np.arange(10) / 10.0
    assert abs_error_at_cdf(errors, 0.9) == pytest.approx(0.8)
    a, p = error_cdf(-errors)
    assert a.tolist() == sorted(errors.tolist())
    assert p[-1] == 1.0 and p[0] == pytest.approx(0.1)


def test_masked_channels_are_ignored():
    valid = [True, False, True]
    t = _gains([[1.0, 0.0, 1.0]], valid)
    p = _gains([[1.0, 99.0, 1.0]], valid)
    assert rmse(p, t) == 0.0


def test_metric_errors():
    t = _gains([[1.0, 1.0, 1.0]], [True, True, False])
    p = _gains([[1.0, 1.0, 1.0]])
    with pytest.raises(SpectrumError):
        rmse(p, t)
    with pytest.raises(SpectrumError):
        rmse(_gains([[1, 1, 1]], [False] * 3), _gains([[1, 1, 1]], [False] * 3))
    with pytest.raises(ValueError):
        error_cdf([])
    with pytest.raises(ValueError):
        abs_error_at_cdf([1.0], 0.0)


# --- brute-force oracles ---------------------------------------------------------------

def _brute_rmse(pred, truth, mask):
    total, count = 0.0, 0
    for i in range(pred.shape[0]):
        for j in range(pred.shape[1]):
            if mask[i, j]:
                total += (pred[i, j] - truth[i, j]) ** 2
                count += 1
    return math.sqrt(total / count)


def _brute_quantile(errors, level):
    a = sorted(abs(e) for e in errors)
    for v in a:
        if sum(1 for w in a if w <= v) / len(a) >= level:
            return v
    raise AssertionError


finite = st.floats(-30.0, 30.0, allow_nan=False)


@given(data=st.data(), n=st.integers(1, 6))
def test_rmse_matches_brute_force(data, n):
    pred = data.draw(arrays(float, (n, 3), elements=finite))
    truth = data.draw(arrays(float, (n, 3), elements=finite))
    mask = data.draw(arrays(bool, (n, 3)))
    mask[0, 0] = True
    p = [GainSpectrum(G3, r, m) for r, m in zip(pred, mask)]
    t = [GainSpectrum(G3, r, m) for r, m in zip(truth, mask)]
    assert rmse(p, t) == pytest.approx(_brute_rmse(pred, truth, mask), rel=1e-12, abs=1e-12)


@given(errors=st.lists(finite, min_size=1, max_size=40), level=st.floats(0.01, 1.0))
def test_cdf_quantile_matches_brute_force(errors, level):
    assert abs_error_at_cdf(errors, level) == _brute_quantile(errors, level)


@given(data=st.data(), n=st.integers(2, 6), scale=st.floats(0.1, 10.0))
def test_rmse_invariances(data, n, scale):
    pred = data.draw(arrays(float, (n, 3), elements=finite))
    truth = data.draw(arrays(float, (n, 3), elements=finite))
    perm = data.draw(st.permutations(range(n)))
    p, t = _gains(pred), _gains(truth)
    base = rmse(p, t)
    assert rmse([p[i] for i in perm], [t[i] for i in perm]) == pytest.approx(base, rel=1e-12, abs=1e-12)
    assert rmse(_gains(pred * scale), _gains(truth * scale)) == pytest.approx(scale * base,
                                                                             rel=1e-9, abs=1e-12)
    # pooled RMSE equals sqrt of the mean of squared per-sample RMSEs when masks are full
    ps = per_sample_rmse(p, t)
    assert base == pytest.approx(math.sqrt(np.mean(ps ** 2)), rel=1e-12, abs=1e-12)


# --- model evaluation --------------------------------------------------------------------

def test_evaluate_greybox_reports_closure(agc_clean, small_agc):
    model, _ = fit(small_agc.pairs[:8], small_agc.setting, 2)
    test = agc_clean.subset(range(0, 50))
    rep = evaluate_model(model, test)
    assert rep.rmse_db < 0.01
    assert rep.max_constraint_residual_db <= 1e-9
    s = rep.summary()
    assert s["n_samples"] == 50 and s["n_errors"] == 50 * 80


# --- experiments ---------------------------------------------------------------------------

def _spec(**over):
    cfg = {"schema": "edfa-twin.experiment/1", "seed": 5,
           "source": {"dataset": "unused.ds"}, "model": {"family": "greybox"},
           "train_sizes": [4, 8], "rounds": 3, "split": {"strategy": "random", "n_test": 400}}
    cfg.update(over)
    return experiment_from_dict(cfg)


def test_experiment_is_deterministic(agc_noisy, tmp_path):
    a = run_experiment(_spec(), dataset=agc_noisy)
    b = run_experiment(_spec(threads=3), dataset=agc_noisy)
    assert a.to_dict() == b.to_dict()
    a.write(tmp_path / "a")
    b.write(tmp_path / "b")
    for name in ("report.json", "rounds.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_experiment_summary_is_mean_of_rounds(agc_noisy, tmp_path):
    rep = run_experiment(_spec(), dataset=agc_noisy)
    assert rep.test_description["n_test"] == 400
    for item in rep.summary():
        vals = [r["rmse_db"] for r in rep.rows
                if r["train_size"] == item["train_size"] and "fit_error" not in r]
        assert item["rounds"] == 3
        if vals:
            assert item["mean_rmse_db"] == pytest.approx(np.mean(vals), rel=1e-12)
    rp, cp = rep.write(tmp_path)
    with open(cp, newline="") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == CSV_COLUMNS and len(rows) == 1 + 2 * 3
    doc = json.loads(rp.read_text())
    assert doc["schema"] == "edfa-twin.report/1" and doc["test_set"]["fixed_per_seed"]


def test_clean_experiment_is_exact(agc_clean):
    # noise-free data: every successful fit is exact to well under 0.01 dB
    rep = run_experiment(_spec(rounds=2), dataset=agc_clean)
    assert all(r["rmse_db"] < 0.01 for r in rep.rows if "fit_error" not in r)


def test_infeasible_experiments(agc_noisy):
    with pytest.raises(ExperimentError):
        run_experiment(_spec(train_sizes=[100]), dataset=agc_noisy)
    with pytest.raises(ExperimentError):
        run_experiment(_spec(split={"strategy": "random", "n_test": 480}), dataset=agc_noisy)
    with pytest.raises(ExperimentError):
        run_experiment(_spec(split={"strategy": "total_power", "train_range": [20, 21],
                                    "test_range": [-3, 1]}), dataset=agc_noisy)


def test_spec_validation(tmp_path):
    with pytest.raises(SchemaError):
        _spec(schema="edfa-twin.experiment/0")
    with pytest.raises(ConfigError):
        _spec(model={"family": "forest"})
    with pytest.raises(ConfigError):
        _spec(source={"dataset": "a", "simulator": {}})
    with pytest.raises(ConfigError):
        _spec(split={"strategy": "stratified"})
    spec = load_experiment("configs/experiment_data_efficiency.yaml")
    assert spec.train_sizes == (4, 8, 16, 32) and spec.rounds == 10


def test_loaded_count_shift_reports_degradation(agc_noisy):
    spec = _spec(train_sizes=[8], rounds=2,
                 split={"strategy": "loaded_count", "threshold": 12, "n_test_in_distribution": 60})
    rep = run_experiment(spec, dataset=agc_noisy)
    item = rep.summary()[0]
    assert rep.test_description["n_test_in_distribution"] == 60
    if item["failed_rounds"] < item["rounds"]:
        assert item["degradation_factor"] == pytest.approx(
            item["mean_rmse_db"] / item["mean_rmse_in_distribution_db"])
