"""Metrics and scripted train/test experiments.

RMSE is pooled over every valid (sample, channel) pair. The CDF statistic is
the order statistic ``smallest e with CDF(e) >= level``, never interpolated.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import greybox, mlp
from .datasets import (
    ByLoadedCount,
    ByTotalPower,
    Dataset,
    DatasetProtocol,
    protocol_from_dict,
    read_dataset,
    split,
)
from .errors import (
    ConfigError,
    ExperimentError,
    FitError,
    SchemaError,
    SpectrumError,
    SplitError,
)
from .spectral import GainSpectrum

EXPERIMENT_SCHEMA = "edfa-twin.experiment/1"
REPORT_SCHEMA = "edfa-twin.report/1"
CSV_COLUMNS = ("train_size", "round", "rmse_db", "cdf90_db")

__all__ = [
    "rmse",
    "per_sample_rmse",
    "signed_errors",
    "error_cdf",
    "abs_error_at_cdf",
    "EvalReport",
    "evaluate_predictions",
    "evaluate_model",
    "ExperimentSpec",
    "ExperimentReport",
    "experiment_from_dict",
    "load_experiment",
    "run_experiment",
]


# --- metrics -------------------------------------------------------------------

def _check_aligned(pred, truth):
    if len(pred) != len(truth):
        raise ValueError(f"{len(pred)} predictions for {len(truth)} truths")
    for i, (p, t) in enumerate(zip(pred, truth)):
        p.grid.check_same(t.grid)
        if not np.array_equal(p.valid, t.valid):
            raise SpectrumError(f"sample {i}: prediction and truth masks differ")


def signed_errors(pred, truth) -> np.ndarray:
    """Per-channel errors ``pred - truth`` (dB) over valid channels, concatenated."""
    _check_aligned(pred, truth)
    if not pred:
        return np.zeros(0)
    return np.concatenate([(p.values_db - t.values_db)[t.valid] for p, t in zip(pred, truth)])


def rmse(pred, truth) -> float:
    """Pooled root-mean-square error (dB) over all valid (sample, channel) pairs."""
    e = signed_errors(pred, truth)
    if e.size == 0:
        raise SpectrumError("no valid channels to compare")
    return float(np.sqrt(np.mean(e * e)))


def per_sample_rmse(pred, truth) -> np.ndarray:
    _check_aligned(pred, truth)
    return np.array([math.sqrt(np.mean((p.values_db - t.values_db)[t.valid] ** 2))
                     for p, t in zip(pred, truth)])


def error_cdf(errors):
    """Empirical CDF of ``|errors|`` as ``(sorted_abs_errors, cumulative_probability)``."""
    a = np.sort(np.abs(np.asarray(errors, dtype=float).ravel()))
    if a.size == 0:
        raise ValueError("error_cdf needs at least one error")
    return a, np.arange(1, a.size + 1) / a.size


def abs_error_at_cdf(errors, level: float = 0.9) -> float:
    """Smallest ``e`` with ``P(|error| <= e) >= level`` (an order statistic)."""
    if not 0.0 < level <= 1.0:
        raise ValueError("level must lie in (0, 1]")
    a, _ = error_cdf(errors)
    # ceil(level*n) with a guard against 0.9*10 = 9.000000000000002
    k = max(1, math.ceil(round(level * a.size, 9)))
    return float(a[k - 1])


@dataclass
class EvalReport:
    per_sample_rmse: np.ndarray
    rmse_db: float
    errors: np.ndarray
    cdf90_db: float
    experiment: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    max_constraint_residual_db: float | None = None

    @property
    def mean_sample_rmse_db(self) -> float:
        return float(np.mean(self.per_sample_rmse))

    def summary(self) -> dict:
        out = {
            "rmse_db": self.rmse_db,
            "mean_sample_rmse_db": self.mean_sample_rmse_db,
            "cdf90_abs_error_db": self.cdf90_db,
            "median_abs_error_db": float(np.median(np.abs(self.errors))),
            "n_samples": int(self.per_sample_rmse.size),
            "n_errors": int(self.errors.size),
        }
        if self.max_constraint_residual_db is not None:
            out["max_constraint_residual_db"] = self.max_constraint_residual_db
        return out


def _common_mask(pred, truth):
    """Restrict predictions and truths to the channels valid in both."""
    p2, t2 = [], []
    for p, t in zip(pred, truth):
        m = p.valid & t.valid
        p2.append(GainSpectrum(p.grid, p.values_db, m))
        t2.append(GainSpectrum(t.grid, t.values_db, m))
    return p2, t2


def evaluate_predictions(pred, truth, *, experiment=None, model=None) -> EvalReport:
    pred, truth = _common_mask(pred, truth)
    e = signed_errors(pred, truth)
    return EvalReport(per_sample_rmse(pred, truth), rmse(pred, truth), e,
                      abs_error_at_cdf(e, 0.9), experiment or {}, model or {})


def _constraint_closure(model: greybox.GreyBoxModel, inputs, preds) -> float:
    worst = 0.0
    for s, g in zip(inputs, preds):
        out = greybox.implied_output_dbm(model, s, g)
        if model.mode == "AGC":
            tin = float(greybox._log_sum_dbm(s.values_dbm[model.valid]))
            target = tin + model.target_level
        else:
            target = model.target_level
        worst = max(worst, abs(out - target))
    return worst


def evaluate_model(model, test: Dataset, *, experiment=None) -> EvalReport:
    """Predict every record of ``test`` with a grey-box or MLP model and score it."""
    inputs = test.inputs
    if isinstance(model, greybox.GreyBoxModel):
        preds = greybox.predict_batch(model, inputs)
        desc = {"family": "greybox", "n_samples": model.n_samples,
                "extremes": model.extremes_averaged, "calibration_db": model.calibration_db}
        closure = _constraint_closure(model, inputs, preds)
    elif isinstance(model, mlp.MlpModel):
        preds = mlp.predict_nn_batch(model, inputs, test.setting)
        desc = {"family": "mlp", "hidden": list(model.config.hidden),
                "epochs_run": len(model.history.get("train_loss", []))}
        closure = None
    else:
        raise TypeError(f"cannot evaluate {type(model).__name__}")
    rep = evaluate_predictions(preds, test.gains, experiment=experiment, model=desc)
    rep.max_constraint_residual_db = closure
    return rep


# --- experiments ----------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentSpec:
    """Parsed experiment descriptor. ``source`` is either a dataset path or a
    simulator block; ``model`` holds the family and its options, or a
    pre-fitted model file (then ``train_sizes`` is ignored)."""

    source: dict
    model: dict
    train_sizes: tuple = (8,)
    rounds: int = 10
    split: dict = field(default_factory=lambda: {"strategy": "random", "n_test": 400})
    seed: int = 0
    threads: int = 1
    base_dir: str = "."

    def to_dict(self):
        return {"schema": EXPERIMENT_SCHEMA, "source": self.source, "model": self.model,
                "train_sizes": list(self.train_sizes), "rounds": self.rounds,
                "split": self.split, "seed": self.seed}


def experiment_from_dict(cfg: dict, base_dir=".") -> ExperimentSpec:
    if cfg.get("schema") != EXPERIMENT_SCHEMA:
        raise SchemaError(f"experiment schema {cfg.get('schema')!r}, expected {EXPERIMENT_SCHEMA!r}")
    try:
        source, model = dict(cfg["source"]), dict(cfg["model"])
    except KeyError as exc:
        raise ConfigError(f"experiment is missing {exc}") from None
    if ("dataset" in source) == ("simulator" in source):
        raise ConfigError("experiment source needs exactly one of 'dataset' or 'simulator'")
    if "file" not in model and model.get("family") not in ("greybox", "mlp"):
        raise ConfigError("model.family must be 'greybox' or 'mlp' (or give model.file)")
    sizes = tuple(int(s) for s in cfg.get("train_sizes", (8,)))
    rounds = int(cfg.get("rounds", 10))
    if rounds < 1 or any(s < 1 for s in sizes):
        raise ConfigError("rounds and train sizes must be positive")
    sp = dict(cfg.get("split", {"strategy": "random", "n_test": 400}))
    if sp.get("strategy", "random") not in ("random", "loaded_count", "total_power"):
        raise ConfigError(f"unknown split strategy {sp.get('strategy')!r}")
    return ExperimentSpec(source, model, sizes, rounds, sp, int(cfg.get("seed", 0)),
                          int(cfg.get("threads", 1)), str(base_dir))


def load_experiment(path) -> ExperimentSpec:
    from .sim.config import read_yaml, resolve_config_path

    p = resolve_config_path(path)
    return experiment_from_dict(read_yaml(p), base_dir=p.parent)


def _path(spec: ExperimentSpec, p):
    from .sim.config import resolve_config_path

    q = Path(p)
    if not q.is_absolute() and (Path(spec.base_dir) / q).exists():
        return Path(spec.base_dir) / q
    return resolve_config_path(q)


def _source_dataset(spec: ExperimentSpec) -> Dataset:
    if "dataset" in spec.source:
        return read_dataset(_path(spec, spec.source["dataset"]))
    from .sim.config import default_amplifier_config, load_amplifier_config, read_yaml
    from .sim.generate import generate_dataset

    sim = dict(spec.source["simulator"])
    kw = {"mode": sim.get("mode"), "setpoint": sim.get("setpoint")}
    cfg_path = sim.get("config", "default")
    if cfg_path == "default":
        grid, amp = default_amplifier_config(**kw)
    else:
        grid, amp = load_amplifier_config(_path(spec, cfg_path), **kw)
    proto = sim.get("protocol", "default")
    if proto == "default":
        protocol = DatasetProtocol.table1(len(grid))
    else:
        protocol = protocol_from_dict(read_yaml(_path(spec, proto)), len(grid))
    return generate_dataset(amp, protocol, int(sim.get("n", 1000)),
                            float(sim.get("noise_db", 0.0)), int(sim.get("seed", spec.seed)),
                            grid=grid, workers=max(1, spec.threads))


def _take(ds: Dataset, idx) -> Dataset:
    return ds.subset([int(i) for i in idx])


def _partition(spec: ExperimentSpec, ds: Dataset):
    """Return ``(train_pool, test, in_distribution_test_or_None)``; fixed per seed."""
    sp = spec.split
    strategy = sp.get("strategy", "random")
    rng = np.random.default_rng([spec.seed, 7919])
    n_test = int(sp.get("n_test", 400))
    if strategy == "random":
        if "file" in spec.model:
            # pre-fitted model: no training pool needed
            n_test = min(n_test, len(ds))
        elif n_test >= len(ds):
            raise ExperimentError(f"test set of {n_test} leaves no training data in {len(ds)} records")
        perm = rng.permutation(len(ds))
        return _take(ds, np.sort(perm[n_test:])), _take(ds, np.sort(perm[:n_test])), None
    if strategy == "loaded_count":
        strat = ByLoadedCount(int(sp.get("threshold", 12)))
    else:
        strat = ByTotalPower(tuple(sp.get("train_range", (-6.5, -4.5))),
                             tuple(sp.get("test_range", (-3.5, 1.5))))
    try:
        pool, test = split(ds, strat)
    except SplitError as exc:
        raise ExperimentError(str(exc)) from None
    if len(test) > n_test:
        test = _take(test, np.sort(rng.permutation(len(test))[:n_test]))
    n_in = int(sp.get("n_test_in_distribution", min(400, len(pool) // 4)))
    if n_in >= len(pool):
        raise ExperimentError("in-distribution test set would consume the whole training pool")
    perm = rng.permutation(len(pool))
    in_test = _take(pool, np.sort(perm[:n_in])) if n_in > 0 else None
    return _take(pool, np.sort(perm[n_in:])), test, in_test


def _fit_model(spec: ExperimentSpec, train: Dataset, round_seed: int):
    opts = {k: v for k, v in spec.model.items() if k != "family"}
    if spec.model["family"] == "greybox":
        model, _ = greybox.fit(train.pairs, train.setting, opts.get("extremes"))
        return model
    cfg = mlp.MlpConfig.for_grid(len(train.grid), seed=round_seed, **{
        k: (tuple(v) if k == "hidden" else v) for k, v in opts.items()})
    return mlp.train(train, cfg)


@dataclass
class ExperimentReport:
    spec: dict
    rows: list  # dicts: train_size, round, rmse_db, cdf90_db, [rmse_in_db, cdf90_in_db]
    test_description: dict
    reports: dict = field(default_factory=dict)  # (size, round) -> (EvalReport, EvalReport|None)

    def summary(self) -> list:
        out = []
        for size in sorted({r["train_size"] for r in self.rows}):
            every = [r for r in self.rows if r["train_size"] == size]
            rs = [r for r in every if "fit_error" not in r]
            item = {"train_size": size, "rounds": len(every), "failed_rounds": len(every) - len(rs)}
            if not rs:
                out.append(item)
                continue
            v = np.array([r["rmse_db"] for r in rs])
            item.update({
                "mean_rmse_db": float(v.mean()), "max_rmse_db": float(v.max()),
                "min_rmse_db": float(v.min()), "std_rmse_db": float(v.std()),
                "mean_sample_rmse_db": float(np.mean([r["mean_sample_rmse_db"] for r in rs])),
                "mean_cdf90_db": float(np.mean([r["cdf90_db"] for r in rs]))})
            closure = [r["max_constraint_residual_db"] for r in rs
                       if r.get("max_constraint_residual_db") is not None]
            if closure:
                item["max_constraint_residual_db"] = float(max(closure))
            if "rmse_in_db" in rs[0]:
                w = np.array([r["rmse_in_db"] for r in rs])
                item["mean_rmse_in_distribution_db"] = float(w.mean())
                item["degradation_factor"] = float(v.mean() / w.mean())
            out.append(item)
        return out

    def to_dict(self):
        rows = [{k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in r.items()}
                for r in self.rows]
        return {"schema": REPORT_SCHEMA, "experiment": self.spec, "test_set": self.test_description,
                "summary": self.summary(), "rounds": rows}

    def write(self, out_dir) -> tuple[Path, Path]:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        rp = d / "report.json"
        rp.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n",
                      encoding="utf-8")
        cp = d / "rounds.csv"
        with open(cp, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for r in self.rows:
                w.writerow([r["train_size"], r["round"], repr(r["rmse_db"]), repr(r["cdf90_db"])])
        return rp, cp


def _row(size, rnd, rep: EvalReport, rep_in: EvalReport | None):
    row = {"train_size": size, "round": rnd, "rmse_db": rep.rmse_db, "cdf90_db": rep.cdf90_db,
           "mean_sample_rmse_db": rep.mean_sample_rmse_db}
    if rep.max_constraint_residual_db is not None:
        row["max_constraint_residual_db"] = rep.max_constraint_residual_db
    if rep_in is not None:
        row["rmse_in_db"] = rep_in.rmse_db
        row["cdf90_in_db"] = rep_in.cdf90_db
    return row


def run_experiment(spec: ExperimentSpec, dataset: Dataset | None = None) -> ExperimentReport:
    """Run every (train size, round) combination of ``spec``.

    The test set (and the in-distribution hold-out of a distribution-shift
    split) is drawn once per experiment seed. Round ``r`` shuffles the
    training pool with a generator seeded by ``(seed, r)`` and takes the first
    ``train_size`` records, so training sets are nested across sizes.
    ``dataset`` overrides the spec's source (useful when it is already loaded).
    """
    ds = _source_dataset(spec) if dataset is None else dataset
    pool, test, in_test = _partition(spec, ds)
    desc = {"n_test": len(test), "fixed_per_seed": True, "seed": spec.seed,
            "strategy": spec.split.get("strategy", "random"), "n_pool": len(pool),
            "n_source": len(ds)}
    if in_test is not None:
        desc["n_test_in_distribution"] = len(in_test)

    if "file" in spec.model:
        path = _path(spec, spec.model["file"])
        try:
            model = greybox.load_model(path)
        except SchemaError:
            model = mlp.load_mlp(path)
        size = getattr(model, "n_samples", 0) or 0
        rep = evaluate_model(model, test, experiment=spec.to_dict())
        rep_in = evaluate_model(model, in_test) if in_test is not None else None
        return ExperimentReport(spec.to_dict(), [_row(size, 0, rep, rep_in)], desc,
                                {(size, 0): (rep, rep_in)})

    too_big = [s for s in spec.train_sizes if s > len(pool)]
    if too_big:
        raise ExperimentError(
            f"training size {max(too_big)} exceeds the {len(pool)} records available for training"
        )

    def one_round(rnd):
        seq = np.random.SeedSequence([spec.seed, rnd])
        order = np.random.default_rng(seq).permutation(len(pool))
        round_seed = int(seq.generate_state(1)[0])
        out = []
        for size in spec.train_sizes:
            try:
                model = _fit_model(spec, _take(pool, order[:size]), round_seed)
            except FitError as exc:
                # a noisy draw can contradict the monotone family; record, do not abort
                out.append((size, rnd, exc, None))
                continue
            rep = evaluate_model(model, test)
            rep_in = evaluate_model(model, in_test) if in_test is not None else None
            out.append((size, rnd, rep, rep_in))
        return out

    if spec.threads > 1:
        with ThreadPoolExecutor(max_workers=spec.threads) as pool_ex:
            results = list(pool_ex.map(one_round, range(spec.rounds)))
    else:
        results = [one_round(r) for r in range(spec.rounds)]
    rows, reports = [], {}
    for chunk in results:
        for size, rnd, rep, rep_in in chunk:
            if isinstance(rep, FitError):
                rows.append({"train_size": size, "round": rnd, "rmse_db": math.nan,
                             "cdf90_db": math.nan, "fit_error": rep.category})
                continue
            rows.append(_row(size, rnd, rep, rep_in))
            reports[(size, rnd)] = (rep, rep_in)
    rows.sort(key=lambda r: (r["train_size"], r["round"]))
    return ExperimentReport(spec.to_dict(), rows, desc, reports)
