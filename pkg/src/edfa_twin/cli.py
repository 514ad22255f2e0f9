"""``edfa-twin`` command line: simulate, fit, predict, evaluate, ingest, prep.

Results go to stdout as a short summary; logs and errors go to stderr. A
domain failure exits with status 1 and a single line ``ERROR <CATEGORY>: ...``.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import greybox, mlp
from .datasets import (
    DatasetProtocol,
    Setting,
    ingest_public,
    protocol_from_dict,
    read_dataset,
    subtract_ase_dataset,
    write_dataset,
)
from .errors import ConfigError, EdfaTwinError, GridMismatchError, SchemaError, SpectrumError
from .evaluation import load_experiment, run_experiment
from .spectral import ChannelGrid, PowerSpectrum

log = logging.getLogger("edfa_twin")

SPECTRUM_TOL_THZ = 1e-6


# --- spectrum text files ----------------------------------------------------------

def read_spectrum_text(path, grid: ChannelGrid) -> PowerSpectrum:
    """Read ``frequency_thz power_dbm [loaded]`` rows (or a single power column).

    Frequencies within 1 MHz of ``grid`` are snapped onto it; anything else is
    a grid mismatch.
    """
    try:
        rows = np.loadtxt(path, ndmin=2, comments="#")
    except ValueError as exc:
        raise SpectrumError(f"{path}: cannot parse spectrum ({exc})") from None
    if rows.shape[1] == 1:
        if rows.shape[0] != len(grid):
            raise GridMismatchError(
                f"{path}: {rows.shape[0]} powers for a {len(grid)}-channel model"
            )
        return PowerSpectrum(grid, rows[:, 0])
    freqs, powers = rows[:, 0], rows[:, 1]
    loaded = rows[:, 2] != 0 if rows.shape[1] > 2 else None
    if freqs.shape != grid.frequencies.shape or np.max(
            np.abs(freqs - grid.frequencies)) > SPECTRUM_TOL_THZ:
        raise GridMismatchError(
            f"{path}: {freqs.size}-channel spectrum does not match the "
            f"{len(grid)}-channel model grid"
        )
    return PowerSpectrum(grid, powers, loaded)


def write_gain_text(path, gain) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# frequency_thz gain_db\n")
        for f, g in zip(gain.grid.frequencies, gain.values_db):
            fh.write(f"{float(f)!r} {float(g)!r}\n")


# --- subcommands --------------------------------------------------------------------

def _amplifier(args):
    from .sim.config import default_amplifier_config, load_amplifier_config

    kw = {"mode": args.mode.upper() if args.mode else None, "setpoint": args.setpoint}
    if args.config:
        return load_amplifier_config(args.config, **kw)
    return default_amplifier_config(**kw)


def cmd_simulate(args):
    from .sim.config import read_yaml, resolve_config_path
    from .sim.generate import generate_dataset

    grid, amp = _amplifier(args)
    if args.protocol:
        protocol = protocol_from_dict(read_yaml(resolve_config_path(args.protocol)), len(grid))
    else:
        protocol = DatasetProtocol.table1(len(grid))
    log.info("simulating %d samples (%s %.3g dB)", args.n, amp.mode, amp.setpoint)
    ds = generate_dataset(amp, protocol, args.n, args.noise, args.seed, grid=grid,
                          ase_floor_dbm=args.ase_floor, workers=args.threads)
    write_dataset(ds, args.output)
    print(f"simulated {len(ds)} samples ({amp.mode} {amp.setpoint:g}) -> {args.output}")


def _check_setting(ds, args):
    if args.mode and args.mode.upper() != ds.setting.mode:
        raise ConfigError(f"dataset was recorded in {ds.setting.mode}, not {args.mode.upper()}")
    if args.setpoint is not None and args.setpoint != ds.setting.setpoint:
        raise ConfigError(
            f"dataset was recorded at setpoint {ds.setting.setpoint:g}, not {args.setpoint:g}"
        )


def cmd_fit(args):
    ds = read_dataset(args.data)
    _check_setting(ds, args)
    k = len(ds) if args.samples is None else args.samples
    if k > len(ds):
        raise ConfigError(f"--samples {k} exceeds the {len(ds)} records in {args.data}")
    idx = np.sort(np.random.default_rng(args.seed).permutation(len(ds))[:k])
    train = ds.subset([int(i) for i in idx])
    if args.family == "mlp":
        model = mlp.train(train, mlp.MlpConfig.for_grid(len(ds.grid), seed=args.seed))
        mlp.save_mlp(model, args.output)
        print(f"trained mlp on {k} samples ({len(model.history['train_loss'])} epochs) "
              f"-> {args.output}")
        return
    model, report = greybox.fit(train.pairs, train.setting, args.extremes)
    for w in report.warnings:
        log.warning("%s", w)
    greybox.save_model(model, args.output)
    print(f"fitted greybox on {k} samples (m={report.extremes_averaged}, "
          f"calibration {report.calibration_db:.3g} dB, "
          f"fit rmse {float(np.sqrt(np.nanmean(report.residual_rmse_db ** 2))):.3g} dB) "
          f"-> {args.output}")


def _load_any_model(path):
    try:
        return greybox.load_model(path)
    except SchemaError:
        return mlp.load_mlp(path)


def cmd_predict(args):
    model = _load_any_model(args.model)
    spectrum = read_spectrum_text(args.input, model.grid)
    if isinstance(model, greybox.GreyBoxModel):
        gain = greybox.predict(model, spectrum)
    else:
        if args.setpoint is None:
            raise ConfigError("predicting with a network needs --setpoint")
        gain = mlp.predict_nn(model, spectrum, Setting(args.mode or "AGC", args.setpoint))
    write_gain_text(args.output, gain)
    print(f"predicted mean gain {float(np.nanmean(gain.values_db)):.4f} dB over "
          f"{int(gain.valid.sum())} channels -> {args.output}")


def cmd_evaluate(args):
    spec = load_experiment(args.spec)
    if args.model:
        spec = type(spec)(**{**spec.__dict__, "model": {"file": str(Path(args.model).resolve())}})
    if args.seed is not None:
        spec = type(spec)(**{**spec.__dict__, "seed": args.seed})
    if args.threads is not None:
        spec = type(spec)(**{**spec.__dict__, "threads": args.threads})
    report = run_experiment(spec)
    rp, cp = report.write(args.output)
    for item in report.summary():
        if "mean_rmse_db" not in item:
            print(f"train_size={item['train_size']} rounds={item['rounds']} all fits failed")
            continue
        extra = f" failed={item['failed_rounds']}" if item["failed_rounds"] else ""
        if "max_constraint_residual_db" in item:
            extra += f" closure={item['max_constraint_residual_db']:.3g}"
        if "degradation_factor" in item:
            extra += (f" rmse_in={item['mean_rmse_in_distribution_db']:.4g}"
                      f" factor={item['degradation_factor']:.3g}")
        print(f"train_size={item['train_size']} rounds={item['rounds']} "
              f"mean_rmse_db={item['mean_rmse_db']:.4g} max_rmse_db={item['max_rmse_db']:.4g} "
              f"cdf90_db={item['mean_cdf90_db']:.4g}{extra}")
    print(f"report -> {rp}, {cp}")


def cmd_ingest(args):
    from .sim.config import read_yaml, resolve_config_path

    mapping = read_yaml(resolve_config_path(args.mapping))
    ds = ingest_public(args.public, mapping)
    write_dataset(ds, args.output)
    print(f"ingested {len(ds)} samples ({len(ds.grid)} channels) -> {args.output}")


def cmd_prep(args):
    ds = read_dataset(args.ase_subtract)
    clean = subtract_ase_dataset(ds, args.signal_channels)
    write_dataset(clean, args.output)
    print(f"ASE-subtracted {len(clean)} samples -> {args.output}")


# --- parser ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="edfa-twin", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging on stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=func)
        return sp

    def mode_flags(sp):
        sp.add_argument("--mode", type=str.lower, choices=["agc", "apc"])
        sp.add_argument("--setpoint", type=float, help="dB (AGC) or dBm (APC)")

    s = add("simulate", cmd_simulate, "generate a synthetic dataset")
    s.add_argument("--config", help="amplifier YAML (default: bundled two-stage amplifier)")
    s.add_argument("--protocol", help="protocol YAML (default: odd-channel loading protocol)")
    s.add_argument("-n", type=int, required=True, help="number of samples")
    s.add_argument("--noise", type=float, default=0.0, help="gain noise sigma (dB)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--ase-floor", type=float, default=None,
                   help="add a flat ASE floor (dBm per channel) to the raw output")
    s.add_argument("--threads", type=int, default=1)
    mode_flags(s)
    s.add_argument("-o", "--output", required=True)

    f = add("fit", cmd_fit, "fit a grey-box model (or train the network baseline)")
    f.add_argument("--data", required=True)
    mode_flags(f)
    f.add_argument("--samples", type=int, default=None, help="number of training records")
    f.add_argument("--extremes", type=int, default=None,
                   help="spectra averaged at each end of the gain ranking")
    f.add_argument("--family", choices=["greybox", "mlp"], default="greybox")
    f.add_argument("--seed", type=int, default=0, help="selects the training records")
    f.add_argument("--threads", type=int, default=1)
    f.add_argument("-o", "--output", required=True)

    r = add("predict", cmd_predict, "predict the gain spectrum of one input")
    r.add_argument("--model", required=True)
    r.add_argument("--input", required=True, help="text file: frequency_thz power_dbm [loaded]")
    mode_flags(r)
    r.add_argument("-o", "--output", required=True)

    e = add("evaluate", cmd_evaluate, "run an experiment descriptor")
    e.add_argument("--spec", required=True)
    e.add_argument("--model", help="evaluate this pre-fitted model file instead of training")
    e.add_argument("--seed", type=int, default=None)
    e.add_argument("--threads", type=int, default=None)
    e.add_argument("-o", "--output", required=True, help="report directory")

    i = add("ingest", cmd_ingest, "convert a public CSV dataset")
    i.add_argument("--public", required=True)
    i.add_argument("--mapping", required=True)
    i.add_argument("-o", "--output", required=True)

    q = add("prep", cmd_prep, "preprocess a dataset")
    q.add_argument("--ase-subtract", required=True, metavar="DATASET")
    q.add_argument("--signal-channels", default="odd", choices=["odd"])
    q.add_argument("-o", "--output", required=True)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(message)s",
                        level=logging.WARNING - 10 * min(args.verbose, 2))
    threads = getattr(args, "threads", None)
    if threads is not None and threads < 1:
        parser.error("--threads must be at least 1")
    try:
        args.func(args)
    except EdfaTwinError as exc:
        print(f"ERROR {exc.category}: {_one_line(exc)}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"ERROR IO_ERROR: {_one_line(exc)}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"ERROR INVALID_ARGUMENT: {_one_line(exc)}", file=sys.stderr)
        return 1
    return 0


def _one_line(exc) -> str:
    return " ".join(str(exc).split())


if __name__ == "__main__":
    sys.exit(main())
