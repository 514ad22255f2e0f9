"""Digital-twin toolkit for EDFA gain: simulator, grey-box model, baseline and evaluation."""

from .datasets import (
    ByLoadedCount,
    ByTotalPower,
    Dataset,
    DatasetProtocol,
    RandomSplit,
    SampleRecord,
    Setting,
    ingest_public,
    read_dataset,
    split,
    subtract_ase,
    subtract_ase_dataset,
    write_dataset,
)
from .errors import EdfaTwinError
from .evaluation import abs_error_at_cdf, error_cdf, rmse, run_experiment
from .greybox import GreyBoxModel, fit, load_model, predict, save_model, solve_x
from .mlp import MlpConfig, MlpModel, predict_nn, train
from .spectral import ChannelGrid, GainSpectrum, PowerSpectrum, dbm_to_mw, mw_to_dbm, total_power

__version__ = "0.1.0"

__all__ = [
    "ByLoadedCount", "ByTotalPower", "ChannelGrid", "Dataset", "DatasetProtocol",
    "EdfaTwinError", "GainSpectrum", "GreyBoxModel", "MlpConfig", "MlpModel", "PowerSpectrum",
    "RandomSplit", "SampleRecord", "Setting", "abs_error_at_cdf", "dbm_to_mw", "error_cdf",
    "fit", "ingest_public", "load_model", "mw_to_dbm", "predict", "predict_nn", "read_dataset",
    "rmse", "run_experiment", "save_model", "solve_x", "split", "subtract_ase",
    "subtract_ase_dataset", "total_power", "train", "write_dataset",
]
