"""Chained-equation imputation with a joint Gaussian reference sampler."""
from .data import DataMatrix, load_csv, write_csv
from .errors import ImputeError
from .randkit import RngStream

__all__ = ["DataMatrix", "ImputeError", "RngStream", "load_csv", "write_csv"]
__version__ = "0.1.0"
