"""Federated fault classification for multivariate industrial time series.

Sliding-window LSTM classifiers trained across simulated participants under
decentralized (DFL), semi-decentralized (SDFL) and centralized (CFL)
federation, with optional feature engineering (dominant autocorrelation and
DFT values) and stationary conversion (ADF-driven detrending and seasonal
differencing).
"""
from .config import ExperimentConfig
from .errors import FedTSError
from .federation import fedavg, run_experiment

__all__ = ["ExperimentConfig", "FedTSError", "fedavg", "run_experiment"]
__version__ = "0.1.0"
