"""Sparse functional principal components by restricted maximum likelihood on the Stiefel manifold."""

__version__ = "0.1.0"

from .dataset import SparseDataset, load_csv, save_csv
from .errors import FpcaError
from .likelihood import ModelParams, evaluate, neg_loglik
from .optimizer import FitOptions, FitReport, fit
from .selection import approx_cv, fev_prune, select_model
from .splines import build_basis, evaluate_design
from .stiefel import StiefelPoint

__all__ = [
    "FitOptions", "FitReport", "FpcaError", "ModelParams", "SparseDataset", "StiefelPoint",
    "approx_cv", "build_basis", "evaluate", "evaluate_design", "fev_prune", "fit", "load_csv",
    "neg_loglik", "save_csv", "select_model",
]
