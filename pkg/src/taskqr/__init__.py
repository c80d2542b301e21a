"""Task-based multishift QR eigensolver with aggressive early deflation."""

from .aed import PerformanceModel, decide_parallel, fit_performance_model
from .context import SolverConfig
from .deflation import DeflationCondition
from .driver import ConvergenceError, SchurResult, schur_is_valid, solve
from .generators import MatrixSpec, gen_hessrand, gen_syn
from .metrics import MetricsReport, metrics
from .mmio import load_matrix_market, read_dense, write_dense, write_matrix_market
from .runtime import Runtime

__all__ = [
    "ConvergenceError", "DeflationCondition", "MatrixSpec", "MetricsReport", "PerformanceModel",
    "Runtime", "SchurResult", "SolverConfig", "decide_parallel", "fit_performance_model",
    "gen_hessrand", "gen_syn", "load_matrix_market", "metrics", "read_dense", "schur_is_valid",
    "solve", "write_dense", "write_matrix_market",
]
__version__ = "0.1.0"
