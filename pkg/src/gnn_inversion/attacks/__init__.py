"""Edge reconstruction attacks against a trained GCN."""
from .blackbox import GeConfig, HardLabelOracle, run_gradient_estimation
from .rl import QNetworks, RlConfig, run_rl_graphmi
from .whitebox import UNKNOWN, GraphMiConfig, ReconstructionResult, known_labels, run_graphmi

__all__ = ["GeConfig", "GraphMiConfig", "HardLabelOracle", "QNetworks", "ReconstructionResult", "RlConfig",
           "UNKNOWN", "known_labels", "run_gradient_estimation", "run_graphmi", "run_rl_graphmi"]
