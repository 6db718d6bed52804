"""Edge-level model inversion attacks and defenses for graph convolutional networks."""
from .data import generate_sbm, load_dataset
from .gcn import DpConfig, GcnModel, train, train_dp
from .graph import AdjVector, DensityEstimate, Graph

__version__ = "0.1.0"

__all__ = ["AdjVector", "DensityEstimate", "DpConfig", "GcnModel", "Graph", "generate_sbm", "load_dataset",
           "train", "train_dp"]
