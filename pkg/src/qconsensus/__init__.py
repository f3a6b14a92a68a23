"""Exact simulation and runtime verification of quantized distributed averaging."""

from .dynamics import CONSENSUS, CYCLE, UNDECIDED, Trace, Verdict, simulate
from .graph import Graph, erdos_renyi, path_graph, random_geometric
from .quantizer import QuantizerKind
from .weights import WeightMatrix, metropolis, modified_metropolis, two_node_cyclic, validate_assumption1

__version__ = "0.1.0"

__all__ = [
    "CONSENSUS",
    "CYCLE",
    "UNDECIDED",
    "Graph",
    "QuantizerKind",
    "Trace",
    "Verdict",
    "WeightMatrix",
    "erdos_renyi",
    "metropolis",
    "modified_metropolis",
    "path_graph",
    "random_geometric",
    "simulate",
    "two_node_cyclic",
    "validate_assumption1",
]
