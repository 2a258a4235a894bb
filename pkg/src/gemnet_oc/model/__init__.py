from .batching import Batch, GraphData, build_graph_data, collate, to_batch
from .config import TOGGLES, ModelConfig
from .flops import count_flops_estimate, graph_stats
from .io import load_model, save_model
from .network import GemNetOC, init_model, predict, prepare
from .scaling import fit_scaling_factors

__all__ = [
    "Batch",
    "GemNetOC",
    "GraphData",
    "ModelConfig",
    "TOGGLES",
    "build_graph_data",
    "collate",
    "count_flops_estimate",
    "fit_scaling_factors",
    "graph_stats",
    "init_model",
    "load_model",
    "predict",
    "prepare",
    "save_model",
    "to_batch",
]
