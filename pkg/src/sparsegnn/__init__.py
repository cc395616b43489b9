"""Graph classification with sparse-initialized GNNs and weight rewiring."""

from .graphs import (Batch, Graph, GraphDataset, TuFormatError, batch_graphs,
                     parse_tu_dataset, split_dataset, write_tu_dataset)
from .models import GnnModel
from .nn import Adam, BatchNorm1d, MaskedLinear, Mlp, apply_grad_mask
from .rewiring import (RewireController, RewireEvent, adaptive_update_zeta,
                       fixed_rewire_step, rank_connections, rewire_model,
                       rewiring_early_stop)
from .sparsity import ParamReport, apply_sparsity, count_params, make_er_mask
from .sweeps import SweepRecord, SweepSpec, emit_csv, marginalize_zeta, run_sweep
from .tensor import Tensor
from .training import (RunResult, TrainConfig, TrainingDiverged, evaluate,
                       multi_seed_run, run_training, train_epoch)

__version__ = "0.1.0"

__all__ = [
    "Adam", "Batch", "BatchNorm1d", "GnnModel", "Graph", "GraphDataset",
    "MaskedLinear", "Mlp", "ParamReport", "RewireController", "RewireEvent",
    "RunResult", "SweepRecord", "SweepSpec", "Tensor", "TrainConfig",
    "TrainingDiverged", "TuFormatError", "adaptive_update_zeta",
    "apply_grad_mask", "apply_sparsity", "batch_graphs", "count_params",
    "emit_csv", "evaluate", "fixed_rewire_step", "make_er_mask",
    "marginalize_zeta", "multi_seed_run", "parse_tu_dataset",
    "rank_connections", "rewire_model", "rewiring_early_stop", "run_sweep",
    "run_training", "split_dataset", "train_epoch", "write_tu_dataset",
]
