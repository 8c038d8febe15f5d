"""Hierarchical graph classification with attention-based cluster pooling.

The package is organized as a small stack:

* :mod:`asap_pool.engine` — float64 autodiff over dense 2-D tensors and
  canonical-COO sparse matrices.
* :mod:`asap_pool.graphs` / :mod:`asap_pool.datasets` — graph containers,
  benchmark ingestion, synthetic corpora.
* :mod:`asap_pool.layers` / :mod:`asap_pool.pool` — message passing layers
  and the cluster-attention pooling operator.
* :mod:`asap_pool.model` / :mod:`asap_pool.train` — the pooled classifier and
  the cross-validated training harness.
* :mod:`asap_pool.theory` — brute-force verification of the structural
  claims behind the operator.
"""

from .engine import SparseMatrix, Tape, Tensor, grad_check
from .graphs import Dataset, Graph, GraphBatch, batch_graphs, graph_from_edges, permute_graph
from .datasets import load_tu_dataset, synthetic_motif_dataset
from .layers import AttentionParams, GCNParams, LEConvParams
from .pool import PoolConfig, PoolParams, asap_pool, asap_pool_batch
from .model import Model, ModelConfig, forward, init_model, load_checkpoint, save_checkpoint
from .train import Adam, TrainConfig, kfold_split, sweep

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "Tensor",
    "Tape",
    "SparseMatrix",
    "grad_check",
    "Graph",
    "Dataset",
    "GraphBatch",
    "graph_from_edges",
    "batch_graphs",
    "permute_graph",
    "load_tu_dataset",
    "synthetic_motif_dataset",
    "GCNParams",
    "LEConvParams",
    "AttentionParams",
    "PoolConfig",
    "PoolParams",
    "asap_pool",
    "asap_pool_batch",
    "Model",
    "ModelConfig",
    "init_model",
    "forward",
    "save_checkpoint",
    "load_checkpoint",
    "Adam",
    "TrainConfig",
    "kfold_split",
    "sweep",
]
