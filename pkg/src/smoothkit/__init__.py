"""Teacher-free self-distillation for graph neural networks.

The neighbourhood discrepancy rate (NDR) measures how far each node's
embedding has drifted toward its neighbourhood; the retaining regulariser
keeps deeper layers from losing the discrepancy of shallower ones.
"""

from .config import DataConfig, TrainConfig, from_dict, load_config
from .distill import (
    AdrReport,
    DistillConfig,
    NdrVector,
    adr_loss,
    edge_ndr,
    graph_embed_loss,
    learnable_transform,
    logit_loss,
    ndr,
    ndr_masked,
    total_loss,
)
from .graph import (
    ConfigError,
    EdgeIndexing,
    FormatError,
    Graph,
    GraphBatch,
    drop_edge,
    edge_adjacency,
    load_citation,
    load_tu,
    masked_adjacency,
    sbm_generate,
)
from .layers import GNN, ModelConfig
from .tensor import DimensionError, SparseMatrix, Tape, Tensor
from .train import MetricsLog, grid_search, train_graph, train_node

__version__ = "0.1.0"
