"""Graph signatures of neural-network training trajectories.

Turns per-epoch weight checkpoints into weighted k-partite graphs, summarizes
their structural dynamics into compact temporal signatures, and predicts the
network's final task accuracy from only the first few training epochs.
"""

from .checkpoints import (ArchitectureSpec, CheckpointError, CheckpointSeries,
                          EpochCheckpoint, LayerSpec, lenet5, read_run, write_run)
from .centrality import (CentralityError, NodeFeatureVector, eigenvector_centrality,
                         weighted_degree)
from .graphs import (GraphBuildError, LayeredGraph, SignedSplit, build_fc_graph,
                     build_rolled_graph, build_unrolled_graph, split_signed)
from .signatures import (SignatureError, SnapshotSignature, TemporalSignature,
                         snapshot_signature, snapshot_stats, temporal_signature)
from .predict import (EvalReport, LabeledDataset, PredictError, PredictorModel,
                      RunSnapshots, cross_validate, epoch_budget_curve, feature_report,
                      label_dataset, median_threshold, train_linear_svm, train_mlp,
                      train_ols)
from .corpus import (SyntheticTask, TrainerConfig, default_arch, generate_task,
                     run_grid, train_run)
from .pipeline import ExperimentConfig, PipelineError, inspect_graph, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "ArchitectureSpec", "CheckpointError", "CheckpointSeries", "EpochCheckpoint",
    "LayerSpec", "lenet5", "read_run", "write_run",
    "CentralityError", "NodeFeatureVector", "eigenvector_centrality", "weighted_degree",
    "GraphBuildError", "LayeredGraph", "SignedSplit", "build_fc_graph",
    "build_rolled_graph", "build_unrolled_graph", "split_signed",
    "SignatureError", "SnapshotSignature", "TemporalSignature", "snapshot_signature",
    "snapshot_stats", "temporal_signature",
    "EvalReport", "LabeledDataset", "PredictError", "PredictorModel", "RunSnapshots",
    "cross_validate", "epoch_budget_curve", "feature_report", "label_dataset",
    "median_threshold", "train_linear_svm", "train_mlp", "train_ols",
    "SyntheticTask", "TrainerConfig", "default_arch", "generate_task", "run_grid",
    "train_run",
    "ExperimentConfig", "PipelineError", "inspect_graph", "run_pipeline",
    "__version__",
]
