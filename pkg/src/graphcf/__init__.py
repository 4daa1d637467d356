"""Graph-based collaborative filtering: MF, SVD++, GCF and their weighted/attentive variants."""

from .data import (
    ColumnSpec,
    Dataset,
    RatingRecord,
    RatingScale,
    SplitDataset,
    feedback_histogram,
    normalize_score,
    parse_ratings,
    split_train_test,
    synthetic_ratings,
)
from .graph import InteractionGraph, build_graph, item_neighbors, user_neighbors
from .kernels import BACKEND
from .model import ModelKind, ModelParams, init_params, load_params, save_params, scale
from .predict import predict, predict_batch
from .sampling import PAD, FeedbackTable, FeedbackTables, SamplePolicy
from .trainer import LossReport, TrainConfig, TrainingDiverged, finite_diff_check, gradients, objective, train

__version__ = "0.1.0"
