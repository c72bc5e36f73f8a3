"""Confidence quantification and calibration for graph collaborative filtering."""

from .calibration import CalibrationParams, calibrate_rating, calibrate_sheet, user_mean
from .checkpoint import Checkpoint
from .data import RawDataset, SplitDataset, load_adjacency_file, split
from .graph import InteractionGraph, NormalizedAdjacency, build_graph, normalize
from .metrics import (ReliabilityReport, TopKResult, accuracy_at_n, collect_topk,
                      precision_at_n, reliability, tune_tau)
from .model import (EmbeddingState, ScoreSheet, init_embeddings, normalize_scores, propagate,
                    score)
from .trainer import TrainConfig, bpr_loss, conf_loss, fit, train_epoch

__version__ = "0.1.0"
