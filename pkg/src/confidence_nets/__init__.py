"""Neural-network regression with boosted-tree error correction and prediction intervals."""

__version__ = "0.1.0"

from .data import (Dataset, DatasetManifest, NormalizationParams, RawDataset, denormalize,
                   fit_normalizer, load_csv, load_manifest, normalize, prepare_split, split)
from .ensemble import (ConfidenceNetModel, MemoryBank, ModelConfig, PredictionInterval, build_error_dataset,
                       compute_omega, dissimilarity, predict_interval, predict_intervals,
                       train_confidence_net)
from .errors import ConfidenceNetError, DataError, ModelFormatError, NumericalError
from .evaluation import (EvalRecord, EvalSummary, ann_baseline_inclusion, error_estimation_report,
                         inclusion_rate, run_experiment)
from .gbt import GradientBoostedForest, RegressionTree, TreeParams, best_split, fit_forest, predict_forest
from .modelfile import load_model, save_model
from .nn import NeuralNet, TrainConfig, TrainReport, train_network
