"""Fair input preprocessing for frozen classifiers via sharp Sinkhorn distances."""

from .classifier import (CallableClassifier, ClassifierHandle, LogisticModel, MLPModel, load_classifier,
                         predict_scores, save_classifier, train_baseline)
from .data import (LabeledDataset, SplitDataset, load_csv, load_dataset, load_recipe, preprocess, save_dataset,
                   split, synth_biased_gaussians)
from .flow import FcnnPreprocessor, FlowPreprocessor, init_flow
from .metrics import EvaluationReport, accuracy, delta_dp, delta_eopp, evaluate, strong_dp_gap
from .ot import exact_wasserstein_1d, exact_wasserstein_lp, sharp_sinkhorn, solve_dual
from .trainer import (FairnessSpec, Mode, Notion, TrainConfig, TrainState, adapfair_train, assemble_gradients,
                      load_state, save_state, total_loss)

__version__ = "0.1.0"

__all__ = [
    "CallableClassifier", "ClassifierHandle", "LogisticModel", "MLPModel", "load_classifier", "predict_scores",
    "save_classifier", "train_baseline", "LabeledDataset", "SplitDataset", "load_csv", "load_dataset",
    "load_recipe", "preprocess", "save_dataset", "split", "synth_biased_gaussians", "FcnnPreprocessor",
    "FlowPreprocessor", "init_flow", "EvaluationReport", "accuracy", "delta_dp", "delta_eopp", "evaluate",
    "strong_dp_gap", "exact_wasserstein_1d", "exact_wasserstein_lp", "sharp_sinkhorn", "solve_dual",
    "FairnessSpec", "Mode", "Notion", "TrainConfig", "TrainState", "adapfair_train", "assemble_gradients",
    "load_state", "save_state", "total_loss",
]
