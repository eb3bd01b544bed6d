from .checkpoint import load_checkpoint, loss_history_csv, save_checkpoint
from .lstm import lstm_step
from .model import ClassifierParams, ModelVariant, forward, init_params, loss_and_grad, zero_params
from .train import NumericalError, TrainConfig, TrainResult, predict_session, train

__all__ = [
    "ClassifierParams", "ModelVariant", "NumericalError", "TrainConfig", "TrainResult",
    "forward", "init_params", "load_checkpoint", "loss_and_grad", "loss_history_csv",
    "lstm_step", "predict_session", "save_checkpoint", "train", "zero_params",
]
