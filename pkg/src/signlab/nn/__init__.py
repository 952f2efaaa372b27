"""From-scratch NumPy CNN stack: layers, models, training and checkpoints."""

from .layers import (Conv2D, Dense, GlobalAvgPool, MaxPool2, Normalize, ReLU, ShapeMismatch,
                     softmax, softmax_cross_entropy)
from .model import (BadResolution, Model, ModelSpec, StreamBackbone, build_model,
                    set_trainable_fraction, trainable_map)
from .data import EmptySplit, FrameSet, frame_inputs
from .train import (DivergedLoss, EmptySet, EvalResult, TrainConfig, confusion_result,
                    evaluate, gradient_check, relative_error, train, write_history_csv)
