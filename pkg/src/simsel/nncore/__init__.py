"""From-scratch neural network engine: specs, layers, training, checks."""

from .checkpoint import load_network, save_network
from .gradcheck import check_gradients, draw_safe_batch, relative_error
from .metrics import (
    accuracy,
    accuracy_from_confusion,
    confusion_matrix,
    macro_f1,
    macro_f1_from_confusion,
)
from .network import Network, build_network, softmax
from .spec import (
    LayerSpec,
    NetworkSpec,
    TrainConfig,
    adaptive_max_pool,
    conv1d,
    dense,
    dropout,
    flatten,
    infer_shapes,
    relu,
    softmax_head,
)
from .tensor import as_tensor, check_finite
from .train import evaluate, fit

__all__ = [
    "LayerSpec",
    "Network",
    "NetworkSpec",
    "TrainConfig",
    "accuracy",
    "accuracy_from_confusion",
    "adaptive_max_pool",
    "as_tensor",
    "build_network",
    "check_finite",
    "check_gradients",
    "confusion_matrix",
    "conv1d",
    "dense",
    "draw_safe_batch",
    "dropout",
    "evaluate",
    "fit",
    "flatten",
    "infer_shapes",
    "load_network",
    "macro_f1",
    "macro_f1_from_confusion",
    "relative_error",
    "relu",
    "save_network",
    "softmax",
    "softmax_head",
]
