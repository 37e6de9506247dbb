"""Single-step generative behaviour-cloning policies trained with conditional rejection-sampling IMLE."""

from .baseline_fm import VelocityNet, fm_loss_and_grad, fm_sample, train_fm
from .imle_core import (
    Demo,
    SelectionResult,
    TrainConfig,
    TrainingReport,
    euclidean_distance,
    imle_loss_and_grad,
    make_rng,
    sample_latents,
    select_candidate,
    train,
)
from .policy import (
    HorizonBuffer,
    InferenceConfig,
    Normalizer,
    Policy,
    act,
    generate_batch,
    select_consistent,
)
from .tensor_nn import (
    AdamState,
    DimensionError,
    GeneratorNet,
    adam_step,
    backward,
    forward,
    init_net,
)

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "Demo",
    "DimensionError",
    "GeneratorNet",
    "HorizonBuffer",
    "InferenceConfig",
    "Normalizer",
    "Policy",
    "SelectionResult",
    "TrainConfig",
    "TrainingReport",
    "VelocityNet",
    "act",
    "adam_step",
    "backward",
    "euclidean_distance",
    "fm_loss_and_grad",
    "fm_sample",
    "forward",
    "generate_batch",
    "imle_loss_and_grad",
    "init_net",
    "make_rng",
    "sample_latents",
    "select_candidate",
    "select_consistent",
    "train",
    "train_fm",
]
