from .attribution import action_score, integrated_gradients, score_input_gradient
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .mlp import HIDDEN, MLP, clip_grad_norm, forward_policy, forward_value, log_softmax
from .optim import AdamState, PopArt, adam_update

__all__ = [
    "HIDDEN", "MLP", "AdamState", "Checkpoint", "CheckpointError", "PopArt", "action_score",
    "adam_update", "clip_grad_norm", "forward_policy", "forward_value", "integrated_gradients",
    "load_checkpoint", "log_softmax", "save_checkpoint", "score_input_gradient",
]
