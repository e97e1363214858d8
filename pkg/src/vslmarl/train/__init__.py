from .loop import (CURVE_HEADER, Learner, Runner, TrainConfig, TrainResult, collect_rollout,
                   critic_inputs, moving_average, train, write_curve)
from .ppo import (TrajectoryBuffer, UpdateReport, actor_loss_and_grad, compute_gae, entropy,
                  normalize_advantages, ppo_update)

__all__ = [
    "CURVE_HEADER", "Learner", "Runner", "TrainConfig", "TrainResult", "TrajectoryBuffer",
    "UpdateReport", "actor_loss_and_grad", "collect_rollout", "compute_gae", "critic_inputs",
    "entropy", "moving_average", "normalize_advantages", "ppo_update", "train", "write_curve",
]
