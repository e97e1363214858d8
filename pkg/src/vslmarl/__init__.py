"""Multi-agent reinforcement learning for corridor-scale variable speed limits."""

__version__ = "0.1.0"

ACTIONS_MPH = (30, 40, 50, 60, 70)
N_ACTIONS = len(ACTIONS_MPH)
MAX_LIMIT_MPH = 70
MIN_LIMIT_MPH = 30
