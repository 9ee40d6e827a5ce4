"""La-MAML and its relatives for online continual learning on streamed tasks.

Modules: :mod:`lamaml.nn` (MLP with exact gradients), :mod:`lamaml.replay`
(reservoir buffer), :mod:`lamaml.tasks` (task streams), :mod:`lamaml.algorithms`
(trainers), :mod:`lamaml.metrics`, :mod:`lamaml.harness` (configs and result
files), :mod:`lamaml.verify` (numerical certificates).
"""
from ._kernels import BACKEND
from .algorithms import TrainerConfig, run_training
from .metrics import RunRecord, bti, retained_accuracy
from .nn import Network
from .replay import ReplayBuffer
from .rng import seeded_rng

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "Network",
    "ReplayBuffer",
    "RunRecord",
    "TrainerConfig",
    "bti",
    "retained_accuracy",
    "run_training",
    "seeded_rng",
]
