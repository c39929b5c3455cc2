"""Neural safe-stoppability monitors refined by calibrated importance sampling."""

from .dataset import Dataset, DegenerateDataset, StrideConfig, TriggerSample
from .env import BrakingEnv, CartPoleEnv, EnvParams, make_env
from .monitor import MonitorParams, TrainHyper, decide, forward, load_params, save_params, train
from .oracle import LabeledGrid, agreement, analytic_stoppable_braking, grid_oracle
from .refine import PrismConfig, PrismState, UncertaintyBand, run_prism
from .rollout import DrConfig, Trajectory, estimate_vstop, label_trigger, rollout_nominal

__version__ = "0.1.0"
