__version__ = "0.1.0"

from .dirs import HOME_DIR
from .errors import AvlabError, ContractError, DimensionError, DomainError, NumericError
from .run import Run
from .model import ConditionSet, DualTowerModel, ModelConfig
from .guidance import GuidanceScales
from .engine import SampleConfig, TrainConfig, sample, train

from .lab_facade import Lab

# Provide a convenient singleton facade for simple usage
lab = Lab()

__all__ = [
    "__version__",
    "HOME_DIR",
    "AvlabError",
    "ContractError",
    "DimensionError",
    "DomainError",
    "NumericError",
    "Run",
    "ConditionSet",
    "DualTowerModel",
    "ModelConfig",
    "GuidanceScales",
    "SampleConfig",
    "TrainConfig",
    "sample",
    "train",
    "lab",
    "Lab",
]
