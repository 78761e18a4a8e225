"""Engine/Transit-cell differentiable architecture search on a numpy autodiff core."""

from .derivation import Genotype
from .search_space import SearchSpaceConfig
from .supernet import Supernet, SupernetConfig
from .trainer import TrainerConfig, run_search

__version__ = "0.1.0"

__all__ = ["Genotype", "SearchSpaceConfig", "Supernet", "SupernetConfig", "TrainerConfig", "run_search"]
