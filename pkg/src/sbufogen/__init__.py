"""Few-step signal enhancement with a tractable Gaussian bridge and adversarial training."""

from .kernels import ufogen_infer
from .schedule import ScheduleParams

__version__ = "0.1.0"
__all__ = ["ScheduleParams", "ufogen_infer", "__version__"]
