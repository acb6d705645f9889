"""Single-positive multi-label learning with variational label enhancement."""
from . import autodiff, data, enhance, metrics, risk, special, train

__version__ = "0.1.0"

__all__ = ["autodiff", "data", "enhance", "metrics", "risk", "special", "train", "__version__"]
