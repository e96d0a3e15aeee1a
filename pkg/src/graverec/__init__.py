"""graverec: grave records from detections on archaeological catalogue pages."""

__version__ = "0.1.0"

from .engine import Engine
from .store import Store

__all__ = ["Engine", "Store", "__version__"]
