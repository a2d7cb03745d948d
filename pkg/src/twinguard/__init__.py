"""Per-router DDoS detection inside a digital-twin replica of an ISP core."""

from .labels import DDOS, NOT_DDOS, Label

__version__ = "0.1.0"

__all__ = ["DDOS", "NOT_DDOS", "Label", "__version__"]
