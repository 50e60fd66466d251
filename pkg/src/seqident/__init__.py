"""Sequential identification of anomalous sources under a sampling budget."""

__version__ = "0.1.0"
