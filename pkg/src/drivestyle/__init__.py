"""Driver-behavior classification with annotation, neural classifiers and active learning."""

__version__ = "0.1.0"

CLASSES = ("aggressive", "normal", "cautious")
