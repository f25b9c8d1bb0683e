"""LEICA: scores an image against its caption from per-patch code likelihoods weighted by text relevance."""

__version__ = "0.1.0"
