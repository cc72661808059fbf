"""Lightweight convolutional transformers and a FedAvg simulator on numpy."""

__version__ = "0.1.0"
