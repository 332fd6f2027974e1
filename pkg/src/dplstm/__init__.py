"""Greedy transition-based dependency parsing with feedforward and LSTM classifiers."""

__version__ = "0.1.0"
