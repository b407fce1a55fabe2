"""Polynomial networks with a forward Jacobian stream and layer-wise sensitivity penalties."""

__version__ = "0.1.0"
