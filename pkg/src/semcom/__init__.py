"""Multi-modal self-supervised semantic communication laboratory."""

__version__ = "0.1.0"
