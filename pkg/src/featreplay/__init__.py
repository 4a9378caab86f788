"""Continual slice-wise segmentation with conditional feature replay.

A compact 2D segmentation network is trained on a stream of domains. After
the first task its encoder is frozen and a conditional VAE models the
distribution of bottleneck features, conditioned on task identity and slice
position. Pseudo-features sampled from the VAE rehearse earlier tasks, and
the VAE reconstruction error doubles as an out-of-distribution score.
"""

__version__ = "0.1.0"

from .errors import ConfigError, InputError, StateError

__all__ = ["ConfigError", "InputError", "StateError", "__version__"]
