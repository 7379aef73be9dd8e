"""Latent state-space forecaster with aligned text.

The heavy lifting lives in the compiled ``_core`` module; the command-line
tool ``lbs`` exposes the same operations.
"""

from ._core import Error, Model, config_keys, default_config, kalman, pca, synth, train

__all__ = ["Error", "Model", "config_keys", "default_config", "kalman", "pca", "synth", "train"]
