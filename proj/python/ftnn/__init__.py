"""Greedy layer-wise (forward thinking) network training.

Thin wrapper over the compiled core: train one shallow stage at a time,
freeze it, push the data through to get a new learning problem, stack the
stages, and finish with a trained head.  An end-to-end backprop trainer of
the identical architecture is included for controlled comparisons.
"""

from ftnn._core import (
    ConfigError,
    DimensionError,
    DomainError,
    Model,
    ParseFailure,
    StageSpec,
    StoppingPolicy,
    TrainConfig,
    augment,
    conv_stage,
    dense_stage,
    grad_check_conv,
    grad_check_dense,
    load_mnist,
    matmul,
    run_experiment,
    synth_xor,
    train_backprop,
    train_forward_thinking,
    train_forward_thinking_conv,
    __version__,
)

import json as _json


def run_experiment_dict(config: dict) -> dict:
    """Run an experiment described by a config dict (same keys as the CLI's
    JSON config files)."""
    return run_experiment(_json.dumps(config))


__all__ = [
    "ConfigError",
    "DimensionError",
    "DomainError",
    "Model",
    "ParseFailure",
    "StageSpec",
    "StoppingPolicy",
    "TrainConfig",
    "augment",
    "conv_stage",
    "dense_stage",
    "grad_check_conv",
    "grad_check_dense",
    "load_mnist",
    "matmul",
    "run_experiment",
    "run_experiment_dict",
    "synth_xor",
    "train_backprop",
    "train_forward_thinking",
    "train_forward_thinking_conv",
    "__version__",
]
