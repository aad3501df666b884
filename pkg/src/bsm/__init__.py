"""Blind separation of bounded sources by bounded similarity matching."""

from .network import (
    Activation,
    DynamicsConfig,
    NetworkConfig,
    NetworkState,
    init_state,
    run_dynamics,
    run_stream,
    step,
    update_weights,
)
from .signals import SourceSpec, generate_uniform_sources, mix, random_orthogonal, whiten_batch

__version__ = "0.1.0"
