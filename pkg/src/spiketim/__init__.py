"""Spiking transformer with a temporal interaction module on the query path.

Self-contained: reverse-mode autodiff, LIF dynamics with a triangular
surrogate gradient, softmax-free spiking attention with optional temporal
query mixing, event-stream tooling, and a deterministic training CLI.
"""

from .attention import SSAConfig, SpikingSelfAttention, TIMConfig, reset_state
from .events import EventStream, bin_to_frames, read_events, split, write_events
from .model import ModelConfig, SpikingTransformer, count_parameters
from .neuron import LIF, LIFConfig, LIFState, lif_forward, lif_step
from .synth import SyntheticTaskSpec, order_blind_accuracy, synth_temporal_order
from .tensor import Tensor, no_grad
from .training import AdamW, cosine_lr, evaluate, fit, train_epoch

__version__ = "0.1.0"

__all__ = [
    "AdamW",
    "EventStream",
    "LIF",
    "LIFConfig",
    "LIFState",
    "ModelConfig",
    "SSAConfig",
    "SpikingSelfAttention",
    "SpikingTransformer",
    "SyntheticTaskSpec",
    "TIMConfig",
    "Tensor",
    "bin_to_frames",
    "cosine_lr",
    "count_parameters",
    "evaluate",
    "fit",
    "lif_forward",
    "lif_step",
    "no_grad",
    "order_blind_accuracy",
    "read_events",
    "reset_state",
    "split",
    "synth_temporal_order",
    "train_epoch",
    "write_events",
]
