"""Leaky integrate-and-fire neurons with a triangular surrogate gradient.

Forward dynamics per step: v' = v + (1/tau)(x - v); a spike fires where
v' >= v_threshold and the membrane at fired positions resets to zero via a
multiplicative gate that is held constant during backward. The spike
nonlinearity backpropagates the triangular surrogate

    d_spike/dv = 0                      if |v - v_th| > 1/a
               = -a^2 |v - v_th| + a    otherwise

A "smooth twin" mode replaces the hard threshold with the antiderivative
of the surrogate, making the whole network differentiable so finite
differences can validate the backward machinery end to end.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ContractError, DimensionError
from .tensor import Tensor, custom_grad, mul


@dataclass
class LIFConfig:
    tau: float = 2.0
    v_threshold: float = 1.0
    v_reset: float = 0.0
    surrogate_a: float = 2.0

    def __post_init__(self):
        if not self.tau > 1.0:
            raise ConfigurationError(f"tau must be > 1, got {self.tau}")
        if not self.v_threshold > self.v_reset:
            raise ConfigurationError(
                f"v_threshold ({self.v_threshold}) must exceed v_reset ({self.v_reset})"
            )
        if not self.surrogate_a > 0:
            raise ConfigurationError(f"surrogate_a must be positive, got {self.surrogate_a}")


def surrogate_slope(v, v_threshold, a):
    """Triangular surrogate derivative of the spike nonlinearity (ndarray in/out)."""
    d = np.abs(v - v_threshold)
    return np.where(d > 1.0 / a, 0.0, -a * a * d + a).astype(v.dtype)


def smooth_spike_value(v, v_threshold, a):
    """Antiderivative of the surrogate: a C1 ramp from 0 to 1 around threshold."""
    d = v - v_threshold
    lo = np.minimum(np.maximum(d, -1.0 / a), 0.0)
    hi = np.minimum(np.maximum(d, 0.0), 1.0 / a)
    val = (a * lo + 0.5 * a * a * lo * lo + 0.5) + (a * hi - 0.5 * a * a * hi * hi)
    return val.astype(v.dtype)


def spike_fn(v, cfg, smooth=False):
    """Heaviside spike (or its smooth twin) with the surrogate backward."""

    def forward(vd):
        if smooth:
            out = smooth_spike_value(vd, cfg.v_threshold, cfg.surrogate_a)
        else:
            out = (vd >= cfg.v_threshold).astype(vd.dtype)
        return out, vd

    def backward(vd, g):
        return (g * surrogate_slope(vd, cfg.v_threshold, cfg.surrogate_a),)

    return custom_grad(forward, backward)(v)


@dataclass
class LIFState:
    v: Tensor


def lif_step(state, x, cfg, smooth=False):
    """One membrane update; returns (spikes, new state)."""
    if state is not None and state.v.shape != x.shape:
        raise DimensionError(
            f"LIF state shape {state.v.shape} does not match input shape {x.shape}"
        )
    v = state.v if state is not None else Tensor(np.zeros_like(x.data))
    v_new = v + mul(x - v, 1.0 / cfg.tau)
    spikes = spike_fn(v_new, cfg, smooth=smooth)
    if smooth:
        gate = 1.0 - spikes  # differentiable reset in the smooth twin
    else:
        gate = Tensor(1.0 - spikes.data)  # reset gate detached from the graph
    v_post = v_new * gate
    return spikes, LIFState(v=v_post)


def lif_forward(xs, cfg, smooth=False):
    """Fold lif_step over a T-step input sequence starting from zero state."""
    if len(xs) == 0:
        raise ContractError("lif_forward requires at least one time step")
    state = None
    out = []
    for x in xs:
        s, state = lif_step(state, x, cfg, smooth=smooth)
        out.append(s)
    return out


class LIF:
    """Stateful LIF layer; holds the membrane across the steps of one sample."""

    def __init__(self, cfg=None, smooth=False):
        self.cfg = cfg or LIFConfig()
        self.smooth = smooth
        self.state = None

    def step(self, x):
        spikes, self.state = lif_step(self.state, x, self.cfg, smooth=self.smooth)
        return spikes

    def reset(self):
        self.state = None
