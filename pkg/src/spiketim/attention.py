"""Spiking self-attention with an optional temporal interaction on the query.

The block computes softmax-free attention A = scale * Q K^T V per head,
where Q, K, V come from linear projection -> BN -> LIF and are therefore
binary. Three modes:

  baseline  - plain stepwise spiking self-attention
  tim       - the query is a convex mix of a 1-D-convolved copy of the
              previous step's mixed query and the current spiking query:
              q_mix[t] = alpha * f(q_mix[t-1]) + (1 - alpha) * q[t]
  local_tim - the same 1-D convolution applied to the query of the current
              step only, before its LIF gate; no cross-step state, same
              parameter count

The mixing convolution f runs along the token axis, depthwise per channel
(channel-wise application commutes with head splitting). It is initialized
to a delta kernel plus small noise so training starts near the identity.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, ContractError
from .layers import BatchNorm, Layer, Linear
from .neuron import LIF, LIFConfig
from .tensor import Tensor


@dataclass
class SSAConfig:
    embed_dim: int
    num_heads: int
    scale: float = 0.125

    def __post_init__(self):
        if self.embed_dim % self.num_heads:
            raise ConfigurationError(
                f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}"
            )
        if not self.scale > 0:
            raise ConfigurationError(f"scale must be positive, got {self.scale}")


@dataclass
class TIMConfig:
    alpha: float = 0.5
    kernel_size: int = 3
    mode: str = "tim"

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.kernel_size % 2 == 0:
            raise ConfigurationError(f"kernel_size must be odd, got {self.kernel_size}")
        if self.mode not in ("baseline", "tim", "local_tim"):
            raise ConfigurationError(f"unknown attention mode {self.mode!r}")


def delta_kernel(channels, k, rng, noise=0.01, dtype=np.float32):
    """Identity-like depthwise kernel: 1 at the center plus small noise."""
    w = rng.normal(0.0, noise, (channels, k))
    w[:, k // 2] += 1.0
    return Tensor(w, requires_grad=True, dtype=dtype)


def _token_conv(x, kernel):
    """Apply the depthwise kernel along the token axis of a (B, N, D) tensor."""
    xt = T.transpose(x, (0, 2, 1))  # (B, D, N)
    yt = T.conv1d_depthwise(xt, kernel)
    return T.transpose(yt, (0, 2, 1))


class SpikingSelfAttention(Layer):
    """One attention sub-block, stepped across time; stateful within a sample."""

    def __init__(self, ssa_cfg, tim_cfg, lif_cfg=None, rng=None, dtype=np.float32):
        self.cfg = ssa_cfg
        self.tim = tim_cfg
        lif_cfg = lif_cfg or LIFConfig()
        rng = rng if rng is not None else np.random.default_rng(0)
        d = ssa_cfg.embed_dim
        self.q_proj = Linear(d, d, rng, dtype=dtype)
        self.k_proj = Linear(d, d, rng, dtype=dtype)
        self.v_proj = Linear(d, d, rng, dtype=dtype)
        self.q_bn = BatchNorm(d, axis=-1, dtype=dtype)
        self.k_bn = BatchNorm(d, axis=-1, dtype=dtype)
        self.v_bn = BatchNorm(d, axis=-1, dtype=dtype)
        self.q_lif = LIF(lif_cfg)
        self.k_lif = LIF(lif_cfg)
        self.v_lif = LIF(lif_cfg)
        self.mix_kernel = delta_kernel(d, tim_cfg.kernel_size, rng, dtype=dtype)
        self.out_proj = Linear(d, d, rng, dtype=dtype)
        self.out_bn = BatchNorm(d, axis=-1, dtype=dtype)
        self.out_lif = LIF(lif_cfg)
        self.q_mix_prev = None
        self._step_shape = None

    # -- state handling ------------------------------------------------
    def reset(self):
        self.q_mix_prev = None
        self._step_shape = None
        for lif in (self.q_lif, self.k_lif, self.v_lif, self.out_lif):
            lif.reset()

    def train(self, flag=True):
        for bn in (self.q_bn, self.k_bn, self.v_bn, self.out_bn):
            bn.train(flag)

    def set_smooth(self, smooth):
        for lif in (self.q_lif, self.k_lif, self.v_lif, self.out_lif):
            lif.smooth = smooth

    def named_parameters(self, prefix=""):
        params = []
        for name, sub in (
            ("q_proj", self.q_proj),
            ("q_bn", self.q_bn),
            ("k_proj", self.k_proj),
            ("k_bn", self.k_bn),
            ("v_proj", self.v_proj),
            ("v_bn", self.v_bn),
            ("out_proj", self.out_proj),
            ("out_bn", self.out_bn),
        ):
            params.extend(sub.named_parameters(f"{prefix}.{name}"))
        params.append((f"{prefix}.mix_kernel", self.mix_kernel))
        return params

    # -- forward -------------------------------------------------------
    def _split_heads(self, x):
        b, n, d = x.shape
        h = self.cfg.num_heads
        return T.transpose(T.reshape(x, (b, n, h, d // h)), (0, 2, 1, 3))

    def _merge_heads(self, x):
        b, h, n, dh = x.shape
        return T.reshape(T.transpose(x, (0, 2, 1, 3)), (b, n, h * dh))

    def step(self, x):
        """One time step; x is (B, N, D) and the output has the same shape."""
        if self._step_shape is not None and x.shape != self._step_shape:
            raise ContractError(
                f"step shape drifted from {self._step_shape} to {x.shape}"
            )
        self._step_shape = x.shape

        q_pre = self.q_bn(self.q_proj(x))
        if self.tim.mode == "local_tim":
            q_pre = _token_conv(q_pre, self.mix_kernel)
        q = self.q_lif.step(q_pre)
        k = self.k_lif.step(self.k_bn(self.k_proj(x)))
        v = self.v_lif.step(self.v_bn(self.v_proj(x)))

        if self.tim.mode == "tim":
            q = self.tim_update(q)

        qh = self._split_heads(q)
        kh = self._split_heads(k)
        vh = self._split_heads(v)
        attn = T.mul(qh @ T.transpose(kh, (0, 1, 3, 2)) @ vh, self.cfg.scale)
        out = self._merge_heads(attn)
        out = self.out_lif.step(self.out_bn(self.out_proj(out)))
        return out + x

    def tim_update(self, q):
        """Mix the current spiking query with convolved history (resets per sample)."""
        if self.q_mix_prev is None:
            q_mix = q
        else:
            hist = _token_conv(self.q_mix_prev, self.mix_kernel)
            q_mix = T.mul(hist, self.tim.alpha) + T.mul(q, 1.0 - self.tim.alpha)
        self.q_mix_prev = q_mix
        return q_mix


def reset_state(block):
    """Clear all time-step state (LIF membranes and query history); idempotent."""
    block.reset()
