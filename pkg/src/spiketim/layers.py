"""Parameterized layers built on the autodiff tensor.

Layers hold their parameters as grad-requiring Tensors and expose
``named_parameters(prefix)`` for the optimizer and checkpointing. Modes:
``train(flag)`` toggles batch-norm statistics handling.
"""

import numpy as np

from . import tensor as T
from .neuron import LIF
from .tensor import Tensor


class Layer:
    def named_parameters(self, prefix=""):
        return []

    def train(self, flag=True):
        pass

    def reset(self):
        pass


class Linear(Layer):
    def __init__(self, d_in, d_out, rng, dtype=np.float32):
        std = (2.0 / d_in) ** 0.5
        self.w = Tensor(rng.normal(0.0, std, (d_in, d_out)), requires_grad=True, dtype=dtype)
        self.b = Tensor(np.zeros(d_out), requires_grad=True, dtype=dtype)

    def __call__(self, x):
        return T.linear(x, self.w, self.b)

    def named_parameters(self, prefix=""):
        return [(f"{prefix}.w", self.w), (f"{prefix}.b", self.b)]


class Conv2d(Layer):
    def __init__(self, c_in, c_out, kernel_size, rng, stride=1, padding=0, dtype=np.float32):
        fan_in = c_in * kernel_size * kernel_size
        std = (2.0 / fan_in) ** 0.5
        self.w = Tensor(
            rng.normal(0.0, std, (c_out, c_in, kernel_size, kernel_size)),
            requires_grad=True,
            dtype=dtype,
        )
        self.b = Tensor(np.zeros(c_out), requires_grad=True, dtype=dtype)
        self.stride = stride
        self.padding = padding

    def __call__(self, x):
        return T.conv2d(x, self.w, self.b, stride=self.stride, padding=self.padding)

    def named_parameters(self, prefix=""):
        return [(f"{prefix}.w", self.w), (f"{prefix}.b", self.b)]


class BatchNorm(Layer):
    """Batch normalization over all axes except `axis` (the channel axis)."""

    def __init__(self, channels, axis, dtype=np.float32, eps=1e-5, momentum=0.1):
        self.gamma = Tensor(np.ones(channels), requires_grad=True, dtype=dtype)
        self.beta = Tensor(np.zeros(channels), requires_grad=True, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.axis = axis
        self.eps = eps
        self.momentum = momentum
        self.training = True

    def __call__(self, x):
        axis = self.axis % x.ndim
        if self.training:
            red = tuple(i for i in range(x.ndim) if i != axis)
            mean = x.data.mean(axis=red)
            var = x.data.var(axis=red)
            m = self.momentum
            self.running_mean = ((1 - m) * self.running_mean + m * mean).astype(
                self.running_mean.dtype
            )
            self.running_var = ((1 - m) * self.running_var + m * var).astype(
                self.running_var.dtype
            )
            return T.batchnorm(
                x, self.gamma, self.beta, mean, var, axis, training=True, eps=self.eps
            )
        return T.batchnorm(
            x,
            self.gamma,
            self.beta,
            self.running_mean,
            self.running_var,
            axis,
            training=False,
            eps=self.eps,
        )

    def train(self, flag=True):
        self.training = flag

    def named_parameters(self, prefix=""):
        return [(f"{prefix}.gamma", self.gamma), (f"{prefix}.beta", self.beta)]

    def state_arrays(self, prefix=""):
        # running stats are state, not parameters; checkpointed separately
        return [
            (f"{prefix}.running_mean", self.running_mean),
            (f"{prefix}.running_var", self.running_var),
        ]


class ConvBnLif(Layer):
    """Conv3x3 -> BN -> LIF, the building unit of the tokenizer stack."""

    def __init__(self, c_in, c_out, rng, lif_cfg, dtype=np.float32):
        self.conv = Conv2d(c_in, c_out, 3, rng, stride=1, padding=1, dtype=dtype)
        self.bn = BatchNorm(c_out, axis=1, dtype=dtype)
        self.lif = LIF(lif_cfg)

    def step(self, x):
        return self.lif.step(self.bn(self.conv(x)))

    def named_parameters(self, prefix=""):
        return self.conv.named_parameters(f"{prefix}.conv") + self.bn.named_parameters(
            f"{prefix}.bn"
        )

    def train(self, flag=True):
        self.bn.train(flag)

    def reset(self):
        self.lif.reset()

    def set_smooth(self, smooth):
        self.lif.smooth = smooth
