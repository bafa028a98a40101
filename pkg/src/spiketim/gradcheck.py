"""Finite-difference validation of the backward machinery.

Four groups, all in 64-bit:

  tensor_ops     - matmul, depthwise conv1d, conv2d, batchnorm against
                   central finite differences (tolerance 1e-4)
  lif_surrogate  - exact elementwise conformance of the spike backward to
                   the triangular surrogate, plus a small LIF-MLP checked
                   through the smooth-twin network (1e-4)
  tim_recurrence - a 2-head, dim-8, T=4 attention block with the query
                   history recurrence, smooth twin (1e-3)
  end_to_end     - a micro classifier (dim 16, depth 1, T=3, 8x8 input),
                   smooth twin (1e-3)

Spiking forwards are discontinuous, so the spiking groups run the smooth
twin: the hard threshold is replaced by the antiderivative of the
surrogate and the reset gate is left differentiable. The twin shares all
other code paths, so its finite differences validate the same backward
implementations the spiking network uses.
"""

from contextlib import contextmanager

import numpy as np

from . import kernels
from . import tensor as T
from .attention import SSAConfig, SpikingSelfAttention, TIMConfig
from .errors import ConfigurationError
from .layers import BatchNorm, Linear
from .model import ModelConfig, SpikingTransformer
from .neuron import LIF, LIFConfig, spike_fn, surrogate_slope
from .tensor import Tensor, cross_entropy

H_STEP = 1e-3
# The smooth twin is piecewise quadratic; a kink inside the +-h stencil
# biases the central difference by O(h), so the spiking groups use a
# smaller step than the smooth per-op checks.
H_STEP_TWIN = 1e-5
TOL_OPS = 1e-4
TOL_E2E = 1e-3
GROUPS = ("tensor_ops", "lif_surrogate", "tim_recurrence", "end_to_end")


def _rel_err(autodiff, fdiff):
    denom = max(abs(autodiff), abs(fdiff), 1e-6)
    return abs(autodiff - fdiff) / denom


def check_params(loss_fn, params, rng, max_coords=6, h=H_STEP):
    """Compare autodiff grads of loss_fn() against central differences.

    Samples up to `max_coords` coordinates per parameter tensor. Returns
    (worst_rel_err, worst_param_name).
    """
    loss = loss_fn()
    for _, p in params:
        p.grad = None
    loss.backward()
    grads = {n: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for n, p in params}

    worst = 0.0
    worst_name = ""
    for name, p in params:
        flat = p.data.reshape(-1)
        n_coords = min(max_coords, flat.size)
        coords = rng.choice(flat.size, size=n_coords, replace=False)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            fp = float(loss_fn().data)
            flat[c] = orig - h
            fm = float(loss_fn().data)
            flat[c] = orig
            fd = (fp - fm) / (2 * h)
            err = _rel_err(float(grads[name].reshape(-1)[c]), fd)
            if err > worst:
                worst, worst_name = err, name
    return worst, worst_name


@contextmanager
def corrupted_backward(target):
    """Test hook: deliberately break one backward path while the context is open."""
    if target is None:
        yield
        return
    if target == "conv2d":
        orig = kernels.conv2d_backward

        def broken(x, w, gy, stride, pad):
            gx, gw = orig(x, w, gy, stride, pad)
            return gx * 1.01, gw

        kernels.conv2d_backward = broken
        try:
            yield
        finally:
            kernels.conv2d_backward = orig
    else:
        raise ConfigurationError(f"unknown corruption target {target!r}")


# -- groups ------------------------------------------------------------

def check_tensor_ops(seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    worst_name = ""

    def track(err, name):
        nonlocal worst, worst_name
        if err > worst:
            worst, worst_name = err, name

    a = Tensor(rng.uniform(-1, 1, (3, 4)), requires_grad=True, dtype=np.float64)
    b = Tensor(rng.uniform(-1, 1, (4, 3)), requires_grad=True, dtype=np.float64)
    mult = rng.uniform(-1, 1, (3, 3))
    track(*check_params(lambda: (T.matmul(a, b) * Tensor(mult)).sum(), [("matmul.a", a), ("matmul.b", b)], rng))

    x = Tensor(rng.uniform(-1, 1, (2, 7)), requires_grad=True, dtype=np.float64)
    k = Tensor(rng.uniform(-1, 1, (2, 3)), requires_grad=True, dtype=np.float64)
    m1 = rng.uniform(-1, 1, (2, 7))
    track(*check_params(lambda: (T.conv1d_depthwise(x, k) * Tensor(m1)).sum(), [("conv1d.x", x), ("conv1d.kernel", k)], rng))

    xc = Tensor(rng.uniform(-1, 1, (1, 2, 5, 5)), requires_grad=True, dtype=np.float64)
    wc = Tensor(rng.uniform(-1, 1, (3, 2, 3, 3)), requires_grad=True, dtype=np.float64)
    bc = Tensor(rng.uniform(-1, 1, 3), requires_grad=True, dtype=np.float64)
    m2 = rng.uniform(-1, 1, (1, 3, 5, 5))
    track(
        *check_params(
            lambda: (T.conv2d(xc, wc, bc, 1, 1) * Tensor(m2)).sum(),
            [("conv2d.x", xc), ("conv2d.w", wc), ("conv2d.b", bc)],
            rng,
        )
    )

    bn = BatchNorm(3, axis=1, dtype=np.float64)
    xb = Tensor(rng.uniform(-1, 1, (4, 3, 5)), requires_grad=True, dtype=np.float64)
    m3 = rng.uniform(-1, 1, (4, 3, 5))
    track(
        *check_params(
            lambda: (bn(xb) * Tensor(m3)).sum(),
            [("batchnorm.x", xb), ("batchnorm.gamma", bn.gamma), ("batchnorm.beta", bn.beta)],
            rng,
        )
    )
    return worst, worst_name


def check_surrogate_conformance(seed=0):
    """The spike backward must equal the triangular surrogate exactly."""
    rng = np.random.default_rng(seed)
    cfg = LIFConfig()
    v = Tensor(rng.uniform(-2, 3, 500), requires_grad=True, dtype=np.float64)
    spike_fn(v, cfg).sum().backward()
    expected = surrogate_slope(v.data, cfg.v_threshold, cfg.surrogate_a)
    return float(np.abs(v.grad - expected).max())


def check_lif_mlp(seed=0):
    """Tiny Linear-LIF-Linear net over 3 time steps, smooth twin."""
    rng = np.random.default_rng(seed)
    fc1 = Linear(4, 6, rng, dtype=np.float64)
    fc2 = Linear(6, 2, rng, dtype=np.float64)
    lif = LIF(LIFConfig(), smooth=True)
    xs = rng.uniform(-1, 1, (3, 5, 4))
    labels = np.array([0, 1, 0, 1, 1])

    def loss_fn():
        lif.reset()
        acc = None
        for t in range(3):
            h = lif.step(fc1(Tensor(xs[t])))
            out = fc2(h)
            acc = out if acc is None else acc + out
        return cross_entropy(T.mul(acc, 1 / 3.0), labels)

    params = fc1.named_parameters("fc1") + fc2.named_parameters("fc2")
    return check_params(loss_fn, params, rng, h=H_STEP_TWIN)


def check_lif_surrogate(seed=0):
    exact = check_surrogate_conformance(seed)
    worst, name = check_lif_mlp(seed)
    if exact > 0.0 and exact > worst:
        return exact, "surrogate_conformance"
    return worst, name


def check_tim_recurrence(seed=0):
    rng = np.random.default_rng(seed)
    block = SpikingSelfAttention(
        SSAConfig(embed_dim=8, num_heads=2),
        TIMConfig(alpha=0.5, mode="tim"),
        LIFConfig(),
        rng=rng,
        dtype=np.float64,
    )
    block.set_smooth(True)
    xs = rng.uniform(-1, 1, (4, 2, 5, 8))  # T=4, batch 2, 5 tokens, dim 8
    mult = rng.uniform(-1, 1, (2, 5, 8))

    def loss_fn():
        block.reset()
        acc = None
        for t in range(4):
            out = block.step(Tensor(xs[t]))
            acc = out if acc is None else acc + out
        return (acc * Tensor(mult)).mean()

    return check_params(loss_fn, block.named_parameters("attn"), rng, max_coords=4, h=H_STEP_TWIN)


def check_end_to_end(seed=0):
    cfg = ModelConfig(
        num_steps=3,
        height=8,
        width=8,
        sps_stages=2,
        embed_dim=16,
        num_heads=2,
        depth=1,
        mlp_ratio=2.0,
        num_classes=2,
        tim=TIMConfig(alpha=0.5, mode="tim"),
    )
    model = SpikingTransformer(cfg, seed=seed, dtype=np.float64)
    model.set_smooth(True)
    rng = np.random.default_rng(seed)
    frames = rng.uniform(0, 1, (2, 3, 2, 8, 8))
    labels = np.array([0, 1])

    def loss_fn():
        model.reset()
        return cross_entropy(model(frames), labels)

    return check_params(loss_fn, model.named_parameters(), rng, max_coords=3, h=H_STEP_TWIN)


def run_suite(seed=0, corrupt=None):
    """Run all four groups; returns {group: (worst_rel_err, worst_name, tol)}."""
    with corrupted_backward(corrupt):
        results = {
            "tensor_ops": (*check_tensor_ops(seed), TOL_OPS),
            "lif_surrogate": (*check_lif_surrogate(seed), TOL_OPS),
            "tim_recurrence": (*check_tim_recurrence(seed), TOL_E2E),
            "end_to_end": (*check_end_to_end(seed), TOL_E2E),
        }
    return results


def suite_passed(results):
    return all(err <= tol for err, _, tol in results.values())
