"""The full spiking-transformer classifier and its checkpoint format.

Pipeline: a convolutional tokenizer (Conv-BN-LIF-MaxPool stages plus a
final residual Conv-BN-LIF refinement), a stack of encoder blocks
(spiking attention + Conv-BN-LIF style MLP, both with residuals), and a
linear head over features averaged across tokens and time steps.
"""

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .attention import SSAConfig, SpikingSelfAttention, TIMConfig
from .errors import ConfigurationError, ContractError, FormatError
from .layers import BatchNorm, ConvBnLif, Layer, Linear
from .neuron import LIF, LIFConfig
from .tensor import Tensor, tensor_from_bytes, tensor_to_bytes

CHECKPOINT_MAGIC = b"STIM"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    num_steps: int = 10
    height: int = 64
    width: int = 64
    in_channels: int = 2
    sps_stages: int = 4
    embed_dim: int = 256
    num_heads: int = 16
    depth: int = 2
    mlp_ratio: float = 4.0
    num_classes: int = 10
    attn_scale: float = 0.125
    tim: TIMConfig = field(default_factory=TIMConfig)
    lif: LIFConfig = field(default_factory=LIFConfig)

    def __post_init__(self):
        if isinstance(self.tim, dict):
            self.tim = TIMConfig(**self.tim)
        if isinstance(self.lif, dict):
            self.lif = LIFConfig(**self.lif)
        f = 2**self.sps_stages
        if self.height % f or self.width % f:
            raise ConfigurationError(
                f"spatial extents {self.height}x{self.width} not divisible by 2^{self.sps_stages}"
            )
        if self.embed_dim % self.num_heads:
            raise ConfigurationError(
                f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}"
            )
        if self.num_steps < 1:
            raise ConfigurationError("num_steps must be >= 1")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def canonical_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def sps_channel_schedule(cfg):
    """Doubling channel widths ending at embed_dim."""
    return [max(1, cfg.embed_dim >> (cfg.sps_stages - 1 - i)) for i in range(cfg.sps_stages)]


class PatchSplitter(Layer):
    """Tokenizer: per stage Conv3x3 -> BN -> LIF -> MaxPool2, then a residual
    Conv-BN-LIF refinement at full embedding width; spikes out."""

    def __init__(self, cfg, rng, dtype=np.float32):
        chans = sps_channel_schedule(cfg)
        self.stages = []
        c_in = cfg.in_channels
        for c_out in chans:
            self.stages.append(ConvBnLif(c_in, c_out, rng, cfg.lif, dtype=dtype))
            c_in = c_out
        self.refine = ConvBnLif(cfg.embed_dim, cfg.embed_dim, rng, cfg.lif, dtype=dtype)

    def step(self, x):
        for stage in self.stages:
            x = T.maxpool2x2(stage.step(x))
        # pre-activation residual: the LIF stays terminal, so tokens are binary
        x = self.refine.lif.step(self.refine.bn(self.refine.conv(x)) + x)
        b, c, h, w = x.shape
        return T.transpose(T.reshape(x, (b, c, h * w)), (0, 2, 1))  # (B, N, C)

    def named_parameters(self, prefix=""):
        params = []
        for i, stage in enumerate(self.stages):
            params.extend(stage.named_parameters(f"{prefix}.stage{i}"))
        params.extend(self.refine.named_parameters(f"{prefix}.refine"))
        return params

    def train(self, flag=True):
        for stage in self.stages:
            stage.train(flag)
        self.refine.train(flag)

    def reset(self):
        for stage in self.stages:
            stage.reset()
        self.refine.reset()

    def set_smooth(self, smooth):
        for stage in self.stages:
            stage.set_smooth(smooth)
        self.refine.set_smooth(smooth)


class MLPBlock(Layer):
    """Two Linear-BN-LIF units with a residual add after the second LIF."""

    def __init__(self, dim, hidden, rng, lif_cfg, dtype=np.float32):
        self.fc1 = Linear(dim, hidden, rng, dtype=dtype)
        self.bn1 = BatchNorm(hidden, axis=-1, dtype=dtype)
        self.lif1 = LIF(lif_cfg)
        self.fc2 = Linear(hidden, dim, rng, dtype=dtype)
        self.bn2 = BatchNorm(dim, axis=-1, dtype=dtype)
        self.lif2 = LIF(lif_cfg)

    def step(self, x):
        h = self.lif1.step(self.bn1(self.fc1(x)))
        return self.lif2.step(self.bn2(self.fc2(h))) + x

    def named_parameters(self, prefix=""):
        params = []
        for name, sub in (("fc1", self.fc1), ("bn1", self.bn1), ("fc2", self.fc2), ("bn2", self.bn2)):
            params.extend(sub.named_parameters(f"{prefix}.{name}"))
        return params

    def train(self, flag=True):
        self.bn1.train(flag)
        self.bn2.train(flag)

    def reset(self):
        self.lif1.reset()
        self.lif2.reset()

    def set_smooth(self, smooth):
        self.lif1.smooth = smooth
        self.lif2.smooth = smooth


class EncoderBlock(Layer):
    def __init__(self, cfg, rng, dtype=np.float32):
        ssa = SSAConfig(cfg.embed_dim, cfg.num_heads, scale=cfg.attn_scale)
        self.attn = SpikingSelfAttention(ssa, cfg.tim, cfg.lif, rng, dtype=dtype)
        self.mlp = MLPBlock(cfg.embed_dim, int(cfg.embed_dim * cfg.mlp_ratio), rng, cfg.lif, dtype=dtype)

    def step(self, x):
        return self.mlp.step(self.attn.step(x))

    def named_parameters(self, prefix=""):
        return self.attn.named_parameters(f"{prefix}.attn") + self.mlp.named_parameters(
            f"{prefix}.mlp"
        )

    def train(self, flag=True):
        self.attn.train(flag)
        self.mlp.train(flag)

    def reset(self):
        self.attn.reset()
        self.mlp.reset()

    def set_smooth(self, smooth):
        self.attn.set_smooth(smooth)
        self.mlp.set_smooth(smooth)


class SpikingTransformer(Layer):
    def __init__(self, cfg, seed=0, dtype=np.float32):
        self.cfg = cfg
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(7,)))
        self.sps = PatchSplitter(cfg, rng, dtype=dtype)
        self.blocks = [EncoderBlock(cfg, rng, dtype=dtype) for _ in range(cfg.depth)]
        self.head = Linear(cfg.embed_dim, cfg.num_classes, rng, dtype=dtype)
        self._needs_reset = False

    # -- plumbing ------------------------------------------------------
    def named_parameters(self, prefix="model"):
        params = self.sps.named_parameters(f"{prefix}.sps")
        for i, blk in enumerate(self.blocks):
            params.extend(blk.named_parameters(f"{prefix}.block{i}"))
        params.extend(self.head.named_parameters(f"{prefix}.head"))
        return params

    def _iter_batchnorms(self):
        def stage_bns(prefix, cbl):
            yield f"{prefix}.bn", cbl.bn

        for i, st in enumerate(self.sps.stages):
            yield from stage_bns(f"sps.stage{i}", st)
        yield from stage_bns("sps.refine", self.sps.refine)
        for i, blk in enumerate(self.blocks):
            a = blk.attn
            for nm, bn in (
                ("q_bn", a.q_bn),
                ("k_bn", a.k_bn),
                ("v_bn", a.v_bn),
                ("out_bn", a.out_bn),
            ):
                yield f"block{i}.attn.{nm}", bn
            yield f"block{i}.mlp.bn1", blk.mlp.bn1
            yield f"block{i}.mlp.bn2", blk.mlp.bn2

    def train(self, flag=True):
        self.sps.train(flag)
        for blk in self.blocks:
            blk.train(flag)

    def reset(self):
        self.sps.reset()
        for blk in self.blocks:
            blk.reset()
        self._needs_reset = False

    def set_smooth(self, smooth):
        self.sps.set_smooth(smooth)
        for blk in self.blocks:
            blk.set_smooth(smooth)

    # -- forward -------------------------------------------------------
    def forward(self, frames):
        """frames: ndarray (B, T, 2, H, W) or (T, 2, H, W) -> logits Tensor."""
        if self._needs_reset:
            raise ContractError("model state not reset since the previous forward")
        arr = np.asarray(frames)
        batched = arr.ndim == 5
        if not batched:
            arr = arr[None]
        b, t = arr.shape[:2]
        if t != self.cfg.num_steps:
            raise ConfigurationError(
                f"input has {t} time steps, model expects {self.cfg.num_steps}"
            )
        dtype = self.head.w.dtype
        feat = None
        for step in range(t):
            x = Tensor(arr[:, step], dtype=dtype)
            tokens = self.sps.step(x)
            for blk in self.blocks:
                tokens = blk.step(tokens)
            step_feat = tokens.mean(axis=1)  # (B, D)
            feat = step_feat if feat is None else feat + step_feat
        feat = T.mul(feat, 1.0 / t)
        self._needs_reset = True
        logits = self.head(feat)
        return logits if batched else T.reshape(logits, (self.cfg.num_classes,))

    __call__ = forward


def count_parameters(cfg_or_model):
    model = (
        cfg_or_model
        if isinstance(cfg_or_model, SpikingTransformer)
        else SpikingTransformer(cfg_or_model)
    )
    return sum(t.size for _, t in model.named_parameters())


# -- checkpointing -----------------------------------------------------

def save_checkpoint(path, model, optimizer=None, epoch=0, seed=0):
    """Binary layout: magic, version u16, length-prefixed canonical JSON
    metadata, then tensors (params, BN running stats, optimizer moments)
    in the path-name order recorded in the metadata."""
    params = model.named_parameters()
    bn_state = []
    for name, bn in model._iter_batchnorms():
        bn_state.append((f"bnstate.{name}.running_mean", bn.running_mean))
        bn_state.append((f"bnstate.{name}.running_var", bn.running_var))
    opt_state = optimizer.state_tensors() if optimizer is not None else []

    meta = {
        "config": model.cfg.to_dict(),
        "epoch": int(epoch),
        "seed": int(seed),
        "opt_step": int(optimizer.step_count) if optimizer is not None else 0,
        "params": [n for n, _ in params],
        "bn_state": [n for n, _ in bn_state],
        "opt_state": [n for n, _ in opt_state],
    }
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<H", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, t in params:
            fh.write(tensor_to_bytes(t))
        for _, arr in bn_state:
            fh.write(tensor_to_bytes(arr))
        for _, t in opt_state:
            fh.write(tensor_to_bytes(t))


def read_checkpoint_meta(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic {buf[:4]!r}", 0)
    (version,) = struct.unpack_from("<H", buf, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    (blob_len,) = struct.unpack_from("<I", buf, 6)
    try:
        meta = json.loads(buf[10 : 10 + blob_len])
    except json.JSONDecodeError as e:
        raise FormatError(f"corrupt checkpoint metadata: {e}", 10) from None
    return meta, buf, 10 + blob_len


def load_checkpoint(path, model, optimizer=None):
    """Restore parameters (and optimizer state) in place; returns (epoch, seed).

    The stored config must match the model's config exactly.
    """
    meta, buf, offset = read_checkpoint_meta(path)
    if meta["config"] != model.cfg.to_dict():
        raise FormatError(
            "checkpoint config does not match model config: "
            f"{meta['config']} vs {model.cfg.to_dict()}"
        )
    params = dict(model.named_parameters())
    if meta["params"] != list(params):
        raise FormatError("checkpoint parameter names do not match the model")
    for name in meta["params"]:
        arr, offset = tensor_from_bytes(buf, offset)
        if arr.shape != params[name].shape:
            raise FormatError(f"shape mismatch for {name}", offset)
        params[name].data = arr.astype(params[name].dtype)
        params[name].grad = None
    bns = dict(model._iter_batchnorms())
    for name in meta["bn_state"]:
        arr, offset = tensor_from_bytes(buf, offset)
        bn_name, kind = name[len("bnstate."):].rsplit(".", 1)
        bn = bns[bn_name]
        setattr(bn, kind, arr.astype(getattr(bn, kind).dtype))
    if optimizer is not None:
        slots = dict(optimizer.state_tensors())
        if meta["opt_state"] != list(slots):
            raise FormatError("checkpoint optimizer state does not match")
        for name in meta["opt_state"]:
            arr, offset = tensor_from_bytes(buf, offset)
            slots[name].data = arr.astype(slots[name].dtype)
        optimizer.step_count = meta["opt_step"]
    return meta["epoch"], meta["seed"]
