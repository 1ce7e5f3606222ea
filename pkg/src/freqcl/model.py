"""Residual backbones: the full single-branch baseline and the dual
low/high-frequency network with per-stage feature aggregation.

Also hosts the analytical counters (parameters, FLOPs, activation memory)
and the binary checkpoint format.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, replace

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError
from .nn import BatchNorm2d, Conv2d, Linear, Module, Trace, trace_add, trace_pool, trace_relu
from .tensor import Tensor, get_default_dtype
from .wavelet import FrequencyPair, PointwiseFuser, Selection, dwt2d, high_pass


class ScalingMode(str, enum.Enum):
    HALVE_BOTH = "halve_both"
    HALVE_WIDTH_ONLY = "halve_width_only"
    HALVE_DEPTH_ONLY = "halve_depth_only"
    FULL = "full"


class AggregatorVariant(str, enum.Enum):
    NO_INTEGRATION = "no_integration"
    LOW_DOMINANCE = "low_dominance"
    HIGH_DOMINANCE = "high_dominance"
    MUTUAL = "mutual"


@dataclass(frozen=True)
class BackboneConfig:
    base_width: int = 64
    blocks_per_stage: tuple = (2, 2, 2, 2)
    num_classes: int = 10
    scaling_mode: ScalingMode = ScalingMode.HALVE_BOTH
    in_channels: int = 3

    def __post_init__(self):
        object.__setattr__(self, "blocks_per_stage", tuple(int(b) for b in self.blocks_per_stage))
        object.__setattr__(self, "scaling_mode", ScalingMode(self.scaling_mode))
        if self.base_width < 1:
            raise ConfigError("must be >= 1", key="backbone.base_width")
        if len(self.blocks_per_stage) != 4 or min(self.blocks_per_stage) < 1:
            raise ConfigError("needs 4 entries, each >= 1", key="backbone.blocks_per_stage")
        if self.num_classes < 2:
            raise ConfigError("must be >= 2", key="backbone.num_classes")

    def branch_shape(self):
        """Width and blocks per stage of one branch under ``scaling_mode``."""
        width, blocks = self.base_width, self.blocks_per_stage
        halved_width = max(1, width // 2)
        halved_blocks = tuple(max(1, b // 2) for b in blocks)
        return {
            ScalingMode.FULL: (width, blocks),
            ScalingMode.HALVE_BOTH: (halved_width, halved_blocks),
            ScalingMode.HALVE_WIDTH_ONLY: (halved_width, blocks),
            ScalingMode.HALVE_DEPTH_ONLY: (width, halved_blocks),
        }[self.scaling_mode]


class BasicBlock(Module):
    def __init__(self, in_channels, out_channels, stride, rng):
        self.conv1 = Conv2d(in_channels, out_channels, 3, stride, 1, rng=rng)
        self.bn1 = BatchNorm2d(out_channels)
        self.conv2 = Conv2d(out_channels, out_channels, 3, 1, 1, rng=rng)
        self.bn2 = BatchNorm2d(out_channels)
        if stride != 1 or in_channels != out_channels:
            self.shortcut = [Conv2d(in_channels, out_channels, 1, stride, 0, rng=rng), BatchNorm2d(out_channels)]
        else:
            self.shortcut = []

    def forward(self, x):
        out = ops.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        skip = x
        for layer in self.shortcut:
            skip = layer(skip)
        return ops.relu(out + skip)

    def trace(self, shape, tr):
        out = self.bn1.trace(self.conv1.trace(shape, tr), tr)
        out = trace_relu(out, tr)
        out = self.bn2.trace(self.conv2.trace(out, tr), tr)
        skip = shape
        for layer in self.shortcut:
            skip = layer.trace(skip, tr)
        assert skip == out
        return trace_relu(trace_add(out, tr), tr)


class ResidualBranch(Module):
    """3x3 stem followed by four stages of basic blocks; stride-2 entry into
    stages 2-4."""

    def __init__(self, in_channels, width, blocks_per_stage, rng):
        self.stem_conv = Conv2d(in_channels, width, 3, 1, 1, rng=rng)
        self.stem_bn = BatchNorm2d(width)
        self.stages = []
        channels = width
        for i, n_blocks in enumerate(blocks_per_stage):
            out = width * 2 ** i
            stride = 1 if i == 0 else 2
            blocks = []
            for b in range(n_blocks):
                blocks.append(BasicBlock(channels, out, stride if b == 0 else 1, rng))
                channels = out
            self.stages.append(_Stage(blocks))
        self.out_channels = channels

    def stem(self, x):
        return ops.relu(self.stem_bn(self.stem_conv(x)))

    def stage(self, i, x):
        return self.stages[i](x)

    def forward(self, x):
        x = self.stem(x)
        for stage in self.stages:
            x = stage(x)
        return x

    def trace_stem(self, shape, tr):
        return trace_relu(self.stem_bn.trace(self.stem_conv.trace(shape, tr), tr), tr)

    def trace(self, shape, tr):
        shape = self.trace_stem(shape, tr)
        for stage in self.stages:
            shape = stage.trace(shape, tr)
        return shape


class _Stage(Module):
    def __init__(self, blocks):
        self.blocks = blocks

    def forward(self, x):
        for block in self.blocks:
            x = block(x)
        return x

    def trace(self, shape, tr):
        for block in self.blocks:
            shape = block.trace(shape, tr)
        return shape


class ResNet(Module):
    """Single-branch baseline classifier on full-resolution images."""

    def __init__(self, config, rng=None):
        rng = np.random.default_rng(rng)
        self.config = config
        width, blocks = config.branch_shape()
        self.backbone = ResidualBranch(config.in_channels, width, blocks, rng)
        self.classifier = Linear(self.backbone.out_channels, config.num_classes, rng=rng)

    def forward(self, x):
        return self.classifier(ops.global_avg_pool(self.backbone(x)))

    def trace(self, shape, tr):
        shape = self.backbone.trace(tuple(shape), tr)
        return self.classifier.trace(trace_pool(shape, tr), tr)


def aggregate(x_l, x_h, variant):
    """Exchange features between the two branches by addition."""
    variant = AggregatorVariant(variant)
    if x_l.shape != x_h.shape:
        raise ShapeError(f"aggregate: branch features {x_l.shape} and {x_h.shape} differ")
    if variant is AggregatorVariant.NO_INTEGRATION:
        return x_l, x_h
    mixed = x_l + x_h
    if variant is AggregatorVariant.MUTUAL:
        return mixed, mixed
    if variant is AggregatorVariant.LOW_DOMINANCE:
        return x_l, mixed
    return mixed, x_h


@dataclass(frozen=True)
class Aggregator:
    variant: AggregatorVariant

    def __call__(self, x_l, x_h):
        return aggregate(x_l, x_h, self.variant)

    def trace(self, shape, tr):
        if self.variant is not AggregatorVariant.NO_INTEGRATION:
            trace_add(shape, tr)


class DualNet(Module):
    """Low- and high-frequency branches coupled by per-stage aggregators.

    ``aggregators[i]`` runs after the blocks of stage ``i`` and before the
    strided entry of stage ``i + 1``; the last one feeds the pooled heads.
    """

    def __init__(self, config, variant=AggregatorVariant.MUTUAL, selection=Selection.FUSE_NO_LL, rng=None):
        if config.scaling_mode is ScalingMode.FULL:
            raise ConfigError("the dual network needs a reduced scaling mode", key="backbone.scaling_mode")
        rng = np.random.default_rng(rng)
        self.config = config
        self.variant = AggregatorVariant(variant)
        self.selection = Selection(selection)
        width, blocks = config.branch_shape()
        self.fuser = PointwiseFuser(config.in_channels, self.selection, rng=rng)
        self.l_net = ResidualBranch(config.in_channels, width, blocks, rng)
        self.h_net = ResidualBranch(config.in_channels, width, blocks, rng)
        self.aggregators = tuple(Aggregator(self.variant) for _ in blocks)
        self.classifier = Linear(2 * self.l_net.out_channels, config.num_classes, rng=rng)

    @property
    def num_classes(self):
        return self.config.num_classes

    def frequency_pair(self, images):
        """Decompose an NCHW image batch into network inputs (fuser applied)."""
        quad = dwt2d(images)
        return FrequencyPair(Tensor(quad.ll), high_pass(quad, self.fuser))

    def forward(self, pair, return_features=False):
        x_l = self.l_net.stem(pair.low)
        x_h = self.h_net.stem(pair.high)
        features = []
        for i, agg in enumerate(self.aggregators):
            x_l = self.l_net.stage(i, x_l)
            x_h = self.h_net.stage(i, x_h)
            x_l, x_h = agg(x_l, x_h)
            features.append((x_l, x_h))
        pooled = ops.concat_channels([ops.global_avg_pool(x_l), ops.global_avg_pool(x_h)])
        logits = self.classifier(pooled)
        if return_features:
            return logits, features
        return logits

    def trace(self, shape, tr):
        c, h, w = shape
        if h % 2 or w % 2:
            raise ShapeError("dual network needs even image dimensions")
        half = (c, h // 2, w // 2)
        # 4 bands, each output coefficient: 4 taps -> 3 adds + 1 scale
        for _ in range(4):
            tr.add("dwt", half, 0, 4 * int(np.prod(half)))
        fused_in = (self.fuser.in_channels, h // 2, w // 2)
        high = self.fuser.trace(fused_in, tr)
        low = self.l_net.trace_stem(half, tr)
        high = self.h_net.trace_stem(high, tr)
        for i, agg in enumerate(self.aggregators):
            low = self.l_net.stages[i].trace(low, tr)
            high = self.h_net.stages[i].trace(high, tr)
            agg.trace(low, tr)
        pooled = trace_pool(low, tr)[0] + trace_pool(high, tr)[0]
        return self.classifier.trace((pooled,), tr)


def build_baseline(config=None, rng=None, **overrides):
    config = replace(config or BackboneConfig(), scaling_mode=ScalingMode.FULL, **overrides)
    return ResNet(config, rng=rng)


def build_dual_net(config=None, variant=AggregatorVariant.MUTUAL, selection=Selection.FUSE_NO_LL, rng=None):
    return DualNet(config or BackboneConfig(), variant, selection, rng=rng)


# counters

def param_count(net):
    return int(net.num_parameters())


def backbone_param_count(net):
    """All learnable scalars except the final classifier."""
    return param_count(net) - int(net.classifier.num_parameters())


def trace(net, input_shape):
    tr = Trace()
    net.trace(tuple(input_shape), tr)
    return tr


def flops_forward(net, input_shape):
    """Per-sample forward FLOPs for a source image of ``input_shape`` (C, H, W)."""
    return trace(net, input_shape).flops


def flops_train(net, input_shape, samples):
    """Training FLOPs: forward, input-gradient and weight-gradient passes."""
    return 3 * flops_forward(net, input_shape) * int(samples)


def estimate_activation_memory(net, input_shape, batch, itemsize=None):
    """Bytes of activations held for the backward pass of one training step."""
    if itemsize is None:
        itemsize = np.dtype(get_default_dtype()).itemsize
    elements = trace(net, input_shape).activation_elements + int(np.prod(input_shape))
    return int(elements) * int(batch) * int(itemsize)


# checkpoints

CHECKPOINT_MAGIC = b"FQCK"
CHECKPOINT_VERSION = 1


def model_config_text(net):
    cfg = net.config
    lines = [
        f"kind = {'dual' if isinstance(net, DualNet) else 'baseline'}",
        f"base_width = {cfg.base_width}",
        f"blocks_per_stage = {','.join(str(b) for b in cfg.blocks_per_stage)}",
        f"num_classes = {cfg.num_classes}",
        f"scaling_mode = {cfg.scaling_mode.value}",
        f"in_channels = {cfg.in_channels}",
    ]
    if isinstance(net, DualNet):
        lines += [f"variant = {net.variant.value}", f"selection = {net.selection.value}"]
    return "\n".join(lines) + "\n"


def _parse_model_config(text):
    fields = dict(line.split(" = ", 1) for line in text.strip().splitlines())
    cfg = BackboneConfig(
        base_width=int(fields["base_width"]),
        blocks_per_stage=tuple(int(b) for b in fields["blocks_per_stage"].split(",")),
        num_classes=int(fields["num_classes"]),
        scaling_mode=ScalingMode(fields["scaling_mode"]),
        in_channels=int(fields["in_channels"]),
    )
    if fields["kind"] == "dual":
        return DualNet(cfg, fields["variant"], fields["selection"], rng=0)
    return ResNet(cfg, rng=0)


def save_checkpoint(net, path):
    """Header, config text, then parameters and running statistics as
    little-endian float32 in construction order."""
    blob = model_config_text(net).encode("utf-8")
    values = np.concatenate([a.ravel() for a in net.state_arrays()]).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<Q", values.size))
        fh.write(values.tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, blob_len = struct.unpack_from("<II", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    offset = 12
    text = raw[offset:offset + blob_len].decode("utf-8")
    offset += blob_len
    (count,) = struct.unpack_from("<Q", raw, offset)
    offset += 8
    values = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
    net = _parse_model_config(text)
    targets = net.state_arrays()
    if sum(t.size for t in targets) != count:
        raise ValueError(f"{path}: value count {count} does not match the encoded architecture")
    pos = 0
    for t in targets:
        t[...] = values[pos:pos + t.size].reshape(t.shape)
        pos += t.size
    return net


__all__ = [
    "AggregatorVariant",
    "BackboneConfig",
    "DualNet",
    "ResNet",
    "ScalingMode",
    "aggregate",
    "backbone_param_count",
    "build_baseline",
    "build_dual_net",
    "estimate_activation_memory",
    "flops_forward",
    "flops_train",
    "load_checkpoint",
    "param_count",
    "save_checkpoint",
    "trace",
]
