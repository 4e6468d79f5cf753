"""Six-block convolutional backbone with an upsampling classifier head.

Stride-1 layers default to 3x3/pad 1; stride-2 layers to 4x4/pad 1 so that
even feature maps halve exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from . import ops
from .tensor import ShapeError, Tensor

NUM_BLOCKS = 6
ALLOWED_STRIDES = (8, 16, 32)


@dataclass(frozen=True)
class ConvLayer:
    in_channels: int
    out_channels: int
    stride: int = 1
    kernel: Optional[int] = None

    def __post_init__(self):
        k = self.kernel_size
        if k < self.stride or (k - self.stride) % 2:
            raise ValueError(f"kernel {k} with stride {self.stride} cannot divide maps exactly")

    @property
    def kernel_size(self) -> int:
        if self.kernel is not None:
            return self.kernel
        return 3 if self.stride == 1 else 4

    @property
    def pad(self) -> int:
        return (self.kernel_size - self.stride) // 2


@dataclass(frozen=True)
class BlockSpec:
    index: int
    layers: Tuple[ConvLayer, ...]
    residual: bool = False

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise ValueError(f"block {self.index} has no conv layers")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_channels != b.in_channels:
                raise ValueError(
                    f"block {self.index}: layer channels do not chain ({a.out_channels} -> {b.in_channels})"
                )
        for layer in self.layers:
            if layer.stride not in (1, 2):
                raise ValueError(f"block {self.index}: stride {layer.stride} not in {{1, 2}}")
            if layer.in_channels < 1 or layer.out_channels < 1:
                raise ValueError(f"block {self.index}: channel counts must be >= 1")
        if self.residual and (self.in_channels != self.out_channels or self.stride != 1):
            raise ValueError(
                f"block {self.index}: identity-add needs equal in/out channels and stride 1"
            )

    @property
    def in_channels(self) -> int:
        return self.layers[0].in_channels

    @property
    def out_channels(self) -> int:
        return self.layers[-1].out_channels

    @property
    def stride(self) -> int:
        s = 1
        for layer in self.layers:
            s *= layer.stride
        return s

    @property
    def num_layers(self) -> int:
        return len(self.layers)


@dataclass(frozen=True)
class BackboneSpec:
    blocks: Tuple[BlockSpec, ...]
    num_classes: int
    stride: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        if len(self.blocks) != NUM_BLOCKS:
            raise ValueError(f"backbone needs exactly {NUM_BLOCKS} blocks, got {len(self.blocks)}")
        for i, block in enumerate(self.blocks, start=1):
            if block.index != i:
                raise ValueError(f"block at position {i} carries index {block.index}")
        for prev, nxt in zip(self.blocks, self.blocks[1:]):
            if prev.out_channels != nxt.in_channels:
                raise ValueError(
                    f"block {nxt.index} takes {nxt.in_channels} channels but block "
                    f"{prev.index} produces {prev.out_channels}"
                )
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        overall = self.overall_stride
        if overall not in ALLOWED_STRIDES:
            raise ValueError(f"overall stride {overall} not in {ALLOWED_STRIDES}")
        if self.stride is not None and self.stride != overall:
            raise ValueError(f"declared stride {self.stride} but blocks give {overall}")

    @property
    def in_channels(self) -> int:
        return self.blocks[0].in_channels

    @property
    def overall_stride(self) -> int:
        s = 1
        for block in self.blocks:
            s *= block.stride
        return s

    @property
    def num_layers(self) -> int:
        return sum(b.num_layers for b in self.blocks)

    def block(self, index: int) -> BlockSpec:
        return self.blocks[index - 1]


def _block(index, pairs, residual=False):
    return BlockSpec(index, tuple(ConvLayer(*p) for p in pairs), residual)


def desk_backbone(num_classes: int = 5, in_channels: int = 3) -> BackboneSpec:
    """Default stride-8 backbone: 12 conv layers, two per block."""
    return BackboneSpec(
        blocks=(
            _block(1, [(in_channels, 16, 2), (16, 16, 1)]),
            _block(2, [(16, 32, 2), (32, 32, 1)]),
            _block(3, [(32, 64, 2), (64, 64, 1)]),
            _block(4, [(64, 96, 1), (96, 96, 1)]),
            _block(5, [(96, 128, 1), (128, 128, 1)]),
            _block(6, [(128, 128, 1), (128, 128, 1)]),
        ),
        num_classes=num_classes,
        stride=8,
    )


def desk_backbone_32s(num_classes: int = 5, in_channels: int = 3) -> BackboneSpec:
    """Stride-32 variant (FCN-32s analogue); blocks 4 and 5 also downsample."""
    return BackboneSpec(
        blocks=(
            _block(1, [(in_channels, 16, 2), (16, 16, 1)]),
            _block(2, [(16, 32, 2), (32, 32, 1)]),
            _block(3, [(32, 64, 2), (64, 64, 1)]),
            _block(4, [(64, 96, 2), (96, 96, 1)]),
            _block(5, [(96, 128, 2), (128, 128, 1)]),
            _block(6, [(128, 128, 1), (128, 128, 1)]),
        ),
        num_classes=num_classes,
        stride=32,
    )


PRESETS = {"desk8": desk_backbone, "desk32": desk_backbone_32s}


def param_name(block: int, layer: int, kind: str) -> str:
    return f"block{block}.conv{layer}.{kind}"


def _uniform_kernel(rng, shape) -> np.ndarray:
    fan_in = shape[1] * shape[2] * shape[3]
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(spec: BackboneSpec, seed: int = 0) -> Dict[str, Tensor]:
    """Fan-in uniform kernels (variance 2/fan_in), zero biases."""
    rng = np.random.default_rng(seed)
    params: Dict[str, Tensor] = {}
    for block in spec.blocks:
        for li, layer in enumerate(block.layers, start=1):
            k = layer.kernel_size
            shape = (layer.out_channels, layer.in_channels, k, k)
            params[param_name(block.index, li, "weight")] = Tensor(
                _uniform_kernel(rng, shape), name=param_name(block.index, li, "weight")
            )
            params[param_name(block.index, li, "bias")] = Tensor(
                np.zeros(layer.out_channels), name=param_name(block.index, li, "bias")
            )
    last = spec.blocks[-1].out_channels
    params["head.weight"] = Tensor(
        _uniform_kernel(rng, (spec.num_classes, last, 1, 1)), name="head.weight"
    )
    params["head.bias"] = Tensor(np.zeros(spec.num_classes), name="head.bias")
    return params


def block_forward(
    spec: BlockSpec,
    x: Tensor,
    params: Dict[str, Tensor],
    layers: Optional[Tuple[int, int]] = None,
) -> Tensor:
    """Run conv+relu layers ``layers[0]:layers[1]`` of the block (all by default)."""
    start, stop = (0, spec.num_layers) if layers is None else layers
    first = spec.layers[start]
    if x.ndim != 4 or x.shape[1] != first.in_channels:
        raise ShapeError(
            f"block {spec.index} layer {start + 1} expects {first.in_channels} input channels, "
            f"got shape {x.shape}"
        )
    if spec.residual and (start, stop) != (0, spec.num_layers):
        raise ValueError(f"block {spec.index}: identity-add block cannot run partially")
    y = x
    for li in range(start, stop):
        layer = spec.layers[li]
        y = ops.relu(
            ops.conv2d(
                y,
                params[param_name(spec.index, li + 1, "weight")],
                params[param_name(spec.index, li + 1, "bias")],
                stride=layer.stride,
                pad=layer.pad,
            )
        )
    if spec.residual:
        y = ops.add(y, x)
    return y


def head_forward(spec: BackboneSpec, feature: Tensor, params: Dict[str, Tensor], size) -> Tensor:
    logits = ops.conv2d(feature, params["head.weight"], params["head.bias"], stride=1, pad=0)
    return ops.bilinear_upsample(logits, size[0], size[1])


@dataclass
class ForwardResult:
    logits: Tensor
    block_outputs: Dict[int, Tensor] = field(default_factory=dict)


def network_forward(spec: BackboneSpec, image: Tensor, params: Dict[str, Tensor]) -> ForwardResult:
    """Plain feed-forward pass: blocks 1..6, then the head."""
    if image.ndim != 4 or image.shape[1] != spec.in_channels:
        raise ShapeError(f"image must be (n, {spec.in_channels}, h, w), got {image.shape}")
    outputs = {}
    y = image
    for block in spec.blocks:
        y = block_forward(block, y, params)
        outputs[block.index] = y
    logits = head_forward(spec, y, params, image.shape[2:])
    return ForwardResult(logits, outputs)
