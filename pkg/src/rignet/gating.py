"""Top-down feedback gates.

A gate turns a block's output into a modulation map for that block's
input: optional 2x2 pooling, a 3x3 convolution down to the input's channel
count, a squashing nonlinearity, bilinear resizing back to the input's
spatial size, then an element-wise combination.

The multi-range variant also takes the final block's output, adapts it with
a 1x1 convolution, resizes it to the short-range source and concatenates the
two before the same pipeline.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from . import ops
from .tensor import ShapeError, Tensor

INTERACTIONS = ("mul_sigmoid", "mul_tanh", "add_relu")
POOLINGS = ("none", "max", "avg")
POOL_WINDOW = 2


@dataclass
class GateParams:
    weight: Tensor
    bias: Tensor
    interaction: str = "mul_sigmoid"
    pooling: str = "avg"
    adapter_weight: Optional[Tensor] = None
    adapter_bias: Optional[Tensor] = None

    def __post_init__(self):
        if self.interaction not in INTERACTIONS:
            raise ValueError(f"unknown interaction {self.interaction!r}; expected one of {INTERACTIONS}")
        if self.pooling not in POOLINGS:
            raise ValueError(f"unknown pooling {self.pooling!r}; expected one of {POOLINGS}")
        if (self.adapter_weight is None) != (self.adapter_bias is None):
            raise ValueError("adapter weight and bias must be given together")

    @property
    def multirange(self) -> bool:
        return self.adapter_weight is not None

    @property
    def c_tgt(self) -> int:
        return self.weight.shape[0]

    @property
    def c_src(self) -> int:
        """Channels of the short-range source."""
        c = self.weight.shape[1]
        return c // 2 if self.multirange else c

    def tensors(self) -> Dict[str, Tensor]:
        out = {"weight": self.weight, "bias": self.bias}
        if self.multirange:
            out["adapter.weight"] = self.adapter_weight
            out["adapter.bias"] = self.adapter_bias
        return out


def init_gate(
    c_src: int,
    c_tgt: int,
    interaction: str = "mul_sigmoid",
    pooling: str = "avg",
    multirange: bool = False,
    seed: int = 0,
    c_long: Optional[int] = None,
) -> GateParams:
    """Fresh gate with fan-in uniform kernels and zero biases.

    ``c_long`` is the channel count of the long-range source (defaults to
    ``c_src``); it is only used when ``multirange`` is set.
    """
    rng = np.random.default_rng(seed)
    c_in = 2 * c_src if multirange else c_src
    bound = np.sqrt(6.0 / (c_in * 9))
    weight = Tensor(rng.uniform(-bound, bound, size=(c_tgt, c_in, 3, 3)))
    bias = Tensor(np.zeros(c_tgt))
    aw = ab = None
    if multirange:
        c_long = c_src if c_long is None else c_long
        abound = np.sqrt(6.0 / c_long)
        aw = Tensor(rng.uniform(-abound, abound, size=(c_src, c_long, 1, 1)))
        ab = Tensor(np.zeros(c_src))
    return GateParams(weight, bias, interaction, pooling, aw, ab)


def _modulate(source: Tensor, block_input: Tensor, g: GateParams) -> Tensor:
    if source.shape[1] != g.weight.shape[1]:
        raise ShapeError(
            f"gate kernel expects {g.weight.shape[1]} source channels, got {source.shape[1]}"
        )
    if block_input.ndim != 4 or block_input.shape[1] != g.c_tgt:
        raise ShapeError(
            f"gate produces {g.c_tgt} channels but block input has shape {block_input.shape}"
        )
    m = source
    if g.pooling != "none":
        m = ops.pool2d(m, g.pooling, POOL_WINDOW, POOL_WINDOW)
    m = ops.conv2d(m, g.weight, g.bias, stride=1, pad=1)
    if g.interaction == "mul_sigmoid":
        m = ops.sigmoid(m)
    elif g.interaction == "mul_tanh":
        m = ops.tanh(m)
    m = ops.bilinear_upsample(m, block_input.shape[2], block_input.shape[3])
    if g.interaction == "add_relu":
        return ops.relu(ops.add(block_input, m))
    return ops.mul(m, block_input)


def gate_forward(f_out: Tensor, block_input: Tensor, g: GateParams) -> Tensor:
    """Gate ``block_input`` with a map computed from the block output ``f_out``."""
    if g.multirange:
        raise ValueError("multi-range gate needs the long-range source; use multirange_gate_forward")
    return _modulate(f_out, block_input, g)


def long_range_feature(f_out: Tensor, f_c: Tensor, g: GateParams) -> Tensor:
    """Adapt ``f_c`` to ``f_out``'s channels and size, then concatenate after ``f_out``."""
    if f_c.shape[1] != g.adapter_weight.shape[1]:
        raise ShapeError(
            f"long-range adapter expects {g.adapter_weight.shape[1]} channels, got {f_c.shape[1]}"
        )
    lr = ops.conv2d(f_c, g.adapter_weight, g.adapter_bias, stride=1, pad=0)
    lr = ops.bilinear_upsample(lr, f_out.shape[2], f_out.shape[3])
    return ops.concat_channels(f_out, lr)


def multirange_gate_forward(f_out: Tensor, f_c: Tensor, block_input: Tensor, g: GateParams) -> Tensor:
    if not g.multirange:
        raise ValueError("gate has no long-range adapter")
    return _modulate(long_range_feature(f_out, f_c, g), block_input, g)
