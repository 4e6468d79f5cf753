"""Unrolling a gated backbone into an explicit execution plan.

A plan is a flat, acyclic list of steps over named slots.  Recurrence only
shows up through iteration tags: step ``t`` of a block reads slots written
at ``t - 1``.  Every block, gate and head step names the shared parameter
record it uses, so a block that runs three times still owns one set of
weights.

Variant strings follow ``FF`` or ``<mode><j..i>x<u>`` with mode one of
``Su`` (sequential), ``Pu`` (parallel), ``Puf`` (parallel with multi-range
feedback) and ``NW`` (network-wide baseline).  ``<j>`` is shorthand for
``<j..j>``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .backbone import NUM_BLOCKS, BackboneSpec, block_forward, head_forward, init_params
from .gating import GateParams, gate_forward, init_gate, multirange_gate_forward
from .tensor import ShapeError, Tensor

MODES = ("feedforward", "sequential", "parallel", "parallel_multirange", "network_wide")
_PREFIX = {"Su": "sequential", "Pu": "parallel", "Puf": "parallel_multirange", "NW": "network_wide"}
_CODE = {v: k for k, v in _PREFIX.items()}
NETWORK_WIDE_GATE = "gate_nw"


class VariantParseError(ValueError):
    def __init__(self, text: str, pos: int, message: str):
        self.text = text
        self.pos = pos
        super().__init__(f"{message} at position {pos} in variant {text!r}")


@dataclass(frozen=True)
class UnrollConfig:
    mode: str = "feedforward"
    u_i: int = 1
    feedback_range: Tuple[int, int] = (6, 1)
    long_range_source: int = NUM_BLOCKS

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown unroll mode {self.mode!r}; expected one of {MODES}")
        if self.u_i < 1:
            raise ValueError(f"u_i must be >= 1, got {self.u_i}")
        j, i = self.feedback_range
        if not 1 <= i <= j <= NUM_BLOCKS:
            raise ValueError(f"feedback range <{j}..{i}> needs 1 <= i <= j <= {NUM_BLOCKS}")
        if not 1 <= self.long_range_source <= NUM_BLOCKS:
            raise ValueError(f"long-range source block {self.long_range_source} out of range")
        if self.mode == "feedforward" and self.u_i != 1:
            raise ValueError("feedforward mode has exactly one iteration")

    @property
    def gated_blocks(self) -> Tuple[int, ...]:
        if self.mode in ("feedforward", "network_wide"):
            return ()
        j, i = self.feedback_range
        return tuple(range(i, j + 1))

    def variant(self) -> str:
        if self.mode == "feedforward":
            return "FF"
        j, i = self.feedback_range
        return f"{_CODE[self.mode]}<{j}..{i}>x{self.u_i}"


def parse_variant(text: str) -> UnrollConfig:
    """Parse a variant string such as ``"Pu<6..4>x2"``."""
    if text == "FF":
        return UnrollConfig()
    pos = 0
    for code in ("Puf", "Pu", "Su", "NW"):
        if text.startswith(code):
            mode = _PREFIX[code]
            pos = len(code)
            break
    else:
        raise VariantParseError(text, 0, "expected 'FF', 'Su', 'Pu', 'Puf' or 'NW'")

    def expect(s: str):
        nonlocal pos
        if not text.startswith(s, pos):
            raise VariantParseError(text, pos, f"expected {s!r}")
        pos += len(s)

    def number() -> int:
        nonlocal pos
        start = pos
        while pos < len(text) and text[pos].isdigit():
            pos += 1
        if start == pos:
            raise VariantParseError(text, start, "expected an integer")
        return int(text[start:pos])

    expect("<")
    start = pos
    j = number()
    i = j
    if text.startswith("..", pos):
        pos += 2
        i = number()
    if not 1 <= i <= j <= NUM_BLOCKS:
        raise VariantParseError(text, start, f"feedback range needs 1 <= i <= j <= {NUM_BLOCKS}")
    expect(">")
    expect("x")
    upos = pos
    u = number()
    if u < 1:
        raise VariantParseError(text, upos, "unroll iterations must be >= 1")
    if pos != len(text):
        raise VariantParseError(text, pos, "unexpected trailing characters")
    return UnrollConfig(mode=mode, u_i=u, feedback_range=(j, i))


@dataclass(frozen=True)
class NetworkSpec:
    backbone: BackboneSpec
    unroll: UnrollConfig = field(default_factory=UnrollConfig)
    interaction: str = "mul_sigmoid"
    pooling: str = "avg"

    @property
    def multirange(self) -> bool:
        return self.unroll.mode == "parallel_multirange"

    def gate_ids(self) -> Tuple[str, ...]:
        if self.unroll.mode == "network_wide":
            return (NETWORK_WIDE_GATE,)
        return tuple(f"gate{b}" for b in self.unroll.gated_blocks)


# --------------------------------------------------------------------------
# parameters


def init_gates(spec: NetworkSpec, seed: int = 0) -> Dict[str, GateParams]:
    bb = spec.backbone
    gates: Dict[str, GateParams] = {}
    if spec.unroll.mode == "network_wide":
        gates[NETWORK_WIDE_GATE] = init_gate(
            bb.block(NUM_BLOCKS).out_channels,
            bb.block(1).layers[0].out_channels,
            spec.interaction,
            spec.pooling,
            seed=_gate_seed(seed, 0),
        )
        return gates
    c_long = bb.block(spec.unroll.long_range_source).out_channels
    for b in spec.unroll.gated_blocks:
        block = bb.block(b)
        gates[f"gate{b}"] = init_gate(
            block.out_channels,
            block.in_channels,
            spec.interaction,
            spec.pooling,
            multirange=spec.multirange,
            seed=_gate_seed(seed, b),
            c_long=c_long,
        )
    return gates


def _gate_seed(seed: int, block: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, 7919, block])


def init_network(spec: NetworkSpec, seed: int = 0):
    """Backbone parameters and one gate record per gated block."""
    return init_params(spec.backbone, seed), init_gates(spec, seed)


def named_parameters(params: Dict[str, Tensor], gates: Dict[str, GateParams]) -> Dict[str, Tensor]:
    out = dict(params)
    for gid, g in gates.items():
        for suffix, t in g.tensors().items():
            out[f"{gid}.{suffix}"] = t
    return out


# --------------------------------------------------------------------------
# plans


@dataclass(frozen=True)
class Step:
    op: str  # "block" | "gate" | "mrgate" | "head"
    param: str
    iteration: int
    inputs: Tuple[str, ...]
    output: str
    layers: Optional[Tuple[int, int]] = None


@dataclass(frozen=True)
class UnrollPlan:
    spec: NetworkSpec
    steps: Tuple[Step, ...]
    outputs: Tuple[str, ...]

    def count(self, op: Optional[str] = None, param: Optional[str] = None) -> int:
        return sum(
            1 for s in self.steps if (op is None or s.op == op) and (param is None or s.param == param)
        )

    def layer_applications(self) -> int:
        return sum(s.layers[1] - s.layers[0] for s in self.steps if s.op == "block")


def _slot(kind: str, block: int, t: int) -> str:
    return f"{kind}{block}.{t}"


def plan(spec: NetworkSpec) -> UnrollPlan:
    cfg = spec.unroll
    bb = spec.backbone
    steps: List[Step] = []
    outputs: List[str] = []

    def block_step(b, t, src, dst, layers=None):
        layers = layers or (0, bb.block(b).num_layers)
        steps.append(Step("block", f"block{b}", t, (src,), dst, layers))

    def head_step(t, src):
        dst = f"logits.{t}"
        steps.append(Step("head", "head", t, (src,), dst))
        outputs.append(dst)

    mode = "feedforward" if cfg.u_i == 1 else cfg.mode
    u = cfg.u_i

    if mode == "feedforward":
        prev = "image"
        for b in range(1, NUM_BLOCKS + 1):
            block_step(b, 1, prev, _slot("y", b, 1))
            prev = _slot("y", b, 1)
        head_step(1, prev)

    elif mode == "sequential":
        prev = "image"
        gated = set(cfg.gated_blocks)
        for b in range(1, NUM_BLOCKS + 1):
            block_step(b, 1, prev, _slot("y", b, 1))
            last = _slot("y", b, 1)
            if b in gated:
                for t in range(2, u + 1):
                    g = _slot("g", b, t)
                    steps.append(Step("gate", f"gate{b}", t, (_slot("y", b, t - 1), prev), g))
                    block_step(b, t, g, _slot("y", b, t))
                last = _slot("y", b, u)
            prev = last
        head_step(u, prev)

    elif mode in ("parallel", "parallel_multirange"):
        gated = set(cfg.gated_blocks)
        lr = cfg.long_range_source
        for t in range(1, u + 1):
            prev = "image"
            for b in range(1, NUM_BLOCKS + 1):
                src = prev
                if t > 1 and b in gated:
                    src = _slot("g", b, t)
                    if mode == "parallel":
                        steps.append(Step("gate", f"gate{b}", t, (_slot("y", b, t - 1), prev), src))
                    else:
                        steps.append(
                            Step(
                                "mrgate",
                                f"gate{b}",
                                t,
                                (_slot("y", b, t - 1), _slot("y", lr, t - 1), prev),
                                src,
                            )
                        )
                block_step(b, t, src, _slot("y", b, t))
                prev = _slot("y", b, t)
            head_step(t, prev)

    elif mode == "network_wide":
        n1 = bb.block(1).num_layers
        for t in range(1, u + 1):
            if t == 1:
                block_step(1, 1, "image", _slot("y", 1, 1))
            else:
                stem = _slot("s", 1, t)
                block_step(1, t, "image", stem, (0, 1))
                gated = _slot("g", 1, t)
                steps.append(
                    Step("gate", NETWORK_WIDE_GATE, t, (_slot("y", NUM_BLOCKS, t - 1), stem), gated)
                )
                if n1 > 1:
                    block_step(1, t, gated, _slot("y", 1, t), (1, n1))
                else:
                    steps.append(Step("alias", "", t, (gated,), _slot("y", 1, t)))
            prev = _slot("y", 1, t)
            for b in range(2, NUM_BLOCKS + 1):
                block_step(b, t, prev, _slot("y", b, t))
                prev = _slot("y", b, t)
            head_step(t, prev)

    return UnrollPlan(spec, tuple(steps), tuple(outputs))


# --------------------------------------------------------------------------
# execution


@dataclass
class RunResult:
    logits: List[Tensor]
    cache: Dict[str, Tensor]

    @property
    def final(self) -> Tensor:
        return self.logits[-1]


def run(
    plan_: UnrollPlan,
    params: Dict[str, Tensor],
    gates: Dict[str, GateParams],
    image: Tensor,
) -> RunResult:
    """Execute ``plan_`` on ``image``; records onto the active tape, if any."""
    bb = plan_.spec.backbone
    if image.ndim != 4 or image.shape[1] != bb.in_channels:
        raise ShapeError(f"image must be (n, {bb.in_channels}, h, w), got {image.shape}")
    slots: Dict[str, Tensor] = {"image": image}
    for step in plan_.steps:
        args = [slots[name] for name in step.inputs]
        if step.op == "block":
            b = int(step.param[len("block"):])
            out = block_forward(bb.block(b), args[0], params, step.layers)
        elif step.op == "gate":
            out = gate_forward(args[0], args[1], gates[step.param])
        elif step.op == "mrgate":
            out = multirange_gate_forward(args[0], args[1], args[2], gates[step.param])
        elif step.op == "head":
            out = head_forward(bb, args[0], params, image.shape[2:])
        elif step.op == "alias":
            out = args[0]
        else:
            raise ValueError(f"unknown plan step {step.op!r}")
        slots[step.output] = out
    return RunResult([slots[name] for name in plan_.outputs], slots)


def forward(spec: NetworkSpec, params, gates, image: Tensor) -> RunResult:
    return run(plan(spec), params, gates, image)


# --------------------------------------------------------------------------
# depth accounting


@dataclass(frozen=True)
class DepthReport:
    mode: str
    u_i: int
    l_f: int
    l_r: int
    l_rj: int
    l_rk: int
    l_e: int
    gate_convs: int = 0

    def row(self) -> str:
        return "\t".join(
            str(v) for v in (self.mode, self.u_i, self.l_f, self.l_r, self.l_rj, self.l_rk, self.l_e)
        )


def effective_depth(spec: NetworkSpec) -> DepthReport:
    """Conv-layer depth of the unrolled network; gate convs are reported apart."""
    cfg = spec.unroll
    bb = spec.backbone
    total = bb.num_layers
    u = cfg.u_i
    p = plan(spec)
    gate_convs = p.count(op="gate") + p.count(op="mrgate")
    if cfg.mode == "feedforward":
        return DepthReport(cfg.mode, u, total, 0, 0, 0, total, 0)
    if cfg.mode == "network_wide":
        l_rk = bb.block(NUM_BLOCKS).num_layers
        return DepthReport(cfg.mode, u, 0, total, total - l_rk, l_rk, total * u, gate_convs)
    j, _ = cfg.feedback_range
    l_r = sum(bb.block(b).num_layers for b in cfg.gated_blocks)
    l_rk = bb.block(j).num_layers
    l_rj = l_r - l_rk
    l_f = total - l_r
    if u == 1:
        l_e = l_f + l_r
    elif cfg.mode == "sequential":
        l_e = l_f + l_r * u
    else:
        l_e = l_f + l_rj + l_rk * u
    return DepthReport(cfg.mode, u, l_f, l_r, l_rj, l_rk, l_e, gate_convs)
