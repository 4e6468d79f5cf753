"""Random spec builders shared by several test modules."""
import numpy as np

from rignet.backbone import BackboneSpec, BlockSpec, ConvLayer
from rignet.gating import INTERACTIONS, POOLINGS
from rignet.unroll import NetworkSpec, UnrollConfig


def random_backbone(rng, num_classes=3, max_layers=3, max_channels=4, in_channels=3):
    """Six blocks with 1..max_layers convs; exactly three stride-2 layers (stride 8)."""
    counts = [int(rng.integers(1, max_layers + 1)) for _ in range(6)]
    slots = [(b, l) for b in range(6) for l in range(counts[b])]
    down = {slots[i] for i in rng.choice(len(slots), size=3, replace=False)}
    c = in_channels
    blocks = []
    for b in range(6):
        layers = []
        for l in range(counts[b]):
            out = int(rng.integers(1, max_channels + 1))
            layers.append(ConvLayer(c, out, 2 if (b, l) in down else 1))
            c = out
        blocks.append(BlockSpec(b + 1, tuple(layers)))
    return BackboneSpec(tuple(blocks), num_classes)


def random_range(rng):
    j = int(rng.integers(1, 7))
    i = int(rng.integers(1, j + 1))
    return (j, i)


def random_network(rng, mode=None, u_i=None, **backbone_kw):
    bb = random_backbone(rng, **backbone_kw)
    if mode is None:
        mode = str(rng.choice(["sequential", "parallel", "parallel_multirange", "network_wide"]))
    if u_i is None:
        u_i = int(rng.integers(1, 5))
    cfg = UnrollConfig(mode, u_i, random_range(rng), long_range_source=int(rng.integers(1, 7)))
    return NetworkSpec(bb, cfg, str(rng.choice(INTERACTIONS)), str(rng.choice(POOLINGS)))


def layered_backbone(counts, channels=2, num_classes=3):
    """Backbone with the given conv count per block; first layers of blocks 1-3 downsample."""
    blocks = []
    c = 3
    for b, n in enumerate(counts, start=1):
        layers = []
        for l in range(n):
            layers.append(ConvLayer(c, channels, 2 if (l == 0 and b <= 3) else 1))
            c = channels
        blocks.append(BlockSpec(b, tuple(layers)))
    return BackboneSpec(tuple(blocks), num_classes)


def recurrent_first_depth(plan_):
    """Conv layers met walking back from the final logits, preferring recurrent edges.

    At each gate the walk follows the previous iteration's block output
    (the recurrent edge) rather than the current upstream activation.
    """
    by_output = {s.output: s for s in plan_.steps}
    slot = plan_.outputs[-1]
    depth = 0
    while slot != "image":
        step = by_output[slot]
        if step.op == "block":
            depth += step.layers[1] - step.layers[0]
        slot = step.inputs[0]
    return depth


def longest_path_depth(plan_):
    """Longest image-to-logits conv-layer path through the plan DAG."""
    best = {"image": 0}
    for s in plan_.steps:
        inc = s.layers[1] - s.layers[0] if s.op == "block" else 0
        best[s.output] = max(best[i] for i in s.inputs) + inc
    return best[plan_.outputs[-1]]
