"""Central-difference verification of the tape's analytic gradients."""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np

from . import ops
from .backbone import BackboneSpec, BlockSpec, ConvLayer
from .gating import gate_forward, init_gate, multirange_gate_forward
from .tensor import Tape, Tensor, backward
from .unroll import NetworkSpec, UnrollConfig, init_network, named_parameters, run, plan

TOLERANCE = 1e-4


def _scalarize(out: Tensor, weights: Optional[np.ndarray]) -> Tensor:
    if out.data.size == 1:
        return out if out.ndim == 0 else ops.sum_all(out)
    return ops.weighted_sum(out, weights)


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-6,
    seed: int = 0,
    corrupt: float = 0.0,
) -> float:
    """Max relative error between tape gradients and central differences.

    Non-scalar outputs are reduced with a fixed random projection.  The
    error of each element is ``|analytic - numeric| / max(1, |numeric|)``.
    ``corrupt`` is added to every analytic gradient; it exists so callers
    can confirm that a broken gradient is actually caught.
    """
    inputs = list(inputs)
    saved_flags = [t.requires_grad for t in inputs]
    for t in inputs:
        t.requires_grad = True
    try:
        with Tape() as tape:
            out = fn(*inputs)
        weights = None
        if out.data.size != 1:
            weights = np.random.default_rng(seed).standard_normal(out.shape)
        with tape:
            loss = _scalarize(out, weights)
        grads = backward(tape, loss)

        def value() -> float:
            return float(_scalarize(fn(*inputs), weights).data)

        worst = 0.0
        for t in inputs:
            analytic = grads.get(t, np.zeros_like(t.data)) + corrupt
            base = t.data
            flat = base.reshape(-1)
            numeric = np.empty(flat.size)
            for k in range(flat.size):
                bumped = flat.copy()
                bumped[k] += eps
                t.data = bumped.reshape(base.shape)
                hi = value()
                bumped[k] -= 2 * eps
                t.data = bumped.reshape(base.shape)
                lo = value()
                numeric[k] = (hi - lo) / (2 * eps)
            t.data = base
            err = np.abs(analytic.reshape(-1) - numeric) / np.maximum(1.0, np.abs(numeric))
            worst = max(worst, float(err.max()))
        return worst
    finally:
        for t, flag in zip(inputs, saved_flags):
            t.requires_grad = flag


# --------------------------------------------------------------------------
# the suite behind ``rignet gradcheck``


@dataclass
class CheckResult:
    name: str
    max_error: float
    passed: bool


def _away_from_zero(rng, shape, margin=1e-3):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-300) * margin * 10, x)


def _distinct(rng, shape, gap=1e-2):
    # values on a grid with a shuffled order: every window has a unique max
    n = int(np.prod(shape))
    return (rng.permutation(n) * gap).reshape(shape) - n * gap / 2


def tiny_network(num_classes: int = 3) -> BackboneSpec:
    """Narrow stride-8 backbone for end-to-end derivative checks."""
    return BackboneSpec(
        blocks=(
            BlockSpec(1, (ConvLayer(3, 2, 2),)),
            BlockSpec(2, (ConvLayer(2, 3, 2),)),
            BlockSpec(3, (ConvLayer(3, 3, 2),)),
            BlockSpec(4, (ConvLayer(3, 3, 1),)),
            BlockSpec(5, (ConvLayer(3, 4, 1),)),
            BlockSpec(6, (ConvLayer(4, 4, 1),)),
        ),
        num_classes=num_classes,
    )


def _cases(rng) -> List[tuple]:
    T = Tensor
    cases = []
    x = T(rng.standard_normal((1, 2, 4, 4)))
    k = T(rng.standard_normal((3, 2, 3, 3)))
    b = T(rng.standard_normal(3))
    cases.append(("conv2d", lambda x, k, b: ops.conv2d(x, k, b, 1, 1), [x, k, b]))
    x = T(rng.standard_normal((1, 2, 6, 6)))
    k = T(rng.standard_normal((2, 2, 4, 4)))
    b = T(rng.standard_normal(2))
    cases.append(("conv2d_stride2", lambda x, k, b: ops.conv2d(x, k, b, 2, 1), [x, k, b]))
    cases.append(("pool2d_avg", lambda x: ops.pool2d(x, "avg", 2, 2), [T(rng.standard_normal((1, 2, 6, 6)))]))
    cases.append(("pool2d_max", lambda x: ops.pool2d(x, "max", 2, 2), [T(_distinct(rng, (1, 2, 6, 6)))]))
    cases.append(
        ("bilinear_upsample", lambda x: ops.bilinear_upsample(x, 7, 7), [T(rng.standard_normal((1, 2, 3, 3)))])
    )
    cases.append(
        ("bilinear_downsample", lambda x: ops.bilinear_upsample(x, 3, 4), [T(rng.standard_normal((1, 1, 7, 6)))])
    )
    for kind in ("sigmoid", "tanh", "relu"):
        cases.append(
            (kind, lambda x, kind=kind: ops.activation(x, kind), [T(_away_from_zero(rng, (1, 2, 3, 3)))])
        )
    a, c = T(rng.standard_normal((1, 2, 3, 3))), T(rng.standard_normal((1, 2, 3, 3)))
    cases.append(("mul", ops.mul, [a, c]))
    cases.append(("add", ops.add, [T(a.data), T(c.data)]))
    cases.append(
        (
            "concat_channels",
            ops.concat_channels,
            [T(rng.standard_normal((1, 2, 3, 3))), T(rng.standard_normal((1, 1, 3, 3)))],
        )
    )
    labels = rng.integers(0, 3, size=(2, 3, 3))
    labels[0, 0, 0] = ops.IGNORE_LABEL
    cases.append(
        ("softmax_ce_loss", lambda z: ops.softmax_ce_loss(z, labels), [T(rng.standard_normal((2, 3, 3, 3)))])
    )
    for interaction in ("mul_sigmoid", "mul_tanh", "add_relu"):
        g = init_gate(3, 2, interaction, "avg", seed=int(rng.integers(1 << 30)))
        g.bias.data = rng.standard_normal(2) * 0.1
        # add_relu: shift the block input away from the relu kink
        xin = T(rng.uniform(0.5, 1.5, (1, 2, 8, 8)))

        def gate_fn(f, xi, w, bb, g=g):
            g2 = type(g)(w, bb, g.interaction, g.pooling)
            return gate_forward(f, xi, g2)

        cases.append(
            (f"gate_{interaction}", gate_fn, [T(rng.standard_normal((1, 3, 4, 4))), xin, g.weight, g.bias])
        )
    g = init_gate(3, 2, "mul_sigmoid", "max", multirange=True, seed=int(rng.integers(1 << 30)), c_long=4)

    def mr_fn(f, fc, xi, w, aw):
        g2 = type(g)(w, g.bias, g.interaction, g.pooling, aw, g.adapter_bias)
        return multirange_gate_forward(f, fc, xi, g2)

    cases.append(
        (
            "multirange_gate",
            mr_fn,
            [
                T(_distinct(rng, (1, 3, 4, 4))),
                T(rng.standard_normal((1, 4, 2, 2))),
                T(rng.standard_normal((1, 2, 8, 8))),
                g.weight,
                g.adapter_weight,
            ],
        )
    )
    return cases


def composite_check(seed: int = 0, eps: float = 1e-6, corrupt: float = 0.0) -> float:
    """2-iteration parallel RIGNet on the tiny backbone, w.r.t. all weights and the image."""
    rng = np.random.default_rng(seed)
    spec = NetworkSpec(tiny_network(), UnrollConfig("parallel", 2, (6, 4)))
    params, gates = init_network(spec, seed)
    for g in gates.values():
        g.bias.data = rng.standard_normal(g.bias.shape) * 0.1
    named = named_parameters(params, gates)
    names = list(named)
    image = Tensor(rng.uniform(0, 1, (1, 3, 16, 16)))
    labels = rng.integers(0, 3, size=(1, 16, 16))
    p = plan(spec)

    def fn(img, *tensors):
        lookup = dict(zip(names, tensors))
        ps = {k: lookup[k] for k in params}
        gs = {
            gid: type(g)(lookup[f"{gid}.weight"], lookup[f"{gid}.bias"], g.interaction, g.pooling)
            for gid, g in gates.items()
        }
        return ops.softmax_ce_loss(run(p, ps, gs, img).final, labels)

    return grad_check(fn, [image] + [named[n] for n in names], eps=eps, seed=seed, corrupt=corrupt)


def run_suite(seed: int = 0, eps: float = 1e-6, corrupt: Optional[str] = None) -> List[CheckResult]:
    """Every primitive plus the end-to-end composite; ``corrupt`` names one check to sabotage."""
    rng = np.random.default_rng(seed)
    results = []
    for name, fn, inputs in _cases(rng):
        err = grad_check(fn, inputs, eps=eps, seed=seed, corrupt=1e-2 if name == corrupt else 0.0)
        results.append(CheckResult(name, err, err < TOLERANCE))
    name = "rignet_parallel_x2"
    err = composite_check(seed, eps, corrupt=1e-2 if corrupt == name else 0.0)
    results.append(CheckResult(name, err, err < TOLERANCE))
    return results


def check_names(seed: int = 0) -> List[str]:
    return [c[0] for c in _cases(np.random.default_rng(seed))] + ["rignet_parallel_x2"]


if __name__ == "__main__":  # pragma: no cover
    t0 = time.time()
    for r in run_suite():
        print(f"{r.name}\t{r.max_error:.3e}\t{'ok' if r.passed else 'FAIL'}")
    print(f"{time.time() - t0:.1f}s")
