"""SGD-with-momentum training through all unroll iterations, plus evaluation."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from . import ops
from .errors import TrainingError
from .gating import GateParams
from .metrics import ConfusionMatrix
from .tensor import Tape, Tensor, backward
from .unroll import NetworkSpec, init_network, named_parameters, plan, run

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    epochs: int = 30
    batch_size: int = 8
    poly_power: float = 0.9
    seed: int = 0
    flip_prob: float = 0.5
    loss_all_iterations: bool = False
    ignore_label: int = ops.IGNORE_LABEL

    def __post_init__(self):
        if not self.base_lr >= 0:
            raise ValueError(f"base_lr must be >= 0, got {self.base_lr}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if not 0 <= self.flip_prob <= 1:
            raise ValueError(f"flip_prob must be in [0, 1], got {self.flip_prob}")


def poly_lr(base: float, step: int, total: int, power: float) -> float:
    return base * (1.0 - step / total) ** power


class SGDMomentum:
    """``v <- m*v + g + wd*theta``; ``theta <- theta - lr*v``."""

    def __init__(self, momentum: float = 0.9, weight_decay: float = 0.0):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity: Dict[str, np.ndarray] = {}

    def step(self, params: Dict[str, Tensor], grads: Dict[Tensor, np.ndarray], lr: float) -> None:
        for name, p in params.items():
            g = grads.get(p)
            if g is None:
                g = np.zeros_like(p.data)
            v = self.velocity.get(name)
            v = g + self.weight_decay * p.data if v is None else self.momentum * v + g + self.weight_decay * p.data
            self.velocity[name] = v
            p.data = p.data - lr * v


@dataclass
class EpochLog:
    epoch: int
    loss: float
    lr: float

    def line(self) -> str:
        return f"{self.epoch}\t{self.loss!r}\t{self.lr!r}"


@dataclass
class TrainResult:
    params: Dict[str, Tensor]
    gates: Dict[str, GateParams]
    log: List[EpochLog] = field(default_factory=list)

    def log_text(self) -> str:
        return "".join(e.line() + "\n" for e in self.log)


def loss_for(spec: NetworkSpec, result, labels, cfg: TrainConfig) -> Tensor:
    if not cfg.loss_all_iterations or len(result.logits) == 1:
        return ops.softmax_ce_loss(result.final, labels, cfg.ignore_label)
    total = None
    for logits in result.logits:
        term = ops.softmax_ce_loss(logits, labels, cfg.ignore_label)
        total = term if total is None else ops.add(total, term)
    return ops.mul(total, Tensor(1.0 / len(result.logits)))


def train(
    spec: NetworkSpec,
    images: np.ndarray,
    labels: np.ndarray,
    cfg: TrainConfig = TrainConfig(),
    params: Optional[Dict[str, Tensor]] = None,
    gates: Optional[Dict[str, GateParams]] = None,
    callback: Optional[Callable[[EpochLog], None]] = None,
) -> TrainResult:
    """Train on ``images`` (n, c, h, w) / ``labels`` (n, h, w).

    The loss is taken on the final iteration's logits and backpropagated
    through every iteration.  Deterministic for a fixed ``cfg.seed``.
    """
    n = len(images)
    if n == 0:
        raise ValueError("training set is empty")
    if params is None or gates is None:
        params, gates = init_network(spec, cfg.seed)
    named = named_parameters(params, gates)
    for t in named.values():
        t.requires_grad = True
    p = plan(spec)
    opt = SGDMomentum(cfg.momentum, cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total = max(1, cfg.epochs * steps_per_epoch)
    result = TrainResult(params, gates)
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        flips = rng.random(n) < cfg.flip_prob
        losses = []
        lr = cfg.base_lr
        for b in range(steps_per_epoch):
            idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            xb = images[idx].astype(np.float64)
            yb = labels[idx]
            fl = flips[idx]
            if fl.any():
                xb[fl] = xb[fl][..., ::-1]
                yb = yb.copy()
                yb[fl] = yb[fl][..., ::-1]
            with Tape() as tape:
                out = run(p, params, gates, Tensor(xb))
                loss = loss_for(spec, out, yb, cfg)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss {value} at step {step} (epoch {epoch}, batch {b + 1})")
            grads = backward(tape, loss)
            lr = poly_lr(cfg.base_lr, step, total, cfg.poly_power)
            opt.step(named, grads, lr)
            losses.append(value)
            step += 1
        entry = EpochLog(epoch, float(np.mean(losses)), lr)
        result.log.append(entry)
        logger.info("epoch %d loss %.5f lr %.5g", epoch, entry.loss, lr)
        if callback is not None:
            callback(entry)
    for t in named.values():
        t.requires_grad = False
    return result


def predict_logits(
    spec: NetworkSpec,
    params,
    gates,
    images: np.ndarray,
    batch_size: int = 8,
    all_iterations: bool = False,
):
    """Logits for every image; a list of per-iteration arrays if ``all_iterations``."""
    p = plan(spec)
    per_iter: List[List[np.ndarray]] = []
    for start in range(0, len(images), batch_size):
        out = run(p, params, gates, Tensor(images[start : start + batch_size]))
        chunks = out.logits if all_iterations else [out.final]
        if not per_iter:
            per_iter = [[] for _ in chunks]
        for acc, lg in zip(per_iter, chunks):
            acc.append(lg.data)
    stacked = [np.concatenate(acc) for acc in per_iter]
    return stacked if all_iterations else stacked[0]


def evaluate(
    spec: NetworkSpec,
    params,
    gates,
    images: np.ndarray,
    labels: np.ndarray,
    batch_size: int = 8,
    ignore_label: int = ops.IGNORE_LABEL,
) -> ConfusionMatrix:
    cm = ConfusionMatrix(spec.backbone.num_classes, ignore_label)
    p = plan(spec)
    for start in range(0, len(images), batch_size):
        out = run(p, params, gates, Tensor(images[start : start + batch_size]))
        cm.update(out.final.data.argmax(axis=1), labels[start : start + batch_size])
    return cm
