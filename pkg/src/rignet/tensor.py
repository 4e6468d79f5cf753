"""Dense float64 tensors and a reverse-mode tape.

Operations live in :mod:`rignet.ops`; they record onto the tape that is
active in the current context (``with Tape() as tape: ...``).  Outside a
tape nothing is recorded and the ops are plain numpy computations.
"""
from __future__ import annotations

import contextvars
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

__all__ = ["ShapeError", "Tensor", "Tape", "Node", "backward", "active_tape"]


class ShapeError(ValueError):
    """Raised when tensor dimensions do not agree with an operation."""


class Tensor:
    """A float64 array, optionally flagged as a gradient target.

    Tensors compare and hash by identity, so they can key gradient stores.
    """

    __slots__ = ("data", "requires_grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.array(data, dtype=np.float64)
        if any(d < 1 for d in arr.shape):
            raise ShapeError(f"all dimensions must be >= 1, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # Internal constructor for op outputs: no copy, no validation.
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t.name = None
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, tensor has shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        grad = " requires_grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{label}{grad})"


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class Node:
    kind: str
    inputs: tuple
    output: Tensor
    backward: BackwardFn


_ACTIVE: contextvars.ContextVar[Optional["Tape"]] = contextvars.ContextVar(
    "rignet_active_tape", default=None
)


def active_tape() -> Optional["Tape"]:
    return _ACTIVE.get()


@dataclass
class Tape:
    """Ordered record of the differentiable operations run inside ``with``.

    Nodes are appended in execution order, so every node's inputs were
    produced by earlier nodes (or are leaves).
    """

    nodes: list = field(default_factory=list)
    _tracked: set = field(default_factory=set, repr=False)
    _leaves: dict = field(default_factory=dict, repr=False)
    _token: object = field(default=None, repr=False)

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.reset(self._token)
        self._token = None

    def is_tracked(self, t: Tensor) -> bool:
        return t.requires_grad or id(t) in self._tracked

    def record(self, kind: str, inputs: Iterable[Tensor], output: Tensor, fn: BackwardFn) -> None:
        inputs = tuple(inputs)
        if not any(self.is_tracked(t) for t in inputs):
            return
        for t in inputs:
            if t.requires_grad:
                self._leaves[id(t)] = t
        self._tracked.add(id(output))
        self.nodes.append(Node(kind, inputs, output, fn))

    def gradient(self, loss: Tensor, targets: Optional[Iterable[Tensor]] = None) -> dict:
        grads = backward(self, loss)
        if targets is None:
            return grads
        return {t: grads.get(t, np.zeros_like(t.data)) for t in targets}


def record(kind: str, inputs: Sequence[Tensor], output: Tensor, fn: BackwardFn) -> Tensor:
    tape = _ACTIVE.get()
    if tape is not None:
        tape.record(kind, inputs, output, fn)
    return output


def backward(tape: Tape, loss: Tensor) -> dict:
    """Reverse sweep over ``tape`` from the scalar ``loss``.

    Returns a mapping from every ``requires_grad`` tensor reached by the
    sweep to its gradient.  A tensor consumed by several nodes receives the
    sum of the contributions.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        in_grads = node.backward(g)
        for inp, ig in zip(node.inputs, in_grads):
            if ig is None or not tape.is_tracked(inp):
                continue
            key = id(inp)
            prev = grads.get(key)
            grads[key] = ig if prev is None else prev + ig
    out = {}
    for key, t in tape._leaves.items():
        if key in grads:
            out[t] = grads[key]
    if loss.requires_grad and loss not in out:
        out[loss] = np.ones_like(loss.data)
    return out
