"""Reverse-mode differentiation by recording kernel calls on a tape."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np


class Var:
    """A tensor value tracked by a :class:`GradTape`."""

    __slots__ = ("data", "grad", "name")

    def __init__(self, data: np.ndarray, name: str | None = None):
        self.data = data
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Var({self.name or '?'}, shape={self.data.shape})"


@dataclass
class _Entry:
    output: Var
    inputs: Sequence[Any]
    backward: Callable


@dataclass
class GradTape:
    """Ordered record of executed ops.

    One tape per training step; a tape is single-owner and is not meant to be
    shared between concurrent steps.
    """

    entries: list[_Entry] = field(default_factory=list)
    watched: list[Var] = field(default_factory=list)

    def watch(self, data: np.ndarray, name: str | None = None) -> Var:
        v = Var(data, name)
        self.watched.append(v)
        return v

    def apply(self, kernel: Callable, *inputs, **kwargs) -> Var:
        arrays = [x.data if isinstance(x, Var) else x for x in inputs]
        out, backward = kernel(*arrays, **kwargs)
        result = Var(out)
        self.entries.append(_Entry(result, inputs, backward))
        return result

    def backward(self, output: Var, grad: np.ndarray | None = None) -> None:
        output.grad = np.ones_like(output.data) if grad is None else grad
        for entry in reversed(self.entries):
            g = entry.output.grad
            if g is None:
                continue
            for x, gx in zip(entry.inputs, entry.backward(g)):
                if isinstance(x, Var) and gx is not None:
                    x.grad = gx if x.grad is None else x.grad + gx
        for v in self.watched:
            if v.grad is None:
                v.grad = np.zeros_like(v.data)


def value(x) -> np.ndarray:
    return x.data if isinstance(x, Var) else x
