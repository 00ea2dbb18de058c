"""
Dense float64 tensor with a reverse-mode gradient graph.

Each op builds a new Tensor holding its parents and a backward closure
mapping the output gradient to one gradient per parent. Values are checked
for finiteness on construction.
"""
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.exceptions import NonFiniteError, ShapeMismatchError

Backward = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class Tensor:
    """
    A node in the computation graph.

    Leading axis is the batch axis for activations. Leaves created with
    requires_grad=True (parameters, pose inputs) receive gradients from grad().
    """
    __slots__ = ("data", "parents", "backward", "requires_grad", "op")

    def __init__(
        self,
        data,
        parents: Sequence["Tensor"] = (),
        backward: Optional[Backward] = None,
        requires_grad: bool = False,
        op: str = "leaf",
    ):
        data = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(data)):
            raise NonFiniteError(f"non-finite values produced by '{op}'")
        self.data = data
        self.parents = tuple(parents)
        self.backward = backward
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)
        self.op = op

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op})"

    def __add__(self, other):
        from app.services.nn import ops
        return ops.add(self, as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        from app.services.nn import ops
        return ops.add(self, ops.neg(as_tensor(other)))

    def __neg__(self):
        from app.services.nn import ops
        return ops.neg(self)

    def __mul__(self, other):
        from app.services.nn import ops
        return ops.mul(self, as_tensor(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        from app.services.nn import ops
        return ops.matmul(self, other)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _topological(root: Tensor) -> List[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def grad(loss: Tensor, wrt: Sequence[Tensor]) -> List[np.ndarray]:
    """
    Reverse-mode gradients of a scalar loss.

    Args:
        loss: single-element tensor
        wrt: tensors to differentiate against (parameters or inputs)

    Returns:
        One array per entry of wrt; tensors the loss does not depend on get zeros
    """
    if loss.size != 1:
        raise ShapeMismatchError(f"grad needs a scalar loss, got shape {loss.shape}")
    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    if loss.requires_grad:
        for node in reversed(_topological(loss)):
            g = grads.get(id(node))
            if g is None or node.backward is None:
                continue
            for parent, pg in zip(node.parents, node.backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg
    return [grads.get(id(t), np.zeros_like(t.data)).reshape(t.shape) for t in wrt]
