"""Reverse-mode automatic differentiation over float64 numpy arrays.

The graph is built dynamically: every operation returns a new immutable
:class:`Tensor` that remembers its parents, a forward closure able to
recompute its value from the parents' values, and a backward closure
propagating an upstream gradient to the parents.  Gradients of a scalar
loss are obtained by walking the graph once in reverse topological order.

Everything is 64-bit; the gradient-check tolerances used by the test
suite are not attainable in single precision.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..exceptions import ContractViolation

Array = np.ndarray


def _as_f64(x) -> Array:
    arr = np.asarray(x, dtype=np.float64)
    return arr


class Tensor:
    """A node in the computation graph.

    ``data`` is a float64 ndarray and must not be mutated after
    construction; forward evaluation is therefore safe from multiple
    threads, while a graph/backward pass is single-threaded.
    """

    __slots__ = ("data", "parents", "name", "_forward", "_backward")

    def __init__(
        self,
        data,
        parents: tuple["Tensor", ...] = (),
        forward: Callable[..., Array] | None = None,
        backward: Callable[[Array], tuple[Array, ...]] | None = None,
        name: str | None = None,
    ):
        self.data = _as_f64(data)
        self.parents = parents
        self.name = name
        self._forward = forward
        self._backward = backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def wrap(x) -> Tensor:
    """Return ``x`` itself if it is a Tensor, else a constant leaf."""
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``grad`` down to ``shape`` undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _make(fwd: Callable[..., Array], parents: tuple[Tensor, ...], backward) -> Tensor:
    data = fwd(*(p.data for p in parents))
    return Tensor(data, parents=parents, forward=fwd, backward=backward)


# ---------------------------------------------------------------------------
# primitive operations
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = wrap(a), wrap(b)
    sa, sb = a.shape, b.shape
    return _make(
        lambda x, y: x + y,
        (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
    )


def sub(a, b) -> Tensor:
    a, b = wrap(a), wrap(b)
    sa, sb = a.shape, b.shape
    return _make(
        lambda x, y: x - y,
        (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)),
    )


def mul(a, b) -> Tensor:
    a, b = wrap(a), wrap(b)
    sa, sb = a.shape, b.shape
    return _make(
        lambda x, y: x * y,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, sa), _unbroadcast(g * a.data, sb)),
    )


def div(a, b) -> Tensor:
    a, b = wrap(a), wrap(b)
    sa, sb = a.shape, b.shape
    return _make(
        lambda x, y: x / y,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, sa),
            _unbroadcast(-g * a.data / (b.data * b.data), sb),
        ),
    )


def neg(a) -> Tensor:
    a = wrap(a)
    return _make(lambda x: -x, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    a, b = wrap(a), wrap(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ContractViolation(
            f"matmul expects 2-D operands, got {a.shape} @ {b.shape}"
        )
    if a.shape[1] != b.shape[0]:
        raise ContractViolation(
            f"matmul shape mismatch: {a.shape} @ {b.shape}"
        )
    return _make(
        lambda x, y: x @ y,
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
    )


def relu(a) -> Tensor:
    a = wrap(a)
    # subgradient at 0 is taken as 0
    return _make(
        lambda x: np.maximum(x, 0.0),
        (a,),
        lambda g: (g * (a.data > 0.0),),
    )


def exp(a) -> Tensor:
    a = wrap(a)
    out = _make(lambda x: np.exp(x), (a,), None)
    out._backward = lambda g: (g * out.data,)
    return out


def log(a) -> Tensor:
    a = wrap(a)
    return _make(lambda x: np.log(x), (a,), lambda g: (g / a.data,))


def square(a) -> Tensor:
    a = wrap(a)
    return _make(lambda x: x * x, (a,), lambda g: (2.0 * a.data * g,))


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = wrap(a)
    shape = a.shape

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, shape).copy(),)

    return _make(lambda x: x.sum(axis=axis, keepdims=keepdims), (a,), backward)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = wrap(a)
    shape = a.shape
    if axis is None:
        count = a.data.size
    else:
        count = shape[axis]

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g / count, shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / count, shape).copy(),)

    return _make(lambda x: x.mean(axis=axis, keepdims=keepdims), (a,), backward)


def logsumexp(a, axis: int, keepdims: bool = False) -> Tensor:
    """Stable log-sum-exp along ``axis`` (max-subtraction)."""
    a = wrap(a)

    def fwd(x):
        m = np.max(x, axis=axis, keepdims=True)
        out = m + np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True))
        return out if keepdims else np.squeeze(out, axis=axis)

    def backward(g):
        m = np.max(a.data, axis=axis, keepdims=True)
        e = np.exp(a.data - m)
        soft = e / e.sum(axis=axis, keepdims=True)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (soft * gg,)

    return _make(fwd, (a,), backward)


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = wrap(a)
    orig = a.shape
    return _make(
        lambda x: x.reshape(shape),
        (a,),
        lambda g: (g.reshape(orig),),
    )


def concat(tensors: Sequence, axis: int = 1) -> Tensor:
    ts = tuple(wrap(t) for t in tensors)
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]
    return _make(
        lambda *xs: np.concatenate(xs, axis=axis),
        ts,
        lambda g: tuple(np.split(g, splits, axis=axis)),
    )


def take_rows(a, indices) -> Tensor:
    """Row gather with scatter-add backward; indices are constants."""
    a = wrap(a)
    idx = np.asarray(indices, dtype=np.intp)
    if a.ndim != 2:
        raise ContractViolation(f"take_rows expects a 2-D tensor, got {a.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ContractViolation(
            f"take_rows index out of range for {a.shape[0]} rows"
        )

    def backward(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)

    return _make(lambda x: x[idx], (a,), backward)


# ---------------------------------------------------------------------------
# gradient engine
# ---------------------------------------------------------------------------

def _topo_order(root: Tensor) -> list[Tensor]:
    """Iterative post-order DFS; parents before children in the result."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


class GradientTape:
    """Registry of trainable parameters for one differentiable computation.

    Operations need no explicit recording: the op graph lives in the
    tensors themselves.  The tape contributes two things: the set of
    parameters to differentiate with respect to, and :meth:`replay`,
    which re-executes the recorded graph and must reproduce the forward
    value bit-for-bit.  Not thread-safe; use one tape per thread.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def parameter(self, name: str, value) -> Tensor:
        """Create and register a trainable leaf tensor."""
        if name in self._params:
            raise ContractViolation(f"parameter {name!r} registered twice")
        t = Tensor(value, name=name)
        self._params[name] = t
        return t

    def watch(self, name: str, tensor: Tensor) -> Tensor:
        """Register an existing leaf tensor as a parameter."""
        if tensor.parents:
            raise ContractViolation("only leaf tensors can be watched")
        if name in self._params:
            raise ContractViolation(f"parameter {name!r} registered twice")
        self._params[name] = tensor
        return tensor

    @property
    def parameters(self) -> dict[str, Tensor]:
        return dict(self._params)

    def gradient(self, loss: Tensor) -> dict[str, Array]:
        """Gradient of the scalar ``loss`` w.r.t. every registered parameter.

        Parameters not reachable from ``loss`` receive zero gradients;
        if none are reachable the loss is not connected to this tape and
        a :class:`ContractViolation` is raised.
        """
        if loss.data.shape != ():
            raise ContractViolation(
                f"gradient target must be a scalar, got shape {loss.shape}"
            )
        if not np.isfinite(loss.data):
            raise ContractViolation("loss is not finite")
        order = _topo_order(loss)
        reachable = {id(n) for n in order}
        if self._params and not any(id(p) in reachable for p in self._params.values()):
            raise ContractViolation(
                "loss is not connected to any parameter registered on this tape"
            )

        grads: dict[int, Array] = {id(loss): np.ones((), dtype=np.float64)}
        for node in reversed(order):
            g = grads.get(id(node))
            if g is None or node._backward is None:
                continue
            for parent, pg in zip(node.parents, node._backward(g)):
                acc = grads.get(id(parent))
                if acc is None:
                    grads[id(parent)] = np.array(pg, dtype=np.float64, copy=True)
                else:
                    acc += pg

        out: dict[str, Array] = {}
        for name, p in self._params.items():
            g = grads.get(id(p))
            out[name] = np.zeros_like(p.data) if g is None else g.reshape(p.shape)
        return out

    def replay(self, root: Tensor) -> Array:
        """Re-evaluate the graph below ``root`` from its leaves.

        Returns the recomputed value; bit-identity with ``root.data`` is
        an invariant (the primitive ops are deterministic)."""
        values: dict[int, Array] = {}
        for node in _topo_order(root):
            if node._forward is None:
                values[id(node)] = node.data
            else:
                values[id(node)] = node._forward(
                    *(values[id(p)] for p in node.parents)
                )
        return values[id(root)]


def grad(loss: Tensor, tape: GradientTape) -> dict[str, Array]:
    """Module-level alias for :meth:`GradientTape.gradient`."""
    return tape.gradient(loss)
