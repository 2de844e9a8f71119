"""Reverse-mode differentiation on dense numpy arrays."""

import contextlib
import itertools

import numpy as np

from .errors import ContractError, DimensionError  # noqa: F401 - re-exported

DEFAULT_DTYPE = np.float32

_grad_enabled = True
_seq = itertools.count()


@contextlib.contextmanager
def no_grad():
    """Run forward operators without recording the graph."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled():
    return _grad_enabled


class Tensor:
    """An N-d array that may take part in a gradient graph.

    Non-leaf tensors keep ``_parents`` and a ``_backward`` closure mapping the
    output gradient to one gradient per parent (``None`` where not needed).
    ``_seq`` is the creation index; the reverse pass visits nodes in
    decreasing ``_seq``, which is the reverse of forward execution order.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._needs = ()
        self._backward = None
        self._seq = next(_seq)

    # -- basic properties -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    # -- graph ------------------------------------------------------------
    @property
    def is_leaf(self):
        return self._backward is None

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
        if grad is None:
            if self.data.size != 1:
                raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.dtype).reshape(self.shape)
        if not self.requires_grad:
            raise ContractError("loss is not connected to any tensor that requires grad")

        nodes = {}
        stack = [self]
        while stack:
            t = stack.pop()
            if id(t) in nodes:
                continue
            nodes[id(t)] = t
            stack.extend(p for p, need in zip(t._parents, t._needs) if need)
        order = sorted(nodes.values(), key=lambda t: t._seq, reverse=True)

        grads = {id(self): grad}
        for t in order:
            g = grads.pop(id(t), None)
            if g is None:
                continue
            if t.is_leaf:
                t.grad = g.copy() if t.grad is None else t.grad + g
                continue
            for p, need, pg in zip(t._parents, t._needs, t._backward(g)):
                if pg is None or not need:
                    continue
                k = id(p)
                grads[k] = pg if k not in grads else grads[k] + pg

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __truediv__(self, other):
        from . import ops
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return ops.mul(self, 1.0 / other)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)


class Parameter(Tensor):
    """A named trainable tensor carrying its own Adam moments."""

    def __init__(self, data, name="", dtype=DEFAULT_DTYPE):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name
        self.adam_m = np.zeros_like(self.data)
        self.adam_v = np.zeros_like(self.data)
        self.step_count = 0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def make_result(data, parents, backward):
    """Wrap an operator output, recording it in the graph when needed.

    Which parents need gradients is frozen here, at forward time, so toggling
    ``requires_grad`` afterwards does not change what the reverse pass touches.
    """
    if not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite values produced by forward operator")
    out = Tensor(data, dtype=data.dtype)
    needs = tuple(p.requires_grad for p in parents)
    if _grad_enabled and any(needs):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._needs = needs
        out._backward = backward
    return out
