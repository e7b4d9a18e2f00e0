"""Dense float tensors with reverse-mode differentiation.

Values are numpy arrays. Every differentiable operation records its parents
and a backward closure on the output tensor; the recorded graph is the tape.
``backward()`` replays the tape in exact reverse execution order by walking
tensors in decreasing creation index, which is well defined because the
creation counter is global and monotone.

Training code runs in float32; gradient checking instantiates everything in
float64 because central finite differences are unreliable at single
precision.
"""

from __future__ import annotations

import itertools

import numpy as np

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))
_creation_counter = itertools.count()
_grad_enabled = True


class no_grad:
    """Context manager that disables tape recording."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def is_grad_enabled():
    return _grad_enabled


def _as_float_array(data, dtype=None):
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype in _FLOAT_DTYPES:
        return arr
    return arr.astype(np.float32)


class Tensor:
    """N-d float array, optionally participating in the gradient tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_seq", "_op")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = _as_float_array(data, dtype)
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError("tensor initialized with non-finite values")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._op = "leaf"
        self._seq = next(_creation_counter)

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._bad_item()

    def _bad_item(self):
        raise ValueError(f"item() on tensor of shape {self.shape}")

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Push gradients from this scalar back to every reachable leaf."""
        if self.data.size != 1:
            raise ValueError("backward() must start from a scalar tensor")
        if not self.requires_grad:
            raise ValueError("backward() on a tensor outside the tape")
        # Collect the reachable subgraph, then replay in reverse execution
        # order (creation indices are strictly increasing along execution).
        seen = {id(self): self}
        stack = [self]
        while stack:
            node = stack.pop()
            for parent in node._parents:
                if id(parent) not in seen:
                    seen[id(parent)] = parent
                    stack.append(parent)
        self.grad = np.ones_like(self.data)
        for node in sorted(seen.values(), key=lambda t: -t._seq):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, op={self._op})"

    # Arithmetic sugar. Tensor-tensor ops require matching shapes; python
    # scalars are allowed on either side.
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return _scalar_affine(self, 1.0, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return add(self, _scalar_affine(other, -1.0, 0.0))
        return _scalar_affine(self, 1.0, -float(other))

    def __rsub__(self, other):
        return _scalar_affine(self, -1.0, float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("elementwise tensor product is not part of this library")
        return _scalar_affine(self, float(other), 0.0)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _scalar_affine(self, 1.0 / float(other), 0.0)

    def __neg__(self):
        return _scalar_affine(self, -1.0, 0.0)


def record_op(name, data, parents, backward):
    """Create the output tensor of a differentiable operation.

    ``backward`` receives the output gradient and must accumulate into the
    parents via ``accumulate_grad``. Recording is skipped when the tape is
    disabled or no parent requires gradients.
    """
    if not np.all(np.isfinite(data)):
        raise FloatingPointError(f"{name} produced non-finite values")
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = needs
    out._parents = tuple(parents) if needs else ()
    out._backward = backward if needs else None
    out._op = name
    out._seq = next(_creation_counter)
    return out


def accumulate_grad(tensor, grad):
    """Add ``grad`` into ``tensor.grad`` (allocating on first touch)."""
    if not tensor.requires_grad:
        return
    grad = np.asarray(grad, dtype=tensor.data.dtype)
    if grad.shape != tensor.data.shape:
        raise ValueError(
            f"gradient shape {grad.shape} does not match tensor shape {tensor.data.shape}"
        )
    if tensor.grad is None:
        tensor.grad = grad.copy()
    else:
        tensor.grad += grad


def _check_same_shape(op, a, b):
    if a.data.shape != b.data.shape:
        raise ValueError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")
    if a.data.dtype != b.data.dtype:
        raise TypeError(f"{op}: dtype mismatch {a.data.dtype} vs {b.data.dtype}")


def add(a, b):
    """Elementwise sum of two same-shape tensors."""
    _check_same_shape("add", a, b)

    def backward(g):
        accumulate_grad(a, g)
        accumulate_grad(b, g)

    return record_op("add", a.data + b.data, (a, b), backward)


def _scalar_affine(x, scale, shift):
    """y = scale * x + shift with python-float coefficients."""

    def backward(g):
        accumulate_grad(x, g * scale)

    data = x.data * x.data.dtype.type(scale)
    if shift != 0.0:
        data = data + x.data.dtype.type(shift)
    return record_op("scalar_affine", data, (x,), backward)
