import contextlib
from collections.abc import Callable, Iterator, Sequence
from typing import Any

try:
    from typing import Self
except ImportError:  # pragma: <3.11 cover
    from typing_extensions import Self

import numpy as np
from scipy import special

from flightmaint.errors import ShapeError
from flightmaint.utils import ChoiceEnum, FloatArray

# Maps the upstream gradient to one gradient (or None) per parent.
BackwardFn = Callable[[FloatArray], Sequence[FloatArray | None]]

_grad_enabled = True
_default_dtype = np.dtype(np.float32)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Run forward passes without recording a backward graph."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def is_grad_enabled() -> bool:
    return _grad_enabled


def default_dtype() -> np.dtype:
    return _default_dtype


@contextlib.contextmanager
def precision(dtype: Any) -> Iterator[None]:
    """Temporarily change the dtype new tensors and parameters are created with.

    Training runs in 32-bit; gradient verification switches to 64-bit.

    Args:
        dtype: A numpy floating dtype.

    Yields:
        Nothing; the previous dtype is restored on exit.
    """
    global _default_dtype
    previous = _default_dtype
    _default_dtype = np.dtype(dtype)
    try:
        yield
    finally:
        _default_dtype = previous


def _unbroadcast(grad: FloatArray, shape: tuple[int, ...]) -> FloatArray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """N-dimensional array that records the operations producing it for reverse-mode differentiation."""

    # Make `ndarray <op> Tensor` dispatch to the reflected Tensor operator.
    __array_priority__ = 100

    def __init__(self, data: Any, *, requires_grad: bool = False, dtype: Any = None) -> None:
        array = np.asarray(data, dtype=dtype)
        if dtype is None and not (isinstance(data, np.ndarray) and np.issubdtype(array.dtype, np.floating)):
            array = array.astype(_default_dtype)
        self.data: FloatArray = array
        self.grad: FloatArray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None

    @classmethod
    def from_op(cls, data: FloatArray, parents: Sequence["Tensor"], backward: BackwardFn) -> "Tensor":
        """Create the output of a differentiable operation.

        The graph link is only kept when gradients are enabled and a parent needs them.

        Args:
            data: Forward value.
            parents: Inputs of the operation, in the order `backward` returns gradients for.
            backward: Maps the output gradient to one gradient per parent.

        Returns:
            The output tensor.
        """
        out = cls(data, dtype=data.dtype)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> FloatArray:
        return self.data

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def backward(self, grad: FloatArray | None = None) -> None:
        """Accumulate gradients of this tensor into every leaf that requires them.

        Args:
            grad: Upstream gradient; defaults to ones for a single-element tensor.

        Raises:
            ShapeError: If no gradient is given for a tensor with more than one element.
        """
        if grad is None:
            if self.size != 1:
                raise ShapeError(f"backward() without a gradient needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        pending: dict[int, FloatArray] = {id(self): np.asarray(grad, dtype=self.dtype)}
        for node in reversed(self._topological_order()):
            node_grad = pending.pop(id(node), None)
            if node_grad is None:
                continue
            if node._backward is None:
                node.grad = node_grad if node.grad is None else node.grad + node_grad
                continue
            for parent, parent_grad in zip(node._parents, node._backward(node_grad)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = parent_grad if key not in pending else pending[key] + parent_grad

    def _topological_order(self) -> list["Tensor"]:
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            stack.extend((p, False) for p in node._parents if p.requires_grad and id(p) not in visited)
        return order

    def _lift(self, other: Any) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(np.asarray(other, dtype=self.dtype))

    def __add__(self, other: Any) -> "Tensor":
        other = self._lift(other)
        a_shape, b_shape = self.shape, other.shape
        return Tensor.from_op(
            self.data + other.data,
            (self, other),
            lambda g: (_unbroadcast(g, a_shape), _unbroadcast(g, b_shape)),
        )

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return Tensor.from_op(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other: Any) -> "Tensor":
        return self + (-self._lift(other))

    def __rsub__(self, other: Any) -> "Tensor":
        return self._lift(other) + (-self)

    def __mul__(self, other: Any) -> "Tensor":
        other = self._lift(other)
        a, b = self.data, other.data
        return Tensor.from_op(
            a * b,
            (self, other),
            lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)),
        )

    __rmul__ = __mul__

    def __truediv__(self, other: Any) -> "Tensor":
        other = self._lift(other)
        a, b = self.data, other.data
        return Tensor.from_op(
            a / b,
            (self, other),
            lambda g: (_unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)),
        )

    def __rtruediv__(self, other: Any) -> "Tensor":
        return self._lift(other) / self

    def __pow__(self, exponent: float) -> "Tensor":
        x = self.data
        return Tensor.from_op(x**exponent, (self,), lambda g: (g * exponent * x ** (exponent - 1),))

    def __matmul__(self, other: "Tensor") -> "Tensor":
        if self.ndim < 2 or other.ndim < 2:
            raise ShapeError(f"matmul needs operands of rank >= 2, got {self.shape} and {other.shape}")
        a, b = self.data, other.data

        def backward(g: FloatArray) -> tuple[FloatArray, FloatArray]:
            grad_a = g @ np.swapaxes(b, -1, -2)
            grad_b = np.swapaxes(a, -1, -2) @ g
            return _unbroadcast(grad_a, a.shape), _unbroadcast(grad_b, b.shape)

        return Tensor.from_op(a @ b, (self, other), backward)

    def __getitem__(self, index: Any) -> "Tensor":
        shape, dtype = self.shape, self.dtype

        def backward(g: FloatArray) -> tuple[FloatArray]:
            full = np.zeros(shape, dtype=dtype)
            np.add.at(full, index, g)
            return (full,)

        return Tensor.from_op(self.data[index], (self,), backward)

    def sum(self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> "Tensor":
        shape = self.shape

        def backward(g: FloatArray) -> tuple[FloatArray]:
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor.from_op(np.asarray(self.data.sum(axis=axis, keepdims=keepdims)), (self,), backward)

    def mean(self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> "Tensor":
        axes = range(self.ndim) if axis is None else (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape: int) -> "Tensor":
        original = self.shape
        return Tensor.from_op(self.data.reshape(shape), (self,), lambda g: (g.reshape(original),))

    def transpose(self, *axes: int) -> "Tensor":
        inverse = tuple(np.argsort(axes))
        return Tensor.from_op(self.data.transpose(axes), (self,), lambda g: (g.transpose(inverse),))

    def exp(self) -> "Tensor":
        y = np.exp(self.data)
        return Tensor.from_op(y, (self,), lambda g: (g * y,))

    def log(self) -> "Tensor":
        x = self.data
        return Tensor.from_op(np.log(x), (self,), lambda g: (g / x,))

    def relu(self) -> "Tensor":
        mask = self.data > 0
        return Tensor.from_op(self.data * mask, (self,), lambda g: (g * mask,))

    def tanh(self) -> "Tensor":
        y = np.tanh(self.data)
        return Tensor.from_op(y, (self,), lambda g: (g * (1 - y * y),))

    def sigmoid(self) -> "Tensor":
        y = special.expit(self.data)
        return Tensor.from_op(y, (self,), lambda g: (g * y * (1 - y),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Concatenate tensors along an existing axis."""
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]
    return Tensor.from_op(
        np.concatenate([t.data for t in tensors], axis=axis),
        tensors,
        lambda g: np.split(g, bounds, axis=axis),
    )


class InitSpec(ChoiceEnum):
    UNIFORM_FAN_IN = "uniform_fan_in"
    ZEROS = "zeros"
    ONES = "ones"


class Parameter(Tensor):
    """Named trainable tensor; always requires gradients."""

    def __init__(self, data: Any, *, name: str, init_spec: InitSpec = InitSpec.UNIFORM_FAN_IN, dtype: Any = None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name
        self.init_spec = init_spec

    @classmethod
    def create(
        cls,
        name: str,
        shape: tuple[int, ...],
        init_spec: InitSpec,
        rng: np.random.Generator,
        *,
        fan_in: int | None = None,
    ) -> Self:
        """Allocate and initialise a parameter in the current default dtype.

        Weights are drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)); fan-in defaults to the
        product of all but the last extent.

        Args:
            name: Unique dotted name within the model.
            shape: Parameter shape.
            init_spec: Initialisation rule.
            rng: Generator the weights are drawn from.
            fan_in: Override for the fan-in used by uniform initialisation.

        Returns:
            The initialised parameter.
        """
        dtype = default_dtype()
        match init_spec:
            case InitSpec.ZEROS:
                data = np.zeros(shape, dtype=dtype)
            case InitSpec.ONES:
                data = np.ones(shape, dtype=dtype)
            case InitSpec.UNIFORM_FAN_IN:
                fan = fan_in if fan_in is not None else int(np.prod(shape[:-1])) or 1
                limit = 1.0 / np.sqrt(fan)
                data = rng.uniform(-limit, limit, size=shape).astype(dtype)
            case _:  # pragma: no cover
                raise AssertionError(f"Unhandled init spec: {init_spec}")
        return cls(data, name=name, init_spec=init_spec, dtype=dtype)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.dtype})"
