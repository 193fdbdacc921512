# tpgsr/engine/tensor.py

import contextlib
import threading
from typing import Any, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..exceptions import GraphError

ArrayLike = Union[np.ndarray, float, int, Sequence[Any]]

_PRECISIONS = {"f32": np.float32, "f64": np.float64, "float32": np.float32, "float64": np.float64}


class _EngineState(threading.local):
    def __init__(self):
        self.grad_enabled = True
        self.dtype = np.float32


_state = _EngineState()


def resolve_dtype(precision: Union[str, type, np.dtype]) -> np.dtype:
    if isinstance(precision, str):
        if precision not in _PRECISIONS:
            raise ValueError(f"Unknown precision: {precision}")
        return np.dtype(_PRECISIONS[precision])
    return np.dtype(precision)


def set_default_dtype(precision: Union[str, type, np.dtype]) -> None:
    _state.dtype = resolve_dtype(precision).type


def get_default_dtype() -> np.dtype:
    return np.dtype(_state.dtype)


@contextlib.contextmanager
def precision(value: Union[str, type, np.dtype]) -> Iterator[None]:
    """Temporarily switch the dtype new tensors and parameters are created with."""
    previous = _state.dtype
    set_default_dtype(value)
    try:
        yield
    finally:
        _state.dtype = previous


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    previous = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


def is_grad_enabled() -> bool:
    return _state.grad_enabled


class Function:
    """Base class for recorded operations.

    Subclasses implement ``forward`` on raw arrays and ``backward`` mapping the gradient of
    the output to one gradient per input (``None`` for inputs that are not differentiable).
    """

    def __init__(self, *inputs: Optional["Tensor"]):
        self.inputs = inputs

    def forward(self, *arrays: Optional[np.ndarray], **kwargs: Any) -> np.ndarray:
        raise NotImplementedError("Subclasses must implement forward method")

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError("Subclasses must implement backward method")

    @classmethod
    def apply(cls, *inputs: Optional["Tensor"], **kwargs: Any) -> "Tensor":
        fn = cls(*inputs)
        out = fn.forward(*(t.data if t is not None else None for t in inputs), **kwargs)
        requires_grad = is_grad_enabled() and any(
            t is not None and t.requires_grad for t in inputs
        )
        return Tensor(out, requires_grad=requires_grad, _creator=fn if requires_grad else None)

    @staticmethod
    def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
        if grad.shape == shape:
            return grad
        while grad.ndim > len(shape):
            grad = grad.sum(axis=0)
        for axis, size in enumerate(shape):
            if size == 1 and grad.shape[axis] != 1:
                grad = grad.sum(axis=axis, keepdims=True)
        return grad


class Tensor:
    """Dense array with an optional gradient, recorded on a dynamic tape."""

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        dtype: Optional[Union[str, type, np.dtype]] = None,
        _creator: Optional[Function] = None,
    ):
        if dtype is not None:
            array = np.asarray(data, dtype=resolve_dtype(dtype))
        elif isinstance(data, np.ndarray) and np.issubdtype(data.dtype, np.floating):
            array = data
        else:
            array = np.asarray(data, dtype=get_default_dtype())
        self.data: np.ndarray = array
        self._creator = _creator
        self._consumed = False
        self._requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = (
            np.zeros_like(array) if self._requires_grad and _creator is None else None
        )

    @property
    def requires_grad(self) -> bool:
        return self._requires_grad

    @requires_grad.setter
    def requires_grad(self, value: bool) -> None:
        if self._creator is not None:
            raise GraphError("requires_grad can only be toggled on leaf tensors")
        self._requires_grad = bool(value)
        if self._requires_grad and self.grad is None:
            self.grad = np.zeros_like(self.data)
        elif not self._requires_grad:
            self.grad = None

    @property
    def is_leaf(self) -> bool:
        return self._creator is None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0)

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf that requires grad.

        The tape is released afterwards; a second call on the same graph is an error.
        """
        if self.data.size != 1:
            raise GraphError(f"backward needs a scalar loss, got shape {self.shape}")
        if self._consumed:
            raise GraphError("backward called twice on the same graph; the tape was freed")
        if not self._requires_grad:
            raise GraphError("loss does not depend on any tensor that requires grad")

        order = self._topological_order()
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            grad = grads.pop(id(node), None)
            if grad is None:
                continue
            creator = node._creator
            if creator is None:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += grad.astype(node.data.dtype, copy=False)
                continue
            for inp, inp_grad in zip(creator.inputs, creator.backward(grad)):
                if inp is None or inp_grad is None or not inp.requires_grad:
                    continue
                key = id(inp)
                grads[key] = grads[key] + inp_grad if key in grads else inp_grad
            node._creator = None
            node._consumed = True
        self._consumed = True

    def _topological_order(self) -> List["Tensor"]:
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            if node._creator is not None:
                for inp in node._creator.inputs:
                    if inp is not None and inp.requires_grad and id(inp) not in visited:
                        stack.append((inp, False))
        return order

    # Operator sugar; the functions live in functional.py.

    def __add__(self, other: Union["Tensor", float]) -> "Tensor":
        from . import functional as F

        return F.add(self, other)

    __radd__ = __add__

    def __sub__(self, other: Union["Tensor", float]) -> "Tensor":
        from . import functional as F

        return F.sub(self, other)

    def __rsub__(self, other: Union["Tensor", float]) -> "Tensor":
        from . import functional as F

        return F.sub(as_tensor(other, like=self), self)

    def __mul__(self, other: Union["Tensor", float]) -> "Tensor":
        from . import functional as F

        if isinstance(other, Tensor):
            return F.mul(self, other)
        return F.mul_scalar(self, float(other))

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        from . import functional as F

        return F.mul_scalar(self, -1.0)

    def __truediv__(self, other: float) -> "Tensor":
        from . import functional as F

        return F.mul_scalar(self, 1.0 / float(other))

    def sum(self) -> "Tensor":
        from . import functional as F

        return F.sum(self)

    def mean(self) -> "Tensor":
        from . import functional as F

        return F.mean(self)

    def abs(self) -> "Tensor":
        from . import functional as F

        return F.abs(self)

    def relu(self) -> "Tensor":
        from . import functional as F

        return F.relu(self)

    def reshape(self, *shape: int) -> "Tensor":
        from . import functional as F

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)

    def permute(self, *axes: int) -> "Tensor":
        from . import functional as F

        return F.permute(self, axes)

    def __repr__(self) -> str:
        grad = ", requires_grad=True" if self._requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{grad})"


def as_tensor(value: Union[Tensor, ArrayLike], like: Optional[Tensor] = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(value, dtype=dtype or get_default_dtype()))
