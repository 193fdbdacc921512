# tpgsr/engine/nn.py

import copy
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from ..exceptions import CheckpointError
from . import functional as F
from .tensor import Tensor, get_default_dtype


class Parameter(Tensor):
    """Trainable leaf tensor; its dotted name comes from the owning module path."""

    def __init__(self, data: np.ndarray, requires_grad: bool = True):
        super().__init__(np.asarray(data, dtype=get_default_dtype()), requires_grad=requires_grad)


def he_normal(shape: Sequence[int], fan_in: int, rng: np.random.Generator) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=tuple(shape))


class Module:
    def __init__(self):
        object.__setattr__(self, "_parameters", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name: str, value: Any):
        if isinstance(value, Parameter):
            self._parameters[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray):
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def forward(self, *args: Any, **kwargs: Any) -> Any:
        raise NotImplementedError("Subclasses must implement forward method")

    def __call__(self, *args: Any, **kwargs: Any) -> Any:
        return self.forward(*args, **kwargs)

    def named_children(self) -> Iterator[Tuple[str, "Module"]]:
        yield from self._modules.items()

    def named_modules(self, prefix: str = "", _seen: Optional[set] = None) -> Iterator[Tuple[str, "Module"]]:
        seen = _seen if _seen is not None else set()
        if id(self) in seen:
            return
        seen.add(id(self))
        yield prefix, self
        for name, child in self.named_children():
            yield from child.named_modules(f"{prefix}.{name}" if prefix else name, seen)

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        seen = set()
        for module_name, module in self.named_modules(prefix):
            for name, param in module._parameters.items():
                if id(param) in seen:
                    continue
                seen.add(id(param))
                yield (f"{module_name}.{name}" if module_name else name), param

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for module_name, module in self.named_modules(prefix):
            for name, buf in module._buffers.items():
                yield (f"{module_name}.{name}" if module_name else name), buf

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def train(self, mode: bool = True) -> "Module":
        for _, module in self.named_modules():
            object.__setattr__(module, "training", mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self):
        for param in self.parameters():
            param.zero_grad()

    def set_requires_grad(self, flag: bool):
        for param in self.parameters():
            param.requires_grad = flag

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update(dict(self.named_buffers()))
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray], strict: bool = True):
        """Copy arrays into parameters and buffers in place.

        Raises:
            CheckpointError: naming the first absent path, or a path whose shape differs.
        """
        targets: List[Tuple[str, np.ndarray]] = [(n, p.data) for n, p in self.named_parameters()]
        targets.extend(self.named_buffers())
        for name, target in targets:
            if name not in state:
                raise CheckpointError("missing parameter", path=name)
            source = np.asarray(state[name])
            if source.shape != target.shape:
                raise CheckpointError(f"shape {source.shape} does not match {target.shape}", path=name)
            target[...] = source
        if strict:
            known = {name for name, _ in targets}
            unexpected = sorted(set(state) - known)
            if unexpected:
                raise CheckpointError("unexpected entry", path=unexpected[0])

    def clone(self) -> "Module":
        return copy.deepcopy(self)

    def cast(self, dtype: np.dtype) -> "Module":
        for _, param in self.named_parameters():
            param.data = param.data.astype(dtype)
            if param.grad is not None:
                param.grad = np.zeros_like(param.data)
        for _, module in self.named_modules():
            for name, buf in list(module._buffers.items()):
                module.register_buffer(name, buf.astype(dtype))
        return self


class ModuleList(Module):
    def __init__(self, modules: Sequence[Module] = ()):
        super().__init__()
        for module in modules:
            self.append(module)

    def append(self, module: Module):
        setattr(self, str(len(self._modules)), module)

    def __getitem__(self, index: int) -> Module:
        return list(self._modules.values())[index]

    def __len__(self) -> int:
        return len(self._modules)

    def __iter__(self) -> Iterator[Module]:
        return iter(list(self._modules.values()))


class Conv2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: Optional[int] = None,
        bias: bool = True,
    ):
        super().__init__()
        self.stride = stride
        self.padding = kernel_size // 2 if padding is None else padding
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = Parameter(
            he_normal((out_channels, in_channels, kernel_size, kernel_size), fan_in, rng)
        )
        self.bias = Parameter(np.zeros(out_channels)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class ConvTranspose2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        rng: np.random.Generator,
        stride: Tuple[int, int] = (2, 2),
        kernel_size: int = 3,
        padding: int = 1,
    ):
        super().__init__()
        self.stride = tuple(stride)
        self.padding = padding
        self.output_padding = (self.stride[0] - 1, self.stride[1] - 1)
        fan_in = out_channels * kernel_size * kernel_size
        self.weight = Parameter(
            he_normal((in_channels, out_channels, kernel_size, kernel_size), fan_in, rng)
        )
        self.bias = Parameter(np.zeros(out_channels))

    def forward(self, x: Tensor) -> Tensor:
        return F.deconv2d(
            x,
            self.weight,
            self.bias,
            stride=self.stride,
            padding=self.padding,
            output_padding=self.output_padding,
        )


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.weight = Parameter(np.ones(channels))
        self.bias = Parameter(np.zeros(channels))
        dtype = get_default_dtype()
        self.register_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.register_buffer("running_var", np.ones(channels, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return F.batchnorm2d(
            x,
            self.weight,
            self.bias,
            self.running_mean,
            self.running_var,
            training=self.training,
            momentum=self.momentum,
            eps=self.eps,
        )


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        super().__init__()
        self.weight = Parameter(he_normal((out_features, in_features), in_features, rng))
        self.bias = Parameter(np.zeros(out_features))

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)
