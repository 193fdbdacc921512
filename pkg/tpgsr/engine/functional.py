# tpgsr/engine/functional.py

import functools
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from ..exceptions import ShapeError
from .tensor import Function, Tensor, as_tensor

IntPair = Union[int, Tuple[int, int]]


def _pair(value: IntPair) -> Tuple[int, int]:
    if isinstance(value, int):
        return value, value
    return int(value[0]), int(value[1])


def _windows(x: np.ndarray, kh: int, kw: int, sh: int, sw: int) -> np.ndarray:
    # [B, C, H, W] -> [B, C, Ho, Wo, kh, kw] strided view
    view = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    return view[:, :, ::sh, ::sw]


# Elementwise and reduction family


class Add(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return a + b

    def backward(self, grad: np.ndarray):
        a, b = self.inputs
        return self.unbroadcast(grad, a.shape), self.unbroadcast(grad, b.shape)


class Sub(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return a - b

    def backward(self, grad: np.ndarray):
        a, b = self.inputs
        return self.unbroadcast(grad, a.shape), self.unbroadcast(-grad, b.shape)


class Mul(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return a * b

    def backward(self, grad: np.ndarray):
        a, b = self.inputs
        return (
            self.unbroadcast(grad * b.data, a.shape),
            self.unbroadcast(grad * a.data, b.shape),
        )


class MulScalar(Function):
    def forward(self, a: np.ndarray, scalar: float) -> np.ndarray:
        self.scalar = scalar
        return a * a.dtype.type(scalar)

    def backward(self, grad: np.ndarray):
        return (grad * grad.dtype.type(self.scalar),)


class Abs(Function):
    def forward(self, a: np.ndarray) -> np.ndarray:
        return np.abs(a)

    def backward(self, grad: np.ndarray):
        return (grad * np.sign(self.inputs[0].data),)


class Sum(Function):
    def forward(self, a: np.ndarray) -> np.ndarray:
        return np.asarray(a.sum(), dtype=a.dtype)

    def backward(self, grad: np.ndarray):
        return (np.full(self.inputs[0].shape, grad, dtype=self.inputs[0].dtype),)


class Mean(Function):
    def forward(self, a: np.ndarray) -> np.ndarray:
        return np.asarray(a.mean(), dtype=a.dtype)

    def backward(self, grad: np.ndarray):
        x = self.inputs[0]
        return (np.full(x.shape, grad / x.data.size, dtype=x.dtype),)


class ReLU(Function):
    def forward(self, a: np.ndarray) -> np.ndarray:
        self.mask = a > 0
        return np.where(self.mask, a, 0).astype(a.dtype, copy=False)

    def backward(self, grad: np.ndarray):
        return (grad * self.mask,)


class Softmax(Function):
    def forward(self, a: np.ndarray) -> np.ndarray:
        shifted = a - a.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        self.out = e / e.sum(axis=-1, keepdims=True)
        return self.out

    def backward(self, grad: np.ndarray):
        y = self.out
        return (y * (grad - (grad * y).sum(axis=-1, keepdims=True)),)


class Reshape(Function):
    def forward(self, a: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
        return a.reshape(shape)

    def backward(self, grad: np.ndarray):
        return (grad.reshape(self.inputs[0].shape),)


class Permute(Function):
    def forward(self, a: np.ndarray, axes: Tuple[int, ...]) -> np.ndarray:
        self.axes = axes
        return np.ascontiguousarray(a.transpose(axes))

    def backward(self, grad: np.ndarray):
        return (grad.transpose(np.argsort(self.axes)),)


class Concat(Function):
    def forward(self, *arrays: np.ndarray, axis: int = 1) -> np.ndarray:
        self.axis = axis
        self.sizes = [a.shape[axis] for a in arrays]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad: np.ndarray):
        splits = np.cumsum(self.sizes)[:-1]
        return tuple(np.split(grad, splits, axis=self.axis))


class Linear(Function):
    def forward(self, x: np.ndarray, weight: np.ndarray, bias: Optional[np.ndarray]) -> np.ndarray:
        out = x @ weight.T
        if bias is not None:
            out = out + bias
        return out

    def backward(self, grad: np.ndarray):
        x, weight, bias = self.inputs
        g2 = grad.reshape(-1, grad.shape[-1])
        x2 = x.data.reshape(-1, x.shape[-1])
        grad_bias = g2.sum(axis=0) if bias is not None else None
        return grad @ weight.data, g2.T @ x2, grad_bias


# Losses


class L1Loss(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        self.diff = a - b
        return np.asarray(np.abs(self.diff).mean(), dtype=a.dtype)

    def backward(self, grad: np.ndarray):
        g = np.sign(self.diff) * (grad / self.diff.size)
        return g, -g


class KLDivergence(Function):
    """sum_ij t_H * ln((t_H + eps) / (t_L + eps)), averaged over leading batch axes."""

    def forward(self, t_low: np.ndarray, t_high: np.ndarray, epsilon: float) -> np.ndarray:
        self.epsilon = epsilon
        self.batch = int(np.prod(t_low.shape[:-2])) if t_low.ndim > 2 else 1
        self.log_ratio = np.log(t_high + epsilon) - np.log(t_low + epsilon)
        return np.asarray((t_high * self.log_ratio).sum() / self.batch, dtype=t_low.dtype)

    def backward(self, grad: np.ndarray):
        t_low, t_high = self.inputs
        scale = grad / self.batch
        grad_low = -t_high.data / (t_low.data + self.epsilon) * scale
        grad_high = (self.log_ratio + t_high.data / (t_high.data + self.epsilon)) * scale
        return grad_low, grad_high


class CrossEntropy(Function):
    def forward(self, logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
        shifted = logits - logits.max(axis=-1, keepdims=True)
        log_probs = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        self.probs = np.exp(log_probs)
        self.targets = targets
        picked = np.take_along_axis(log_probs, targets[..., None], axis=-1)
        return np.asarray(-picked.mean(), dtype=logits.dtype)

    def backward(self, grad: np.ndarray):
        g = self.probs.copy()
        index = self.targets[..., None]
        np.put_along_axis(g, index, np.take_along_axis(g, index, axis=-1) - 1, axis=-1)
        return (g * (grad / self.targets.size),)


# Convolutional family


class Conv2d(Function):
    def forward(
        self,
        x: np.ndarray,
        weight: np.ndarray,
        bias: Optional[np.ndarray],
        stride: Tuple[int, int],
        padding: Tuple[int, int],
    ) -> np.ndarray:
        (sh, sw), (ph, pw) = stride, padding
        _, _, kh, kw = weight.shape
        self.stride, self.padding, self.x_shape = stride, padding, x.shape
        xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else x
        self.padded_shape = xp.shape
        self.cols = _windows(xp, kh, kw, sh, sw)
        out = np.tensordot(self.cols, weight, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        if bias is not None:
            out = out + bias[None, :, None, None]
        return np.ascontiguousarray(out)

    def backward(self, grad: np.ndarray):
        x, weight, bias = self.inputs
        (sh, sw), (ph, pw) = self.stride, self.padding
        _, _, kh, kw = weight.shape
        _, _, ho, wo = grad.shape
        grad_weight = None
        if weight.requires_grad:
            grad_weight = np.tensordot(grad, self.cols, axes=([0, 2, 3], [0, 2, 3]))
        grad_bias = grad.sum(axis=(0, 2, 3)) if bias is not None else None
        grad_x = None
        if x.requires_grad:
            dcols = np.tensordot(grad, weight.data, axes=([1], [0]))  # [B, Ho, Wo, C, kh, kw]
            dxp = np.zeros(self.padded_shape, dtype=grad.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + sh * ho : sh, j : j + sw * wo : sw] += dcols[
                        :, :, :, :, i, j
                    ].transpose(0, 3, 1, 2)
            _, _, h, w = self.x_shape
            grad_x = dxp[:, :, ph : ph + h, pw : pw + w]
        return grad_x, grad_weight, grad_bias


class ConvTranspose2d(Function):
    def forward(
        self,
        x: np.ndarray,
        weight: np.ndarray,
        bias: Optional[np.ndarray],
        stride: Tuple[int, int],
        padding: Tuple[int, int],
        output_padding: Tuple[int, int],
    ) -> np.ndarray:
        (sh, sw), (ph, pw), (oph, opw) = stride, padding, output_padding
        b, _, h, w = x.shape
        _, cout, kh, kw = weight.shape
        self.stride, self.padding = stride, padding
        full_h, full_w = (h - 1) * sh + kh + oph, (w - 1) * sw + kw + opw
        self.full_shape = (b, cout, full_h, full_w)
        self.out_hw = (full_h - 2 * ph, full_w - 2 * pw)
        cols = np.tensordot(x, weight, axes=([1], [0]))  # [B, H, W, Cout, kh, kw]
        full = np.zeros(self.full_shape, dtype=np.result_type(x, weight))
        for i in range(kh):
            for j in range(kw):
                full[:, :, i : i + sh * h : sh, j : j + sw * w : sw] += cols[
                    :, :, :, :, i, j
                ].transpose(0, 3, 1, 2)
        out = full[:, :, ph : ph + self.out_hw[0], pw : pw + self.out_hw[1]]
        if bias is not None:
            out = out + bias[None, :, None, None]
        return np.ascontiguousarray(out)

    def backward(self, grad: np.ndarray):
        x, weight, bias = self.inputs
        (sh, sw), (ph, pw) = self.stride, self.padding
        _, _, kh, kw = weight.shape
        _, _, h, w = x.shape
        gfull = np.zeros(self.full_shape, dtype=grad.dtype)
        gfull[:, :, ph : ph + self.out_hw[0], pw : pw + self.out_hw[1]] = grad
        win = _windows(gfull, kh, kw, sh, sw)[:, :, :h, :w]  # [B, Cout, H, W, kh, kw]
        grad_x = None
        if x.requires_grad:
            grad_x = np.tensordot(win, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        grad_weight = None
        if weight.requires_grad:
            grad_weight = np.tensordot(x.data, win, axes=([0, 2, 3], [0, 2, 3]))
        grad_bias = grad.sum(axis=(0, 2, 3)) if bias is not None else None
        return grad_x, grad_weight, grad_bias


class BatchNorm2d(Function):
    def forward(
        self,
        x: np.ndarray,
        gamma: np.ndarray,
        beta: np.ndarray,
        mean: np.ndarray,
        var: np.ndarray,
        eps: float,
        batch_stats: bool,
    ) -> np.ndarray:
        self.batch_stats = batch_stats
        self.inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
        self.x_hat = (x - mean[None, :, None, None]) * self.inv_std[None, :, None, None]
        return gamma[None, :, None, None] * self.x_hat + beta[None, :, None, None]

    def backward(self, grad: np.ndarray):
        x, gamma, _ = self.inputs
        axes = (0, 2, 3)
        grad_gamma = (grad * self.x_hat).sum(axis=axes)
        grad_beta = grad.sum(axis=axes)
        scale = (gamma.data * self.inv_std)[None, :, None, None]
        if self.batch_stats:
            n = grad.size // grad.shape[1]
            grad_x = (
                scale
                / n
                * (
                    n * grad
                    - grad_beta[None, :, None, None]
                    - self.x_hat * grad_gamma[None, :, None, None]
                )
            )
        else:
            grad_x = grad * scale
        return grad_x, grad_gamma, grad_beta


class MaxPool2d(Function):
    def forward(self, x: np.ndarray, kernel: Tuple[int, int]) -> np.ndarray:
        kh, kw = kernel
        b, c, h, w = x.shape
        ho, wo = h // kh, w // kw
        self.x_shape, self.kernel = x.shape, kernel
        blocks = x.reshape(b, c, ho, kh, wo, kw).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, ho, wo, kh * kw)
        self.argmax = blocks.argmax(axis=-1)[..., None]
        return np.take_along_axis(blocks, self.argmax, axis=-1)[..., 0]

    def backward(self, grad: np.ndarray):
        kh, kw = self.kernel
        b, c, h, w = self.x_shape
        ho, wo = h // kh, w // kw
        blocks = np.zeros((b, c, ho, wo, kh * kw), dtype=grad.dtype)
        np.put_along_axis(blocks, self.argmax, grad[..., None], axis=-1)
        return (blocks.reshape(b, c, ho, wo, kh, kw).transpose(0, 1, 2, 4, 3, 5).reshape(self.x_shape),)


class PixelShuffle(Function):
    def forward(self, x: np.ndarray, factor: int) -> np.ndarray:
        b, c, h, w = x.shape
        r = factor
        self.x_shape, self.factor = x.shape, r
        out = x.reshape(b, c // (r * r), r, r, h, w).transpose(0, 1, 4, 2, 5, 3)
        return np.ascontiguousarray(out.reshape(b, c // (r * r), h * r, w * r))

    def backward(self, grad: np.ndarray):
        b, c, h, w = self.x_shape
        r = self.factor
        g = grad.reshape(b, c // (r * r), h, r, w, r).transpose(0, 1, 3, 5, 2, 4)
        return (g.reshape(self.x_shape),)


def cubic_kernel(distance: np.ndarray, a: float = -0.5) -> np.ndarray:
    d = np.abs(distance)
    near = ((a + 2) * d - (a + 3)) * d * d + 1
    far = ((a * d - 5 * a) * d + 8 * a) * d - 4 * a
    return np.where(d <= 1, near, np.where(d < 2, far, 0.0))


@functools.lru_cache(maxsize=64)
def bicubic_matrix(in_size: int, out_size: int) -> np.ndarray:
    """Resampling matrix [out, in]: Keys a=-0.5, edge clamped, half-pixel centers."""
    matrix = np.zeros((out_size, in_size), dtype=np.float64)
    scale = in_size / out_size
    for dst in range(out_size):
        src = (dst + 0.5) * scale - 0.5
        base = int(np.floor(src))
        t = src - base
        for k in range(-1, 3):
            idx = min(max(base + k, 0), in_size - 1)
            matrix[dst, idx] += cubic_kernel(np.asarray(t - k))
    matrix.setflags(write=False)
    return matrix


class BicubicResize(Function):
    def forward(self, x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
        self.rows = bicubic_matrix(x.shape[-2], out_h).astype(x.dtype)
        self.cols = bicubic_matrix(x.shape[-1], out_w).astype(x.dtype)
        return self.rows @ x @ self.cols.T

    def backward(self, grad: np.ndarray):
        return (self.rows.T @ grad @ self.cols,)


# Public functional API


def add(a: Union[Tensor, float], b: Union[Tensor, float]) -> Tensor:
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    return Add.apply(a, as_tensor(b, like=a))


def sub(a: Union[Tensor, float], b: Union[Tensor, float]) -> Tensor:
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    return Sub.apply(a, as_tensor(b, like=a))


def mul(a: Tensor, b: Tensor) -> Tensor:
    return Mul.apply(a, b)


def mul_scalar(a: Tensor, scalar: float) -> Tensor:
    return MulScalar.apply(a, scalar=scalar)


def abs(a: Tensor) -> Tensor:  # noqa: A001
    return Abs.apply(a)


def sum(a: Tensor) -> Tensor:  # noqa: A001
    return Sum.apply(a)


def mean(a: Tensor) -> Tensor:
    return Mean.apply(a)


def relu(a: Tensor) -> Tensor:
    return ReLU.apply(a)


def softmax_lastdim(a: Tensor) -> Tensor:
    return Softmax.apply(a)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    return Reshape.apply(a, shape=tuple(shape))


def permute(a: Tensor, axes: Sequence[int]) -> Tensor:
    return Permute.apply(a, axes=tuple(axes))


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    first = tensors[0]
    for other in tensors[1:]:
        if other.ndim != first.ndim or other.shape[:1] + other.shape[2:] != first.shape[:1] + first.shape[2:]:
            raise ShapeError(
                "concat needs all dimensions except channels to match",
                [t.shape for t in tensors],
            )
    return Concat.apply(*tensors, axis=1)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError("linear input features do not match weight", [x.shape, weight.shape])
    return Linear.apply(x, weight, bias)


def l1_loss(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError("l1_loss operands differ in shape", [a.shape, b.shape])
    return L1Loss.apply(a, b)


def kl_divergence(t_low: Tensor, t_high: Tensor, epsilon: float) -> Tensor:
    if t_low.shape != t_high.shape:
        raise ShapeError("text priors differ in shape", [t_low.shape, t_high.shape])
    return KLDivergence.apply(t_low, t_high, epsilon=epsilon)


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    targets = np.asarray(targets, dtype=np.int64)
    if logits.shape[:-1] != targets.shape:
        raise ShapeError("targets must index every frame of the logits", [logits.shape, targets.shape])
    return CrossEntropy.apply(logits, targets=targets)


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: IntPair = 1,
    padding: IntPair = 0,
) -> Tensor:
    stride, padding = _pair(stride), _pair(padding)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError("conv2d expects 4-D input and weight", [x.shape, weight.shape])
    if x.shape[1] != weight.shape[1]:
        raise ShapeError("conv2d input channels do not match weight", [x.shape, weight.shape])
    kh, kw = weight.shape[2:]
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError("conv2d kernels must be odd-sized", [weight.shape])
    if min(stride) < 1 or min(padding) < 0:
        raise ShapeError(f"invalid stride {stride} or padding {padding}")
    if x.shape[2] + 2 * padding[0] < kh or x.shape[3] + 2 * padding[1] < kw:
        raise ShapeError("conv2d kernel larger than padded input", [x.shape, weight.shape])
    return Conv2d.apply(x, weight, bias, stride=stride, padding=padding)


def deconv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: IntPair = 1,
    padding: IntPair = 1,
    output_padding: Optional[IntPair] = None,
) -> Tensor:
    """Transposed convolution; weight is laid out [Cin, Cout, kh, kw].

    ``output_padding`` defaults to ``stride - 1`` so that with a 3x3 kernel and padding 1
    every spatial axis scales by exactly its stride.
    """
    stride, padding = _pair(stride), _pair(padding)
    output_padding = _pair(output_padding) if output_padding is not None else (stride[0] - 1, stride[1] - 1)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError("deconv2d expects 4-D input and weight", [x.shape, weight.shape])
    if x.shape[1] != weight.shape[0]:
        raise ShapeError("deconv2d input channels do not match weight", [x.shape, weight.shape])
    if weight.shape[2] % 2 == 0 or weight.shape[3] % 2 == 0:
        raise ShapeError("deconv2d kernels must be odd-sized", [weight.shape])
    if output_padding[0] >= stride[0] or output_padding[1] >= stride[1] or min(output_padding) < 0:
        raise ShapeError(f"output_padding {output_padding} must be below stride {stride}")
    out_h = (x.shape[2] - 1) * stride[0] - 2 * padding[0] + weight.shape[2] + output_padding[0]
    out_w = (x.shape[3] - 1) * stride[1] - 2 * padding[1] + weight.shape[3] + output_padding[1]
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"deconv2d output would be empty ({out_h}x{out_w})", [x.shape])
    return ConvTranspose2d.apply(
        x, weight, bias, stride=stride, padding=padding, output_padding=output_padding
    )


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Batch normalization over (B, H, W) per channel.

    In training mode the running statistics are updated in place with ``momentum``.
    """
    if x.ndim != 4 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError("batchnorm2d affine parameters must match channels", [x.shape, gamma.shape, beta.shape])
    if training:
        b, _, h, w = x.shape
        count = b * h * w
        if count == 1:
            raise ShapeError("batchnorm2d in train mode needs more than one value per channel", [x.shape])
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * var * count / (count - 1)
    else:
        mean, var = running_mean.astype(x.dtype), running_var.astype(x.dtype)
    return BatchNorm2d.apply(x, gamma, beta, mean=mean, var=var, eps=eps, batch_stats=training)


def max_pool2d(x: Tensor, kernel: IntPair) -> Tensor:
    kh, kw = _pair(kernel)
    if x.ndim != 4 or x.shape[2] % kh or x.shape[3] % kw:
        raise ShapeError(f"max_pool2d kernel {(kh, kw)} must tile the input", [x.shape])
    return MaxPool2d.apply(x, kernel=(kh, kw))


def pixel_shuffle(x: Tensor, factor: int) -> Tensor:
    if x.ndim != 4 or x.shape[1] % (factor * factor):
        raise ShapeError(f"pixel_shuffle needs channels divisible by {factor * factor}", [x.shape])
    return PixelShuffle.apply(x, factor=factor)


def bicubic_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"bicubic_resize target {(out_h, out_w)} must be positive", [x.shape])
    if x.ndim < 2:
        raise ShapeError("bicubic_resize needs at least two spatial axes", [x.shape])
    return BicubicResize.apply(x, out_h=out_h, out_w=out_w)
