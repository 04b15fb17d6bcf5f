"""Layer implementations with explicit forward/backward passes."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError, ShapeError
from .functional import col2im, im2col, sigmoid
from .module import Module, Parameter, uniform_fan_in


class Dense(Module):
    """Affine map ``y = x W^T + b`` with weight of shape (out, in)."""

    def __init__(self, in_features: int, out_features: int, bias: bool = True):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Parameter(np.zeros((out_features, in_features)), prunable=True)
        self.bias = Parameter(np.zeros(out_features), decay=False) if bias else None

    def reset_parameters(self, rng):
        self.weight.value[...] = uniform_fan_in(rng, self.weight.shape, self.in_features, self.name)
        if self.bias is not None:
            self.bias.value[...] = uniform_fan_in(rng, self.bias.shape, self.in_features, self.name)

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"{self.name}: expected input (batch, {self.in_features}), got {x.shape}")
        self._cache = x
        y = x @ self.weight.value.T
        if self.bias is not None:
            y = y + self.bias.value
        return y

    def backward(self, grad):
        x = self._pop_cache()
        self.weight.grad += grad.T @ x
        if self.bias is not None:
            self.bias.grad += grad.sum(axis=0)
        return grad @ self.weight.value


class Conv2d(Module):
    """2-D convolution (cross-correlation) over (N, C, H, W) inputs."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 stride: int = 1, padding: int = 0, bias: bool = False):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        self.weight = Parameter(
            np.zeros((out_channels, in_channels, kernel_size, kernel_size)), prunable=True
        )
        self.bias = Parameter(np.zeros(out_channels), decay=False) if bias else None

    @property
    def fan_in(self) -> int:
        return self.in_channels * self.kernel_size * self.kernel_size

    def reset_parameters(self, rng):
        self.weight.value[...] = uniform_fan_in(rng, self.weight.shape, self.fan_in, self.name)
        if self.bias is not None:
            self.bias.value[...] = uniform_fan_in(rng, self.bias.shape, self.fan_in, self.name)

    def _unfold(self, x):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(
                f"{self.name}: expected input (batch, {self.in_channels}, H, W), got {x.shape}"
            )
        return im2col(x, self.kernel_size, self.stride, self.padding)

    def _fold(self, cols, x_shape, ho, wo):
        return col2im(cols, x_shape, self.kernel_size, self.stride, self.padding, ho, wo)

    def forward(self, x):
        cols, ho, wo = self._unfold(x)
        self._cache = (cols, x.shape, ho, wo)
        y = cols @ self.weight.value.reshape(self.out_channels, -1).T
        if self.bias is not None:
            y = y + self.bias.value
        return y.reshape(x.shape[0], ho, wo, self.out_channels).transpose(0, 3, 1, 2)

    def backward(self, grad):
        cols, x_shape, ho, wo = self._pop_cache()
        g = grad.transpose(0, 2, 3, 1).reshape(-1, self.out_channels)
        self.weight.grad += (g.T @ cols).reshape(self.weight.shape)
        if self.bias is not None:
            self.bias.grad += g.sum(axis=0)
        dcols = g @ self.weight.value.reshape(self.out_channels, -1)
        return self._fold(dcols, x_shape, ho, wo)


class BatchNorm2d(Module):
    """Per-channel batch normalization with running statistics for eval mode."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.weight = Parameter(np.ones(channels), decay=False)
        self.bias = Parameter(np.zeros(channels), decay=False)
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))

    def reset_parameters(self, rng):
        self.weight.value[...] = 1.0
        self.bias.value[...] = 0.0
        self._buffers["running_mean"][...] = 0.0
        self._buffers["running_var"][...] = 1.0

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError(f"{self.name}: expected (batch, {self.channels}, H, W), got {x.shape}")
        shape = (1, -1, 1, 1)
        if self.training:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            m = x.size // self.channels
            rm, rv = self._buffers["running_mean"], self._buffers["running_var"]
            rm[...] = (1 - self.momentum) * rm + self.momentum * mean
            rv[...] = (1 - self.momentum) * rv + self.momentum * var * (m / max(m - 1, 1))
        else:
            mean = self._buffers["running_mean"]
            var = self._buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean.reshape(shape)) * inv_std.reshape(shape)
        self._cache = (xhat, inv_std, self.training)
        return xhat * self.weight.value.reshape(shape) + self.bias.value.reshape(shape)

    def backward(self, grad):
        xhat, inv_std, batch_stats = self._pop_cache()
        shape = (1, -1, 1, 1)
        self.weight.grad += (grad * xhat).sum(axis=(0, 2, 3))
        self.bias.grad += grad.sum(axis=(0, 2, 3))
        gx = grad * self.weight.value.reshape(shape)
        if not batch_stats:
            return gx * inv_std.reshape(shape)
        mean_g = gx.mean(axis=(0, 2, 3), keepdims=True)
        mean_gx = (gx * xhat).mean(axis=(0, 2, 3), keepdims=True)
        return (gx - mean_g - xhat * mean_gx) * inv_std.reshape(shape)


class ReLU(Module):
    def forward(self, x):
        mask = x > 0
        self._cache = mask
        return x * mask

    def backward(self, grad):
        return grad * self._pop_cache()


class Sigmoid(Module):
    def forward(self, x):
        y = sigmoid(x)
        self._cache = y
        return y

    def backward(self, grad):
        y = self._pop_cache()
        return grad * y * (1.0 - y)


class Flatten(Module):
    def forward(self, x):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._pop_cache())


class GlobalAvgPool2d(Module):
    """Average over the spatial dimensions: (N, C, H, W) -> (N, C)."""

    def forward(self, x):
        if x.ndim != 4:
            raise ShapeError(f"{self.name}: expected (batch, C, H, W), got {x.shape}")
        self._cache = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, grad):
        n, c, h, w = self._pop_cache()
        return np.broadcast_to(grad[:, :, None, None] / (h * w), (n, c, h, w)).copy()


class Sequential(Module):
    """Ordered chain of named layers."""

    def __init__(self, *layers, names=None):
        super().__init__()
        names = names or [str(i) for i in range(len(layers))]
        if len(names) != len(layers):
            raise ConfigurationError("one name per layer required")
        self._order: list[str] = []
        for name, layer in zip(names, layers):
            self.append(name, layer)

    def append(self, name: str, layer: Module) -> None:
        setattr(self, name, layer)
        self._order.append(name)

    def layers(self):
        return [(n, self._children[n]) for n in self._order]

    def __getitem__(self, idx):
        """Layer by position or by name."""
        if isinstance(idx, str):
            return self._children[idx]
        return self._children[self._order[idx]]

    def __len__(self):
        return len(self._order)

    def forward(self, x):
        for name in self._order:
            x = self._children[name].forward(x)
        return x

    def backward(self, grad):
        for name in reversed(self._order):
            grad = self._children[name].backward(grad)
        return grad


class BasicBlock(Module):
    """Two 3x3 convolutions with batch norm and a residual connection.

    When the stride or channel count changes, the shortcut is a 1x1
    convolution followed by batch norm; otherwise it is the identity.
    """

    def __init__(self, in_channels: int, out_channels: int, stride: int = 1):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.conv1 = Conv2d(in_channels, out_channels, 3, stride=stride, padding=1)
        self.bn1 = BatchNorm2d(out_channels)
        self.relu1 = ReLU()
        self.conv2 = Conv2d(out_channels, out_channels, 3, stride=1, padding=1)
        self.bn2 = BatchNorm2d(out_channels)
        self.relu_out = ReLU()
        if stride != 1 or in_channels != out_channels:
            self.shortcut = Sequential(
                Conv2d(in_channels, out_channels, 1, stride=stride),
                BatchNorm2d(out_channels),
                names=["conv", "bn"],
            )
        else:
            self.shortcut = None

    def forward(self, x):
        h = self.relu1.forward(self.bn1.forward(self.conv1.forward(x)))
        h = self.bn2.forward(self.conv2.forward(h))
        s = x if self.shortcut is None else self.shortcut.forward(x)
        return self.relu_out.forward(h + s)

    def backward(self, grad):
        g = self.relu_out.backward(grad)
        gs = g if self.shortcut is None else self.shortcut.backward(g)
        gh = self.conv2.backward(self.bn2.backward(g))
        gh = self.conv1.backward(self.bn1.backward(self.relu1.backward(gh)))
        return gh + gs


class Segment(Sequential):
    """Three consecutive basic blocks sharing one filter count."""

    def __init__(self, blocks):
        blocks = list(blocks)
        if len(blocks) != 3 or not all(isinstance(b, BasicBlock) for b in blocks):
            raise ConfigurationError("a segment groups exactly three basic blocks")
        widths = {b.out_channels for b in blocks}
        if len(widths) != 1:
            raise ConfigurationError(f"segment blocks disagree on filter count: {sorted(widths)}")
        super().__init__(*blocks, names=[f"block{i}" for i in range(3)])
        self.filters = widths.pop()

    def blocks(self) -> list[BasicBlock]:
        return [layer for _, layer in self.layers()]
