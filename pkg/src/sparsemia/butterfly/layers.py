"""Butterfly-factorized layers, layer substitution and parameter counting."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from ..errors import ConfigurationError, ShapeError
from ..nn.functional import col2im, im2col
from ..nn.layers import Conv2d
from ..nn.module import Module, Parameter
from .chain import (ButterflyChain, ButterflyFactor, ChainSpec, OpCounter,
                    select_min_param_chain)


class ButterflyMap(Module):
    """Linear map ``z -> W z`` with ``W`` stored as a chain of butterfly factors.

    Only the chain values are trainable; inputs are batches of row vectors
    ``(n, cols)`` and outputs ``(n, rows)``.
    """

    def __init__(self, spec: ChainSpec):
        super().__init__()
        self.spec = spec
        self.factor_names = []
        for i, p in enumerate(spec.patterns):
            name = f"factor{i}"
            setattr(self, name, Parameter(np.zeros(p.value_shape)))
            self.factor_names.append(name)

    @property
    def rows(self) -> int:
        return self.spec.rows

    @property
    def cols(self) -> int:
        return self.spec.cols

    def factor_params(self) -> list[Parameter]:
        return [self._params[n] for n in self.factor_names]

    def chain(self) -> ButterflyChain:
        """View of the current values as a :class:`ButterflyChain` (shares memory)."""
        return ButterflyChain(
            ButterflyFactor(p, prm.value) for p, prm in zip(self.spec.patterns, self.factor_params())
        )

    def reset_parameters(self, rng):
        for p, prm in zip(self.spec.patterns, self.factor_params()):
            bound = 1.0 / np.sqrt(p.c)
            prm.value[...] = rng.uniform(-bound, bound, size=p.value_shape)

    def forward(self, z, counter: OpCounter | None = None):
        if z.ndim != 2 or z.shape[1] != self.cols:
            raise ShapeError(f"{self.name}: expected (batch, {self.cols}), got {z.shape}")
        inputs = []
        for f in reversed(self.chain().factors):
            inputs.append(z)
            z = f.apply(z)
            if counter is not None:
                counter.count += f.pattern.nnz * z.shape[0]
        self._cache = inputs[::-1]
        return z

    def backward(self, grad):
        inputs = self._pop_cache()
        for f, prm, z in zip(self.chain().factors, self.factor_params(), inputs):
            dvals, grad = f.apply_backward(z, grad)
            prm.grad += dvals
        return grad


class ButterflyDense(Module):
    """Fully connected layer whose weight is a butterfly chain."""

    def __init__(self, in_features: int, out_features: int, num_factors: int,
                 bias: bool = True, spec: ChainSpec | None = None):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.map = ButterflyMap(spec or select_min_param_chain(out_features, in_features, num_factors))
        self.bias = Parameter(np.zeros(out_features), decay=False) if bias else None

    def reset_parameters(self, rng):
        if self.bias is not None:
            bound = 1.0 / np.sqrt(self.in_features)
            self.bias.value[...] = rng.uniform(-bound, bound, size=self.out_features)

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"{self.name}: expected input (batch, {self.in_features}), got {x.shape}")
        y = self.map.forward(x)
        self._cache = True
        return y if self.bias is None else y + self.bias.value

    def backward(self, grad):
        self._pop_cache()
        if self.bias is not None:
            self.bias.grad += grad.sum(axis=0)
        return self.map.backward(grad)

    def dense_weight(self) -> np.ndarray:
        from .chain import chain_to_dense
        return chain_to_dense(self.map.chain())


class ButterflyConv2d(Module):
    """Convolution whose flattened kernel matrix (out × in·k·k) is a butterfly chain.

    Kernels are flattened channel-major, then kernel row, then kernel column,
    matching :class:`~sparsemia.nn.layers.Conv2d`.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, num_factors: int,
                 stride: int = 1, padding: int = 0, spec: ChainSpec | None = None):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        fan_in = in_channels * kernel_size * kernel_size
        self.map = ButterflyMap(spec or select_min_param_chain(out_channels, fan_in, num_factors))

    @classmethod
    def from_conv(cls, conv: Conv2d, num_factors: int) -> "ButterflyConv2d":
        if conv.bias is not None:
            raise ConfigurationError(f"{conv.name}: biased convolutions are not substituted")
        return cls(conv.in_channels, conv.out_channels, conv.kernel_size, num_factors,
                   conv.stride, conv.padding)

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(f"{self.name}: expected (batch, {self.in_channels}, H, W), got {x.shape}")
        cols, ho, wo = im2col(x, self.kernel_size, self.stride, self.padding)
        self._cache = (x.shape, ho, wo)
        y = self.map.forward(cols)
        return y.reshape(x.shape[0], ho, wo, self.out_channels).transpose(0, 3, 1, 2)

    def backward(self, grad):
        x_shape, ho, wo = self._pop_cache()
        g = grad.transpose(0, 2, 3, 1).reshape(-1, self.out_channels)
        dcols = self.map.backward(g)
        return col2im(dcols, x_shape, self.kernel_size, self.stride, self.padding, ho, wo)

    def dense_weight(self) -> np.ndarray:
        from .chain import chain_to_dense
        w = chain_to_dense(self.map.chain())
        return w.reshape(self.out_channels, self.in_channels, self.kernel_size, self.kernel_size)

    def to_conv(self) -> Conv2d:
        conv = Conv2d(self.in_channels, self.out_channels, self.kernel_size, self.stride, self.padding)
        conv.weight.value[...] = self.dense_weight()
        conv.name = self.name
        return conv


def substitute_butterfly(model, segments: int, num_factors: int, seed: int):
    """Replace both 3x3 convolutions of every basic block in the last ``segments``
    segments by butterfly convolutions with ``num_factors`` factors.

    The 1x1 projection shortcuts stay dense. New chain values are drawn from
    ``seed``; all other parameters are untouched. Modifies ``model`` in place
    and returns it.
    """
    if segments < 0 or segments > len(model.segments):
        raise ConfigurationError(
            f"cannot substitute {segments} segments; model has {len(model.segments)}"
        )
    if segments == 0:
        return model
    if model.butterfly is not None:
        raise ConfigurationError("model already carries a butterfly substitution")
    rng = np.random.default_rng(seed)
    for seg in model.segments[len(model.segments) - segments:]:
        for block in seg.blocks():
            for name in ("conv1", "conv2"):
                new = ButterflyConv2d.from_conv(getattr(block, name), num_factors)
                new.map.reset_parameters(rng)
                setattr(block, name, new)
    model.butterfly = {"segments": segments, "factors": num_factors}
    model.assign_names()
    return model


def densify(model):
    """Replace every butterfly convolution by an equivalent dense one (in place)."""
    for _, mod in list(model.named_modules()):
        for child_name, child in list(mod.named_children()):
            if isinstance(child, ButterflyConv2d):
                setattr(mod, child_name, child.to_conv())
    model.butterfly = None
    model.assign_names()
    return model


class ParamCount(NamedTuple):
    total: int
    nonzero: int
    percentage: float


def count_model_params(model) -> ParamCount:
    """Dense-equivalent size, stored nonzero count, and their ratio in percent.

    Butterfly maps count as ``rows*cols`` in the total and their chain values
    in the nonzero count; masked parameters count their surviving entries.
    """
    total = nonzero = 0
    for _, mod in model.named_modules():
        if isinstance(mod, ButterflyMap):
            total += mod.rows * mod.cols
            nonzero += mod.spec.num_params
            continue
        for p in mod._params.values():
            total += p.size
            nonzero += p.nonzero_count()
    if total == 0:
        raise ConfigurationError("model has no parameters; percentage undefined")
    return ParamCount(total, nonzero, 100.0 * nonzero / total)
