"""Model zoo: configurable MLP, the reduced-width residual network, and
ResNet-20 (built from an architecture descriptor dict)."""

from __future__ import annotations

import copy

import numpy as np

from ..errors import ConfigurationError, ShapeError
from .layers import (BasicBlock, BatchNorm2d, Conv2d, Dense, Flatten,
                     GlobalAvgPool2d, ReLU, Segment, Sequential)
from .module import Module, init_params


class Model(Module):
    """A network plus the descriptor needed to rebuild it.

    ``arch`` is the plain-dict architecture descriptor; ``segments`` lists the
    residual segments (empty for MLPs); ``butterfly`` records a substitution
    ``{"segments": S, "factors": L}`` once applied.
    """

    def __init__(self, net: Sequential, arch: dict, input_shape, num_classes: int, segments=()):
        super().__init__()
        self.net = net
        self.arch = copy.deepcopy(arch)
        self.input_shape = tuple(input_shape)
        self.num_classes = num_classes
        self.segments: list[Segment] = list(segments)
        self.butterfly: dict | None = None
        self.assign_names()

    def forward(self, x):
        if tuple(x.shape[1:]) != self.input_shape:
            raise ShapeError(
                f"{self.net[0].name}: model expects inputs of shape (batch, "
                f"{', '.join(map(str, self.input_shape))}), got {x.shape}"
            )
        return self.net.forward(np.asarray(x, dtype=np.float64))

    def backward(self, grad):
        return self.net.backward(grad)

    def predict_logits(self, x, batch_size: int = 1024) -> np.ndarray:
        """Eval-mode logits, in chunks; restores the previous mode."""
        was_training = self.training
        self.eval()
        try:
            out = [self.forward(x[i:i + batch_size]) for i in range(0, len(x), batch_size)]
        finally:
            self.train(was_training)
            for _, m in self.named_modules():
                m._cache = None
        return np.concatenate(out) if out else np.zeros((0, self.num_classes))


def build_mlp(input_shape, hidden, num_classes: int) -> Model:
    dims = [int(np.prod(input_shape))] + list(hidden)
    layers, names = [Flatten()], ["flatten"]
    for i in range(len(hidden)):
        layers += [Dense(dims[i], dims[i + 1]), ReLU()]
        names += [f"fc{i}", f"relu{i}"]
    layers.append(Dense(dims[-1], num_classes))
    names.append("head")
    arch = {"kind": "mlp", "input_shape": list(input_shape), "hidden": list(hidden),
            "num_classes": num_classes}
    return Model(Sequential(*layers, names=names), arch, input_shape, num_classes)


def build_resnet(input_shape=(3, 32, 32), widths=(16, 32, 64), num_classes: int = 10) -> Model:
    """Three-segment residual network; ``widths=(16, 32, 64)`` gives ResNet-20."""
    if len(widths) != 3:
        raise ConfigurationError("residual network needs three segment widths")
    c_in = input_shape[0]
    layers = [Conv2d(c_in, widths[0], 3, padding=1), BatchNorm2d(widths[0]), ReLU()]
    names = ["conv", "bn", "relu"]
    segments = []
    prev = widths[0]
    for s, w in enumerate(widths):
        stride = 1 if s == 0 else 2
        blocks = [BasicBlock(prev, w, stride)] + [BasicBlock(w, w) for _ in range(2)]
        seg = Segment(blocks)
        segments.append(seg)
        layers.append(seg)
        names.append(f"segment{s}")
        prev = w
    layers += [GlobalAvgPool2d(), Dense(prev, num_classes)]
    names += ["pool", "head"]
    arch = {"kind": "resnet", "input_shape": list(input_shape), "widths": list(widths),
            "num_classes": num_classes}
    return Model(Sequential(*layers, names=names), arch, input_shape, num_classes, segments)


def resnet20(num_classes: int = 10) -> Model:
    return build_resnet((3, 32, 32), (16, 32, 64), num_classes)


def mini_resnet(input_shape=(3, 8, 8), width: int = 4, num_classes: int = 10) -> Model:
    return build_resnet(input_shape, (width, 2 * width, 4 * width), num_classes)


def build_model(arch: dict, seed: int | None = None) -> Model:
    """Construct a model from its descriptor; initialize it if ``seed`` is given."""
    kind = arch.get("kind")
    if kind == "mlp":
        model = build_mlp(tuple(arch["input_shape"]), arch.get("hidden", []), arch["num_classes"])
    elif kind == "resnet":
        model = build_resnet(tuple(arch["input_shape"]), tuple(arch["widths"]), arch["num_classes"])
    else:
        raise ConfigurationError(f"unknown architecture kind {kind!r}")
    if seed is not None:
        init_params(model, seed)
    return model
