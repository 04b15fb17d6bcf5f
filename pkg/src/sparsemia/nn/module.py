"""Parameter container and the Module base class.

Every layer implements ``forward(x)`` (caching what it needs) and
``backward(grad_out)`` which accumulates parameter gradients and returns the
gradient with respect to its input.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from ..errors import ConfigurationError, UsageError


class Parameter:
    """Trainable array with gradient and optional keep-mask.

    ``mask`` is a boolean array (True = weight kept). Positions where the mask
    is False hold exactly zero and receive zero gradient.
    """

    def __init__(self, value, *, prunable: bool = False, decay: bool = True):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.mask: np.ndarray | None = None
        self.prunable = prunable
        self.decay = decay

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self) -> int:
        return self.value.size

    def set_mask(self, mask) -> None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != self.value.shape:
            raise ConfigurationError(f"mask shape {mask.shape} != parameter shape {self.value.shape}")
        self.mask = mask
        self.apply_mask()

    def apply_mask(self) -> None:
        if self.mask is not None:
            self.value[~self.mask] = 0.0
            self.grad[~self.mask] = 0.0

    def nonzero_count(self) -> int:
        return self.size if self.mask is None else int(self.mask.sum())

    def __repr__(self):
        return f"Parameter(shape={self.shape}, prunable={self.prunable})"


class Module:
    """Base class: named parameters, buffers and child modules."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}
        self._buffers: dict[str, np.ndarray] = {}
        self._children: dict[str, Module] = {}
        self.training = True
        self.name = type(self).__name__
        self._cache = None

    def __setattr__(self, key, value):
        if isinstance(value, Parameter):
            self.__dict__.setdefault("_params", {})[key] = value
        elif isinstance(value, Module):
            self.__dict__.setdefault("_children", {})[key] = value
        object.__setattr__(self, key, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = np.asarray(value, dtype=np.float64)

    def add_module(self, name: str, module: "Module") -> None:
        setattr(self, name, module)

    # -- traversal ---------------------------------------------------------

    def named_children(self):
        return self._children.items()

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix, self
        for name, child in self._children.items():
            yield from child.named_modules(f"{prefix}.{name}" if prefix else name)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for mod_name, mod in self.named_modules(prefix):
            for name, p in mod._params.items():
                yield (f"{mod_name}.{name}" if mod_name else name), p

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for mod_name, mod in self.named_modules(prefix):
            for name, b in mod._buffers.items():
                yield (f"{mod_name}.{name}" if mod_name else name), b

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def assign_names(self, prefix: str = "") -> None:
        for name, mod in self.named_modules(prefix):
            mod.name = name or type(mod).__name__

    # -- modes / state -----------------------------------------------------

    def train(self, mode: bool = True) -> "Module":
        for _, mod in self.named_modules():
            mod.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad[...] = 0.0

    def reset_parameters(self, rng: np.random.Generator) -> None:
        """Initialize this module's own parameters (children handled by init_params)."""

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {f"param:{n}": p.value.copy() for n, p in self.named_parameters()}
        state.update({f"buffer:{n}": b.copy() for n, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        expected = {f"param:{n}" for n in params} | {f"buffer:{n}" for n in buffers}
        missing = expected - set(state)
        if missing:
            raise ConfigurationError(f"state is missing entries: {sorted(missing)[:5]}")
        for n, p in params.items():
            v = state[f"param:{n}"]
            if v.shape != p.value.shape:
                raise ConfigurationError(f"{n}: state shape {v.shape} != {p.value.shape}")
            p.value[...] = v
        for n, b in buffers.items():
            v = state[f"buffer:{n}"]
            if v.shape != b.shape:
                raise ConfigurationError(f"{n}: state shape {v.shape} != {b.shape}")
            b[...] = v

    # -- computation -------------------------------------------------------

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)

    def _pop_cache(self):
        if self._cache is None:
            raise UsageError(f"{self.name}: backward called without a recorded forward pass")
        cache, self._cache = self._cache, None
        return cache


def init_params(model: Module, seed: int) -> Module:
    """Initialize every parameter of ``model`` deterministically from ``seed``.

    Weights are uniform on (-1/sqrt(n), 1/sqrt(n)) with n the fan-in of the
    layer; modules are visited in a fixed traversal order.
    """
    rng = np.random.default_rng(seed)
    for _, mod in model.named_modules():
        mod.reset_parameters(rng)
    for p in model.parameters():
        p.apply_mask()
    return model


def uniform_fan_in(rng: np.random.Generator, shape, fan_in: int, where: str) -> np.ndarray:
    if fan_in <= 0:
        raise ConfigurationError(f"{where}: zero fan-in, cannot initialize")
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)
