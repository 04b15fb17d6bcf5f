"""Central finite-difference gradient checking.

Coordinates whose +/- step flips the sign pattern of any ReLU straddle a
kink, where the central difference is not an estimate of the derivative;
those coordinates are excluded from the comparison and counted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import ReLU


def numerical_gradient(f, x: np.ndarray, step: float = 1e-3, signature=None):
    """Central differences of scalar ``f()`` w.r.t. array ``x`` (perturbed in place).

    If ``signature`` is given it is called after each evaluation of ``f``;
    coordinates where the two signatures differ are returned as NaN.
    """
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        fp = f()
        sp = signature() if signature else None
        flat[i] = old - step
        fm = f()
        sm = signature() if signature else None
        flat[i] = old
        g[i] = np.nan if sp != sm else (fp - fm) / (2 * step)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


@dataclass
class GradCheckResult:
    errors: dict = field(default_factory=dict)
    skipped: int = 0
    checked: int = 0

    @property
    def max_error(self) -> float:
        return max(self.errors.values())


def check_module_gradients(module, x: np.ndarray, seed: int = 0, step: float = 1e-3) -> GradCheckResult:
    """Compare analytic and numerical gradients of ``sum(module(x) * R)``.

    ``R`` is a fixed random projection. Errors are norm-wise relative errors
    for the input (key ``"input"``) and each parameter. The module is used in
    its current train/eval mode.
    """
    rng = np.random.default_rng(seed)
    relus = [m for _, m in module.named_modules() if isinstance(m, ReLU)]
    out = module.forward(x)
    proj = rng.standard_normal(out.shape)
    module.zero_grad()
    grad_x = module.backward(proj)

    def loss():
        return float(np.sum(module.forward(x) * proj))

    def signature():
        return b"".join(np.packbits(r._cache).tobytes() for r in relus)

    result = GradCheckResult()
    targets = [("input", x, grad_x)] + [
        (name, p.value, p.grad.copy()) for name, p in module.named_parameters()
    ]
    for name, arr, analytic in targets:
        numeric = numerical_gradient(loss, arr, step, signature if relus else None)
        kink = np.isnan(numeric)
        result.skipped += int(kink.sum())
        result.checked += int((~kink).sum())
        result.errors[name] = relative_error(analytic[~kink], numeric[~kink])
    for _, m in module.named_modules():
        m._cache = None
    return result
