"""Butterfly supports, factors and chains.

A support pattern ``(a, b, c, d)`` is the 0/1 matrix ``I_a ⊗ 1_{b×c} ⊗ I_d``
of shape ``(a*b*d, a*c*d)``. Row ``(i, j, k)`` (i < a, j < b, k < d, in
mixed radix) is connected to the ``c`` columns ``(i, l, k)``, l < c.

Factor values are stored as an array of shape ``(a, b, d, c)``; flattening it
gives the nonzeros in row-major order of the expanded matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import prod

import numpy as np

from ..errors import ConfigurationError, ShapeError


@dataclass(frozen=True, order=True)
class SupportPattern:
    a: int
    b: int
    c: int
    d: int

    def __post_init__(self):
        if min(self.a, self.b, self.c, self.d) < 1:
            raise ConfigurationError(f"pattern entries must be positive: {self}")

    @property
    def rows(self) -> int:
        return self.a * self.b * self.d

    @property
    def cols(self) -> int:
        return self.a * self.c * self.d

    @property
    def nnz(self) -> int:
        return self.a * self.b * self.c * self.d

    @property
    def value_shape(self) -> tuple[int, int, int, int]:
        return (self.a, self.b, self.d, self.c)

    def to_dense(self) -> np.ndarray:
        ones = np.ones((self.b, self.c))
        return np.kron(np.eye(self.a), np.kron(ones, np.eye(self.d)))

    def support_index(self) -> tuple[np.ndarray, np.ndarray]:
        """(row, col) of every nonzero, in canonical (row-major) order."""
        i, j, k, l = np.meshgrid(np.arange(self.a), np.arange(self.b), np.arange(self.d),
                                 np.arange(self.c), indexing="ij")
        rows = (i * self.b + j) * self.d + k
        cols = (i * self.c + l) * self.d + k
        return rows.ravel(), cols.ravel()


def pattern_nnz(pattern: SupportPattern) -> int:
    return pattern.nnz


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


def square_pattern(n: int, level: int) -> SupportPattern:
    """Support of the ``level``-th factor (1-based) of the size-``n`` square butterfly."""
    if not _is_power_of_two(n) or n < 2:
        raise ConfigurationError(f"square butterfly size must be a power of two >= 2, got {n}")
    depth = n.bit_length() - 1
    if not 1 <= level <= depth:
        raise ConfigurationError(f"level must lie in [1, {depth}], got {level}")
    return SupportPattern(2 ** (level - 1), 2, 2, n // 2 ** level)


class ButterflyFactor:
    """Sparse matrix whose nonzeros live on a support pattern."""

    def __init__(self, pattern: SupportPattern, values=None):
        self.pattern = pattern
        if values is None:
            values = np.zeros(pattern.value_shape)
        values = np.asarray(values, dtype=np.float64)
        if values.size != pattern.nnz:
            raise ShapeError(f"factor {pattern} needs {pattern.nnz} values, got {values.size}")
        self.values = values.reshape(pattern.value_shape)

    @property
    def shape(self) -> tuple[int, int]:
        return self.pattern.rows, self.pattern.cols

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        r, c = self.pattern.support_index()
        out[r, c] = self.values.ravel()
        return out

    def apply(self, z: np.ndarray) -> np.ndarray:
        """Right-multiply a batch of row vectors: ``z (n, cols) -> (n, rows)``."""
        a, b, c, d = self.pattern.a, self.pattern.b, self.pattern.c, self.pattern.d
        n = z.shape[0]
        zt = z.reshape(n, a, c, d).transpose(1, 3, 0, 2)           # (a, d, n, c)
        vt = self.values.transpose(0, 2, 3, 1)                     # (a, d, c, b)
        return np.matmul(zt, vt).transpose(2, 0, 3, 1).reshape(n, a * b * d)

    def apply_backward(self, z: np.ndarray, grad: np.ndarray):
        """Gradients of :meth:`apply` w.r.t. ``values`` and ``z``."""
        a, b, c, d = self.pattern.a, self.pattern.b, self.pattern.c, self.pattern.d
        n = z.shape[0]
        zt = z.reshape(n, a, c, d).transpose(1, 3, 2, 0)           # (a, d, c, n)
        gt = grad.reshape(n, a, b, d).transpose(1, 3, 0, 2)        # (a, d, n, b)
        dvals = np.matmul(zt, gt).transpose(0, 3, 1, 2)            # (a, b, d, c)
        vt = self.values.transpose(0, 2, 1, 3)                     # (a, d, b, c)
        dz = np.matmul(gt, vt).transpose(2, 0, 3, 1).reshape(n, a * c * d)
        return dvals, dz


class OpCounter:
    """Per-call multiply-add tally for :func:`chain_matvec`."""

    def __init__(self):
        self.count = 0


class ButterflyChain:
    """Product ``X1 @ X2 @ ... @ XL`` of butterfly factors."""

    def __init__(self, factors):
        self.factors = list(factors)
        if not self.factors:
            raise ConfigurationError("a chain needs at least one factor")
        for left, right in zip(self.factors, self.factors[1:]):
            if left.shape[1] != right.shape[0]:
                raise ShapeError(
                    f"incompatible factors {left.pattern} ({left.shape}) and "
                    f"{right.pattern} ({right.shape})"
                )

    @property
    def rows(self) -> int:
        return self.factors[0].shape[0]

    @property
    def cols(self) -> int:
        return self.factors[-1].shape[1]

    @property
    def num_params(self) -> int:
        return sum(f.pattern.nnz for f in self.factors)

    def patterns(self) -> tuple[SupportPattern, ...]:
        return tuple(f.pattern for f in self.factors)


def chain_matvec(chain: ButterflyChain, x: np.ndarray, counter: OpCounter | None = None) -> np.ndarray:
    """``y = X1 (X2 (... (XL x)))`` without forming the dense product.

    ``x`` may be a vector of length ``cols`` or a batch ``(n, cols)``. If a
    counter is given it receives the number of scalar multiply-adds performed
    (``sum of nnz`` per vector).
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    z = x[None, :] if single else x
    if z.shape[1] != chain.cols:
        raise ShapeError(f"chain has {chain.cols} columns, input has length {z.shape[1]}")
    for f in reversed(chain.factors):
        z = f.apply(z)
        if counter is not None:
            counter.count += f.pattern.nnz * x.reshape(-1, chain.cols).shape[0]
    return z[0] if single else z


def chain_to_dense(chain: ButterflyChain) -> np.ndarray:
    out = chain.factors[0].to_dense()
    for f in chain.factors[1:]:
        out = out @ f.to_dense()
    return out


# -- chain shapes ------------------------------------------------------------

@dataclass(frozen=True)
class ChainSpec:
    rows: int
    cols: int
    patterns: tuple[SupportPattern, ...]

    @property
    def num_factors(self) -> int:
        return len(self.patterns)

    @property
    def num_params(self) -> int:
        return sum(p.nnz for p in self.patterns)

    def shape_key(self) -> tuple:
        return tuple((p.a, p.b, p.c, p.d) for p in self.patterns)

    def to_dict(self) -> dict:
        return {"rows": self.rows, "cols": self.cols, "patterns": [list(k) for k in self.shape_key()]}

    @classmethod
    def from_dict(cls, d: dict) -> "ChainSpec":
        return cls(d["rows"], d["cols"], tuple(SupportPattern(*p) for p in d["patterns"]))


def is_monotone_chain(patterns, rows: int, cols: int) -> bool:
    """Check the chain rules used throughout this package.

    * ends: ``a_1 = 1``, ``d_L = 1``, ``rows = b_1 d_1``, ``cols = a_L c_L``;
    * chaining: ``a_{l+1} = a_l c_l`` and ``d_l = b_{l+1} d_{l+1}`` so the
      product support is the full ``rows × cols`` block, each entry reached
      by exactly one path;
    * monotone widths: the intermediate dimensions ``a_l c_l d_l`` move in
      one direction only (``c_l >= b_l`` for all l, or ``c_l <= b_l`` for all l);
    * with two or more factors every block is nontrivial (``b_l, c_l >= 2``).
    """
    pats = list(patterns)
    if not pats:
        return False
    if pats[0].a != 1 or pats[-1].d != 1:
        return False
    if pats[0].rows != rows or pats[-1].cols != cols:
        return False
    for p, q in zip(pats, pats[1:]):
        if q.a != p.a * p.c or p.d != q.b * q.d:
            return False
    if not (all(p.c >= p.b for p in pats) or all(p.c <= p.b for p in pats)):
        return False
    if len(pats) > 1 and any(min(p.b, p.c) < 2 for p in pats):
        return False
    return True


@lru_cache(maxsize=None)
def _ordered_factorizations(n: int, parts: int, minimum: int) -> tuple[tuple[int, ...], ...]:
    if parts == 1:
        return ((n,),) if n >= minimum else ()
    out = []
    for f in range(minimum, n + 1):
        if n % f == 0:
            out.extend((f,) + rest for rest in _ordered_factorizations(n // f, parts - 1, minimum))
    return tuple(out)


def _patterns_from_blocks(bs, cs) -> tuple[SupportPattern, ...]:
    pats = []
    for i in range(len(bs)):
        pats.append(SupportPattern(prod(cs[:i]), bs[i], cs[i], prod(bs[i + 1:])))
    return tuple(pats)


def enumerate_monotone_chains(rows: int, cols: int, num_factors: int) -> list[ChainSpec]:
    """All monotone chains with ``num_factors`` factors for a ``rows × cols`` matrix.

    A chain is fixed by ordered factorizations ``rows = b_1...b_L`` and
    ``cols = c_1...c_L``; the remaining entries follow from the chaining
    rules (see :func:`is_monotone_chain`). Sorted by parameter count, then
    lexicographically by shape.
    """
    if rows < 1 or cols < 1 or num_factors < 1:
        raise ConfigurationError("rows, cols and number of factors must be >= 1")
    if num_factors == 1:
        return [ChainSpec(rows, cols, (SupportPattern(1, rows, cols, 1),))]
    specs = []
    for bs in _ordered_factorizations(rows, num_factors, 2):
        for cs in _ordered_factorizations(cols, num_factors, 2):
            if all(c >= b for b, c in zip(bs, cs)) or all(c <= b for b, c in zip(bs, cs)):
                specs.append(ChainSpec(rows, cols, _patterns_from_blocks(bs, cs)))
    specs.sort(key=lambda s: (s.num_params, s.shape_key()))
    return specs


def select_min_param_chain(rows: int, cols: int, num_factors: int) -> ChainSpec:
    chains = enumerate_monotone_chains(rows, cols, num_factors)
    if not chains:
        raise ConfigurationError(
            f"no monotone chain with {num_factors} factors for a {rows}x{cols} matrix"
        )
    return min(chains, key=lambda s: (s.num_params, s.shape_key()))


def random_chain(spec: ChainSpec, rng: np.random.Generator) -> ButterflyChain:
    """Chain with each factor's values uniform on (-1/sqrt(c), 1/sqrt(c))."""
    factors = []
    for p in spec.patterns:
        bound = 1.0 / np.sqrt(p.c)
        factors.append(ButterflyFactor(p, rng.uniform(-bound, bound, size=p.value_shape)))
    return ButterflyChain(factors)


def square_chain_spec(n: int) -> ChainSpec:
    depth = n.bit_length() - 1
    return ChainSpec(n, n, tuple(square_pattern(n, level) for level in range(1, depth + 1)))
