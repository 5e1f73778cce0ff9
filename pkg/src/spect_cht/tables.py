"""Special coefficients used by the moment-based CHT inversion.

Notation (all integrals over (-1, 1)):

* ``B_m = (1/pi) int t^m / sqrt(1 - t^2) dt``      -- :func:`chebyshev_moment`
* ``S_n = (1/pi) int t^n sqrt(1 - t^2) dt``        -- :func:`sqrt_weight_moment`
* ``T_n(t) = (1/pi) p.v. int tau^n sqrt(1 - tau^2) / (t - tau) dtau``
                                                   -- :func:`weighted_hilbert_power`
* ``T_i^j = (1/pi) int t^j T_i(t) / sqrt(1 - t^2) dt`` -- :func:`t_scalar`

Everything is evaluated through exact recursions; no quadrature is involved.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from math import comb

import numpy as np

__all__ = [
    "CoeffCache",
    "binomial",
    "chebyshev_moment",
    "gauss_chebyshev_rule",
    "sqrt_weight_moment",
    "t_scalar",
    "weighted_hilbert_power",
    "weighted_hilbert_powers",
]


@lru_cache(maxsize=None)
def _even_moments(count: int) -> tuple[float, ...]:
    # B_0, B_2, ..., B_{2(count-1)} via B_{2i} = B_{2i-2} (2i-1)/(2i); no factorial overflow
    out = [1.0]
    for i in range(1, count):
        out.append(out[-1] * (2 * i - 1) / (2 * i))
    return tuple(out)


def chebyshev_moment(m: int) -> float:
    """Return ``(1/pi) int_{-1}^{1} t^m / sqrt(1 - t^2) dt``.

    Zero for odd ``m``; ``(m-1)!!/m!!`` for even ``m > 0``; one for ``m = 0``.
    """
    if m < 0:
        raise ValueError(f"moment order must be non-negative, got {m}")
    if m % 2:
        return 0.0
    half = m // 2
    # round the cache size up so consecutive calls share one table
    size = max(64, 1 << (half + 1).bit_length())
    return _even_moments(size)[half]


def sqrt_weight_moment(n: int) -> float:
    """Return ``(1/pi) int_{-1}^{1} t^n sqrt(1 - t^2) dt``."""
    if n < 0:
        raise ValueError(f"moment order must be non-negative, got {n}")
    if n % 2:
        return 0.0
    return chebyshev_moment(n) - chebyshev_moment(n + 2)


def binomial(n: int, k: int) -> float:
    return float(comb(n, k))


def weighted_hilbert_powers(n_max: int, t):
    """All of ``T_0(t) .. T_{n_max}(t)`` stacked along a new leading axis.

    Uses ``T_0(t) = t`` and ``T_n(t) = t T_{n-1}(t) - S_{n-1}``.
    """
    t = np.asarray(t, dtype=float)
    out = np.empty((n_max + 1,) + t.shape)
    out[0] = t
    for n in range(1, n_max + 1):
        out[n] = t * out[n - 1] - sqrt_weight_moment(n - 1)
    return out


def weighted_hilbert_power(n: int, t):
    """``T_n(t)``, the weighted finite Hilbert transform of ``tau^n``.

    ``t`` may be a scalar or an array with entries in ``[-1, 1]``. The value
    is a degree ``n + 1`` polynomial in ``t``.
    """
    if n < 0:
        raise ValueError(f"order must be non-negative, got {n}")
    t_arr = np.asarray(t, dtype=float)
    if np.any(np.abs(t_arr) > 1.0):
        raise ValueError("weighted_hilbert_power is defined for |t| <= 1")
    res = weighted_hilbert_powers(n, t_arr)[n]
    return float(res) if res.ndim == 0 else res


@lru_cache(maxsize=None)
def t_scalar(i: int, j: int) -> float:
    """``T_i^j``, computed by the index-shifting recursion.

    ``T_{2n}^{2k+1} = T_{2n-1}^{2k+2}`` and
    ``T_{2n+1}^{2k} = T_{2n}^{2k+1} - S_{2n} B_{2k}``, seeded with
    ``T_0^{2k+1} = B_{2k+2}``. Same-parity pairs vanish.
    """
    if i < 0 or j < 0:
        raise ValueError(f"indices must be non-negative, got ({i}, {j})")
    if (i - j) % 2 == 0:
        return 0.0
    # walk down to i = 0 iteratively; i + j is invariant along the chain
    total = 0.0
    while i > 0:
        if i % 2:
            total -= sqrt_weight_moment(i - 1) * chebyshev_moment(j)
        i, j = i - 1, j + 1
    return total + chebyshev_moment(j + 1)


def gauss_chebyshev_rule(n: int) -> tuple[np.ndarray, float]:
    """First-kind Gauss-Chebyshev nodes and the common weight.

    ``int_{-1}^{1} s(t) / sqrt(1 - t^2) dt ~= weight * sum(s(nodes))`` with
    ``nodes[i-1] = cos((2i - 1) pi / (2n))`` (strictly decreasing) and
    ``weight = pi / n``. Exact for polynomials of degree ``<= 2n - 1``.
    """
    if n < 1:
        raise ValueError(f"rule needs at least one node, got n={n}")
    k = np.arange(1, n + 1)
    nodes = np.cos((2 * k - 1) * np.pi / (2 * n))
    if n % 2:
        nodes[n // 2] = 0.0
    return nodes, np.pi / n


@dataclass(frozen=True)
class CoeffCache:
    """Immutable tables of ``B``, ``S`` and ``T_i^j`` up to ``max_order``."""

    max_order: int
    b_table: np.ndarray = field(init=False, repr=False)
    s_table: np.ndarray = field(init=False, repr=False)
    t_ij_table: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.max_order < 0:
            raise ValueError("max_order must be non-negative")
        size = self.max_order + 1
        b = np.array([chebyshev_moment(m) for m in range(size)])
        s = np.array([sqrt_weight_moment(m) for m in range(size)])
        tij = np.array([[t_scalar(i, j) for j in range(size)] for i in range(size)])
        for arr in (b, s, tij):
            arr.setflags(write=False)
        object.__setattr__(self, "b_table", b)
        object.__setattr__(self, "s_table", s)
        object.__setattr__(self, "t_ij_table", tij)

    @classmethod
    def for_order(cls, M: int) -> "CoeffCache":
        """Cache deep enough for moment truncation order ``M``."""
        return cls(4 * M + 2)

    def B(self, m: int) -> float:
        return float(self.b_table[m])

    def S(self, n: int) -> float:
        return float(self.s_table[n])

    def T(self, i: int, j: int) -> float:
        return float(self.t_ij_table[i, j])
