"""Inversion of the finite cosh-weighted Hilbert transform (CHT) on (-1, 1).

The forward problem in standard form is::

    h(tau) = (1/pi) p.v. int_{-1}^{1} cosh(mu1 (tau - t)) / (tau - t) f(t) dt
    c_mu1  = int_{-1}^{1} f(t) cosh(mu1 t) dt

The inverse is computed as the Tricomi inverse of ``h`` (which would be exact
for ``mu1 = 0``) plus a correction built from the moments of ``f``. The moments
come from two small linear systems, one for the even moments and one for the
odd ones.

Node-sampled functions always live on the first-kind Chebyshev grid returned
by :func:`spect_cht.tables.gauss_chebyshev_rule`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from math import factorial

import numpy as np
from scipy.interpolate import CubicSpline

from .tables import (
    CoeffCache,
    binomial,
    gauss_chebyshev_rule,
    weighted_hilbert_powers,
)

log = logging.getLogger(__name__)

EDGE_EPS = 0.02
DEFAULT_M = 6

__all__ = [
    "DEFAULT_M",
    "EDGE_EPS",
    "MomentSystems",
    "MomentVector",
    "SingularSystemError",
    "StandardLine",
    "assemble_systems",
    "barycentric_matrix",
    "compute_d",
    "invert_line",
    "normalize_line",
    "read_line",
    "solve_moments",
    "synthesize",
    "tricomi_inverse",
    "weighted_finite_hilbert",
    "write_line",
]


class SingularSystemError(np.linalg.LinAlgError):
    pass


# ----------------------------------------------------------------------------
# interpolation on the first-kind Chebyshev grid
# ----------------------------------------------------------------------------


@lru_cache(maxsize=32)
def _cheb1(n: int):
    nodes, _ = gauss_chebyshev_rule(n)
    k = np.arange(n)
    weights = (-1.0) ** k * np.sin((2 * k + 1) * np.pi / (2 * n))
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def barycentric_matrix(n: int, x) -> np.ndarray:
    """Matrix mapping values at the ``n`` first-kind nodes to values at ``x``.

    Second (true) barycentric formula with the closed-form Chebyshev weights.
    Rows for points that coincide with a node are unit vectors.
    """
    nodes, w = _cheb1(n)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    diff = x[:, None] - nodes[None, :]
    exact = diff == 0.0
    hit = exact.any(axis=1)
    diff[exact] = 1.0
    c = w[None, :] / diff
    mat = c / c.sum(axis=1, keepdims=True)
    if hit.any():
        mat[hit] = exact[hit].astype(float)
    return mat


def _interp(values: np.ndarray, x) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    return barycentric_matrix(values.shape[-1], x) @ values


# ----------------------------------------------------------------------------
# weighted finite Hilbert transform and Tricomi inversion
# ----------------------------------------------------------------------------


def _second_kind_rule(m: int):
    j = np.arange(1, m + 1)
    ang = j * np.pi / (m + 1)
    return np.cos(ang), (np.pi / (m + 1)) * np.sin(ang) ** 2


def _pick_rule(n: int, t: np.ndarray, min_gap: float = 1e-8):
    # even m never puts a second-kind node on a first-kind node; for off-grid
    # targets bump m until no node sits on top of a target
    m = n + (n % 2)
    for _ in range(64):
        tau, omega = _second_kind_rule(m)
        if t.size == 0 or np.min(np.abs(t[:, None] - tau[None, :])) > min_gap:
            return tau, omega
        m += 2
    raise RuntimeError("could not separate quadrature nodes from targets")


def _hilbert_matrix(n: int, t: np.ndarray) -> np.ndarray:
    tau, omega = _pick_rule(n, t)
    to_tau = barycentric_matrix(n, tau)
    to_t = barycentric_matrix(n, t)
    kern = omega[None, :] / (t[:, None] - tau[None, :])
    # (1/pi) sum omega (h(tau) - h(t)) / (t - tau) + t h(t)
    return (kern @ to_tau - kern.sum(axis=1)[:, None] * to_t) / np.pi + t[:, None] * to_t


@lru_cache(maxsize=16)
def _hilbert_matrix_at_nodes(n: int) -> np.ndarray:
    nodes, _ = _cheb1(n)
    mat = _hilbert_matrix(n, nodes)
    mat.setflags(write=False)
    return mat


def weighted_finite_hilbert(h_nodes, t) -> np.ndarray | float:
    """``(1/pi) p.v. int sqrt(1 - tau^2) h(tau) / (t - tau) dtau``.

    ``h`` is given by its samples at the first-kind Chebyshev nodes and is
    interpolated barycentrically. The singular part is subtracted analytically
    (``(1/pi) p.v. int sqrt(1 - tau^2) / (t - tau) dtau = t``) and the smooth
    remainder is integrated with a second-kind Gauss-Chebyshev rule, which is
    exact for the polynomial interpolant.
    """
    h_nodes = np.asarray(h_nodes, dtype=float)
    scalar = np.ndim(t) == 0
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(np.abs(t_arr) >= 1.0):
        raise ValueError("weighted_finite_hilbert needs |t| < 1")
    out = _hilbert_matrix(h_nodes.shape[-1], t_arr) @ h_nodes
    return float(out[0]) if scalar else out


@dataclass(frozen=True)
class StandardLine:
    """One CHT problem in standard form, sampled at first-kind nodes."""

    mu1: float
    h_nodes: np.ndarray
    c_mu1: float
    # affine map back to the image line: x2 = center + half_width * t
    center: float = 0.0
    half_width: float = 1.0

    def __post_init__(self):
        h = np.asarray(self.h_nodes, dtype=float)
        if h.ndim != 1 or h.size < 2:
            raise ValueError("h_nodes must be a 1-D array with at least 2 samples")
        if not np.all(np.isfinite(h)) or not np.isfinite(self.c_mu1):
            raise ValueError("StandardLine data must be finite")
        if self.mu1 < 0:
            raise ValueError(f"mu1 must be non-negative, got {self.mu1}")
        object.__setattr__(self, "h_nodes", h)

    @property
    def n(self) -> int:
        return self.h_nodes.size

    @property
    def nodes(self) -> np.ndarray:
        return _cheb1(self.n)[0]


def normalize_line(x2, b_line, L: float, U: float, mu0: float,
                   g0: float, gpi: float, n: int) -> StandardLine:
    """Map the DBP samples of one vertical line to the standard CHT problem.

    Parameters
    ----------
    x2, b_line : array_like
        Positions along the line and the DBP values ``b(x1, x2)`` there.
    L, U : float
        Lower and upper end of the chord of the support on this line.
    mu0 : float
        Attenuation coefficient.
    g0, gpi : float
        Projections ``g(x1, 0)`` and ``g(-x1, pi)`` of this line.
    n : int
        Number of first-kind nodes for the standard problem.
    """
    if not U > L:
        raise ValueError(f"chord needs U > L, got L={L}, U={U}")
    x2 = np.asarray(x2, dtype=float)
    b_line = np.asarray(b_line, dtype=float)
    order = np.argsort(x2)
    x2, b_line = x2[order], b_line[order]
    center = 0.5 * (U + L)
    half = 0.5 * (U - L)
    nodes, _ = gauss_chebyshev_rule(n)
    pos = center + half * nodes
    tol = 1e-12 * max(1.0, abs(U), abs(L))
    if pos.min() < x2[0] - tol or pos.max() > x2[-1] + tol:
        raise ValueError("line samples do not cover the node positions of the chord")
    b_at = CubicSpline(x2, b_line)(pos) if x2.size > 3 else np.interp(pos, x2, b_line)
    # the Hilbert kernel is scale invariant, so the chord half-width cancels
    h = -b_at / (2.0 * np.pi)
    c_mu1 = (np.exp(-center * mu0) * g0 + np.exp(center * mu0) * gpi) / (2.0 * half)
    return StandardLine(mu1=half * mu0, h_nodes=h, c_mu1=float(c_mu1),
                        center=center, half_width=half)


def tricomi_inverse(line: StandardLine) -> np.ndarray:
    """Samples of ``f_mu1 = c_mu1/pi - W[h_mu1]`` at the line's nodes."""
    return line.c_mu1 / np.pi - _hilbert_matrix_at_nodes(line.n) @ line.h_nodes


# ----------------------------------------------------------------------------
# moment systems
# ----------------------------------------------------------------------------


def compute_d(f_mu1_nodes, M: int) -> np.ndarray:
    """Chebyshev-weighted moments ``d_k = int t^k f_mu1(t) / sqrt(1 - t^2) dt``.

    Returns ``d_0 .. d_{2M}``, evaluated with the first-kind Gauss-Chebyshev rule
    on the sample nodes.
    """
    f = np.asarray(f_mu1_nodes, dtype=float)
    n = f.size
    if n < 2 * M + 2:
        raise ValueError(f"need at least 2M+2={2 * M + 2} nodes, got {n}")
    nodes, weight = gauss_chebyshev_rule(n)
    powers = nodes[None, :] ** np.arange(2 * M + 1)[:, None]
    return weight * (powers @ f)


def _taylor(mu1: float, k: int) -> float:
    return mu1 ** (2 * k) / factorial(2 * k)


@dataclass(frozen=True)
class MomentSystems:
    M: int
    mu1: float
    Q_hat: np.ndarray
    P_hat: np.ndarray

    def is_diagonally_dominant(self) -> bool:
        def dom(a):
            diag = np.abs(np.diag(a))
            return bool(np.all(diag > np.abs(a).sum(axis=1) - diag))

        return dom(self.Q_hat) and dom(self.P_hat)


def assemble_systems(mu1: float, M: int, cache: CoeffCache | None = None) -> MomentSystems:
    """Truncated even (``Q_hat``) and odd (``P_hat``) moment systems.

    Even block, ``i, j = 0..M``::

        Q_ij = delta_ij + [j >= 1] B_{2i} a_j
               - sum_{k=j+1}^{M} a_k C(2k-1, 2j) T^{2i}_{2(k-j)-1}

    Odd block, ``i, j = 1..M``::

        P_ij = delta_ij + sum_{k=j}^{M} a_k C(2k-1, 2j-1) T^{2i-1}_{2(k-j)}

    with ``a_k = mu1^(2k) / (2k)!``.
    """
    if M < 1:
        raise ValueError(f"moment order must be >= 1, got {M}")
    if cache is None:
        cache = CoeffCache.for_order(M)
    if cache.max_order < 2 * M:
        raise ValueError(f"coefficient cache too shallow for M={M}")
    a = [_taylor(mu1, k) for k in range(M + 1)]
    Q = np.eye(M + 1)
    for i in range(M + 1):
        b2i = cache.B(2 * i)
        for j in range(M + 1):
            if j >= 1:
                Q[i, j] += b2i * a[j]
            for k in range(j + 1, M + 1):
                Q[i, j] -= a[k] * binomial(2 * k - 1, 2 * j) * cache.T(2 * (k - j) - 1, 2 * i)
    P = np.eye(M)
    for i in range(1, M + 1):
        for j in range(1, M + 1):
            for k in range(j, M + 1):
                P[i - 1, j - 1] += a[k] * binomial(2 * k - 1, 2 * j - 1) * cache.T(2 * (k - j), 2 * i - 1)
    return MomentSystems(M=M, mu1=float(mu1), Q_hat=Q, P_hat=P)


@dataclass(frozen=True)
class MomentVector:
    M: int
    even: np.ndarray  # c_0, c_2, ..., c_2M
    odd: np.ndarray  # c_1, c_3, ..., c_{2M-1}
    cond_even: float = 1.0
    cond_odd: float = 1.0

    def full(self) -> np.ndarray:
        """Interleaved ``c_0 .. c_2M``."""
        out = np.empty(2 * self.M + 1)
        out[0::2] = self.even
        out[1::2] = self.odd
        return out

    def within_bound(self, f_max: float) -> bool:
        # |c_k| <= max|f| * 2 / (k + 1)
        c = self.full()
        k = np.arange(c.size)
        return bool(np.all(np.abs(c) <= f_max * 2.0 / (k + 1) * (1 + 1e-9) + 1e-15))


def _solve(a: np.ndarray, rhs: np.ndarray, name: str, mu1: float, M: int):
    cond = float(np.linalg.cond(a)) if a.size else 1.0
    if not np.isfinite(cond) or cond > 1.0 / np.finfo(float).eps:
        raise SingularSystemError(f"{name} system singular to working precision (mu1={mu1}, M={M})")
    try:
        return np.linalg.solve(a, rhs), cond
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(f"{name} system singular (mu1={mu1}, M={M})") from exc


def solve_moments(systems: MomentSystems, d) -> MomentVector:
    """Solve ``Q_hat c_even = d_even`` and ``P_hat c_odd = d_odd``."""
    d = np.asarray(d, dtype=float)
    M = systems.M
    if d.size != 2 * M + 1:
        raise ValueError(f"expected {2 * M + 1} d-values, got {d.size}")
    even, ce = _solve(systems.Q_hat, d[0::2], "even (Q_hat)", systems.mu1, M)
    odd, co = _solve(systems.P_hat, d[1::2], "odd (P_hat)", systems.mu1, M)
    return MomentVector(M=M, even=even, odd=odd, cond_even=ce, cond_odd=co)


# ----------------------------------------------------------------------------
# synthesis
# ----------------------------------------------------------------------------


def _correction(moments: MomentVector, mu1: float, t: np.ndarray) -> np.ndarray:
    M = moments.M
    c = moments.full()
    tp = weighted_hilbert_powers(2 * M - 1, t)
    corr = np.zeros_like(t)
    const = 0.0
    for k in range(1, M + 1):
        a = _taylor(mu1, k)
        if a == 0.0:
            continue
        const += a * c[2 * k]
        acc = np.zeros_like(t)
        for l in range(2 * k):
            acc += (-1) ** l * binomial(2 * k - 1, l) * c[l] * tp[2 * k - 1 - l]
        corr += a * acc
    return (corr - const) / np.pi


def _synthesize_values(f_mu1_at_t: np.ndarray, moments: MomentVector, mu1: float,
                       t: np.ndarray, edge: float) -> np.ndarray:
    out = np.zeros_like(t)
    inside = np.abs(t) <= 1.0 - edge
    ti = t[inside]
    out[inside] = (f_mu1_at_t[inside] + _correction(moments, mu1, ti)) / np.sqrt(1.0 - ti * ti)
    return out


def synthesize(f_mu1_nodes, moments: MomentVector, mu1: float, t, edge: float = EDGE_EPS):
    """Reconstruct ``f(t)`` from ``f_mu1`` node samples and the solved moments.

    ``f_mu1`` is interpolated barycentrically at ``t``. Points with
    ``|t| > 1 - edge`` are rejected for scalar input; for array input they are
    returned as zero (``f`` is supported inside ``(-1, 1)``).
    """
    scalar = np.ndim(t) == 0
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    if scalar and abs(t_arr[0]) > 1.0 - edge:
        raise ValueError(f"|t| must not exceed {1.0 - edge}")
    fm = _interp(f_mu1_nodes, t_arr)
    out = _synthesize_values(fm, moments, mu1, t_arr, edge)
    return float(out[0]) if scalar else out


@dataclass(frozen=True)
class LineSolution:
    """Everything produced while inverting one line."""

    line: StandardLine
    f_mu1: np.ndarray
    moments: MomentVector
    f_nodes: np.ndarray

    def evaluate(self, t, edge: float = EDGE_EPS) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return synthesize(self.f_mu1, self.moments, self.line.mu1, t, edge)


def solve_line(line: StandardLine, M: int = DEFAULT_M, cache: CoeffCache | None = None,
               edge: float = EDGE_EPS) -> LineSolution:
    f_mu1 = tricomi_inverse(line)
    d = compute_d(f_mu1, M)
    systems = assemble_systems(line.mu1, M, cache)
    moments = solve_moments(systems, d)
    log.debug("mu1=%.4g M=%d cond(Q)=%.3g cond(P)=%.3g", line.mu1, M,
              moments.cond_even, moments.cond_odd)
    f_nodes = _synthesize_values(f_mu1, moments, line.mu1, line.nodes, edge)
    return LineSolution(line=line, f_mu1=f_mu1, moments=moments, f_nodes=f_nodes)


def invert_line(line: StandardLine, M: int = DEFAULT_M, cache: CoeffCache | None = None,
                edge: float = EDGE_EPS) -> np.ndarray:
    """Recover ``f`` at the line's nodes (zero where ``|t| > 1 - edge``)."""
    return solve_line(line, M, cache, edge).f_nodes


# ----------------------------------------------------------------------------
# single-line debug format
# ----------------------------------------------------------------------------


def write_line(path, line: StandardLine) -> None:
    """Plain-text line file: ``mu1``, ``c_mu1`` and one ``node value`` pair per row."""
    with open(path, "w") as fh:
        fh.write("# standard-form CHT line\n")
        fh.write(f"mu1 {float(line.mu1)!r}\n")
        fh.write(f"c_mu1 {float(line.c_mu1)!r}\n")
        for q, h in zip(line.nodes, line.h_nodes):
            fh.write(f"{float(q)!r} {float(h)!r}\n")


def read_line(path) -> StandardLine:
    mu1 = c_mu1 = None
    nodes, values = [], []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            text = raw.split("#", 1)[0].strip()
            if not text:
                continue
            parts = text.split()
            if parts[0] == "mu1" and len(parts) == 2:
                mu1 = float(parts[1])
            elif parts[0] == "c_mu1" and len(parts) == 2:
                c_mu1 = float(parts[1])
            elif len(parts) == 2:
                nodes.append(float(parts[0]))
                values.append(float(parts[1]))
            else:
                raise ValueError(f"{path}:{lineno}: cannot parse {raw.strip()!r}")
    if mu1 is None or c_mu1 is None:
        raise ValueError(f"{path}: missing mu1 or c_mu1 record")
    if not values:
        raise ValueError(f"{path}: no node samples")
    nodes = np.array(nodes)
    values = np.array(values)
    expected, _ = gauss_chebyshev_rule(values.size)
    order = np.argsort(-nodes)
    nodes, values = nodes[order], values[order]
    if not np.allclose(nodes, expected, atol=1e-9):
        # resample arbitrary node sets onto the Chebyshev grid
        values = CubicSpline(nodes[::-1], values[::-1])(expected)
    return StandardLine(mu1=mu1, h_nodes=values, c_mu1=c_mu1)
