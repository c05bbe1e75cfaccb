"""1D Gauss-type quadrature rules and affine interval maps.

Three families are provided on the reference interval [-1, 1]:

* Gauss--Legendre with ``n`` points, exact up to degree ``2n - 1``,
* right-sided Gauss--Radau with ``n`` points (the node +1 is always
  included), exact up to degree ``2n - 2``,
* Gauss--Lobatto with ``n`` points (both endpoints included), exact up
  to degree ``2n - 3``.

Radau and Lobatto nodes are found by Newton iteration on the defining
orthogonal-polynomial conditions; Legendre nodes come from numpy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LEGENDRE = "Legendre"
RADAU_RIGHT = "RadauRight"
LOBATTO = "Lobatto"

_NEWTON_TOL = 1e-15
_NEWTON_MAXIT = 100


@dataclass(frozen=True)
class QuadRule:
    """Quadrature nodes and weights on an interval (default [-1, 1])."""

    points: np.ndarray
    weights: np.ndarray
    kind: str

    def __post_init__(self):
        object.__setattr__(self, "points", np.asarray(self.points, dtype=float))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        if self.points.shape != self.weights.shape or self.points.ndim != 1:
            raise ValueError("points and weights must be 1D arrays of equal length")

    @property
    def n(self) -> int:
        return self.points.size

    def integrate(self, values: np.ndarray) -> float:
        """Apply the rule to function values sampled at the nodes."""
        return float(np.dot(self.weights, values))


def _legendre(m: int, x: np.ndarray):
    """Evaluate P_m and P_m' by the three-term recurrence."""
    x = np.asarray(x, dtype=float)
    p_prev = np.ones_like(x)
    if m == 0:
        return p_prev, np.zeros_like(x)
    p = x.copy()
    for j in range(1, m):
        p, p_prev = ((2 * j + 1) * x * p - j * p_prev) / (j + 1), p
    # derivative from (x^2 - 1) P_m' = m (x P_m - P_{m-1}), with the
    # analytic limit at the endpoints
    denom = x * x - 1.0
    at_end = np.abs(denom) < 1e-14
    with np.errstate(invalid="ignore", divide="ignore"):
        dp = m * (x * p - p_prev) / denom
    if np.any(at_end):
        end_val = 0.5 * m * (m + 1) * np.where(x > 0, 1.0, (-1.0) ** (m - 1))
        dp = np.where(at_end, end_val, dp)
    return p, dp


def gauss_legendre(n: int) -> QuadRule:
    """Standard Gauss--Legendre rule on [-1, 1], 1 <= n <= 20."""
    if not 1 <= n <= 20:
        raise ValueError(f"gauss_legendre: n must be in [1, 20], got {n}")
    pts, wts = np.polynomial.legendre.leggauss(n)
    return QuadRule(pts, wts, LEGENDRE)


def gauss_radau_right(n: int) -> QuadRule:
    """Right-sided Gauss--Radau rule on [-1, 1] including +1, 1 <= n <= 12."""
    if not 1 <= n <= 12:
        raise ValueError(f"gauss_radau_right: n must be in [1, 12], got {n}")
    if n == 1:
        return QuadRule(np.array([1.0]), np.array([2.0]), RADAU_RIGHT)
    # Free nodes are the roots of (P_{n-1} - P_n)/(1 - x); Newton on that
    # deflated polynomial keeps the fixed node at +1 out of the iteration.
    free = np.cos(2.0 * np.pi * np.arange(n - 1, 0, -1) / (2 * n - 1))
    for _ in range(_NEWTON_MAXIT):
        pm1, dpm1 = _legendre(n - 1, free)
        pn, dpn = _legendre(n, free)
        s = pm1 - pn
        ds = dpm1 - dpn
        h = s / (1.0 - free)
        dh = (ds * (1.0 - free) + s) / (1.0 - free) ** 2
        step = h / dh
        free = free - step
        if np.max(np.abs(step)) < _NEWTON_TOL:
            break
    pts = np.concatenate([np.sort(free), [1.0]])
    pm1, _ = _legendre(n - 1, pts)
    wts = (1.0 + pts) / (n * n * pm1**2)
    return QuadRule(pts, wts, RADAU_RIGHT)


def gauss_lobatto(n: int) -> QuadRule:
    """Gauss--Lobatto rule on [-1, 1] including both endpoints, 2 <= n <= 12."""
    if not 2 <= n <= 12:
        raise ValueError(f"gauss_lobatto: n must be in [2, 12], got {n}")
    m = n - 1
    if n == 2:
        interior = np.empty(0)
    else:
        # Interior nodes are the roots of P'_{n-1}.
        interior = np.cos(np.pi * np.arange(m - 1, 0, -1) / m)
        for _ in range(_NEWTON_MAXIT):
            p, dp = _legendre(m, interior)
            # P'' from the Legendre differential equation
            d2p = (2.0 * interior * dp - m * (m + 1) * p) / (1.0 - interior**2)
            step = dp / d2p
            interior = interior - step
            if np.max(np.abs(step)) < _NEWTON_TOL:
                break
    pts = np.concatenate([[-1.0], np.sort(interior), [1.0]])
    p, _ = _legendre(m, pts)
    wts = 2.0 / (n * m * p**2)
    return QuadRule(pts, wts, LOBATTO)


def map_to_interval(rule: QuadRule, t_start: float, t_end: float) -> QuadRule:
    """Affinely map a reference rule to [t_start, t_end]."""
    if not t_end > t_start:
        raise ValueError(f"empty interval [{t_start}, {t_end}]")
    mid = 0.5 * (t_start + t_end)
    half = 0.5 * (t_end - t_start)
    return QuadRule(mid + half * rule.points, half * rule.weights, rule.kind)


def exactness_degree(kind: str, n: int) -> int:
    """Highest polynomial degree integrated exactly by an n-point rule."""
    if kind == LEGENDRE:
        return 2 * n - 1
    if kind == RADAU_RIGHT:
        return 2 * n - 2
    if kind == LOBATTO:
        return 2 * n - 3
    raise ValueError(f"unknown rule kind {kind!r}")
