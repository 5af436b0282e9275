"""Nodal Lagrange basis over Gauss-Legendre points on the unit interval.

All cell data in the solver is stored as nodal values at tensor products of
these points.  Because no node lies on the interval ends, face values are
obtained by extrapolation with the trace vectors.
"""
from __future__ import annotations

import numpy as np

from .errors import ConfigError

MAX_QUADRATURE_POINTS = 16
ORDER_RANGE = (1, 7)


def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of the n-point Gauss-Legendre rule on [0, 1].

    Exact for polynomials of degree <= 2n - 1.  Weights sum to one.
    """
    if not 1 <= n <= MAX_QUADRATURE_POINTS:
        raise ConfigError(f"quadrature point count {n} outside [1, {MAX_QUADRATURE_POINTS}]")
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _barycentric_weights(nodes: np.ndarray) -> np.ndarray:
    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    return 1.0 / diff.prod(axis=1)


class PolynomialBasis:
    """Degree-p nodal basis: quadrature, differentiation and trace extrapolation.

    Attributes:
        order:        polynomial degree p
        n:            number of nodes per axis, p + 1
        nodes/weights: Gauss-Legendre rule on [0, 1]
        diff_matrix:  D[i, j] = l_j'(node_i); annihilates constants
        trace_left/trace_right: l_j(0) and l_j(1), exact for degree <= p
    """

    def __init__(self, order: int):
        lo, hi = ORDER_RANGE
        if not lo <= order <= hi:
            raise ConfigError(f"polynomial order {order} outside [{lo}, {hi}]")
        self.order = order
        self.n = order + 1
        self.nodes, self.weights = gauss_legendre(self.n)
        self._bary = _barycentric_weights(self.nodes)
        self.diff_matrix = self._build_diff_matrix()
        self.trace_left = self.lagrange_eval(np.array([0.0]))[0]
        self.trace_right = self.lagrange_eval(np.array([1.0]))[0]

    def _build_diff_matrix(self) -> np.ndarray:
        x, b = self.nodes, self._bary
        d = np.zeros((self.n, self.n))
        for i in range(self.n):
            for j in range(self.n):
                if i != j:
                    d[i, j] = (b[j] / b[i]) / (x[i] - x[j])
            d[i, i] = -d[i].sum()
        return d

    def lagrange_eval(self, points: np.ndarray) -> np.ndarray:
        """Matrix E with E[k, j] = l_j(points[k]); rows sum to one."""
        points = np.asarray(points, dtype=float)
        out = np.empty((len(points), self.n))
        for k, p in enumerate(points):
            diff = p - self.nodes
            hit = np.isclose(diff, 0.0, atol=1e-14)
            if hit.any():
                row = np.zeros(self.n)
                row[np.argmax(hit)] = 1.0
            else:
                row = self._bary / diff
                row /= row.sum()
            out[k] = row
        return out

    def trace(self, side: int) -> np.ndarray:
        """Extrapolation weights for side 0 (coordinate 0) or side 1 (coordinate 1)."""
        return self.trace_left if side == 0 else self.trace_right


_BASIS_CACHE: dict[int, PolynomialBasis] = {}


def get_basis(order: int) -> PolynomialBasis:
    if order not in _BASIS_CACHE:
        _BASIS_CACHE[order] = PolynomialBasis(order)
    return _BASIS_CACHE[order]
