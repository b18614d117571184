"""Gauss rules for probability measures and the nodal PCE spaces they define.

Each uncertainty dimension is discretized by the Lagrange polynomials through
the nodes of a Gauss rule for its probability measure. Because the rule is
exact up to degree ``2d-1``, the mass matrix of that nodal basis is the
diagonal matrix of the quadrature weights.
"""

__all__ = [
    "UniformMeasure",
    "QuadratureRule",
    "MassFactor",
    "IndefiniteMatrixError",
    "gauss_legendre",
    "gauss_rule",
    "mass_matrix",
    "mass_factor",
    "lagrange_eval",
    "lagrange_basis",
    "GridPoint",
    "tensor_grid",
    "grid_arrays",
]

import itertools
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.linalg as la


class IndefiniteMatrixError(ValueError):
    """Raised when a mass matrix is not symmetric positive definite."""


# Measures and rules ==========================================================
@dataclass(frozen=True)
class UniformMeasure:
    """Uniform probability measure on ``[lo, hi]``."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)):
            raise ValueError("measure bounds must be finite")
        if not self.lo < self.hi:
            raise ValueError(f"need lo < hi, got [{self.lo}, {self.hi}]")

    @property
    def support(self):
        return (self.lo, self.hi)

    def moment(self, p):
        """Exact ``E[alpha**p]``."""
        lo, hi = self.lo, self.hi
        return (hi ** (p + 1) - lo ** (p + 1)) / ((p + 1) * (hi - lo))

    def sample(self, rng, n):
        return rng.uniform(self.lo, self.hi, size=n)


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss rule ``E[z] ~ sum_k w_k z(alpha_k)`` for a probability measure.

    The nodes also define the nodal (Lagrange) basis of one PCE dimension.
    """

    nodes: np.ndarray
    weights: np.ndarray
    measure: UniformMeasure

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        weights = np.array(self.weights, dtype=float)
        nodes.flags.writeable = False
        weights.flags.writeable = False
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def size(self):
        return self.nodes.size

    def integrate(self, values):
        return np.dot(self.weights, values)

    def to_json(self):
        return {
            "lo": self.measure.lo,
            "hi": self.measure.hi,
            "nodes": self.nodes.tolist(),
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_json(cls, obj):
        return cls(obj["nodes"], obj["weights"],
                   UniformMeasure(obj["lo"], obj["hi"]))


def gauss_legendre(d, tol=1e-15, maxiter=100):
    """Gauss-Legendre nodes (increasing) and weights on ``[-1, 1]``.

    Newton iteration on the three-term recurrence, started from Chebyshev
    points. Weights sum to 2.
    """
    if d < 1:
        raise ValueError(f"number of nodes must be positive, got {d}")
    if d > 64:
        raise ValueError(f"at most 64 nodes are supported, got {d}")
    k = np.arange(1, d + 1)
    x = np.cos(np.pi * (k - 0.25) / (d + 0.5))

    def legendre(x):
        p_prev, p = np.ones_like(x), x.copy()
        if d == 1:
            return p, np.ones_like(x)
        for n in range(1, d):
            p_prev, p = p, ((2 * n + 1) * x * p - n * p_prev) / (n + 1)
        dp = d * (x * p - p_prev) / (x**2 - 1)
        return p, dp

    for _ in range(maxiter):
        p, dp = legendre(x)
        dx = p / dp
        x = x - dx
        if np.max(np.abs(dx)) <= tol:
            break
    else:
        if np.max(np.abs(dx)) > 100 * tol:
            raise RuntimeError(f"Newton iteration for {d} Gauss nodes stalled")
    # one extra pass so the derivative matches the converged nodes
    _, dp = legendre(x)
    w = 2.0 / ((1 - x**2) * dp**2)
    order = np.argsort(x)
    return x[order], w[order]


def gauss_rule(measure, d):
    """``d``-point Gauss rule for ``measure`` (exact to degree ``2d-1``).

    Weights are normalized to sum to one.

    Parameters
    ----------
    measure : UniformMeasure
    d : int
        Number of nodes, ``1 <= d <= 64``.
    """
    x, w = gauss_legendre(d)
    lo, hi = measure.lo, measure.hi
    nodes = 0.5 * (lo + hi) + 0.5 * (hi - lo) * x
    weights = w / np.sum(w)
    return QuadratureRule(nodes, weights, measure)


def mass_matrix(rule):
    """Mass matrix of the nodal basis: ``diag(weights)``."""
    return np.diag(rule.weights)


# Mass-matrix factors =========================================================
class MassFactor:
    """Factor ``L`` with ``M = L L^T`` of one dimension's mass matrix.

    Diagonal factors are stored as their diagonal only.

    Parameters
    ----------
    factor : (d,) or (d, d) ndarray
        Diagonal entries or a lower-triangular matrix.
    dim : int or None
        Tensor dimension the factor belongs to.
    """

    def __init__(self, factor, dim=None):
        factor = np.array(factor, dtype=float)
        if factor.ndim not in (1, 2):
            raise ValueError("factor must be a vector or a matrix")
        if factor.ndim == 2 and factor.shape[0] != factor.shape[1]:
            raise ValueError("factor must be square")
        factor.flags.writeable = False
        self.factor = factor
        self.dim = dim

    @classmethod
    def identity(cls, d, dim=None):
        return cls(np.ones(d), dim)

    @property
    def size(self):
        return self.factor.shape[0]

    @property
    def is_diagonal(self):
        return self.factor.ndim == 1

    def as_matrix(self):
        return np.diag(self.factor) if self.is_diagonal else self.factor.copy()

    def mass(self):
        L = self.as_matrix()
        return L @ L.T

    def l_dot(self, x):
        """``L @ x``."""
        if self.is_diagonal:
            return _scale_rows(self.factor, x)
        return self.factor @ x

    def lt_dot(self, x):
        """``L^T @ x``."""
        if self.is_diagonal:
            return _scale_rows(self.factor, x)
        return self.factor.T @ x

    def l_solve(self, x):
        """``L^{-1} @ x``."""
        if self.is_diagonal:
            return _scale_rows(1.0 / self.factor, x)
        return la.solve_triangular(self.factor, x, lower=True)

    def lt_solve(self, x):
        """``L^{-T} @ x``."""
        if self.is_diagonal:
            return _scale_rows(1.0 / self.factor, x)
        return la.solve_triangular(self.factor, x, lower=True, trans="T")

    def cond(self):
        if self.is_diagonal:
            a = np.abs(self.factor)
            return a.max() / a.min()
        return np.linalg.cond(self.factor)

    def __repr__(self):
        kind = "diagonal" if self.is_diagonal else "dense"
        return f"MassFactor(size={self.size}, {kind}, dim={self.dim})"


def _scale_rows(s, x):
    x = np.asarray(x, dtype=float)
    return s * x if x.ndim == 1 else s[:, None] * x


def mass_factor(m, dim=None, rtol=1e-14):
    """Factor an SPD mass matrix as ``M = L L^T``.

    Diagonal input (a vector, or a matrix without off-diagonal entries) gives
    ``L = diag(sqrt(m_kk))``; otherwise the lower Cholesky factor.

    Raises
    ------
    IndefiniteMatrixError
        If ``m`` is not symmetric, or a pivot is not above
        ``rtol * max|m_kk|``.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim == 1:
        diag = m
    elif m.ndim == 2 and m.shape[0] == m.shape[1]:
        diag = np.diag(m)
        if not np.allclose(m, m.T, rtol=1e-13, atol=0):
            raise IndefiniteMatrixError("mass matrix is not symmetric")
        if np.count_nonzero(m - np.diag(diag)) > 0:
            diag = None
    else:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")

    if diag is not None:
        thresh = rtol * np.max(np.abs(diag))
        if np.any(diag <= thresh):
            raise IndefiniteMatrixError("nonpositive pivot in mass matrix")
        return MassFactor(np.sqrt(diag), dim)

    try:
        L = la.cholesky(m, lower=True)
    except la.LinAlgError as exc:
        raise IndefiniteMatrixError(str(exc)) from None
    if np.min(np.diag(L)) ** 2 <= rtol * np.max(np.abs(np.diag(m))):
        raise IndefiniteMatrixError("pivot below tolerance in mass matrix")
    return MassFactor(L, dim)


# Lagrange basis ==============================================================
def lagrange_basis(rule, alpha):
    """Evaluate all nodal basis polynomials at ``alpha``.

    Returns
    -------
    (d, n) ndarray
        Row ``j`` holds the Lagrange polynomial of node ``j`` at each point;
        for scalar ``alpha`` a vector of length ``d``.
    """
    scalar = np.ndim(alpha) == 0
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    nodes = rule.nodes
    d = nodes.size
    out = np.ones((d, alpha.size))
    for j in range(d):
        for m in range(d):
            if m != j:
                out[j] *= (alpha - nodes[m]) / (nodes[j] - nodes[m])
    return out[:, 0] if scalar else out


def lagrange_eval(rule, j, alpha):
    """Value of the Lagrange polynomial of node ``j`` (0-based) at ``alpha``."""
    if not 0 <= j < rule.size:
        raise IndexError(f"node index {j} out of range for {rule.size} nodes")
    return lagrange_basis(rule, alpha)[j]


# Tensor grids ================================================================
class GridPoint(NamedTuple):
    index: tuple
    nodes: tuple
    weight: float


def grid_arrays(rules):
    """Tensor grid as arrays ``(indices, nodes, weights)``.

    Points are enumerated with the first dimension varying fastest, matching
    :func:`genpod.tensor.vec`. ``indices`` and ``nodes`` have shape
    ``(n_points, N)``.
    """
    if len(rules) == 0:
        raise ValueError("need at least one quadrature rule")
    sizes = [r.size for r in rules]
    # itertools.product varies the last factor fastest
    idx = np.array(list(itertools.product(*[range(s) for s in reversed(sizes)])),
                   dtype=int)[:, ::-1]
    nodes = np.column_stack([r.nodes[idx[:, i]] for i, r in enumerate(rules)])
    weights = np.prod(
        np.column_stack([r.weights[idx[:, i]] for i, r in enumerate(rules)]),
        axis=1,
    )
    return idx, nodes, weights


def tensor_grid(rules):
    """All node combinations of ``rules`` with their joint weights."""
    idx, nodes, weights = grid_arrays(rules)
    return [GridPoint(tuple(int(k) for k in i), tuple(a), float(w))
            for i, a, w in zip(idx, nodes, weights)]
