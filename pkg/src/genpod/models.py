"""Parametric discrete models ``alpha -> (A_alpha, f, C)``.

All models are affine in the parameters,
``A_alpha = A_0 + sum_i alpha_i A_i``, which lets reduced models project
each component once.
"""

__all__ = [
    "SingularOperatorError",
    "ReferenceIntegrationError",
    "ParametricModel",
    "SubdomainMap",
    "solid_rotation",
    "quadrant_map",
    "toy1d_model",
    "toy2d_model",
    "convdiff_model",
    "analytic_reference",
    "solve_linear",
]

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.integrate as integrate
import scipy.linalg as la
import scipy.sparse as sparse
import scipy.sparse.linalg as spla

from .quadrature import UniformMeasure


DENSE_LIMIT = 2500
PIVOT_RTOL = 1e-13


class SingularOperatorError(np.linalg.LinAlgError):
    """A parametric operator is (numerically) singular."""


class ReferenceIntegrationError(RuntimeError):
    """Adaptive integration of a reference value did not converge."""


def _dense(A):
    return A.toarray() if sparse.issparse(A) else np.asarray(A, dtype=float)


def solve_linear(A, b):
    """Solve ``A x = b``; dense LU up to ``DENSE_LIMIT`` unknowns, else
    sparse LU.

    Raises
    ------
    SingularOperatorError
        If a pivot is zero or negligible relative to the largest one.
    """
    n = A.shape[0]
    if n <= DENSE_LIMIT or not sparse.issparse(A):
        with warnings.catch_warnings():
            # exact zero pivots are reported below
            warnings.simplefilter("ignore", la.LinAlgWarning)
            lu, piv = la.lu_factor(_dense(A), check_finite=False)
        d = np.abs(np.diag(lu))
        if d.min() <= PIVOT_RTOL * d.max():
            raise SingularOperatorError("zero pivot in LU factorization")
        return la.lu_solve((lu, piv), b, check_finite=False)
    try:
        return spla.splu(sparse.csc_matrix(A)).solve(np.asarray(b, dtype=float))
    except RuntimeError as exc:
        raise SingularOperatorError(str(exc)) from None


# Parametric model ============================================================
@dataclass(frozen=True, eq=False)
class ParametricModel:
    """Affine parametric linear model.

    Attributes
    ----------
    name : str
        Model identifier (``"toy1d"``, ``"toy2d"``, ``"convdiff"``, ...).
    base : (n, n) ndarray or sparse matrix
        Parameter-independent part ``A_0``.
    components : list of (n, n) ndarray or sparse matrix
        ``A_i`` multiplying ``alpha_i``.
    load : (n,) ndarray
        Right-hand side ``f``.
    observation : (n,) ndarray
        Row ``C`` of the observation functional.
    spatial_mass : (n,) or (n, n) ndarray
        Mass matrix of the spatial basis (a vector means diagonal).
    param_domains : list of UniformMeasure
    params : dict
        Construction parameters, kept for reports and reference values.
    """

    name: str
    base: object
    components: list
    load: np.ndarray
    observation: np.ndarray
    spatial_mass: np.ndarray
    param_domains: list
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.base.shape[0]
        if len(self.components) != len(self.param_domains):
            raise ValueError("need one affine component per parameter")
        for A in self.components:
            if A.shape != (n, n):
                raise ValueError("affine components must all be n x n")
        if self.load.shape != (n,) or self.observation.shape != (n,):
            raise ValueError("load and observation must have length n_dof")
        self._check_invertible()

    @property
    def n_dof(self):
        return self.base.shape[0]

    @property
    def n_params(self):
        return len(self.components)

    @property
    def is_sparse(self):
        return sparse.issparse(self.base)

    def operator(self, alpha):
        alpha = np.asarray(alpha, dtype=float).reshape(-1)
        if alpha.size != self.n_params:
            raise ValueError(
                f"expected {self.n_params} parameters, got {alpha.size}"
            )
        A = self.base.copy()
        for a, Ai in zip(alpha, self.components):
            A = A + a * Ai
        return A

    def assemble(self, alpha):
        """``(A_alpha, f, C)`` at the parameter tuple ``alpha``."""
        return self.operator(alpha), self.load, self.observation

    def solve(self, alpha):
        """Solution of ``A_alpha y = f``."""
        return solve_linear(self.operator(alpha), self.load)

    def observe(self, y):
        """``C y``; ``y`` may hold several solutions as columns."""
        return self.observation @ y

    def observe_batch(self, alphas):
        """``C A_alpha^{-1} f`` for each row of ``alphas``.

        Small dense models are solved as one stacked batch.
        """
        alphas = np.atleast_2d(np.asarray(alphas, dtype=float))
        if self.is_sparse or self.n_dof > 8:
            return np.array([self.observe(self.solve(a)) for a in alphas])
        comps = np.stack([_dense(A) for A in self.components])
        A = _dense(self.base) + np.einsum("ni,ijk->njk", alphas, comps)
        if self.n_dof == 1:
            a = A[:, 0, 0]
            if np.any(np.abs(a) <= PIVOT_RTOL * np.abs(a).max()):
                raise SingularOperatorError("singular operator in batch")
            return self.observation[0] * self.load[0] / a
        try:
            y = np.linalg.solve(A, np.broadcast_to(self.load, A.shape[:2])[..., None])
        except np.linalg.LinAlgError as exc:
            raise SingularOperatorError(str(exc)) from None
        return y[..., 0] @ self.observation

    def box_points(self):
        """Corners and center of the parameter box."""
        corners = itertools.product(*[(m.lo, m.hi) for m in self.param_domains])
        center = [0.5 * (m.lo + m.hi) for m in self.param_domains]
        return [np.array(c) for c in corners] + [np.array(center)]

    def _check_invertible(self):
        for alpha in self.box_points():
            try:
                self.solve(alpha)
            except SingularOperatorError:
                raise ValueError(
                    f"operator of model {self.name!r} is singular at "
                    f"alpha={alpha.tolist()}"
                ) from None


# Verification models =========================================================
def toy1d_model(lo=3e-4, hi=7e-4):
    """Scalar model ``alpha_1 y = 1``, observed as ``y``."""
    if not lo > 0:
        raise ValueError("toy1d needs lo > 0 (the operator vanishes at 0)")
    return ParametricModel(
        name="toy1d",
        base=np.zeros((1, 1)),
        components=[np.ones((1, 1))],
        load=np.ones(1),
        observation=np.ones(1),
        spatial_mass=np.ones(1),
        param_domains=[UniformMeasure(lo, hi)],
        params={"lo": lo, "hi": hi},
    )


def toy2d_model(lo1=3e-4, hi1=7e-4, lo2=3e-4, hi2=7e-4, eps=1e-4):
    """Two coupled compartments, ``A = [[alpha_1, eps], [eps, alpha_2]]``,
    ``f = (1, 1)``, ``C = (1, 1)``.
    """
    if not (lo1 > 0 and lo2 > 0 and lo1 * lo2 > eps**2):
        raise ValueError(
            "toy2d needs positive bounds with lo1*lo2 > eps**2 so that the "
            "operator is invertible on the whole box"
        )
    e1 = np.array([[1.0, 0.0], [0.0, 0.0]])
    e2 = np.array([[0.0, 0.0], [0.0, 1.0]])
    return ParametricModel(
        name="toy2d",
        base=np.array([[0.0, eps], [eps, 0.0]]),
        components=[e1, e2],
        load=np.ones(2),
        observation=np.ones(2),
        spatial_mass=np.ones(2),
        param_domains=[UniformMeasure(lo1, hi1), UniformMeasure(lo2, hi2)],
        params={"lo1": lo1, "hi1": hi1, "lo2": lo2, "hi2": hi2, "eps": eps},
    )


# Convection-diffusion on the unit square ====================================
def solid_rotation(x, y):
    """Divergence-free rotation ``b = (y - 1/2, -(x - 1/2))``."""
    return y - 0.5, -(x - 0.5)


@dataclass(frozen=True, eq=False)
class SubdomainMap:
    """Assignment of grid cells to the random-diffusivity subdomains.

    Attributes
    ----------
    assignment : (ny, nx) int ndarray
        Subdomain id (0-based) of every cell, row ``j`` is the ``j``-th
        cell row from the bottom.
    kappa_bar : float
        Reference diffusivity; on subdomain ``i`` the diffusivity is
        ``kappa_bar + alpha_i``.
    convection : (2, ny, nx) ndarray
        Convection field at the cell centers.
    """

    assignment: np.ndarray
    kappa_bar: float
    convection: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.assignment)
        if a.ndim != 2 or a.min() < 0:
            raise ValueError("assignment must be a 2-D array of ids >= 0")
        ids = np.unique(a)
        if not np.array_equal(ids, np.arange(ids.size)):
            raise ValueError("subdomain ids must be 0, 1, ..., N-1, all used")
        if self.convection.shape != (2,) + a.shape:
            raise ValueError("convection must have shape (2, ny, nx)")

    @property
    def shape(self):
        return self.assignment.shape

    @property
    def n_subdomains(self):
        return int(self.assignment.max()) + 1


def _cell_centers(nx, ny):
    x = (np.arange(nx) + 0.5) / nx
    y = (np.arange(ny) + 0.5) / ny
    return np.meshgrid(x, y)  # each (ny, nx)


def quadrant_map(nx, ny=None, kappa_bar=5e-4, convection=solid_rotation):
    """Four quadrants, numbered counterclockwise from the bottom left."""
    ny = nx if ny is None else ny
    X, Y = _cell_centers(nx, ny)
    right = X > 0.5
    top = Y > 0.5
    assignment = np.select(
        [~right & ~top, right & ~top, right & top], [0, 1, 2], default=3
    )
    if convection is None:
        b = np.zeros((2, ny, nx))
    else:
        b = np.stack(np.broadcast_arrays(*convection(X, Y))).astype(float)
    return SubdomainMap(assignment, kappa_bar, b)


def _default_load(X, Y, assignment):
    f = np.sin(2 * np.pi * X) * np.sin(4 * np.pi * Y)
    return np.where((assignment == 0) | (assignment == 2), f, 0.0)


def _diffusion_matrix(nx, ny, chi, dirichlet):
    """``-div(chi grad)`` with arithmetic-mean face coefficients.

    ``dirichlet`` maps the sides ``"bottom", "top", "left", "right"`` to
    True (zero Dirichlet) or False (zero Neumann).
    """
    hx2, hy2 = nx**-2.0, ny**-2.0
    idx = np.arange(nx * ny).reshape(ny, nx)
    rows, cols, vals = [], [], []

    def face(p, q, c, h2):
        rows.extend([p, p, q, q])
        cols.extend([p, q, q, p])
        vals.extend([c / h2, -c / h2, c / h2, -c / h2])

    # horizontal neighbors
    c = 0.5 * (chi[:, :-1] + chi[:, 1:])
    face(idx[:, :-1].ravel(), idx[:, 1:].ravel(), c.ravel(), hx2)
    # vertical neighbors
    c = 0.5 * (chi[:-1, :] + chi[1:, :])
    face(idx[:-1, :].ravel(), idx[1:, :].ravel(), c.ravel(), hy2)

    rows = [np.atleast_1d(r) for r in rows]
    cols = [np.atleast_1d(r) for r in cols]
    vals = [np.atleast_1d(r) for r in vals]
    sides = {
        "bottom": (idx[0, :], chi[0, :], hy2),
        "top": (idx[-1, :], chi[-1, :], hy2),
        "left": (idx[:, 0], chi[:, 0], hx2),
        "right": (idx[:, -1], chi[:, -1], hx2),
    }
    for side, (p, c, h2) in sides.items():
        if dirichlet[side]:
            # ghost value -u_P puts zero on the boundary face
            rows.append(p)
            cols.append(p)
            vals.append(2.0 * c / h2)
    n = nx * ny
    return sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    ).tocsr()


def _convection_matrix(nx, ny, b, dirichlet):
    """First-order upwind ``b . grad`` in non-conservative form."""
    idx = np.arange(nx * ny).reshape(ny, nx)
    rows, cols, vals = [], [], []
    for comp, h, axis in ((b[0], 1.0 / nx, 1), (b[1], 1.0 / ny, 0)):
        pos = comp > 0
        # upwind neighbor: backward for positive velocity, forward otherwise
        for sign, mask in ((+1, pos), (-1, ~pos)):
            shifted = np.roll(idx, sign, axis=axis)
            if axis == 1:
                boundary = np.zeros_like(mask)
                boundary[:, 0 if sign > 0 else -1] = True
                side = "left" if sign > 0 else "right"
            else:
                boundary = np.zeros_like(mask)
                boundary[0 if sign > 0 else -1, :] = True
                side = "bottom" if sign > 0 else "top"
            coef = np.abs(comp) / h
            inner = mask & ~boundary
            rows += [idx[inner], idx[inner]]
            cols += [idx[inner], shifted[inner]]
            vals += [coef[inner], -coef[inner]]
            edge = mask & boundary
            if dirichlet[side]:
                rows.append(idx[edge])
                cols.append(idx[edge])
                vals.append(2.0 * coef[edge])
            # Neumann ghost equals u_P: no contribution
    n = nx * ny
    return sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    ).tocsr()


def _patch_weights(nx, ny, patch):
    """Overlap-weighted average over the top cell row within ``patch``."""
    lo, hi = patch
    left = np.arange(nx) / nx
    right = left + 1.0 / nx
    overlap = np.clip(np.minimum(right, hi) - np.maximum(left, lo), 0.0, None)
    if not overlap.sum() > 0:
        raise ValueError(f"observation patch {patch} contains no cells")
    C = np.zeros(nx * ny)
    C[(ny - 1) * nx:] = overlap / overlap.sum()
    return C


def convdiff_model(nx=32, ny=None, subdomains=None, bc="bottom",
                   param_domain=(-2e-4, 2e-4), load=None,
                   patch=(0.45, 0.55)):
    """Convection-diffusion ``b . grad y - div(kappa_alpha grad y) = f`` on
    the unit square with ``kappa = kappa_bar + alpha_i`` on subdomain ``i``.

    Cell-centered finite differences: centered diffusion with arithmetic-mean
    face diffusivities (which keeps the operator affine in ``alpha``) and
    first-order upwind convection.

    Parameters
    ----------
    nx, ny : int
        Number of cells per direction, at least 8.
    subdomains : SubdomainMap, optional
        Defaults to :func:`quadrant_map` with ``kappa_bar = 5e-4`` and a
        solid-rotation convection field.
    bc : {"bottom", "all"}
        Zero Dirichlet data on the bottom side (zero Neumann elsewhere) or on
        all sides.
    param_domain : (float, float) or list of them
        Uniform parameter range, shared or per subdomain.
    load : callable, float, or None
        ``f(X, Y, assignment)`` on the cell centers, a constant, or the
        default ``sin(2 pi x) sin(4 pi y)`` on subdomains 0 and 2.
    patch : (float, float)
        ``x``-range of the observed part of the top edge.
    """
    ny = nx if ny is None else ny
    if nx < 8 or ny < 8:
        raise ValueError("the grid needs at least 8 x 8 cells")
    sub = quadrant_map(nx, ny) if subdomains is None else subdomains
    if sub.shape != (ny, nx):
        raise ValueError(f"subdomain map shape {sub.shape} != grid {(ny, nx)}")
    n_sub = sub.n_subdomains
    if np.ndim(param_domain[0]) == 0:
        domains = [UniformMeasure(*param_domain) for _ in range(n_sub)]
    else:
        domains = [UniformMeasure(*d) for d in param_domain]
    if len(domains) != n_sub:
        raise ValueError("need one parameter domain per subdomain")
    for i, m in enumerate(domains):
        if not sub.kappa_bar + m.lo > 0:
            raise ValueError(
                f"diffusivity kappa_bar + alpha_{i} is not positive on "
                f"[{m.lo}, {m.hi}]"
            )

    if bc == "bottom":
        dirichlet = {"bottom": True, "top": False, "left": False, "right": False}
    elif bc == "all":
        dirichlet = dict.fromkeys(("bottom", "top", "left", "right"), True)
    else:
        raise ValueError(f"unknown boundary condition {bc!r}")

    X, Y = _cell_centers(nx, ny)
    chis = [(sub.assignment == i).astype(float) for i in range(n_sub)]
    diff_parts = [_diffusion_matrix(nx, ny, chi, dirichlet) for chi in chis]
    diff_total = _diffusion_matrix(nx, ny, np.ones((ny, nx)), dirichlet)
    conv = _convection_matrix(nx, ny, sub.convection, dirichlet)
    base = (conv + sub.kappa_bar * diff_total).tocsr()

    if load is None:
        f = _default_load(X, Y, sub.assignment)
    elif callable(load):
        f = np.broadcast_to(load(X, Y, sub.assignment), X.shape)
    else:
        f = np.full(X.shape, float(load))

    return ParametricModel(
        name="convdiff",
        base=base,
        components=diff_parts,
        load=np.ascontiguousarray(f, dtype=float).ravel(),
        observation=_patch_weights(nx, ny, patch),
        spatial_mass=np.full(nx * ny, 1.0 / (nx * ny)),
        param_domains=domains,
        params={"nx": nx, "ny": ny, "kappa_bar": sub.kappa_bar, "bc": bc,
                "patch": list(patch)},
    )


# Reference values ============================================================
def analytic_reference(model, rtol=1e-10):
    """Exact mean and variance of ``C y`` for the verification models.

    Closed form for ``toy1d``; adaptive quadrature for ``toy2d``, where the
    variance is integrated as ``E[(Cy - E Cy)^2]`` to avoid cancellation.

    Returns
    -------
    (mean, variance) : (float, float)
    """
    if model.name == "toy1d":
        lo, hi = model.params["lo"], model.params["hi"]
        mean = np.log(hi / lo) / (hi - lo)
        return float(mean), float(1.0 / (lo * hi) - mean**2)
    if model.name != "toy2d":
        raise ValueError(f"no analytic reference for model {model.name!r}")

    p = model.params
    eps = p["eps"]
    lo1, w1 = p["lo1"], p["hi1"] - p["lo1"]
    lo2, w2 = p["lo2"], p["hi2"] - p["lo2"]

    # integrate over the unit square so the uniform density is 1
    def g(t2, t1):
        a1, a2 = lo1 + w1 * t1, lo2 + w2 * t2
        return (a1 + a2 - 2 * eps) / (a1 * a2 - eps**2)

    def integral(func):
        val, err = integrate.dblquad(func, 0.0, 1.0, 0.0, 1.0,
                                     epsabs=0.0, epsrel=1e-13)
        if err > rtol * abs(val):
            raise ReferenceIntegrationError(
                f"integration error estimate {err:g} too large for {val:g}"
            )
        return val

    mean = integral(g)
    var = integral(lambda t2, t1: (g(t2, t1) - mean) ** 2)
    return float(mean), float(var)
