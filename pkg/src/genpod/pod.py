"""Mass-weighted tensor norms and per-dimension optimal POD bases.

For a function ``x`` in a product space with coefficient tensor ``X`` and
mass factors ``M_i = L_i L_i^T``, the function-space norm is the Frobenius
norm of ``X`` after applying ``L_i^T`` along every dimension. The optimal
``k``-dimensional subspace for dimension ``i`` is spanned by
``V^T L_i^{-1} Psi_i``, where ``V`` holds the ``k`` leading left singular
vectors of the weighted mode-``i`` unfolding.
"""

__all__ = [
    "PodBasis",
    "RankWarning",
    "apply_factors_t",
    "weighted_unfolding",
    "weighted_norm",
    "weighted_norm_cycled",
    "pod_basis",
    "project",
    "reduce",
    "expand",
    "projection_error_bound",
]

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from .quadrature import MassFactor
from .tensor import cycle, kron_all, matricize_mode1, mode_product


ZERO_SVAL_RTOL = 1e-14
GRAM_RATIO = 50


class RankWarning(UserWarning):
    """Requested POD dimension exceeds the numerical rank of the data."""


# Helpers =====================================================================
def _check_factors(t, factors):
    if len(factors) != t.ndim:
        raise ValueError(
            f"need one mass factor per dimension: got {len(factors)} "
            f"for a {t.ndim}-way tensor"
        )
    for i, f in enumerate(factors):
        if f.size != t.shape[i]:
            raise ValueError(
                f"factor {i} has size {f.size}, dimension {i} has "
                f"size {t.shape[i]}"
            )


def _apply_t(t, factor, axis):
    """Apply ``L^T`` of ``factor`` along ``axis``."""
    if factor.is_diagonal:
        shape = [1] * t.ndim
        shape[axis] = -1
        return t * factor.factor.reshape(shape)
    return mode_product(t, factor.factor.T, axis)


def apply_factors_t(t, factors, skip=None):
    """Apply ``L_j^T`` along every dimension ``j`` except ``skip``."""
    t = np.asarray(t, dtype=float)
    for j, f in enumerate(factors):
        if j != skip:
            t = _apply_t(t, f, j)
    return t


def weighted_unfolding(t, factors, axis):
    r"""The weighted mode-``axis`` unfolding whose left singular vectors
    define the optimal basis of that dimension:

    .. math::
       L_i^T (\mathrm{cycle}^{i} X)^{(1)}
       [L_{i-1} \otimes \cdots \otimes L_0 \otimes L_{N-1} \otimes \cdots
       \otimes L_{i+1}].

    Evaluated by mode products, never forming the Kronecker factor.
    """
    t = np.asarray(t, dtype=float)
    _check_factors(t, factors)
    w = apply_factors_t(t, factors)
    return matricize_mode1(cycle(w, axis))


# Norms =======================================================================
def weighted_norm(t, factors):
    """Function-space norm of the tensor-product function with coefficients
    ``t``: ``sqrt(vec(t)^T (M_N (x) ... (x) M_1) vec(t))``.
    """
    t = np.asarray(t, dtype=float)
    _check_factors(t, factors)
    return float(np.linalg.norm(apply_factors_t(t, factors)))


def weighted_norm_cycled(t, factors, axis):
    """Same norm as :func:`weighted_norm`, evaluated with dimension ``axis``
    brought to the front and the remaining factors as an explicit Kronecker
    product. Forms a dense matrix of size ``prod(d_j, j != axis)`` squared,
    so it is meant for moderate sizes.
    """
    t = np.asarray(t, dtype=float)
    _check_factors(t, factors)
    n = t.ndim
    if not 0 <= axis < n:
        raise ValueError(f"axis {axis} out of range for a {n}-way tensor")
    rest = [factors[(axis + j) % n].as_matrix() for j in range(1, n)]
    K = kron_all(rest[::-1])
    Li = factors[axis].as_matrix()
    return float(np.linalg.norm(Li.T @ matricize_mode1(cycle(t, axis)) @ K))


# POD bases ===================================================================
@dataclass(frozen=True)
class PodBasis:
    """Reduced basis for one tensor dimension.

    Attributes
    ----------
    dim : int
        The tensor dimension (0-based) this basis reduces.
    vectors : (d, k) ndarray
        Leading left singular vectors ``V`` of the weighted unfolding.
    singular_values : ndarray
        All singular values of the weighted unfolding, nonincreasing.
    factor : MassFactor
        Mass factor ``L`` of the dimension.
    """

    dim: int
    vectors: np.ndarray
    singular_values: np.ndarray
    factor: MassFactor = field(repr=False)

    @property
    def k(self):
        return self.vectors.shape[1]

    @property
    def size(self):
        return self.vectors.shape[0]

    @property
    def coeff_map(self):
        """``V^T L^{-1}``: maps the original basis functions to the reduced."""
        return self.factor.lt_solve(self.vectors).T

    @property
    def expand_map(self):
        """``L^{-T} V``: reduced coefficients -> original coefficients."""
        return self.factor.lt_solve(self.vectors)

    @property
    def restrict_map(self):
        """``V^T L^T``: original coefficients -> reduced coefficients."""
        return self.factor.l_dot(self.vectors).T

    @property
    def numerically_zero(self):
        s = self.singular_values
        if s.size == 0 or s[0] == 0:
            return np.ones(s.shape, dtype=bool)
        return s < ZERO_SVAL_RTOL * s[0]

    @property
    def numerical_rank(self):
        return int(np.count_nonzero(~self.numerically_zero))

    def truncate(self, k):
        """The leading ``k`` vectors of this basis."""
        if not 1 <= k <= self.k:
            raise ValueError(f"cannot truncate a {self.k}-vector basis to {k}")
        return PodBasis(self.dim, self.vectors[:, :k], self.singular_values,
                        self.factor)

    def to_json(self):
        return {
            "dim": self.dim,
            "k": self.k,
            "vectors": self.vectors.tolist(),
            "singular_values": self.singular_values.tolist(),
        }

    @classmethod
    def from_json(cls, obj, factor):
        vectors = np.asarray(obj["vectors"], dtype=float).reshape(-1, obj["k"])
        return cls(obj["dim"], vectors,
                   np.asarray(obj["singular_values"], dtype=float), factor)


def _normalize_signs(U):
    """Flip columns so each one's largest-magnitude entry is positive."""
    idx = np.argmax(np.abs(U), axis=0)  # first occurrence on ties
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs


def _left_singular(W, k):
    d, n = W.shape
    if n > GRAM_RATIO * d:
        lam, U = la.eigh(W @ W.T)
        order = np.argsort(lam)[::-1]
        lam, U = lam[order], U[:, order]
        s = np.sqrt(np.clip(lam, 0.0, None))
        return U[:, :k], s
    full = k > min(d, n)
    U, s, _ = la.svd(W, full_matrices=full, lapack_driver="gesdd")
    return U[:, :k], s


def pod_basis(t, factors, axis, k):
    """Optimal ``k``-dimensional basis for dimension ``axis`` of ``t``.

    Parameters
    ----------
    t : ndarray
        Coefficient tensor.
    factors : list of MassFactor
        One mass factor per dimension.
    axis : int
        Dimension to reduce (0-based).
    k : int
        Target dimension, ``1 <= k <= t.shape[axis]``. Values beyond the
        numerical rank are allowed and emit a :class:`RankWarning`.

    Returns
    -------
    PodBasis
    """
    t = np.asarray(t, dtype=float)
    _check_factors(t, factors)
    d = t.shape[axis]
    if not 1 <= k <= d:
        raise ValueError(f"need 1 <= k <= {d} for dimension {axis}, got {k}")
    W = weighted_unfolding(t, factors, axis)
    U, s = _left_singular(W, k)
    U = _normalize_signs(U)
    U.flags.writeable = False
    s.flags.writeable = False
    basis = PodBasis(axis, U, s, factors[axis])
    if k > basis.numerical_rank:
        warnings.warn(
            f"k={k} exceeds numerical rank {basis.numerical_rank} of "
            f"dimension {axis}; trailing modes carry no information",
            RankWarning, stacklevel=2,
        )
    return basis


# Projections =================================================================
def _bases_list(t, bases):
    bases = list(bases)
    if len(bases) != t.ndim:
        raise ValueError(
            f"need one basis (or None) per dimension, got {len(bases)} "
            f"for a {t.ndim}-way tensor"
        )
    out = []
    for i, b in enumerate(bases):
        if b is None or (isinstance(b, str) and b == "keep"):
            out.append(None)
            continue
        if b.size != t.shape[i]:
            raise ValueError(
                f"basis for dimension {i} has size {b.size}, tensor has "
                f"{t.shape[i]}"
            )
        out.append(b)
    return out


def project(t, bases):
    """Coefficients (in the original bases) of the orthogonal projection
    onto the product of the reduced spaces. ``None`` keeps a dimension.
    """
    t = np.asarray(t, dtype=float)
    for i, b in enumerate(_bases_list(t, bases)):
        if b is not None:
            P = b.expand_map @ b.restrict_map
            t = mode_product(t, P, i)
    return t


def reduce(t, bases):
    """Coefficients of the projection with respect to the reduced bases."""
    t = np.asarray(t, dtype=float)
    for i, b in enumerate(_bases_list(t, bases)):
        if b is not None:
            t = mode_product(t, b.restrict_map, i)
    return t


def expand(r, bases):
    """Map reduced coefficients back to coefficients in the original bases."""
    r = np.asarray(r, dtype=float)
    bases = list(bases)
    if len(bases) != r.ndim:
        raise ValueError("need one basis (or None) per dimension")
    for i, b in enumerate(bases):
        if b is None or (isinstance(b, str) and b == "keep"):
            continue
        r = mode_product(r, b.expand_map, i)
    return r


def projection_error_bound(bases, ks=None):
    """Upper bound ``sqrt(sum_i sum_{k > k_i} sigma_k^(i)**2)`` on the
    function-space projection error. ``None`` entries are unreduced.
    """
    total = 0.0
    for j, b in enumerate(bases):
        if b is None or isinstance(b, str):
            continue
        k = b.k if ks is None or ks[j] is None else ks[j]
        s = b.singular_values
        if k > s.size and k > b.size:
            raise ValueError(f"k={k} exceeds dimension {b.size}")
        total += float(np.sum(s[k:] ** 2))
    return float(np.sqrt(total))
