"""Dense coefficient tensors and the mode algebra used by the Galerkin POD.

A coefficient tensor is a plain :class:`numpy.ndarray` whose shape is the
tuple of dimensions ``(d_1, ..., d_N)``. Its linearization is
dimension-1-fastest (Fortran order), so that ``vec(X)`` pairs with the
Kronecker ordering ``Psi_N (x) ... (x) Psi_1`` of the basis functions.

Dimensions are addressed by 0-based ``axis`` arguments throughout.
"""

__all__ = [
    "vec",
    "unvec",
    "matricize_mode1",
    "unmatricize_mode1",
    "cycle",
    "mode_product",
    "kron",
    "kron_all",
    "tensor_to_json",
    "tensor_from_json",
]

import functools

import numpy as np


def _as_tensor(t):
    t = np.asarray(t, dtype=float)
    if t.ndim == 0:
        t = t.reshape(1)
    return t


def vec(t):
    """Flatten ``t`` with the first index varying fastest.

    >>> vec(np.array([[1, 2], [3, 4]]))
    array([1., 3., 2., 4.])
    """
    return _as_tensor(t).ravel(order="F")


def unvec(data, dims):
    """Inverse of :func:`vec`."""
    data = np.asarray(data, dtype=float)
    dims = tuple(int(d) for d in dims)
    if data.size != int(np.prod(dims)):
        raise ValueError(
            f"data of length {data.size} does not match dims {dims}"
        )
    return data.reshape(dims, order="F")


def matricize_mode1(t):
    """Mode-1 matricization, shape ``d_1 x (d_2 ... d_N)``.

    Column ``j`` holds the fiber ``t[:, k_2, ..., k_N]`` with
    ``j = k_2 + d_2 k_3 + ...`` (0-based).
    """
    t = _as_tensor(t)
    return t.reshape(t.shape[0], -1, order="F")


def unmatricize_mode1(m, dims):
    """Fold a mode-1 matricization back into a tensor of shape ``dims``."""
    return np.asarray(m, dtype=float).reshape(tuple(dims), order="F")


def cycle(t, times=1):
    """Cyclically permute the dimensions of ``t``.

    The result has dimensions ``(d_2, ..., d_N, d_1)``: the leading
    dimension moves to the back. For matrices this is the transpose, and
    ``cycle(t, N)`` is ``t`` itself. After ``i`` cycles the original
    dimension ``i`` (0-based) is in front.
    """
    t = _as_tensor(t)
    n = t.ndim
    times %= n
    return np.transpose(t, [(k + times) % n for k in range(n)])


def mode_product(t, m, axis):
    """Multiply ``t`` along ``axis`` by the matrix ``m``.

    Every mode-``axis`` fiber ``x`` is replaced by ``m @ x``, so that for
    ``axis=0`` one has ``vec(m o_1 t) = (I (x) ... (x) I (x) m) vec(t)``.

    Raises
    ------
    ValueError
        If ``m.shape[1]`` differs from ``t.shape[axis]``.
    """
    t = _as_tensor(t)
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if not 0 <= axis < t.ndim:
        raise ValueError(f"axis {axis} out of range for a {t.ndim}-way tensor")
    if m.shape[1] != t.shape[axis]:
        raise ValueError(
            f"shape mismatch: matrix has {m.shape[1]} columns, "
            f"tensor dimension {axis} has size {t.shape[axis]}"
        )
    out = np.tensordot(m, t, axes=(1, axis))
    return np.moveaxis(out, 0, axis)


def kron(a, b):
    """Kronecker product ``a (x) b`` of two matrices."""
    return np.kron(np.atleast_2d(a), np.atleast_2d(b))


def kron_all(mats):
    """Kronecker product ``mats[0] (x) mats[1] (x) ...``; ``[[1]]`` if empty."""
    return functools.reduce(kron, mats, np.ones((1, 1)))


# Serialization ===============================================================
def tensor_to_json(t):
    """JSON-ready ``{"dims": [...], "data": [...]}`` in the flat order."""
    t = _as_tensor(t)
    return {"dims": list(t.shape), "data": vec(t).tolist()}


def tensor_from_json(obj):
    return unvec(obj["data"], obj["dims"])
