"""Full-order PCE sweeps, reduced Galerkin models, and Monte Carlo baselines.

With a nodal PCE basis at Gauss nodes the stochastic Galerkin system splits
into one deterministic solve per grid node, so a full-order sweep is just
``prod(d_i)`` independent solves whose solutions are the slices of the
snapshot tensor ``Y`` (spatial dimension first).

A reduced model replaces the spatial basis by a POD basis and, optionally,
some PCE bases by their POD bases. Unreduced PCE dimensions stay decoupled;
reduced ones couple into one Galerkin system per remaining node.
"""

__all__ = [
    "UqResult",
    "ReducedModel",
    "SweepError",
    "n_threads",
    "spatial_factor",
    "pce_factors",
    "pce_sweep",
    "moments",
    "statistics",
    "build_reduced_model",
    "reduced_pce_basis",
    "pce_gram",
    "solve_reduced",
    "monte_carlo",
    "random_snapshots",
    "snapshot_pod",
    "random_snapshot_pod",
]

import logging
import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sparse

from .models import SingularOperatorError, solve_linear
from .pod import PodBasis, pod_basis
from .quadrature import MassFactor, grid_arrays, lagrange_basis, mass_factor
from .tensor import kron_all, matricize_mode1, mode_product

log = logging.getLogger(__name__)

BATCH = 4096


class SweepError(SingularOperatorError):
    """A solve failed at a specific grid node or sample."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


def n_threads():
    """Worker count from ``GENPOD_THREADS`` (0 or unset: one per CPU)."""
    try:
        n = int(os.environ.get("GENPOD_THREADS", "0"))
    except ValueError:
        n = 0
    return n if n > 0 else (os.cpu_count() or 1)


def _parallel_map(func, items):
    items = list(items)
    workers = min(n_threads(), len(items))
    if workers <= 1:
        return [func(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))


# Results =====================================================================
@dataclass
class UqResult:
    """Mean and variance of the observation ``C y``."""

    mean: float
    variance: float
    n_solves: int
    wall_time: float
    method: str
    clipped: float = 0.0
    info: dict = field(default_factory=dict)

    def rel_errors(self, ref_mean, ref_variance):
        return ((self.mean - ref_mean) / ref_mean,
                (self.variance - ref_variance) / ref_variance)

    def to_json(self):
        return {
            "method": self.method,
            "mean": self.mean,
            "variance": self.variance,
            "n_solves": self.n_solves,
            "wall_time_s": self.wall_time,
            "variance_clipped": self.clipped,
            **self.info,
        }


def moments(values, weights=None):
    """Weighted mean and variance ``E[v^2] - E[v]^2`` of ``values``.

    Without ``weights`` the sample mean and the population (``1/n``)
    variance. A slightly negative variance from rounding is clipped to zero
    and the clipped amount returned.

    Returns
    -------
    (mean, variance, clipped)
    """
    values = np.asarray(values, dtype=float).ravel()
    if weights is None:
        weights = np.full(values.size, 1.0 / values.size)
    weights = np.asarray(weights, dtype=float).ravel()
    mean = float(np.dot(weights, values))
    var = float(np.dot(weights, values**2)) - mean**2
    clipped = 0.0
    if var < 0:
        clipped = -var
        if clipped > 1e-12 * mean**2:
            warnings.warn(f"clipped a negative variance of {var:g}",
                          RuntimeWarning, stacklevel=2)
        var = 0.0
    return mean, var, clipped


# Full-order sweeps ===========================================================
def spatial_factor(model):
    """Mass factor of the model's spatial basis (tensor dimension 0)."""
    return mass_factor(model.spatial_mass, dim=0)


def pce_factors(rules):
    """Mass factors ``diag(sqrt(w))`` of the nodal PCE dimensions 1..N."""
    return [MassFactor(np.sqrt(r.weights), dim=i + 1)
            for i, r in enumerate(rules)]


def _check_rules(model, rules):
    if len(rules) != model.n_params:
        raise ValueError(
            f"model has {model.n_params} parameters, got {len(rules)} rules"
        )
    for i, (r, m) in enumerate(zip(rules, model.param_domains)):
        if not np.allclose([r.measure.lo, r.measure.hi], [m.lo, m.hi],
                           rtol=1e-14, atol=0):
            raise ValueError(
                f"rule {i} is for [{r.measure.lo}, {r.measure.hi}], model "
                f"parameter {i} lives on [{m.lo}, {m.hi}]"
            )


def pce_sweep(model, rules, order=None):
    """Solve the decoupled full-order system at every tensor-grid node.

    Parameters
    ----------
    model : ParametricModel
    rules : list of QuadratureRule
        One rule per parameter, on the model's parameter domains.
    order : sequence of int, optional
        Processing order of the grid nodes (a permutation of their flat
        indices); the result does not depend on it.

    Returns
    -------
    (n_dof, d_1, ..., d_N) ndarray
        The snapshot tensor; its slice at a grid multi-index is the
        solution at that node.
    """
    _check_rules(model, rules)
    idx, nodes, _ = grid_arrays(rules)
    n = len(nodes)
    order = range(n) if order is None else order

    def solve(p):
        try:
            return p, model.solve(nodes[p])
        except SingularOperatorError:
            raise SweepError(
                f"singular operator at grid index {tuple(idx[p])}, "
                f"alpha={nodes[p].tolist()}", index=tuple(int(k) for k in idx[p])
            ) from None

    Y = np.empty((model.n_dof, n))
    for p, y in _parallel_map(solve, order):
        Y[:, p] = y
    dims = (model.n_dof,) + tuple(r.size for r in rules)
    return Y.reshape(dims, order="F")


def statistics(snapshots, rules, observation, method="pce", n_solves=None,
               wall_time=0.0):
    """Mean and variance of ``C y`` by the tensor Gauss rule.

    ``snapshots`` is a snapshot tensor ``(n_dof, d_1, ..., d_N)`` or, for
    already observed values, an array of shape ``(d_1, ..., d_N)`` with
    ``observation=None``.
    """
    _, _, weights = grid_arrays(rules)
    if observation is None:
        values = np.asarray(snapshots, dtype=float).ravel(order="F")
    else:
        values = np.asarray(observation) @ matricize_mode1(snapshots)
    if values.size != weights.size:
        raise ValueError("snapshot grid does not match the quadrature rules")
    mean, var, clipped = moments(values, weights)
    return UqResult(mean, var, weights.size if n_solves is None else n_solves,
                    wall_time, method, clipped)


# Reduced models ==============================================================
@dataclass(frozen=True, eq=False)
class ReducedModel:
    """Galerkin projection of an affine parametric model.

    Attributes
    ----------
    spatial_basis : PodBasis
        Basis of dimension 0.
    pce_bases : list of PodBasis or None
        Per parameter; ``None`` leaves the dimension unreduced (decoupled).
    train_rules : list of QuadratureRule
        Rules whose nodal bases the PCE POD bases refer to.
    base, components : ndarray
        Projected affine operator parts ``V^T L^{-1} A_j L^{-T} V``.
    load, observation : ndarray
        Projected ``f`` and ``C``.
    """

    spatial_basis: PodBasis
    pce_bases: list
    train_rules: list
    base: np.ndarray
    components: list
    load: np.ndarray
    observation: np.ndarray
    param_domains: list

    @property
    def k0(self):
        return self.spatial_basis.k

    @property
    def reduced_dims(self):
        return [i for i, b in enumerate(self.pce_bases) if b is not None]

    def operator(self, alpha):
        A = self.base.copy()
        for a, Ai in zip(alpha, self.components):
            A += a * Ai
        return A


def _project_operator(A, left, right):
    if sparse.issparse(A):
        return left @ (A @ right)
    return left @ np.asarray(A) @ right


def build_reduced_model(model, rules, spatial_basis, pce_bases=None):
    """Project ``model`` onto the reduced bases (offline stage).

    Each affine operator component is projected once. ``pce_bases[i]``
    reduces parameter dimension ``i`` (tensor dimension ``i + 1``) and must
    have been computed with the mass factor of ``rules[i]``.
    """
    _check_rules(model, rules)
    if spatial_basis.dim != 0 or spatial_basis.size != model.n_dof:
        raise ValueError("spatial basis must reduce dimension 0 of size n_dof")
    expected = spatial_factor(model)
    if spatial_basis.factor.size != expected.size or not np.allclose(
        spatial_basis.factor.as_matrix(), expected.as_matrix(), rtol=1e-12
    ):
        raise ValueError("spatial basis was built with a different mass factor")
    if pce_bases is None:
        pce_bases = [None] * model.n_params
    pce_bases = list(pce_bases)
    if len(pce_bases) != model.n_params:
        raise ValueError("need one PCE basis (or None) per parameter")
    for i, b in enumerate(pce_bases):
        if b is None:
            continue
        w = rules[i].weights
        if b.size != w.size or not np.allclose(b.factor.as_matrix(),
                                               np.diag(np.sqrt(w)), rtol=1e-12):
            raise ValueError(
                f"PCE basis {i} does not match the mass factor of its rule"
            )

    left = spatial_basis.coeff_map
    right = spatial_basis.expand_map
    return ReducedModel(
        spatial_basis=spatial_basis,
        pce_bases=pce_bases,
        train_rules=list(rules),
        base=_project_operator(model.base, left, right),
        components=[_project_operator(A, left, right) for A in model.components],
        load=left @ model.load,
        observation=model.observation @ right,
        param_domains=list(model.param_domains),
    )


def reduced_pce_basis(basis, train_rule, alpha):
    """Values of the reduced PCE basis functions at ``alpha``: the
    ``(k, len(alpha))`` matrix ``V^T L^{-1} Psi(alpha)``.
    """
    return basis.coeff_map @ lagrange_basis(train_rule, np.atleast_1d(alpha))


def pce_gram(basis, train_rule, eval_rule=None, weight_fn=None):
    """``sum_k w_k g(alpha_k) Psi_hat(alpha_k) Psi_hat(alpha_k)^T`` over the
    nodes of ``eval_rule`` (the training rule by default), with ``g = 1``
    unless ``weight_fn`` is given. On the training rule and with ``g = 1``
    this is the identity.
    """
    rule = train_rule if eval_rule is None else eval_rule
    P = reduced_pce_basis(basis, train_rule, rule.nodes)
    w = rule.weights if weight_fn is None else rule.weights * weight_fn(rule.nodes)
    return (P * w) @ P.T


def _solve_decoupled(rm, nodes):
    """``C_hat A_hat(alpha)^{-1} f_hat`` for every row of ``nodes``."""
    k0 = rm.k0
    out = np.empty(len(nodes))
    comps = np.stack(rm.components) if rm.components else np.zeros((0, k0, k0))
    for start in range(0, len(nodes), max(1, BATCH // max(1, k0))):
        chunk = nodes[start:start + max(1, BATCH // max(1, k0))]
        A = rm.base + np.einsum("ni,ijk->njk", chunk, comps)
        try:
            y = np.linalg.solve(A, np.broadcast_to(rm.load, (len(chunk), k0))[..., None])
        except np.linalg.LinAlgError:
            raise SingularOperatorError(
                "singular reduced operator; the spatial basis may be too small"
            ) from None
        out[start:start + len(chunk)] = y[..., 0] @ rm.observation
    if not np.all(np.isfinite(out)):
        raise SingularOperatorError("non-finite reduced solution")
    return out


def _solve_coupled(rm, eval_rules):
    """Coupled Galerkin systems over the reduced PCE dimensions, one per
    node of the unreduced dimensions. Returns observed values on the full
    evaluation grid, shaped ``(d_1, ..., d_N)``.
    """
    N = len(eval_rules)
    R = rm.reduced_dims
    K = [i for i in range(N) if i not in R]

    # per reduced dim: values on eval nodes, Gram matrices, mean vector
    P, G0, G1, e = {}, {}, {}, {}
    for r in R:
        b, tr, er = rm.pce_bases[r], rm.train_rules[r], eval_rules[r]
        P[r] = reduced_pce_basis(b, tr, er.nodes)
        G0[r] = (P[r] * er.weights) @ P[r].T
        G1[r] = (P[r] * (er.weights * er.nodes)) @ P[r].T
        e[r] = P[r] @ er.weights

    rev = R[::-1]
    G_const = kron_all([G0[r] for r in rev])
    G_lin = {r: kron_all([G1[s] if s == r else G0[s] for s in rev]) for r in R}
    rhs = np.kron(kron_all([e[r][:, None] for r in rev]).ravel(), rm.load)
    red_shape = (rm.k0,) + tuple(rm.pce_bases[r].k for r in R)
    coupled_base = sum(
        (np.kron(G_lin[r], rm.components[r]) for r in R),
        np.zeros((rhs.size, rhs.size)),
    )

    if K:
        kidx, knodes, _ = grid_arrays([eval_rules[i] for i in K])
    else:
        kidx, knodes = np.zeros((1, 0), dtype=int), np.zeros((1, 0))

    values = np.empty(tuple(r.size for r in eval_rules))

    def solve(p):
        A_hat = rm.base.copy()
        for i, a in zip(K, knodes[p]):
            A_hat += a * rm.components[i]
        S = coupled_base + np.kron(G_const, A_hat)
        Yhat = solve_linear(S, rhs).reshape(red_shape, order="F")
        obs = np.tensordot(rm.observation, Yhat, axes=(0, 0))
        for ax, r in enumerate(R):
            obs = mode_product(obs, P[r].T, ax)
        return p, obs

    for p, obs in _parallel_map(solve, range(len(knodes))):
        sl = [slice(None)] * N
        for i, k in zip(K, kidx[p]):
            sl[i] = int(k)
        values[tuple(sl)] = obs
    return values, len(knodes), rhs.size


def solve_reduced(rm, eval_rules, method="pce-pod"):
    """Online stage: statistics of ``C y`` from the reduced model on the
    tensor grid of ``eval_rules`` (which may be finer than the training
    grid; reduced PCE bases are evaluated through the Lagrange basis).
    """
    if len(eval_rules) != len(rm.param_domains):
        raise ValueError("need one evaluation rule per parameter")
    for i, (r, m) in enumerate(zip(eval_rules, rm.param_domains)):
        if not np.allclose([r.measure.lo, r.measure.hi], [m.lo, m.hi],
                           rtol=1e-14, atol=0):
            raise ValueError(f"evaluation rule {i} has the wrong support")
    t0 = time.perf_counter()
    if not rm.reduced_dims:
        _, nodes, weights = grid_arrays(eval_rules)
        values = _solve_decoupled(rm, nodes)
        n_solves, size = len(nodes), rm.k0
    else:
        grid_values, n_solves, size = _solve_coupled(rm, eval_rules)
        values = grid_values.ravel(order="F")
        _, _, weights = grid_arrays(eval_rules)
    mean, var, clipped = moments(values, weights)
    return UqResult(mean, var, n_solves, time.perf_counter() - t0, method,
                    clipped, {"system_size": size,
                              "pcedim": [r.size for r in eval_rules]})


# Monte Carlo =================================================================
def _streams(seed, n_params):
    """One generator per parameter dimension plus one for resampling."""
    children = np.random.SeedSequence(seed).spawn(n_params + 1)
    return [np.random.Generator(np.random.PCG64(c)) for c in children]


def _draw(model, streams, n):
    return np.column_stack([
        m.sample(g, n) for m, g in zip(model.param_domains, streams)
    ])


def _observe_samples(model, alphas, resample_rng):
    """Observed values at ``alphas``; a singular draw is redrawn once."""
    try:
        return model.observe_batch(alphas), 0
    except SingularOperatorError:
        pass
    values = np.empty(len(alphas))
    redrawn = 0
    for j, a in enumerate(alphas):
        try:
            values[j] = model.observe(model.solve(a))
        except SingularOperatorError:
            redrawn += 1
            a = np.array([m.sample(resample_rng, 1)[0]
                          for m in model.param_domains])
            try:
                values[j] = model.observe(model.solve(a))
            except SingularOperatorError:
                raise SweepError(f"singular operator at redrawn sample {j}",
                                 index=j) from None
    return values, redrawn


def monte_carlo(model, n, seed, chunk=100_000):
    """Plain Monte Carlo estimate of the mean and (population) variance.

    Parameter ``i`` is drawn from its own child stream of
    ``SeedSequence(seed)``, so results depend only on ``seed`` and ``n``.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    t0 = time.perf_counter()
    streams = _streams(seed, model.n_params)
    values = np.empty(n)
    redrawn = 0
    for start in range(0, n, chunk):
        m = min(chunk, n - start)
        alphas = _draw(model, streams[:-1], m)
        values[start:start + m], r = _observe_samples(model, alphas, streams[-1])
        redrawn += r
    mean = float(np.mean(values))
    var = float(np.mean((values - mean) ** 2))
    return UqResult(mean, var, n + redrawn, time.perf_counter() - t0, "mc",
                    0.0, {"seed": seed, "redrawn": redrawn})


# Random-snapshot POD =========================================================
def random_snapshots(model, k, seed):
    """``k`` solutions at iid parameter draws, as columns; and the draws."""
    streams = _streams(seed, model.n_params)
    alphas = _draw(model, streams[:-1], k)

    def solve(j):
        try:
            return model.solve(alphas[j])
        except SingularOperatorError:
            raise SweepError(f"singular operator at snapshot {j}",
                             index=j) from None

    Y = np.column_stack(_parallel_map(solve, range(k)))
    return alphas, Y


def snapshot_pod(model, Y, kprime, factor=None):
    """Mass-weighted POD of snapshot columns ``Y`` and the projection error
    of the mean observation,
    ``(1/k) || C (I - L^{-T} V V^T L^T) Y ||_1``.
    """
    k = Y.shape[1]
    if not 1 <= kprime <= k <= model.n_dof:
        raise ValueError(f"need 1 <= kprime <= k <= n_dof, got {kprime}, {k}")
    L = spatial_factor(model) if factor is None else factor
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        basis = pod_basis(Y, [L, MassFactor.identity(k)], 0, kprime)
    residual = Y - basis.expand_map @ (basis.restrict_map @ Y)
    e_proj = float(np.sum(np.abs(model.observation @ residual)) / k)
    return basis, e_proj


def random_snapshot_pod(model, k, kprime, seed, factor=None):
    """POD basis from ``k`` random snapshots and its mean projection error."""
    _, Y = random_snapshots(model, k, seed)
    return snapshot_pod(model, Y, kprime, factor)
