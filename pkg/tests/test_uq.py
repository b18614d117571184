import numpy as np
import pytest

from genpod.models import (
    ParametricModel,
    convdiff_model,
    quadrant_map,
    toy1d_model,
    toy2d_model,
)
from genpod.pod import pod_basis, project
from genpod.quadrature import MassFactor, UniformMeasure, gauss_rule, grid_arrays
from genpod.uq import (
    SweepError,
    build_reduced_model,
    monte_carlo,
    moments,
    pce_factors,
    pce_gram,
    pce_sweep,
    random_snapshot_pod,
    random_snapshots,
    snapshot_pod,
    solve_reduced,
    spatial_factor,
    statistics,
)

# full-rank spatial bases exceed the numerical rank of the snapshots on purpose
pytestmark = pytest.mark.filterwarnings("ignore::genpod.pod.RankWarning")

TOY1D = (2118.24465097, 274944.360550)
TOY2D = (3504.22709343, 261037.034256)


def rules_for(model, d):
    ds = [d] * model.n_params if np.ndim(d) == 0 else d
    return [gauss_rule(m, k) for m, k in zip(model.param_domains, ds)]


def full_stats(model, rules):
    return statistics(pce_sweep(model, rules), rules, model.observation)


def all_factors(model, rules):
    return [spatial_factor(model)] + pce_factors(rules)


def rel(a, b):
    return abs(a - b) / abs(b)


@pytest.fixture(scope="module")
def convdiff16():
    return convdiff_model(16)


# Sweeps --------------------------------------------------------------------
def test_toy1d_sweep_values():
    m = toy1d_model()
    rules = rules_for(m, 2)
    Y = pce_sweep(m, rules)
    assert Y.shape == (1, 2)
    np.testing.assert_allclose(Y[0], 1 / rules[0].nodes, rtol=1e-15)


def test_convdiff_sweep_sixteen_solves(convdiff16):
    rules = rules_for(convdiff16, 2)
    Y = pce_sweep(convdiff16, rules)
    assert Y.shape == (256, 2, 2, 2, 2)
    idx, nodes, _ = grid_arrays(rules)
    assert len(nodes) == 16
    for p in (0, 7, 15):
        np.testing.assert_allclose(Y[(slice(None),) + tuple(idx[p])],
                                   convdiff16.solve(nodes[p]), rtol=1e-13)


def test_toy2d_sweep_slices():
    m = toy2d_model()
    rules = rules_for(m, 3)
    Y = pce_sweep(m, rules)
    assert Y.shape == (2, 3, 3)
    for i in range(3):
        for j in range(3):
            a = [rules[0].nodes[i], rules[1].nodes[j]]
            np.testing.assert_allclose(Y[:, i, j], m.solve(a), rtol=1e-14)


def test_sweep_permutation_invariance(rng, convdiff16):
    rules = rules_for(convdiff16, 2)
    ref = full_stats(convdiff16, rules)
    for _ in range(3):
        order = rng.permutation(16)
        res = statistics(pce_sweep(convdiff16, rules, order), rules,
                         convdiff16.observation)
        assert rel(res.mean, ref.mean) <= 1e-13
        assert rel(res.variance, ref.variance) <= 1e-13


def test_sweep_thread_count_invariance(monkeypatch, convdiff16):
    rules = rules_for(convdiff16, 2)
    monkeypatch.setenv("GENPOD_THREADS", "1")
    Y1 = pce_sweep(convdiff16, rules)
    monkeypatch.setenv("GENPOD_THREADS", "4")
    Y4 = pce_sweep(convdiff16, rules)
    np.testing.assert_array_equal(Y1, Y4)


def test_sweep_reports_singular_node():
    # second pivot 1/sqrt(3) + alpha vanishes at the lower 2-point Gauss node
    c = 1 / np.sqrt(3)
    m = ParametricModel("sing", np.diag([1.0, c]), [np.diag([0.0, 1.0])],
                        np.ones(2), np.ones(2), np.ones(2),
                        [UniformMeasure(-1.0, 1.0)])
    with pytest.raises(SweepError) as exc:
        pce_sweep(m, rules_for(m, 2))
    assert exc.value.index == (0,)


def test_sweep_rule_checks():
    m = toy2d_model()
    with pytest.raises(ValueError):
        pce_sweep(m, rules_for(m, 2)[:1])
    with pytest.raises(ValueError):
        pce_sweep(m, [gauss_rule(UniformMeasure(0.0, 1.0), 2)] * 2)


# Statistics ----------------------------------------------------------------
def test_constant_observation():
    rules = [gauss_rule(UniformMeasure(0.0, 1.0), 3)] * 2
    res = statistics(np.full((3, 3), 7.0), rules, None)
    assert res.mean == pytest.approx(7.0, rel=1e-15)
    assert abs(res.variance) <= 1e-15 * 49


def test_moments_never_negative(rng):
    for c in rng.uniform(-1e4, 1e4, 200):
        mean, var, clipped = moments(np.full(7, c), np.full(7, 1 / 7))
        assert var >= 0.0
        assert var <= 1e-14 * mean**2 and clipped <= 1e-14 * mean**2


def test_moments_population_variance(rng):
    v = rng.standard_normal(100)
    mean, var, clipped = moments(v)
    assert mean == pytest.approx(np.mean(v), rel=1e-14)
    assert var == pytest.approx(np.var(v), rel=1e-12)
    assert clipped == 0.0


def test_toy1d_d6_error():
    m = toy1d_model()
    res = full_stats(m, rules_for(m, 6))
    e_mean, _ = res.rel_errors(*TOY1D)
    assert rel(e_mean, -1.01e-8) <= 0.05


def test_toy2d_d4_error():
    m = toy2d_model()
    res = full_stats(m, rules_for(m, 4))
    _, e_var = res.rel_errors(*TOY2D)
    assert rel(e_var, -8.16e-4) <= 0.05


@pytest.mark.parametrize("model, ref", [(toy1d_model(), TOY1D),
                                        (toy2d_model(), TOY2D)],
                         ids=["toy1d", "toy2d"])
def test_pce_convergence_monotone(model, ref):
    errs = [full_stats(model, rules_for(model, d)).rel_errors(*ref)
            for d in range(3, 7)]
    e_mean = [e[0] for e in errs]
    e_var = [e[1] for e in errs]
    assert all(e < 0 for e in e_mean + e_var)
    assert all(abs(a) > abs(b) for a, b in zip(e_mean, e_mean[1:]))
    assert all(abs(a) > abs(b) for a, b in zip(e_var, e_var[1:]))


# Reduced models ------------------------------------------------------------
def _full_rank_bases(model, rules, Y, reduce_pce):
    f = all_factors(model, rules)
    sb = pod_basis(Y, f, 0, model.n_dof)
    pb = None
    if reduce_pce:
        pb = [pod_basis(Y, f, i + 1, r.size) for i, r in enumerate(rules)]
    return sb, pb


@pytest.mark.parametrize("reduce_pce", [False, True], ids=["decoupled", "coupled"])
def test_consistency_ladder_toy2d(reduce_pce):
    m = toy2d_model()
    rules = rules_for(m, 4)
    Y = pce_sweep(m, rules)
    full = statistics(Y, rules, m.observation)
    sb, pb = _full_rank_bases(m, rules, Y, reduce_pce)
    red = solve_reduced(build_reduced_model(m, rules, sb, pb), rules)
    proj = statistics(project(Y, [sb] + (pb or [None] * 2)), rules, m.observation)
    for res in (red, proj):
        assert rel(res.mean, full.mean) <= 1e-10
        assert rel(res.variance, full.variance) <= 1e-10


@pytest.mark.parametrize("reduce_pce", [False, True], ids=["decoupled", "coupled"])
def test_consistency_ladder_convdiff(convdiff16, reduce_pce):
    rules = rules_for(convdiff16, 2)
    Y = pce_sweep(convdiff16, rules)
    full = statistics(Y, rules, convdiff16.observation)
    sb, pb = _full_rank_bases(convdiff16, rules, Y, reduce_pce)
    red = solve_reduced(build_reduced_model(convdiff16, rules, sb, pb), rules)
    assert rel(red.mean, full.mean) <= 1e-10
    assert rel(red.variance, full.variance) <= 1e-10
    if reduce_pce:
        assert red.info["system_size"] == 256 * 16
        assert red.n_solves == 1


def test_partial_pce_reduction_matches_full(convdiff16):
    # reduce two of the four PCE dims at full rank: still exact
    rules = rules_for(convdiff16, 2)
    Y = pce_sweep(convdiff16, rules)
    full = statistics(Y, rules, convdiff16.observation)
    f = all_factors(convdiff16, rules)
    sb = pod_basis(Y, f, 0, 256)
    pb = [pod_basis(Y, f, 1, 2), None, pod_basis(Y, f, 3, 2), None]
    red = solve_reduced(build_reduced_model(convdiff16, rules, sb, pb), rules)
    assert red.n_solves == 4
    assert rel(red.mean, full.mean) <= 1e-10
    assert rel(red.variance, full.variance) <= 1e-10


@pytest.mark.parametrize("d", [2, 3, 5])
def test_reduced_pce_orthonormality(d):
    m = toy1d_model()
    rules = rules_for(m, d)
    Y = pce_sweep(m, rules)
    f = all_factors(m, rules)
    for k in range(1, d + 1):
        b = pod_basis(Y, f, 1, k)
        np.testing.assert_allclose(pce_gram(b, rules[0]), np.eye(k), atol=1e-12)


def test_toy1d_train_coarse_eval_fine():
    m = toy1d_model()
    train = rules_for(m, 2)
    Y = pce_sweep(m, train)
    sb = pod_basis(Y, all_factors(m, train), 0, 1)
    rm = build_reduced_model(m, train, sb)
    fine = rules_for(m, 6)
    red = solve_reduced(rm, fine)
    full = full_stats(m, fine)
    assert rel(red.mean, full.mean) <= 1e-14
    assert rel(red.variance, full.variance) <= 1e-12


def test_reduced_model_rejects_mismatched_bases(convdiff16):
    rules = rules_for(convdiff16, 2)
    Y = pce_sweep(convdiff16, rules)
    f = all_factors(convdiff16, rules)
    with pytest.raises(ValueError):
        build_reduced_model(convdiff16, rules, pod_basis(Y, f, 1, 2))
    wrong = [MassFactor.identity(256)] + f[1:]
    with pytest.raises(ValueError):
        build_reduced_model(convdiff16, rules, pod_basis(Y, wrong, 0, 4))
    other = rules_for(convdiff16, 3)
    with pytest.raises(ValueError):
        build_reduced_model(convdiff16, other, pod_basis(Y, f, 0, 4),
                            [pod_basis(Y, f, 1, 1), None, None, None])


def test_convdiff_eval_refinement(convdiff16):
    # trained on d=2 with k0=6: the d=3 and d=4 evaluations agree with each
    # other more closely than either agrees with full order
    train = rules_for(convdiff16, 2)
    Y = pce_sweep(convdiff16, train)
    sb = pod_basis(Y, all_factors(convdiff16, train), 0, 6)
    rm = build_reduced_model(convdiff16, train, sb)
    r3 = solve_reduced(rm, rules_for(convdiff16, 3))
    r4 = solve_reduced(rm, rules_for(convdiff16, 4))
    f4 = full_stats(convdiff16, rules_for(convdiff16, 4))
    assert abs(r3.mean - r4.mean) < abs(r4.mean - f4.mean)
    assert rel(r4.mean, f4.mean) < 1e-3


def test_reduced_eval_rule_checks(convdiff16):
    train = rules_for(convdiff16, 2)
    Y = pce_sweep(convdiff16, train)
    rm = build_reduced_model(convdiff16, train,
                             pod_basis(Y, all_factors(convdiff16, train), 0, 4))
    with pytest.raises(ValueError):
        solve_reduced(rm, train[:2])
    with pytest.raises(ValueError):
        solve_reduced(rm, [gauss_rule(UniformMeasure(0.0, 1.0), 2)] * 4)


# Monte Carlo ---------------------------------------------------------------
def test_mc_single_sample():
    res = monte_carlo(toy2d_model(), 1, seed=3)
    assert res.variance == 0.0 and res.n_solves == 1


def test_mc_reproducible():
    m = toy2d_model()
    a, b = monte_carlo(m, 5000, seed=11), monte_carlo(m, 5000, seed=11)
    assert a.mean == b.mean and a.variance == b.variance
    assert monte_carlo(m, 5000, seed=12).mean != a.mean


def test_mc_chunking_does_not_change_draws():
    m = toy1d_model()
    a = monte_carlo(m, 1000, seed=5)
    b = monte_carlo(m, 1000, seed=5, chunk=1000)
    assert a.mean == pytest.approx(b.mean, rel=1e-15)


def test_mc_rejects_empty():
    with pytest.raises(ValueError):
        monte_carlo(toy1d_model(), 0, seed=0)


@pytest.mark.slow
def test_mc_toy1d_seeds():
    m = toy1d_model()
    errs = [abs(monte_carlo(m, 10**6, seed=s).mean / TOY1D[0] - 1)
            for s in range(15)]
    assert sum(e <= 5e-4 for e in errs) >= 13


@pytest.mark.slow
def test_mc_toy2d_median():
    m = toy2d_model()
    errs = [abs(monte_carlo(m, 10**5, seed=s).mean / TOY2D[0] - 1)
            for s in range(11)]
    assert 1e-5 <= np.median(errs) <= 1e-3


# Random snapshots ----------------------------------------------------------
def test_random_snapshots_reproducible(convdiff16):
    a1, Y1 = random_snapshots(convdiff16, 6, seed=4)
    a2, Y2 = random_snapshots(convdiff16, 6, seed=4)
    np.testing.assert_array_equal(a1, a2)
    np.testing.assert_array_equal(Y1, Y2)
    b1, e1 = random_snapshot_pod(convdiff16, 6, 3, seed=4)
    b2, e2 = random_snapshot_pod(convdiff16, 6, 3, seed=4)
    assert e1 == e2
    np.testing.assert_array_equal(b1.vectors, b2.vectors)


def test_random_snapshots_full_rank_exact(convdiff16):
    _, Y = random_snapshots(convdiff16, 16, seed=0)
    scale = np.mean(np.abs(convdiff16.observation @ Y))
    _, e = snapshot_pod(convdiff16, Y, 16)
    assert e <= 1e-12 * scale
    errs = [snapshot_pod(convdiff16, Y, k)[1] for k in (3, 6, 9)]
    assert errs[0] > errs[2]


def test_single_snapshot_basis_is_normalized_snapshot():
    m = convdiff_model(16, subdomains=quadrant_map(16, convection=None))
    _, Y = random_snapshots(m, 1, seed=2)
    b, e = snapshot_pod(m, Y, 1)
    M = np.diag(m.spatial_mass)
    y = Y[:, 0]
    u = b.expand_map[:, 0]  # reduced basis function in original coefficients
    assert u @ M @ u == pytest.approx(1.0, rel=1e-12)
    np.testing.assert_allclose(np.abs(u), np.abs(y) / np.sqrt(y @ M @ y),
                               rtol=1e-10, atol=1e-14)
    assert e <= 1e-12 * abs(m.observe(y))


def test_snapshot_pod_rank_checks(convdiff16):
    _, Y = random_snapshots(convdiff16, 4, seed=0)
    with pytest.raises(ValueError):
        snapshot_pod(convdiff16, Y, 5)
    with pytest.raises(ValueError):
        snapshot_pod(convdiff16, Y, 0)
