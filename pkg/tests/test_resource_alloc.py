import numpy as np
import pytest

from risvcom.exceptions import OutOfRange, QoSInfeasible
from risvcom.ofdm import Allocation, channel_eigs, check_feasible, isotropic_beams, make_scenario, rate_matrix
from risvcom.resource_alloc import (
    DCConfig,
    F1_all,
    F2_all,
    RelaxedAllocation,
    alternate_P1,
    dc_loop,
    grad_F1_p,
    grad_F2_p,
    grad_G_rho,
    min_power_for_rate,
    opt_passive_bb,
    penalty_G,
    qos_waterfill,
    round_allocation,
    solve_P3,
    taylor_surrogates,
    waterfill_beams,
)
from risvcom.ofdm import ici_vector

LN2 = np.log(2)


def _scen(K=2, N=6, seed=0, ici_gain=None, C_min=3e6, **kw):
    return make_scenario(K=K, N=N, N_t=2, N_r=2, M=4, rng=seed, C_min=C_min, ici_gain=ici_gain, **kw)


def _eigs(scen):
    return channel_eigs(np.ones((scen.K, scen.I), complex), isotropic_beams(scen), scen)


def test_penalty_is_zero_exactly_on_binary():
    assert penalty_G(np.array([[0.0, 1.0], [1.0, 0.0]])) == 0.0
    assert penalty_G(np.full((2, 2), 0.5)) == pytest.approx(1.0)
    np.testing.assert_allclose(grad_G_rho([0.25]), [0.5])
    with pytest.raises(OutOfRange):
        penalty_G([1.5])


def test_F_components_by_definition():
    # strong leakage so that the interference term matters
    scen = _scen(ici_gain=1e-6)
    q = _eigs(scen)
    p = np.random.default_rng(0).uniform(0, 0.05, (scen.K, scen.N))
    den = ici_vector(p, scen) + scen.noise
    for k in range(scen.K):
        ref = sum(np.log2(np.linalg.det(den[n] * np.eye(2) + p[k, n] * np.diag(q[k, n])).real) for n in range(scen.N))
        assert F1_all(p, q, scen)[k] == pytest.approx(ref, rel=1e-12)
    assert F2_all(p, scen)[0] == pytest.approx(2 * np.log2(den).sum())
    # F1 - F2 is the spectral efficiency of the rate model
    C = rate_matrix(Allocation(np.ones_like(p), p), np.ones((scen.K, scen.I)), isotropic_beams(scen), scen)
    np.testing.assert_allclose(scen.delta_f * (F1_all(p, q, scen) - F2_all(p, scen)), C.sum(axis=1), rtol=1e-9)


@pytest.mark.parametrize("ici_gain", [None, 1e-6])
def test_gradients_central_differences(ici_gain):
    scen = _scen(ici_gain=ici_gain)
    q = _eigs(scen)
    rng = np.random.default_rng(1)
    p = rng.uniform(0.01, 0.05, (scen.K, scen.N))
    w = rng.uniform(0.5, 2.0, scen.K)
    g1, g2 = grad_F1_p(p, q, scen, weights=w), grad_F2_p(0, p, scen)
    for k in range(scen.K):
        for n in range(scen.N):
            h = 1e-6 * p[k, n]
            e = np.zeros_like(p)
            e[k, n] = h
            fd1 = (w @ F1_all(p + e, q, scen) - w @ F1_all(p - e, q, scen)) / (2 * h)
            # F2 moves by far less than its size; difference the logs as ratios
            lo = ici_vector(p - e, scen) + scen.noise
            step = ici_vector(p + e, scen) - ici_vector(p - e, scen)
            fd2 = scen.N_r * np.log1p(step / lo).sum() / LN2 / (2 * h)
            assert g1[k, n] == pytest.approx(fd1, rel=1e-5)
            assert g2[k, n] == pytest.approx(fd2, rel=1e-5)


def test_linearization_majorizes():
    scen = _scen(ici_gain=1e-6)
    q = _eigs(scen)
    rng = np.random.default_rng(2)
    for _ in range(20):
        p0, p1 = rng.uniform(0, 0.1, (2, scen.K, scen.N))
        r0, r1 = rng.dirichlet(np.ones(2), scen.N).T, rng.dirichlet(np.ones(2), scen.N).T
        s = taylor_surrogates(p0, r0, p1, r1, 3.0, q, scen)
        assert np.all(s["F2"] <= s["F2_tilde"] + 1e-9)
        assert s["upsilon"] >= s["upsilon_app"] - 1e-9


def test_solve_P3_improves_surrogate():
    scen = _scen(C_min=0.0)
    q = _eigs(scen)
    x0 = RelaxedAllocation(np.full((2, 6), 0.02), np.full((2, 6), 0.5))
    x1, rep = solve_P3(x0, 0.0, q, scen)
    s0 = taylor_surrogates(x0.p_hat, x0.rho_hat, x0.p_hat, x0.rho_hat, 0.0, q, scen)
    s1 = taylor_surrogates(x0.p_hat, x0.rho_hat, x1.p_hat, x1.rho_hat, 0.0, q, scen)
    assert s1["upsilon_app"] >= s0["upsilon_app"]
    assert np.all(x1.p_hat <= scen.P_max * x1.rho_hat + 1e-12)
    assert x1.p_hat.sum() <= scen.P_tot + 1e-12


cp = pytest.importorskip("cvxpy")


def test_min_power_for_rate_matches_convex_solver():
    rng = np.random.default_rng(3)
    eigs = rng.exponential(1e-12, (5, 2))
    den = np.full(5, 1e-14)
    df, cap = 1e5, 0.1
    target = 0.6 * df * np.log2(1 + cap * eigs / den[:, None]).sum()
    p = min_power_for_rate(eigs, den, target, cap, df)
    x = cp.Variable(5)
    q = eigs / den[:, None]
    rate = sum(cp.sum(cp.log(1 + cp.multiply(q[:, r], x))) for r in range(2)) * df / LN2
    prob = cp.Problem(cp.Minimize(cp.sum(x)), [x >= 0, x <= cap, rate >= target])
    prob.solve(solver=cp.CLARABEL)
    assert p.sum() == pytest.approx(prob.value, rel=1e-5)
    assert df * np.log2(1 + p[:, None] * q).sum() >= target * (1 - 1e-9)
    assert min_power_for_rate(eigs, den, 1e12, cap, df) is None
    assert not np.any(min_power_for_rate(eigs, den, 0.0, cap, df))


def test_qos_waterfill_matches_convex_solver():
    scen = _scen(K=2, N=6, seed=4)
    q = _eigs(scen)
    rho = np.zeros((2, 6))
    rho[0, :3] = rho[1, 3:] = 1
    den = np.full(6, scen.noise)
    # a target that binds for the weaker VUE but stays reachable
    cap_rates = scen.delta_f * np.log2(1 + scen.P_max * q / scen.noise).sum(axis=2)
    reach = (cap_rates * rho).sum(axis=1)
    scen = _scen(K=2, N=6, seed=4, C_min=0.9 * reach.min(), P_tot=0.4)
    p = qos_waterfill(rho, q, den, scen)
    x = cp.Variable((2, 6))
    qq = q / den[None, :, None]
    rates = [
        sum(cp.sum(cp.log(1 + cp.multiply(qq[k, :, r], x[k]))) for r in range(2)) * scen.delta_f / LN2
        for k in range(2)
    ]
    cons = [x >= 0, x <= scen.P_max * rho, cp.sum(x) <= scen.P_tot] + [r >= scen.C_min for r in rates]
    prob = cp.Problem(cp.Maximize(sum(rates)), cons)
    prob.solve(solver=cp.CLARABEL)
    got = scen.delta_f * np.log2(1 + p[:, :, None] * qq).sum()
    assert got == pytest.approx(prob.value, rel=1e-6)
    assert p.sum() <= scen.P_tot * (1 + 1e-9)
    per = scen.delta_f * np.log2(1 + p[:, :, None] * qq).sum(axis=(1, 2))
    assert np.all(per >= scen.C_min * (1 - 1e-9))


def test_dc_loop_drives_penalty_to_zero():
    scen = _scen(K=2, N=8, seed=5)
    q = _eigs(scen)
    x, trace, alloc = dc_loop(None, scen, q)
    assert trace.majorization_ok
    assert penalty_G(np.clip(x.rho_hat, 0, 1)) < 1e-3
    assert check_feasible(alloc, scen) == []
    for s in trace.stages:
        app = [r.upsilon_app for r in trace.stage(s)]
        assert all(b >= a - 1e-9 * abs(a) for a, b in zip(app, app[1:]))


def test_round_allocation_is_exclusive():
    scen = _scen()
    x = RelaxedAllocation(np.full((2, 6), 0.05), np.array([[0.6] * 6, [0.4] * 6]))
    a = round_allocation(x, scen)
    assert np.all(a.rho.sum(axis=0) == 1) and np.all(a.rho[0] == 1)
    assert check_feasible(a, scen) == []


def test_passive_and_beam_updates_do_not_lower_rate():
    scen = _scen(K=2, N=6, seed=6)
    rng = np.random.default_rng(0)
    theta = np.exp(2j * np.pi * rng.uniform(size=(2, scen.I)))
    rho = np.zeros((2, 6))
    rho[0, ::2] = rho[1, 1::2] = 1
    a = Allocation(rho, rho * 0.08)
    F = isotropic_beams(scen)
    base = rate_matrix(a, theta, F, scen).sum()
    th = theta.copy()
    th[0], tr = opt_passive_bb(0, theta, a, F, scen, return_trace=True)
    assert np.all(np.diff(tr) >= -1e-12)
    np.testing.assert_allclose(np.abs(th), 1.0)
    after = rate_matrix(a, th, F, scen).sum()
    assert after >= base - 1e-6
    F2 = waterfill_beams(th, a, F, scen)
    assert rate_matrix(a, th, F2, scen).sum() >= after - 1e-6
    np.testing.assert_allclose(np.linalg.norm(F2, axis=(1, 2)), 1.0)


def test_alternate_P1_monotone_and_feasible():
    scen = make_scenario(K=2, N=8, rng=1, C_min=2e7)
    res = alternate_P1(scen, rounds=3, rng=0)
    totals = [t["total"] for t in res.trace]
    assert all(b >= a * (1 - 1e-9) for a, b in zip(totals, totals[1:]))
    assert check_feasible(res.alloc, scen, res.per_vue) == []


def test_alternate_P1_reports_infeasible_qos():
    scen = make_scenario(K=2, N=4, rng=1, C_min=1e10)
    with pytest.raises(QoSInfeasible):
        alternate_P1(scen, rounds=1, rng=0, dc=DCConfig(max_outer=3))
