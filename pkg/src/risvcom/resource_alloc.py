"""Joint sub-carrier, power and beam allocation for the multi-VUE OFDM link.

Resource allocation with fixed beams works on relaxed variables: effective
powers ``p_hat = rho * p`` and assignment weights ``rho_hat`` in ``[0, 1]``.
Binary assignments are encouraged by the penalty
``G(rho_hat) = sum rho_hat (1 - rho_hat)``. The objective

    Upsilon = sum_k F1_k - sum_k F2_k - lam * G

is a difference of concave functions; each D.C. step linearizes ``F2`` and
``G`` around the current point and maximizes the concave surrogate
``Upsilon_app`` with projected gradient ascent. All ``F`` values are in
bits/s/Hz; multiply by ``delta_f`` for bits/s.

With resources fixed, every VUE's RIS phases are refined by coordinate
ascent on the unit disk and every carrier's beamformer is water-filled.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .exceptions import OutOfRange, QoSInfeasible, SurrogateInfeasible
from .numerics import as_generator, svd, water_fill
from .ofdm import (
    LN2,
    Allocation,
    BroadbandScenario,
    RISProfiles,
    channel_eigs,
    ici_kernel,
    ici_vector,
    isotropic_beams,
    rate_matrix,
)
from .optimizer import FeasibleRegion, PGAConfig, pga_maximize

log = logging.getLogger(__name__)

__all__ = [
    "RelaxedAllocation",
    "DCRecord",
    "DCTrace",
    "penalty_G",
    "grad_G_rho",
    "F1",
    "F2",
    "F1_all",
    "F2_all",
    "grad_F1_p",
    "grad_F2_p",
    "taylor_surrogates",
    "solve_P3",
    "dc_loop",
    "round_allocation",
    "polish_power",
    "min_power_for_rate",
    "qos_waterfill",
    "P3Config",
    "DCConfig",
    "opt_passive_bb",
    "waterfill_beams",
    "alternate_P1",
    "P1Result",
]


@dataclass(frozen=True)
class RelaxedAllocation:
    p_hat: np.ndarray
    rho_hat: np.ndarray
    lam: float = 0.0


@dataclass(frozen=True)
class DCRecord:
    stage: int
    lam: float
    upsilon: float
    upsilon_app: float
    G: float
    qos_margin: np.ndarray


@dataclass
class DCTrace:
    records: list = field(default_factory=list)
    majorization_ok: bool = True
    jumps: list = field(default_factory=list)  # stages ended by a jump to the rounded point

    def stage(self, s):
        return [r for r in self.records if r.stage == s]

    @property
    def stages(self):
        return sorted({r.stage for r in self.records})


# -- penalty ---------------------------------------------------------------

def penalty_G(rho_hat) -> float:
    """``sum rho (1 - rho)``; zero exactly on binary matrices."""
    r = np.asarray(rho_hat, dtype=float)
    if np.any(r < -1e-12) or np.any(r > 1 + 1e-12):
        raise OutOfRange("relaxed indicators must lie in [0, 1]")
    return float(np.sum(r * (1.0 - r)))


def grad_G_rho(rho_hat) -> np.ndarray:
    return 1.0 - 2.0 * np.asarray(rho_hat, dtype=float)


# -- D.C. components ---------------------------------------------------------

def _den(p_hat, scen):
    return ici_vector(p_hat, scen) + scen.noise


def F1_all(p_hat, eigs, scen: BroadbandScenario) -> np.ndarray:
    """``F1_k = sum_n log2 det((ICI_n + N0 df) I + p_hat[k, n] H H^H)`` for every ``k``.

    ``eigs`` are the eigenvalues of ``H[k, n] H[k, n]^H`` (fixed beams).
    """
    den = _den(p_hat, scen)
    return np.log2(den[None, :, None] + np.asarray(p_hat)[:, :, None] * eigs).sum(axis=(1, 2))


def F2_all(p_hat, scen: BroadbandScenario) -> np.ndarray:
    """``F2_k = sum_n N_r log2(ICI_n + N0 df)`` (identical for every ``k``)."""
    val = scen.N_r * np.log2(_den(p_hat, scen)).sum()
    return np.full(scen.K, val)


def F1(k, p_hat, eigs, scen):
    return float(F1_all(p_hat, eigs, scen)[k])


def F2(k, p_hat, scen):
    return float(F2_all(p_hat, scen)[k])


def _dici(scen):
    # d ICI_n / d p_hat[d, l] = coef * v_d^2 * W[l, n]
    return scen.doppler_coef * scen.velocities ** 2, ici_kernel(scen.N)


def grad_F2_p(k, p_hat, scen: BroadbandScenario) -> np.ndarray:
    """Gradient of ``F2_k`` with respect to every ``p_hat[d, l]``.

    ``(N_r / ln 2) * coef * v_d^2 * sum_{n != l} 1 / ((ICI_n + N0 df)(l - n)^2)``.
    """
    cv, W = _dici(scen)
    inv = 1.0 / _den(p_hat, scen)
    return (scen.N_r / LN2) * cv[:, None] * (W @ inv)[None, :]


def grad_F1_p(p_hat, eigs, scen: BroadbandScenario, weights=None) -> np.ndarray:
    """Gradient of ``sum_k w_k F1_k`` with respect to ``p_hat``."""
    p_hat = np.asarray(p_hat)
    w = np.ones(scen.K) if weights is None else np.asarray(weights, dtype=float)
    den = _den(p_hat, scen)
    inv = 1.0 / (den[None, :, None] + p_hat[:, :, None] * eigs)  # (K, N, N_r)
    direct = w[:, None] * (eigs * inv).sum(axis=2)
    T = (w[:, None] * inv.sum(axis=2)).sum(axis=0)  # (N,)
    cv, W = _dici(scen)
    return (direct + cv[:, None] * (W @ T)[None, :]) / LN2


def taylor_surrogates(p_prev, rho_prev, p_cand, rho_cand, lam, eigs, scen):
    """Linearize ``F2`` and ``G`` at the previous point and evaluate at the candidate.

    Returns a dict with ``F2`` (exact, per VUE), ``F2_tilde`` (per VUE),
    ``J``, ``upsilon`` and ``upsilon_app``. By concavity
    ``F2 <= F2_tilde`` and ``upsilon >= upsilon_app``.
    """
    f2_prev = F2_all(p_prev, scen)
    g2 = grad_F2_p(0, p_prev, scen)
    lin = float(np.sum(g2 * (np.asarray(p_cand) - p_prev)))
    f2_tilde = f2_prev + lin
    G_prev = penalty_G(rho_prev)
    G_lin = G_prev + float(np.sum(grad_G_rho(rho_prev) * (np.asarray(rho_cand) - rho_prev)))
    f1 = F1_all(p_cand, eigs, scen)
    f2 = F2_all(p_cand, scen)
    J = f2_tilde.sum() + lam * G_lin
    return {
        "F1": f1,
        "F2": f2,
        "F2_tilde": f2_tilde,
        "J": float(J),
        "upsilon": float(f1.sum() - f2.sum() - lam * penalty_G(np.clip(rho_cand, 0, 1))),
        "upsilon_app": float(f1.sum() - J),
    }


def _upsilon(p_hat, rho_hat, lam, eigs, scen):
    return float(F1_all(p_hat, eigs, scen).sum() - F2_all(p_hat, scen).sum() - lam * penalty_G(np.clip(rho_hat, 0, 1)))


# -- P3 --------------------------------------------------------------------

@dataclass
class P3Config:
    pga: PGAConfig = field(default_factory=lambda: PGAConfig(max_iter=40, tol=1e-6))
    qos: bool = True
    qos_weight0: float = 1.0
    qos_doublings: int = 10  # cap on weight doublings and multiplier rounds
    qos_slack: float = 1e-4


def _surrogate_parts(p_prev, scen):
    f2_prev = F2_all(p_prev, scen)
    g2 = grad_F2_p(0, p_prev, scen)
    return f2_prev, g2


def _qos_margin(p, p_prev, f2_prev, g2, eigs, scen):
    """``delta_f (F1_k - F2_tilde_k) / C_min - 1`` per VUE."""
    f2t = f2_prev + float(np.sum(g2 * (p - p_prev)))
    return scen.delta_f * (F1_all(p, eigs, scen) - f2t) / scen.C_min - 1.0


def solve_P3(
    x_prev: RelaxedAllocation,
    lam: float,
    eigs,
    scen: BroadbandScenario,
    cfg: P3Config | None = None,
    mask=None,
    scale: float = 1.0,
    mult=None,
):
    """Maximize the concave surrogate around ``x_prev``.

    The feasible set is the relaxed allocation region plus the surrogate
    QoS constraints ``delta_f (F1_k - F2_tilde_k) >= C_min``. The latter are
    handled by an augmented Lagrangian: multipliers (warm-started from
    ``mult``) are updated after every inner solve and the quadratic weight
    doubles whenever the violation fails to shrink. A final backtrack
    toward the QoS-feasible expansion point restores exact feasibility.
    Since the expansion point is feasible and the surrogate is concave,
    ``Upsilon_app`` never drops below its value at ``x_prev``.

    Returns
    -------
    RelaxedAllocation
    SolveReport
        ``report.qos_mult`` holds the final multipliers.
    """
    cfg = cfg or P3Config()
    K, N = scen.K, scen.N
    Pm = scen.P_max
    p0, r0 = np.asarray(x_prev.p_hat, float), np.asarray(x_prev.rho_hat, float)
    f2_prev, g2 = _surrogate_parts(p0, scen)
    gG = grad_G_rho(r0)
    use_qos = cfg.qos and scen.C_min > 0
    if use_qos:
        m0 = _qos_margin(p0, p0, f2_prev, g2, eigs, scen)
        if np.any(m0 < -1e-9):
            raise SurrogateInfeasible(f"expansion point violates QoS (margins {np.round(m0, 4)})")
    region = FeasibleRegion(K, N, 1.0, scen.P_tot / Pm, coupled=True, mask=mask)
    # the constraint weight has to compete with the binary penalty
    qscale = scale + lam * K * N
    mu = np.zeros(K) if mult is None else np.asarray(mult, dtype=float).copy()

    def app(p, r):
        return float(F1_all(p, eigs, scen).sum() - f2_prev.sum() - np.sum(g2 * (p - p0)) * K - lam * np.sum(gG * r))

    def viol(p):
        # g_k(x) <= 0 with a little slack so solutions land inside the set
        return cfg.qos_slack - _qos_margin(p, p0, f2_prev, g2, eigs, scen)

    def make(c, mu):
        def f(x):
            p, r = region.split(x)
            p = p * Pm
            val = app(p, r)
            if use_qos:
                t = np.maximum(mu + c * viol(p), 0.0)
                val -= float(np.sum(t ** 2 - mu ** 2)) / (2.0 * c)
            return val

        def g(x):
            p, r = region.split(x)
            p = p * Pm
            gp = grad_F1_p(p, eigs, scen) - K * g2
            if use_qos:
                t = np.maximum(mu + c * viol(p), 0.0)
                if np.any(t > 0):
                    w = t * scen.delta_f / scen.C_min
                    gp = gp + grad_F1_p(p, eigs, scen, weights=w) - w.sum() * g2
            return region.join(gp * Pm, -lam * gG)

        return f, g

    x0 = region.join(p0 / Pm, r0)
    x0 = region.project(x0) if region.residual(x0) > 1e-9 else x0
    c = cfg.qos_weight0 * qscale
    x = x0
    worst_prev = np.inf
    for _ in range(cfg.qos_doublings + 1 if use_qos else 1):
        f, g = make(c, mu)
        x, rep = pga_maximize(f, g, region, x, cfg.pga)
        if not use_qos:
            break
        p, _ = region.split(x)
        v = viol(p * Pm)
        mu = np.maximum(mu + c * v, 0.0)
        worst = float(np.max(v)) - cfg.qos_slack
        if worst <= 0:
            break
        if worst > 0.25 * worst_prev:
            c *= 2.0
        worst_prev = worst
    if use_qos:
        p, _ = region.split(x)
        if np.any(_qos_margin(p * Pm, p0, f2_prev, g2, eigs, scen) < 0):
            lo, hi = 0.0, 1.0
            for _ in range(60):
                t = 0.5 * (lo + hi)
                pt, _ = region.split(x0 + t * (x - x0))
                if np.all(_qos_margin(pt * Pm, p0, f2_prev, g2, eigs, scen) >= 0):
                    lo = t
                else:
                    hi = t
            x = x0 + lo * (x - x0)
    rep.qos_mult = mu
    # never return a point with a lower surrogate than the expansion point
    pa, ra = region.split(x)
    if app(pa * Pm, ra) < app(p0, r0):
        pa, ra = p0 / Pm, r0
    return RelaxedAllocation(pa * Pm, ra, lam), rep


# -- D.C. loop -----------------------------------------------------------------

def initial_relaxed(scen: BroadbandScenario, mask=None) -> RelaxedAllocation:
    """Uniform ``rho_hat`` and equal power ``P_tot / (K N)`` clipped to the box."""
    K, N = scen.K, scen.N
    m = np.ones((K, N)) if mask is None else np.asarray(mask, dtype=float)
    rho = m / m.sum(axis=0, keepdims=True)
    p = np.minimum(scen.P_tot / m.sum(), scen.P_max) * m
    p = np.minimum(p, scen.P_max * rho)
    return RelaxedAllocation(p, rho)


def _greedy_assignment(scen, eigs):
    """Each VUE takes its best ``ceil(N/K)`` still-free carriers in turn."""
    K, N = scen.K, scen.N
    score = np.log2(1.0 + scen.P_tot / N * eigs / scen.noise).sum(axis=2)
    quota = int(np.ceil(N / K))
    rho = np.zeros((K, N))
    free = np.ones(N, bool)
    order = np.argsort(score.sum(axis=1))  # weakest VUE chooses first
    for _ in range(quota):
        for k in order:
            if not free.any():
                break
            n = int(np.argmax(np.where(free, score[k], -np.inf)))
            rho[k, n] = 1.0
            free[n] = False
    return rho


def _qos_phase1(x: RelaxedAllocation, eigs, scen, mask=None, iters=30, pga=None, slack=1e-2):
    """Drive the QoS shortfall to zero by D.C. steps on ``-sum shortfall^2``.

    The shortfall is measured against ``(1 + slack) C_min`` so that the
    smooth objective reaches the feasible set in finitely many steps.
    """
    K, N = scen.K, scen.N
    Pm = scen.P_max
    region = FeasibleRegion(K, N, 1.0, scen.P_tot / Pm, coupled=True, mask=mask)
    cfgp = pga or PGAConfig(max_iter=100, tol=1e-8)
    p, r = np.asarray(x.p_hat, float), np.asarray(x.rho_hat, float)
    for _ in range(iters):
        if np.all(_true_margin(p, eigs, scen) >= 0):
            return RelaxedAllocation(p, r, x.lam), True
        f2_prev, g2 = _surrogate_parts(p, scen)
        p0 = p.copy()

        def short(pp):
            return np.maximum(slack - _qos_margin(pp * Pm, p0, f2_prev, g2, eigs, scen), 0.0)

        def f(z):
            return -float(np.sum(short(region.split(z)[0]) ** 2))

        def g(z):
            pp, _ = region.split(z)
            c = 2.0 * short(pp) * scen.delta_f / scen.C_min
            gp = grad_F1_p(pp * Pm, eigs, scen, weights=c) - c.sum() * g2
            return region.join(gp * Pm, np.zeros((K, N)))

        z, _ = pga_maximize(f, g, region, region.join(p / Pm, r), cfgp)
        pp, r = region.split(z)
        p = pp * Pm
    return RelaxedAllocation(p, r, x.lam), bool(np.all(_true_margin(p, eigs, scen) >= 0))


def _true_margin(p, eigs, scen):
    return scen.delta_f * (F1_all(p, eigs, scen) - F2_all(p, scen)) / scen.C_min - 1.0


@dataclass
class DCConfig:
    lam_factors: tuple = (1.0, 10.0, 100.0, 1000.0)
    max_outer: int = 30
    tol: float = 1e-5
    p3: P3Config = field(default_factory=P3Config)
    check_majorization: bool = True
    warmup: bool = True
    binary_tol: float = 1e-9
    jump_polish: int = 3


def _reseed_rho(x: RelaxedAllocation, scen, mask=None) -> RelaxedAllocation:
    """Set ``rho_hat`` to each VUE's share of the carrier power.

    At a uniform ``rho_hat`` the linearized penalty is the same for every
    VUE of a carrier, so nothing breaks the tie; power shares from the
    unpenalized solution do. The coupling ``p_hat <= P_max rho_hat`` still
    holds because a column's total power never exceeds ``P_max``.
    """
    p = np.asarray(x.p_hat, float)
    col = p.sum(axis=0, keepdims=True)
    m = np.ones_like(p) if mask is None else np.asarray(mask, dtype=float)
    uni = m / m.sum(axis=0, keepdims=True)
    rho = np.where(col > 0, p / np.where(col > 0, col, 1.0), uni)
    rho = np.maximum(rho, p / scen.P_max)
    rho = rho / rho.sum(axis=0, keepdims=True)
    return RelaxedAllocation(p, rho, x.lam)


def dc_loop(x_init: RelaxedAllocation | None, scen: BroadbandScenario, eigs, cfg: DCConfig | None = None, mask=None):
    """Successive convex approximation over the penalty schedule.

    Each stage fixes ``lam = factor * scale`` with ``scale = |Upsilon_0| /
    (K N)``, the per-entry size of the initial objective. With ``warmup``
    an unpenalized stage runs first and ``rho_hat`` is re-seeded from the
    resulting power shares. Within a stage the D.C. steps re-expand at
    every new point and stop on a relative ``Upsilon_app`` gain below
    ``tol``. A stage that ends fractional is followed by a trial jump to
    its rounded, power-polished point, taken when that raises the true
    penalized objective; once ``rho_hat`` is binary the schedule stops.

    Returns
    -------
    relaxed : RelaxedAllocation
    trace : DCTrace
    alloc : Allocation
        Rounded, power-polished binary allocation.
    """
    cfg = cfg or DCConfig()
    K, N = scen.K, scen.N
    use_qos = cfg.p3.qos and scen.C_min > 0
    x = x_init if x_init is not None else initial_relaxed(scen, mask)
    if use_qos and np.any(_true_margin(x.p_hat, eigs, scen) < 0):
        x = _make_qos_feasible(x, scen, eigs, mask)
    ups0 = _upsilon(x.p_hat, x.rho_hat, 0.0, eigs, scen)
    scale = max(abs(ups0), 1e-6) / (K * N)
    trace = DCTrace()
    mult = None
    factors = (0.0,) + tuple(cfg.lam_factors) if cfg.warmup else tuple(cfg.lam_factors)
    for s, fac in enumerate(factors):
        if s == 1 and cfg.warmup:
            x = _reseed_rho(x, scen, mask)
        lam = fac * scale
        prev_app = None
        for j in range(cfg.max_outer):
            x_new, rep = solve_P3(x, lam, eigs, scen, cfg.p3, mask, scale=max(abs(ups0), 1.0), mult=mult)
            mult = rep.qos_mult
            sur = taylor_surrogates(x.p_hat, x.rho_hat, x_new.p_hat, x_new.rho_hat, lam, eigs, scen)
            if cfg.check_majorization:
                ok = np.all(sur["F2"] <= sur["F2_tilde"] + 1e-9 * (1 + np.abs(sur["F2"]))) and (
                    sur["upsilon"] >= sur["upsilon_app"] - 1e-9 * (1 + abs(sur["upsilon"]))
                )
                trace.majorization_ok &= bool(ok)
            margin = scen.delta_f * (sur["F1"] - sur["F2_tilde"]) / max(scen.C_min, 1e-300) - 1.0
            trace.records.append(DCRecord(s, lam, sur["upsilon"], sur["upsilon_app"], penalty_G(np.clip(x_new.rho_hat, 0, 1)), margin))
            x = x_new
            app = sur["upsilon_app"]
            if prev_app is not None and app - prev_app <= cfg.tol * max(abs(prev_app), 1e-12):
                break
            prev_app = app
        if lam > 0 and penalty_G(np.clip(x.rho_hat, 0, 1)) > cfg.binary_tol:
            # escape the fractional saddle the linearized penalty cannot leave
            cand = polish_power(round_allocation(x, scen, eigs), scen, eigs, cfg, max_outer=cfg.jump_polish)
            ok = not use_qos or np.all(_true_margin(cand.p, eigs, scen) >= 0)
            if ok and _upsilon(cand.p, cand.rho, lam, eigs, scen) >= _upsilon(x.p_hat, x.rho_hat, lam, eigs, scen):
                x = RelaxedAllocation(cand.p, cand.rho, lam)
                trace.jumps.append(s)
        if lam > 0 and penalty_G(np.clip(x.rho_hat, 0, 1)) <= cfg.binary_tol:
            break
    alloc = round_allocation(x, scen, eigs)
    alloc = polish_power(alloc, scen, eigs, cfg)
    return x, trace, alloc


def _make_qos_feasible(x, scen, eigs, mask=None):
    x1, ok = _qos_phase1(x, eigs, scen, mask)
    if ok:
        return x1
    if mask is None:
        rho = _greedy_assignment(scen, eigs)
        p = np.minimum(scen.P_tot / scen.N, scen.P_max) * rho
        x2, ok = _qos_phase1(RelaxedAllocation(p, rho, x.lam), eigs, scen)
        if ok:
            return x2
    raise QoSInfeasible("no QoS-feasible starting point found")


def round_allocation(x: RelaxedAllocation, scen: BroadbandScenario, eigs=None) -> Allocation:
    """Per-carrier argmax of ``rho_hat``; ties go to the VUE with the smaller QoS margin.

    Powers are kept where ``rho = 1`` and zeroed elsewhere, which keeps the
    box and total-power constraints satisfied.
    """
    K, N = scen.K, scen.N
    r = np.asarray(x.rho_hat, float)
    if eigs is not None and scen.C_min > 0:
        margin = _true_margin(x.p_hat, eigs, scen)
    else:
        margin = np.zeros(K)
    rho = np.zeros((K, N))
    for n in range(N):
        top = np.flatnonzero(r[:, n] >= r[:, n].max() - 1e-12)
        k = top[np.argmin(margin[top])] if top.size > 1 else top[0]
        rho[k, n] = 1.0
    p = np.clip(np.asarray(x.p_hat, float) * rho, 0.0, scen.P_max)
    if p.sum() > scen.P_tot:
        p *= scen.P_tot / p.sum()
    return Allocation(rho, p)


def polish_power(alloc: Allocation, scen, eigs, cfg: DCConfig | None = None, max_outer: int = 30) -> Allocation:
    """Re-optimize powers with the assignment frozen (D.C. steps, ``lam = 0``).

    If the rounded assignment misses a QoS target, powers are first moved
    to restore it and, failing that, carriers are handed to the short VUE
    from the VUE with the largest surplus. The best QoS-feasible allocation
    seen is returned; if none is reached the rounded one is returned.
    """
    cfg = cfg or DCConfig()
    use_qos = cfg.p3.qos and scen.C_min > 0
    rho = alloc.rho.copy()
    x = RelaxedAllocation(alloc.p.copy(), rho.copy())
    if use_qos and np.any(_true_margin(x.p_hat, eigs, scen) < 0):
        x = _repair_assignment(x, scen, eigs)
        if x is None:
            return alloc
        rho = x.rho_hat
    mask = rho > 0.5
    # exact water-filling with the QoS floors and ICI frozen, refreshed a few times
    p = x.p_hat * rho
    best = (_upsilon(p, rho, 0.0, eigs, scen), p) if not use_qos or np.all(_true_margin(p, eigs, scen) >= 0) else None
    for _ in range(3):
        p_new = qos_waterfill(rho, eigs, _den(p, scen), scen, slack=cfg.p3.qos_slack if use_qos else 0.0)
        if p_new is None:
            break
        p = p_new
        if not use_qos or np.all(_true_margin(p, eigs, scen) >= 0):
            val = _upsilon(p, rho, 0.0, eigs, scen)
            if best is None or val > best[0]:
                best = (val, p)
    if best is not None:
        x = RelaxedAllocation(best[1], rho.copy())
    prev = None
    for _ in range(max_outer):
        x_new, _ = solve_P3(x, 0.0, eigs, scen, cfg.p3, mask)
        val = _upsilon(x_new.p_hat, rho, 0.0, eigs, scen)
        x = x_new
        if prev is not None and val - prev <= cfg.tol * max(abs(prev), 1e-12):
            break
        prev = val
    return Allocation(rho.copy(), np.clip(x.p_hat * rho, 0.0, scen.P_max))


def _carrier_powers(q, price, cap, delta_f, newton_iters: int = 30):
    """Per-carrier powers with marginal rate ``price`` (bits/s per W), capped.

    ``q`` is ``(n, N_r)`` gains over interference plus noise. The marginal
    rate is convex and decreasing in ``p``, so Newton from ``p = 0`` climbs
    monotonically to its root.
    """
    c = price * LN2 / delta_f

    def slope(p):
        return (q / (1.0 + p[:, None] * q)).sum(axis=1)

    p = np.zeros(q.shape[0])
    active = slope(p) > c
    for _ in range(newton_iters):
        if not active.any():
            break
        r = q / (1.0 + p[:, None] * q)
        d = -(r * r).sum(axis=1)
        step = np.where(active, (c - r.sum(axis=1)) / np.where(d < 0, d, -1.0), 0.0)
        p_new = np.minimum(p + np.maximum(step, 0.0), cap)
        moved = np.abs(p_new - p)
        p = p_new
        # quadratic convergence: once steps stall the root is exact to roundoff
        active &= (moved > 1e-15 * cap) & (p < cap)
    return p


def _carrier_rates(q, p, delta_f):
    return delta_f * np.log2(1.0 + p[:, None] * q).sum(axis=1)


def min_power_for_rate(eigs, den, target, cap, delta_f, iters: int = 60, newton_iters: int = 30):
    """Least total power meeting ``target`` bits/s on the given carriers.

    ``eigs`` is ``(n, N_r)`` and ``den`` the per-carrier interference plus
    noise (held fixed). The carrier rate ``delta_f sum_r log2(1 + p q_r /
    den)`` is concave in ``p``, so at the optimum every carrier's marginal
    rate equals a common price; the price is found by geometric bisection
    and the per-carrier powers by Newton steps. Returns ``None`` if
    ``target`` is out of reach with every carrier at ``cap``.
    """
    q = np.asarray(eigs, float) / np.asarray(den, float)[:, None]
    if target <= 0:
        return np.zeros(q.shape[0])
    full = np.full(q.shape[0], cap)
    if _carrier_rates(q, full, delta_f).sum() < target:
        return None
    k = delta_f / LN2
    hi = k * q.sum(axis=1).max()
    lo = k * (q / (1.0 + cap * q)).sum(axis=1).min()
    for _ in range(iters):
        mid = np.sqrt(lo * hi)
        if _carrier_rates(q, _carrier_powers(q, mid, cap, delta_f, newton_iters), delta_f).sum() >= target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-13 * hi:
            break
    return _carrier_powers(q, lo, cap, delta_f, newton_iters)


def qos_waterfill(rho, eigs, den, scen: BroadbandScenario, slack: float = 0.0, iters: int = 80):
    """Throughput-maximizing powers for a fixed binary assignment.

    Solves ``max sum_k R_k(p)`` subject to ``R_k >= (1 + slack) C_min``,
    ``sum p <= P_tot`` and ``0 <= p <= P_max`` with the interference held at
    ``den``. Given the price ``mu`` of the power budget the VUEs decouple:
    each one water-fills at price ``mu`` and, if that misses its target,
    falls back to its least-power allocation for the target (the QoS
    multiplier lowers its own price until the target is met exactly).
    ``mu`` is found by geometric bisection. Returns ``None`` when the
    targets are jointly out of reach.
    """
    rho = np.asarray(rho) > 0.5
    K = scen.K
    target = (1.0 + slack) * scen.C_min
    idx = [np.flatnonzero(rho[k]) for k in range(K)]
    q = [eigs[k, idx[k]] / np.asarray(den)[idx[k], None] for k in range(K)]
    floors = []
    for k in range(K):
        if idx[k].size == 0:
            if target > 0:
                return None
            floors.append(np.zeros(0))
            continue
        f = min_power_for_rate(eigs[k, idx[k]], np.asarray(den)[idx[k]], target, scen.P_max, scen.delta_f)
        if f is None:
            return None
        floors.append(f)
    if sum(f.sum() for f in floors) > scen.P_tot * (1 + 1e-12):
        return None

    def powers(mu):
        p = np.zeros(rho.shape)
        for k in range(K):
            if idx[k].size == 0:
                continue
            pk = _carrier_powers(q[k], mu, scen.P_max, scen.delta_f)
            if _carrier_rates(q[k], pk, scen.delta_f).sum() < target:
                pk = floors[k]
            p[k, idx[k]] = pk
        return p

    full = np.where(rho, scen.P_max, 0.0)
    if full.sum() <= scen.P_tot:
        return full
    kf = scen.delta_f / LN2
    qs = [x for x in q if x.size]
    hi = kf * max(x.sum(axis=1).max() for x in qs)
    lo = kf * min((x / (1.0 + scen.P_max * x)).sum(axis=1).min() for x in qs)
    for _ in range(iters):
        mid = np.sqrt(lo * hi)
        if powers(mid).sum() > scen.P_tot:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-13 * hi:
            break
    return powers(hi)


def _fill_powers(rho, eigs, den, scen, slack):
    """Minimum powers giving every VUE ``(1 + slack) C_min`` with ICI held at ``den``."""
    K = scen.K
    p = np.zeros_like(rho)
    for k in range(K):
        idx = np.flatnonzero(rho[k] > 0.5)
        if idx.size == 0:
            return None, k
        pk = min_power_for_rate(eigs[k, idx], den[idx], (1 + slack) * scen.C_min, scen.P_max, scen.delta_f)
        if pk is None:
            return None, k
        p[k, idx] = pk
    return p, None


def _repair_assignment(x, scen, eigs, max_moves=None, slack=1e-2):
    """Make a binary assignment QoS-feasible by re-splitting power and, if
    needed, handing carriers from the richest VUE to the poorest one.

    Powers are the least needed for ``(1 + slack) C_min`` per VUE; leftover
    budget is left for the power polish. ICI is refreshed a few times since
    it depends on the powers being chosen.
    """
    rho = np.asarray(x.rho_hat, float).copy()
    p = np.asarray(x.p_hat, float).copy() * rho
    max_moves = max_moves or scen.N
    best = scen.delta_f * np.log2(1.0 + min(scen.P_max, scen.P_tot) * eigs / scen.noise).sum(axis=2)
    for _ in range(max_moves + 1):
        short = None
        for _ in range(4):
            den = ici_vector(p, scen) + scen.noise
            p_new, short = _fill_powers(rho, eigs, den, scen, slack)
            if p_new is None:
                break
            p = p_new
            if p.sum() <= scen.P_tot and np.all(_true_margin(p, eigs, scen) >= 0):
                return RelaxedAllocation(p, rho)
        if short is None:
            # reachable one VUE at a time but not jointly: starve the VUE
            # needing the most power per carrier of nothing, feed the neediest
            need = p.sum(axis=1)
            short = int(np.argmax(need))
        m = (best * rho).sum(axis=1) / scen.C_min
        m[short] = -np.inf
        donor = int(np.argmax(m))
        if donor == short or rho[donor].sum() <= 1:
            return None
        cand = np.flatnonzero(rho[donor] > 0.5)
        n = int(cand[np.argmax(best[short, cand] - best[donor, cand])])
        rho[donor, n], rho[short, n] = 0.0, 1.0
        p[short, n], p[donor, n] = p[donor, n], 0.0
    return None


# -- beams with resources fixed ------------------------------------------------

def opt_passive_bb(k: int, theta, alloc: Allocation, F, scen: BroadbandScenario, sweeps: int = 2, inner: int = 25, return_trace: bool = False):
    """Coordinate ascent on VUE ``k``'s group phases over its carriers.

    Each coordinate is moved by projected gradient steps inside the closed
    unit disk (backtracking keeps every step non-decreasing). Phases are
    normalized to unit modulus at the end; if that lowers the objective
    below the starting profile, the starting profile is returned.
    """
    theta = np.asarray(theta.theta if isinstance(theta, RISProfiles) else theta)
    t0 = theta[k].astype(complex).copy()
    carriers = np.flatnonzero(alloc.rho[k] * alloc.p[k] > 0)
    trace = []
    if carriers.size == 0:
        return (t0, trace) if return_trace else t0
    den = ici_vector(alloc.rho * alloc.p, scen) + scen.noise
    S = scen.slices[k][carriers] @ np.asarray(F)[carriers][:, None]  # (Nc, I, N_r, N_t)
    c = (alloc.p[k] / den)[carriers]
    N_r = scen.N_r
    eye = np.eye(N_r)

    def obj(t):
        Hm = np.tensordot(t, S, axes=([0], [1]))
        Q = Hm @ Hm.conj().swapaxes(-1, -2)
        _, ld = np.linalg.slogdet(eye[None] + c[:, None, None] * Q)
        return float(ld.sum() / LN2)

    t = t0.copy()
    f = obj(t)
    trace.append(f)
    for _ in range(sweeps):
        for m in range(t.size):
            Sm = S[:, m]
            step = 1.0
            for _ in range(inner):
                Hm = np.tensordot(t, S, axes=([0], [1]))
                Wi = np.linalg.inv(eye[None] + c[:, None, None] * (Hm @ Hm.conj().swapaxes(-1, -2)))
                grad = 2.0 * np.sum(c * np.einsum("nrt,nrs,nst->n", Sm.conj(), Wi, Hm)) / LN2
                if abs(grad) < 1e-10 * (1 + abs(f)):
                    break
                moved = False
                while step > 1e-12:
                    z = t[m] + step * grad
                    z = z / max(1.0, abs(z))
                    cand = t.copy()
                    cand[m] = z
                    fc = obj(cand)
                    if fc >= f:
                        t, f, moved = cand, fc, True
                        step *= 2.0
                        break
                    step *= 0.5
                if not moved:
                    break
            trace.append(f)
    out = np.where(np.abs(t) > 1e-12, t / np.maximum(np.abs(t), 1e-300), 1.0 + 0j)
    if obj(out) < obj(t0):
        out = t0
    return (out, trace) if return_trace else out


def waterfill_beams(theta, alloc: Allocation, F, scen: BroadbandScenario) -> np.ndarray:
    """Water-fill every active carrier's beamformer for its owner (``||F||_F^2 = 1``)."""
    theta = np.asarray(theta.theta if isinstance(theta, RISProfiles) else theta)
    F = np.asarray(F, dtype=complex).copy()
    den = ici_vector(alloc.rho * alloc.p, scen) + scen.noise
    for n in range(scen.N):
        k = int(np.argmax(alloc.rho[:, n]))
        pk = alloc.p[k, n]
        if pk <= 0:
            continue
        Hs = np.tensordot(theta[k], scen.slices[k, n], axes=1)
        if not np.any(Hs):
            continue
        _, s, V = svd(Hs)
        pw = water_fill(s ** 2, den[n] / pk, 1.0)
        Fn = np.zeros((scen.N_t, scen.N_t), dtype=complex)
        Fn[:, : pw.size] = V * np.sqrt(pw)[None, :]
        old = np.linalg.slogdet(np.eye(scen.N_r) + pk / den[n] * (Hs @ F[n]) @ (Hs @ F[n]).conj().T)[1]
        new = np.linalg.slogdet(np.eye(scen.N_r) + pk / den[n] * (Hs @ Fn) @ (Hs @ Fn).conj().T)[1]
        if new >= old:
            F[n] = Fn
    return F


@dataclass
class P1Result:
    alloc: Allocation
    profiles: RISProfiles
    F: np.ndarray
    trace: list  # dicts: round, total, per_vue, power
    dc_traces: list

    @property
    def total(self) -> float:
        return self.trace[-1]["total"]

    @property
    def per_vue(self) -> np.ndarray:
        return self.trace[-1]["per_vue"]


def _evaluate(alloc, theta, F, scen):
    C = rate_matrix(alloc, theta, F, scen)
    per = C.sum(axis=1)
    return float(per.sum()), per


def alternate_P1(
    scen: BroadbandScenario,
    rounds: int = 10,
    tol: float = 1e-4,
    rng=None,
    theta0=None,
    dc: DCConfig | None = None,
    passive_sweeps: int = 2,
) -> P1Result:
    """Alternate resource allocation (beams fixed) and beam design (resources fixed).

    Starts resources-first with isotropic beamformers. A round's new
    allocation replaces the previous one only when it does not lower the
    total throughput under the current beams, so the per-round trace is
    non-decreasing. Raises ``QoSInfeasible`` if no QoS-feasible allocation
    can be found in the first round.
    """
    gen = as_generator(rng)
    K, I = scen.K, scen.I
    theta = np.exp(2j * np.pi * gen.uniform(size=(K, I))) if theta0 is None else np.asarray(theta0, complex).copy()
    F = isotropic_beams(scen)
    dc = dc or DCConfig()
    alloc = None
    trace, dc_traces = [], []
    prev_total = None
    for r in range(1, rounds + 1):
        eigs = channel_eigs(theta, F, scen)
        x_init = None if alloc is None else RelaxedAllocation(alloc.p, alloc.rho)
        try:
            _, tr, new = dc_loop(x_init, scen, eigs, dc)
        except QoSInfeasible:
            if alloc is None:
                raise
            new, tr = alloc, DCTrace()
        dc_traces.append(tr)
        if alloc is None:
            alloc = new
        else:
            t_new, per_new = _evaluate(new, theta, F, scen)
            t_old, _ = _evaluate(alloc, theta, F, scen)
            qos_ok = not scen.C_min or np.all(per_new >= scen.C_min * (1 - 1e-9))
            if t_new >= t_old and qos_ok:
                alloc = new
        for k in range(K):
            theta[k] = opt_passive_bb(k, theta, alloc, F, scen, sweeps=passive_sweeps)
        F = waterfill_beams(theta, alloc, F, scen)
        total, per = _evaluate(alloc, theta, F, scen)
        trace.append({"round": r, "total": total, "per_vue": per, "power": (alloc.rho * alloc.p).sum(axis=1)})
        log.debug("round %d total %.4g per-VUE %s", r, total, per)
        if prev_total is not None and total - prev_total <= tol * max(abs(prev_total), 1e-12):
            break
        prev_total = total
    return P1Result(alloc, RISProfiles(theta), F, trace, dc_traces)
