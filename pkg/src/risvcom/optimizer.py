"""Projections, a projected-gradient ascent engine and brute-force oracles.

The resource-allocation subproblem is a concave maximization over a set
with cheap exact projections, so a first-order method with Armijo
backtracking is all that is needed.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .exceptions import InfeasibleRegion, TooLarge

__all__ = [
    "project_box_sum",
    "project_simplex_columns",
    "project_coupled",
    "FeasibleRegion",
    "SolveReport",
    "PGAConfig",
    "pga_maximize",
    "brute_force_alloc",
]


def project_box_sum(x, lo, hi, total) -> np.ndarray:
    """Euclidean projection onto ``{lo <= x <= hi, sum(x) <= total}``.

    The sum constraint is handled by a scalar shift ``x - mu``. The shifted
    sum is piecewise linear in ``mu`` with breakpoints ``x - hi`` and
    ``x - lo``, so ``mu`` is found exactly by sorting them.
    """
    x = np.asarray(x, dtype=float)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), x.shape)
    hi = np.broadcast_to(np.asarray(hi, dtype=float), x.shape)
    if np.any(lo > hi) or lo.sum() > total * (1 + 1e-12) + 1e-300:
        raise InfeasibleRegion("box lower bounds exceed the sum budget")
    y = np.clip(x, lo, hi)
    if y.sum() <= total:
        return y
    xf, lf, hf = x.ravel(), lo.ravel(), hi.ravel()
    bp = np.concatenate([xf - hf, xf - lf])
    step = np.concatenate([np.ones(xf.size), -np.ones(xf.size)])
    order = np.argsort(bp, kind="stable")
    bp, step = bp[order], step[order]
    # S(mu) = sum clip(x - mu, lo, hi) is decreasing with slope -(free count)
    free = np.cumsum(step)[:-1]
    S = np.empty(bp.size)
    S[0] = np.clip(xf - bp[0], lf, hf).sum()
    S[1:] = S[0] - np.cumsum(free * np.diff(bp))
    j = int(np.argmax(S <= total))
    if j == 0:
        mu = bp[0]
    else:
        mu = bp[j - 1] + (S[j - 1] - total) / free[j - 1]
    out = np.clip(x - mu, lo, hi)
    if out.sum() > total:
        out = np.clip(x - np.nextafter(mu, np.inf), lo, hi)
    return out


def project_simplex_columns(rho) -> np.ndarray:
    """Project every column onto the probability simplex (sort-based)."""
    rho = np.asarray(rho, dtype=float)
    K = rho.shape[0]
    u = -np.sort(-rho, axis=0)
    css = np.cumsum(u, axis=0) - 1.0
    ind = np.arange(1, K + 1)[:, None]
    cond = u - css / ind > 0
    r = K - 1 - np.argmax(cond[::-1], axis=0)
    tau = css[r, np.arange(rho.shape[1])] / (r + 1)
    return np.maximum(rho - tau[None, :], 0.0)


def _cone_rho(A, c, cap):
    # rho-part of projecting (A, c) onto {0 <= p <= cap * rho}, A >= 0; the
    # three pieces 0, (A cap + c)/(cap^2 + 1) and c meet continuously and the
    # active one is always the largest
    return np.maximum(np.maximum(c, (A * cap + c) / (cap * cap + 1.0)), 0.0)


def _columns_shift(A, b, cap):
    """Per-column shift ``nu`` with ``sum_k rho_k(b_k - nu) = 1``.

    ``rho_k`` is piecewise linear in ``nu`` with two breakpoints per row, so
    the root is found exactly by bracketing between sorted breakpoints.
    """
    K = A.shape[0]
    bp = np.concatenate([b + A * cap, b - A / cap], axis=0).T  # (N, 2K)
    bp.sort(axis=1)
    S = _cone_rho(A.T[:, None, :], b.T[:, None, :] - bp[:, :, None], cap).sum(axis=2)
    j = np.argmax(S <= 1.0, axis=1)
    jm = np.maximum(j - 1, 0)
    n = np.arange(bp.shape[0])
    x0, x1, s0, s1 = bp[n, jm], bp[n, j], S[n, jm], S[n, j]
    span = np.where(s0 > s1, s0 - s1, 1.0)
    inner = x0 + (s0 - 1.0) * (x1 - x0) / span
    # left of every breakpoint all rows are on the unit-slope piece
    return np.where(j == 0, (b.sum(axis=0) - 1.0) / K, inner)


def _project_coupled_fixed(a, b, cap, mu):
    A = np.maximum(a - mu, 0.0)
    nu = _columns_shift(A, b, cap)
    r = np.minimum(_cone_rho(A, b - nu[None, :], cap), 1.0)  # clip interpolation roundoff
    p = np.minimum(A, cap * r)
    return p, r


def project_coupled(p, rho, cap: float, total: float, iters: int = 200, mu_hint: float | None = None, return_mu: bool = False):
    """Project ``(p, rho)`` onto the relaxed allocation set.

    The set is ``{0 <= p <= cap * rho, sum(p) <= total, columns of rho on the
    probability simplex}``. Columns decouple once the multiplier ``mu`` of
    the total-power constraint is fixed. The power sum is continuous,
    piecewise linear and non-increasing in ``mu``, so the root is found by
    an Illinois (modified regula falsi) iteration, started from a narrow
    bracket around ``mu_hint`` when one is given.
    """
    a = np.asarray(p, dtype=float)
    b = np.asarray(rho, dtype=float)
    if total < 0:
        raise InfeasibleRegion("negative power budget")
    P, R = _project_coupled_fixed(a, b, cap, 0.0)
    if P.sum() <= total:
        return (P, R, 0.0) if return_mu else (P, R)
    hi = float(max(np.max(a), 0.0))

    def excess(mu):
        P, R = _project_coupled_fixed(a, b, cap, mu)
        return P.sum() - total, P, R

    lo, f_lo = 0.0, P.sum() - total
    best = None
    if mu_hint is not None and 0.0 < mu_hint < hi:
        for cand in (mu_hint * (1 - 1e-3), mu_hint * (1 + 1e-3)):
            f, Pc, Rc = excess(cand)
            if f > 0:
                lo, f_lo = cand, f
            else:
                hi, best = cand, (f, Pc, Rc, cand)
                break
    if best is None:
        f, Pc, Rc = excess(hi)
        if f >= 0.0:
            return (Pc, Rc, hi) if return_mu else (Pc, Rc)
        best = (f, Pc, Rc, hi)
    f_hi = best[0]
    side = 0
    xtol = 1e-15 * max(hi, 1e-300)
    for _ in range(iters):
        if hi - lo <= xtol:
            break
        mu = (lo * f_hi - hi * f_lo) / (f_hi - f_lo)
        if not lo < mu < hi:
            mu = 0.5 * (lo + hi)
        f, Pc, Rc = excess(mu)
        if f > 0:
            lo, f_lo = mu, f
            if side == 1:
                f_hi *= 0.5
            side = 1
        else:
            hi, f_hi = mu, f
            best = (f, Pc, Rc, mu)
            if side == -1:
                f_lo *= 0.5
            side = -1
            if f >= -1e-15 * max(total, 1e-300):
                break
    _, P, R, mu = best
    if P.sum() > total:
        P = P * (total / P.sum())
    return (P, R, mu) if return_mu else (P, R)


@dataclass
class FeasibleRegion:
    """Relaxed allocation region over a stacked ``(p_hat, rho_hat)`` vector.

    ``p_hat`` (first ``K*N`` entries) lies in ``[0, p_max]`` with
    ``sum <= p_total``; ``rho_hat`` (last ``K*N`` entries) has columns on the
    probability simplex. With ``coupled=True`` the link
    ``p_hat <= p_max * rho_hat`` is imposed as well and the projection is
    done jointly. ``mask`` pins entries of both blocks to zero.
    """

    K: int
    N: int
    p_max: float
    p_total: float
    coupled: bool = True
    mask: np.ndarray | None = None
    _mu: float | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.p_max < 0 or self.p_total < 0:
            raise InfeasibleRegion("power bounds must be non-negative")
        if self.mask is not None and not np.all(np.asarray(self.mask).any(axis=0)):
            raise InfeasibleRegion("every carrier needs at least one admissible VUE")

    def split(self, x):
        x = np.asarray(x, dtype=float)
        n = self.K * self.N
        return x[:n].reshape(self.K, self.N), x[n:].reshape(self.K, self.N)

    @staticmethod
    def join(p, rho):
        return np.concatenate([np.ravel(p), np.ravel(rho)])

    @property
    def fixed_assignment(self) -> bool:
        """True when the mask leaves one admissible VUE per carrier."""
        return self.mask is not None and bool(np.all(np.asarray(self.mask).sum(axis=0) == 1))

    def project(self, x) -> np.ndarray:
        p, rho = self.split(x)
        if self.fixed_assignment:
            # rho is pinned to the mask; only the power block moves
            m = np.asarray(self.mask, dtype=bool)
            out = np.zeros_like(p)
            out[m] = project_box_sum(p[m], 0.0, self.p_max, self.p_total)
            return self.join(out, m.astype(float))
        if self.mask is not None:
            big = -1e3 * (1.0 + np.abs(rho).max() + np.abs(p).max() / max(self.p_max, 1e-300))
            rho = np.where(self.mask, rho, big)
            p = np.where(self.mask, p, -np.abs(p) - 1.0)
        if self.coupled:
            # consecutive projections in a solve have nearby multipliers
            p, rho, mu = project_coupled(p, rho, self.p_max, self.p_total, mu_hint=self._mu, return_mu=True)
            if mu > 0:
                self._mu = mu
        else:
            p = project_box_sum(p, 0.0, self.p_max, self.p_total)
            rho = project_simplex_columns(rho)
        if self.mask is not None:
            p = np.where(self.mask, p, 0.0)
            rho = np.where(self.mask, rho, 0.0)
        return self.join(p, rho)

    def residual(self, x) -> float:
        """Largest constraint violation of ``x``."""
        p, rho = self.split(x)
        r = [
            max(0.0, -p.min()),
            max(0.0, (p - self.p_max).max()),
            max(0.0, p.sum() - self.p_total),
            max(0.0, -rho.min()),
            float(np.abs(rho.sum(axis=0) - 1.0).max()),
        ]
        if self.coupled:
            r.append(max(0.0, (p - self.p_max * rho).max()))
        if self.mask is not None:
            r.append(float(np.abs(np.where(self.mask, 0.0, p)).max()))
            r.append(float(np.abs(np.where(self.mask, 0.0, rho)).max()))
        return float(max(r))

    def feasible_point(self) -> np.ndarray:
        """Uniform ``rho`` with equal, budget-scaled power."""
        m = np.ones((self.K, self.N)) if self.mask is None else np.asarray(self.mask, dtype=float)
        rho = m / m.sum(axis=0, keepdims=True)
        p = rho * self.p_max if self.coupled else np.full((self.K, self.N), self.p_max) * m
        if p.sum() > self.p_total:
            p *= self.p_total / p.sum()
        return self.join(p, rho)


@dataclass
class PGAConfig:
    max_iter: int = 2000
    tol: float = 1e-6
    shrink: float = 0.5
    slope: float = 1e-4
    step_min: float = 1e-6
    step_max: float = 1e3
    step0: float = 1.0


@dataclass
class SolveReport:
    iterations: int = 0
    objective: float = np.nan
    grad_map_norm: float = np.nan
    residual: float = np.nan
    steps: list = field(default_factory=list)
    trace: list = field(default_factory=list)
    stalled: bool = False
    converged: bool = False


def pga_maximize(
    objective: Callable,
    gradient: Callable,
    project: Callable,
    x0,
    cfg: PGAConfig | None = None,
    residual: Callable | None = None,
):
    """Projected gradient ascent with Barzilai-Borwein steps and Armijo backtracking.

    Parameters
    ----------
    objective, gradient : callable
        ``f(x)`` and ``grad f(x)`` of a function to maximize.
    project : callable or FeasibleRegion
        Euclidean projection onto the feasible set.
    x0 : array_like
        Feasible starting point.

    Returns
    -------
    x : ndarray
    report : SolveReport
        The objective trace is non-decreasing by construction.
    """
    cfg = cfg or PGAConfig()
    if isinstance(project, FeasibleRegion):
        residual = residual or project.residual
        project = project.project
    x = np.asarray(x0, dtype=float).copy()
    f = float(objective(x))
    g = np.asarray(gradient(x), dtype=float)
    rep = SolveReport(objective=f, trace=[f])
    step = cfg.step0
    for it in range(1, cfg.max_iter + 1):
        t = step
        accepted = False
        while t >= 1e-20:
            xn = project(x + t * g)
            fn = float(objective(xn))
            if fn >= f + cfg.slope * float(g @ (xn - x)):
                accepted = True
                break
            t *= cfg.shrink
        if not accepted:
            rep.stalled = True
            break
        gn = np.asarray(gradient(xn), dtype=float)
        s, y = xn - x, gn - g
        sy = float(s @ y)
        # ascent on a concave function: s.y <= 0
        if sy < 0:
            step = float(np.clip(-(s @ s) / sy, cfg.step_min, cfg.step_max))
        else:
            # no curvature information: grow the last accepted step
            step = float(min(2.0 * t, cfg.step_max))
        rep.steps.append(t)
        # t * ||G_t(x)|| grows and ||G_t(x)|| shrinks with t, so this bounds
        # the unit-step gradient mapping at x without an extra projection
        rep.grad_map_norm = float(np.linalg.norm(s)) / min(t, 1.0)
        stop = rep.grad_map_norm < cfg.tol * (1.0 + abs(f))
        x, f, g = xn, fn, gn
        rep.trace.append(f)
        rep.iterations = it
        if stop:
            rep.converged = True
            break
    rep.objective = f
    if residual is not None:
        rep.residual = float(residual(x))
    return x, rep


def brute_force_alloc(scen, theta, F, levels: int = 8, limit: float = 1e7):
    """Exhaustive search over exclusive assignments and grid powers.

    Every carrier goes to exactly one VUE at one of ``levels`` powers
    ``linspace(0, P_max, levels)``. Returns the feasible maximizer of the
    total throughput (``None`` if nothing is feasible) and its value; ties
    keep the first candidate in enumeration order.
    """
    from .ofdm import Allocation, channel_eigs, ici_kernel

    K, N = scen.K, scen.N
    if float(K) ** N * float(levels) ** N > limit:
        raise TooLarge(f"{K}^{N} x {levels}^{N} combinations exceed {limit:g}")
    q = channel_eigs(theta, F, scen)
    grid = np.linspace(0.0, scen.P_max, levels)
    P = np.array(list(itertools.product(grid, repeat=N)))  # (L, N)
    ok_power = P.sum(axis=1) <= scen.P_tot * (1 + 1e-12)
    W = ici_kernel(N)
    cols = np.arange(N)
    best_val, best = -np.inf, None
    for assign in itertools.product(range(K), repeat=N):
        a = np.array(assign)
        qa = q[a, cols]  # (N, N_r)
        w = scen.velocities[a] ** 2 * P
        den = scen.doppler_coef * (w @ W) + scen.noise
        C = scen.delta_f * np.log2(1.0 + P[:, :, None] * qa[None] / den[:, :, None]).sum(axis=2)
        per = np.stack([C[:, a == k].sum(axis=1) for k in range(K)], axis=1)
        ok = ok_power & np.all(per >= scen.C_min, axis=1)
        if not np.any(ok):
            continue
        tot = np.where(ok, per.sum(axis=1), -np.inf)
        i = int(np.argmax(tot))
        if tot[i] > best_val:
            best_val = float(tot[i])
            rho = np.zeros((K, N))
            rho[a, cols] = 1.0
            best = Allocation(rho, rho * P[i][None, :])
    return best, best_val
