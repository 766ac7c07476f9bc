"""Narrowband single-VUE hybrid beamforming.

The group-aggregated cascaded channel (one ``N_t N_r`` row per RIS group)
is reshaped into ``N_r x N_t`` slices ``S_i``; with active beamformer ``F``
and group phases ``theta`` the end-to-end MIMO channel is
``sum_i theta_i S_i F`` and the rate is ``log2 det(I + H H^H / sigma^2)``.
``F`` is water-filled over the right singular vectors of
``sum_i theta_i S_i``; the phases are updated one group at a time.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import LengthMismatch, RankTooHigh, ZeroChannel
from .numerics import as_generator, logdet_hpd, svd, unvec, water_fill

LN2 = np.log(2.0)

__all__ = [
    "EquivalentChannel",
    "PhaseVector",
    "NBSolution",
    "channel_slices",
    "equivalent_channel",
    "effective_mimo",
    "receive_chain",
    "rate_nb",
    "rate_with_beams",
    "opt_active_waterfill",
    "phase_subproblem_matrices",
    "opt_theta_closed",
    "phase_derivative",
    "opt_theta_gradient",
    "opt_theta_exhaustive",
    "alternating_optimize",
    "achievable_rate",
    "quantize_phases",
]


@dataclass(frozen=True)
class EquivalentChannel:
    """Per-group ``N_r x N_t`` slices with the active beamformer applied."""

    slices: np.ndarray
    F_used: np.ndarray | None = None
    source: str = "perfect"

    @property
    def I(self) -> int:
        return self.slices.shape[0]


@dataclass(frozen=True)
class PhaseVector:
    theta: np.ndarray
    bits: int = 0

    def __post_init__(self):
        if not np.allclose(np.abs(self.theta), 1.0, atol=1e-12):
            raise ValueError("group phases must be unit modulus")
        if self.bits:
            step = 2 * np.pi / 2 ** self.bits
            k = np.angle(self.theta) / step
            if not np.allclose(k, np.round(k), atol=1e-9):
                raise ValueError(f"phases are not on the {self.bits}-bit grid")


@dataclass
class NBSolution:
    F: np.ndarray
    theta: np.ndarray
    trace: list = field(default_factory=list)  # (outer, inner, rate)
    n_outer: int = 0
    n_inner: int = 0

    @property
    def rate(self) -> float:
        return self.trace[-1][2]

    @property
    def rates(self) -> np.ndarray:
        return np.array([r for _, _, r in self.trace])


def channel_slices(H_agg, N_r: int, N_t: int) -> np.ndarray:
    """Reshape each ``N_t N_r`` row into an ``N_r x N_t`` matrix."""
    H_agg = np.atleast_2d(np.asarray(H_agg))
    return np.stack([unvec(row, N_r, N_t) for row in H_agg])


def equivalent_channel(H_agg, N_r: int, N_t: int, F=None, source: str = "perfect") -> EquivalentChannel:
    """Slices of ``H_agg (F ⊗ I_{N_r})``, i.e. ``unvec(row_i) @ F``."""
    S = channel_slices(H_agg, N_r, N_t)
    if F is not None:
        S = S @ F
    return EquivalentChannel(S, None if F is None else np.asarray(F), source)


def _slices(ec):
    return ec.slices if isinstance(ec, EquivalentChannel) else np.asarray(ec)


def effective_mimo(theta, ec) -> np.ndarray:
    """``sum_i theta_i S_i``."""
    S = _slices(ec)
    theta = np.asarray(theta)
    if theta.shape != (S.shape[0],):
        raise LengthMismatch(f"{theta.size} phases for {S.shape[0]} groups")
    return np.tensordot(theta, S, axes=1)


def receive_chain(theta, H_agg, F, x) -> np.ndarray:
    """Noiseless ``theta H_agg (F x ⊗ I_{N_r})`` as a length-``N_r`` vector."""
    H_agg = np.atleast_2d(np.asarray(H_agg))
    N_t = np.asarray(F).shape[0]
    N_r = H_agg.shape[1] // N_t
    Fx = (np.asarray(F) @ np.asarray(x)).reshape(-1, 1)
    return (np.asarray(theta)[None, :] @ H_agg @ np.kron(Fx, np.eye(N_r))).ravel()


def _logdet2(Hm, noise):
    N_r = Hm.shape[-2]
    return logdet_hpd(np.eye(N_r) + Hm @ Hm.conj().swapaxes(-1, -2) / noise) / LN2


def rate_nb(theta, ec, noise: float) -> float:
    """``log2 det(I + H H^H / noise)`` with ``H = effective_mimo(theta, ec)``."""
    if noise <= 0:
        raise ValueError("noise power must be positive")
    return float(_logdet2(effective_mimo(theta, ec), noise))


def rate_with_beams(theta, F, H_agg, N_r: int, noise: float) -> float:
    """Rate of phases ``theta`` and beamformer ``F`` on channel ``H_agg``."""
    F = np.asarray(F)
    return rate_nb(theta, channel_slices(H_agg, N_r, F.shape[0]) @ F, noise)


def opt_active_waterfill(H_eff, noise: float, P_t: float) -> np.ndarray:
    """Eigen-beamformer ``V diag(p)^{1/2}`` with water-filled powers.

    Returns an ``N_t x N_t`` matrix; columns beyond the channel rank are
    zero.
    """
    H_eff = np.asarray(H_eff)
    if not np.any(H_eff):
        raise ZeroChannel("effective channel is identically zero")
    N_t = H_eff.shape[1]
    _, s, V = svd(H_eff)
    p = water_fill(s ** 2, noise, P_t)
    F = np.zeros((N_t, N_t), dtype=complex)
    F[:, : len(p)] = V * np.sqrt(p)[None, :]
    return F


def phase_subproblem_matrices(i: int, theta, ec, noise: float):
    """``(A_i, B_i)`` such that the rate equals ``log2 det(A + t B + t* B^H)``.

    ``A_i = I + (S_i S_i^H + S_-i S_-i^H) / noise`` and
    ``B_i = S_i S_-i^H / noise`` where ``S_-i = sum_{n != i} theta_n S_n``.
    """
    S = _slices(ec)
    theta = np.asarray(theta, dtype=complex)
    Si = S[i]
    w = theta.copy()
    w[i] = 0.0
    Sm = np.tensordot(w, S, axes=1)
    N_r = S.shape[1]
    A = np.eye(N_r) + (Si @ Si.conj().T + Sm @ Sm.conj().T) / noise
    B = Si @ Sm.conj().T / noise
    return A, B


def _sub_rate(A, B, t):
    t = np.asarray(t)
    X = A + t[..., None, None] * B + np.conj(t)[..., None, None] * B.conj().T
    sign, ld = np.linalg.slogdet(X)
    return ld / LN2


def opt_theta_closed(A, B, rank_tol: float = 1e-8) -> complex:
    """Closed-form optimum for a rank-one ``A^{-1} B``.

    ``theta = exp(-j arg(lambda))`` with ``lambda`` the only non-zero
    eigenvalue (equal to the trace when the rank is one), or ``1`` when the
    trace vanishes.
    """
    Mx = np.linalg.solve(A, B)
    s = np.linalg.svd(Mx, compute_uv=False)
    if s.size > 1 and s[1] > rank_tol * max(s[0], 1e-300):
        raise RankTooHigh(f"A^-1 B has numerical rank > 1 (s2/s1={s[1] / s[0]:.2e})")
    lam = np.trace(Mx)
    if abs(lam) <= 1e-12:
        return 1.0 + 0j
    return complex(np.exp(-1j * np.angle(lam)))


def phase_derivative(A, B, theta_i) -> float:
    """``dR/dphi = (j/ln2) tr(X^{-1}(t B - t* B^H))`` with ``X = A + tB + t*B^H``."""
    t = complex(theta_i)
    X = A + t * B + np.conj(t) * B.conj().T
    D = t * B - np.conj(t) * B.conj().T
    return float(np.real(1j * np.trace(np.linalg.solve(X, D)) / LN2))


def opt_theta_gradient(
    i: int,
    theta,
    ec,
    noise: float,
    beta: float = 0.1,
    max_iter: int = 500,
    tol: float = 1e-6,
    grow: float = 1.5,
) -> complex:
    """Gradient ascent on the phase of group ``i``.

    Steps that lower the rate are retried with half the step; accepted
    steps enlarge it by ``grow``. Returns the best unit-modulus iterate.
    """
    A, B = phase_subproblem_matrices(i, theta, ec, noise)
    if not np.any(B):
        return complex(np.asarray(theta)[i])
    phi = float(np.angle(np.asarray(theta)[i]))
    r = _sub_rate(A, B, np.exp(1j * phi))
    step = beta
    for _ in range(max_iter):
        d = phase_derivative(A, B, np.exp(1j * phi))
        if abs(d) < tol:
            break
        while step > 1e-12:
            cand = phi + step * d
            rc = _sub_rate(A, B, np.exp(1j * cand))
            if rc >= r:
                phi, r = cand, rc
                step = min(step * grow, 1e3)
                break
            step *= 0.5
        else:
            break
    return complex(np.exp(1j * phi))


def opt_theta_exhaustive(i: int, theta, ec, noise: float, bits: int = 8) -> complex:
    """Best of the ``2**bits`` uniformly spaced phases for group ``i``."""
    if bits < 1:
        raise ValueError("need at least one bit")
    A, B = phase_subproblem_matrices(i, theta, ec, noise)
    grid = np.exp(2j * np.pi * np.arange(2 ** bits) / 2 ** bits)
    r = _sub_rate(A, B, grid)
    return complex(grid[int(np.argmax(r))])


def quantize_phases(theta, bits: int) -> np.ndarray:
    step = 2 * np.pi / 2 ** bits
    return np.exp(1j * np.round(np.angle(theta) / step) * step)


_PASSIVE = ("auto", "closed", "gradient", "exhaustive")


def _check_passive(passive, group_sizes, N_r):
    if passive not in _PASSIVE:
        raise ValueError(f"passive must be one of {_PASSIVE}")
    if passive == "closed" and N_r > 2 and group_sizes is not None and np.any(np.asarray(group_sizes) > 1):
        # Lemma-style restriction: no radical-form optimum for grouped phases when N_r > 2
        raise ValueError("closed-form phase updates are only valid for single-element groups when N_r > 2")


def alternating_optimize(
    H_agg,
    N_r: int,
    N_t: int,
    noise: float,
    P_t: float,
    group_sizes=None,
    init: str = "random",
    H_agg_los=None,
    passive: str = "auto",
    bits: int = 8,
    max_outer: int = 20,
    tol: float = 1e-5,
    rng=None,
    theta0=None,
    gradient_kw: dict | None = None,
) -> NBSolution:
    """Alternate water-filled ``F`` and per-group phase updates.

    Parameters
    ----------
    H_agg : ndarray, shape (I, N_t * N_r)
        Aggregated cascaded channel driving the optimization (perfect or
        estimated).
    group_sizes : array_like, optional
        Elements per group; groups of size one may use the closed-form
        update.
    init : {"random", "los"}
        ``"los"`` first optimizes on ``H_agg_los`` (large-timescale
        estimate) and starts from the resulting phases.
    passive : {"auto", "closed", "gradient", "exhaustive"}
        ``"auto"`` uses the closed form where it is valid, otherwise
        exhaustive search over ``bits`` when ``I <= 64`` and gradient ascent
        above that.

    Returns
    -------
    NBSolution
        ``trace`` holds one ``(outer, inner, rate)`` record per accepted
        update, starting with the water-filled initial point.
    """
    H_agg = np.atleast_2d(np.asarray(H_agg))
    I = H_agg.shape[0]
    _check_passive(passive, group_sizes, N_r)
    gen = as_generator(rng)
    R = channel_slices(H_agg, N_r, N_t)
    gkw = dict(gradient_kw or {})

    if theta0 is not None:
        theta = np.asarray(theta0, dtype=complex).copy()
    else:
        theta = np.exp(2j * np.pi * gen.uniform(size=I))
    if init == "los":
        if H_agg_los is None:
            raise ValueError("init='los' needs the large-timescale estimate")
        pre = alternating_optimize(
            H_agg_los, N_r, N_t, noise, P_t, group_sizes, "random", None,
            passive, bits, max_outer, tol, theta0=theta, gradient_kw=gradient_kw,
        )
        theta = pre.theta.copy()
    elif init != "random":
        raise ValueError(f"unknown init {init!r}")

    sizes = np.ones(I, dtype=int) if group_sizes is None else np.asarray(group_sizes)

    def rate_of(th, F):
        return rate_nb(th, R @ F, noise)

    F = opt_active_waterfill(effective_mimo(theta, R), noise, P_t)
    rate = rate_of(theta, F)
    sol = NBSolution(F, theta, [(0, 0, rate)])
    inner = 0
    for outer in range(1, max_outer + 1):
        start = rate
        if outer > 1:
            F_new = opt_active_waterfill(effective_mimo(theta, R), noise, P_t)
            r_new = rate_of(theta, F_new)
            if r_new >= rate:
                F, rate = F_new, r_new
        ec = EquivalentChannel(R @ F)
        for i in range(I):
            t_new = _update_phase(i, theta, ec, noise, passive, sizes[i], bits, I, gkw)
            cand = theta.copy()
            cand[i] = t_new
            r_new = rate_nb(cand, ec, noise)
            inner += 1
            if r_new >= rate:
                theta, rate = cand, r_new
            sol.trace.append((outer, inner, rate))
        sol.n_outer = outer
        if rate - start <= tol * max(abs(start), 1e-300):
            break
    sol.F, sol.theta, sol.n_inner = F, theta, inner
    return sol


def _update_phase(i, theta, ec, noise, passive, size, bits, I, gkw):
    if passive in ("auto", "closed") and size == 1:
        A, B = phase_subproblem_matrices(i, theta, ec, noise)
        try:
            return opt_theta_closed(A, B)
        except RankTooHigh:
            if passive == "closed":
                raise
    if passive == "gradient" or (passive == "auto" and I > 64):
        return opt_theta_gradient(i, theta, ec, noise, **gkw)
    if passive == "closed":
        return opt_theta_gradient(i, theta, ec, noise, **gkw)
    return opt_theta_exhaustive(i, theta, ec, noise, bits)


def achievable_rate(R: float, T_e: float, T_c: float) -> float:
    """Overhead-discounted rate ``max(1 - T_e / T_c, 0) * R``."""
    if T_e < 0 or T_c <= 0:
        raise ValueError("need T_e >= 0 and T_c > 0")
    return max(1.0 - T_e / T_c, 0.0) * R
