"""Broadband multi-VUE OFDM model with Doppler-induced inter-carrier interference.

Every VUE carries its own RIS whose group phases are shared by all
sub-carriers; every sub-carrier has its own active beamformer with unit
Frobenius norm, the carrier power being carried by ``p[k, n]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .channel import SPEED_OF_LIGHT, LinkGeometry, dbm_to_watt, path_loss_linear
from .estimation import build_grouping
from .exceptions import InfeasibleAllocation
from .numerics import as_generator, sample_cscg

LN2 = np.log(2.0)

__all__ = [
    "BroadbandScenario",
    "Allocation",
    "RISProfiles",
    "make_scenario",
    "ici_kernel",
    "ici_vector",
    "ici",
    "effective_channels",
    "channel_eigs",
    "isotropic_beams",
    "rate_bb",
    "rate_matrix",
    "total_throughput",
    "check_feasible",
]


@dataclass(frozen=True)
class BroadbandScenario:
    """Static description of a multi-VUE OFDM snapshot.

    ``slices`` has shape ``(K, N, I, N_r, N_t)``: the group-aggregated
    cascaded channel of VUE ``k`` on carrier ``n`` split per RIS group.
    ``ici_gain`` scales the Doppler leakage term; 1 reproduces the bare
    transmit-power expression.
    """

    slices: np.ndarray
    delta_f: float
    f_c: float
    velocities: np.ndarray
    P_max: float
    P_tot: float
    C_min: float
    N0: float
    distances: np.ndarray | None = None
    group_sizes: np.ndarray | None = None
    ici_gain: float = 1.0

    @property
    def K(self) -> int:
        return self.slices.shape[0]

    @property
    def N(self) -> int:
        return self.slices.shape[1]

    @property
    def I(self) -> int:
        return self.slices.shape[2]

    @property
    def N_r(self) -> int:
        return self.slices.shape[3]

    @property
    def N_t(self) -> int:
        return self.slices.shape[4]

    @property
    def bandwidth(self) -> float:
        return self.N * self.delta_f

    @property
    def noise(self) -> float:
        """Per-carrier noise power ``N0 * delta_f``."""
        return self.N0 * self.delta_f

    @property
    def doppler_coef(self) -> float:
        """``g_ici / 2 * (f_c / (delta_f c))^2``."""
        return 0.5 * self.ici_gain * (self.f_c / (self.delta_f * SPEED_OF_LIGHT)) ** 2


@dataclass(frozen=True)
class Allocation:
    rho: np.ndarray
    p: np.ndarray

    @property
    def carriers(self):
        """Carrier index set of every VUE."""
        return [np.flatnonzero(r > 0.5) for r in self.rho]


@dataclass(frozen=True)
class RISProfiles:
    """Group phases per VUE, shape ``(K, I)``, common to all carriers."""

    theta: np.ndarray

    def __post_init__(self):
        if not np.allclose(np.abs(self.theta), 1.0, atol=1e-9):
            raise ValueError("RIS phases must be unit modulus")


def make_scenario(
    K: int = 3,
    N: int = 32,
    N_t: int = 4,
    N_r: int = 4,
    M: int = 16,
    I: int | None = None,
    bandwidth: float = 1e7,
    f_c: float = 3.5e9,
    distances=(800.0, 1000.0, 1500.0),
    velocities=None,
    P_max: float = 0.1,
    P_tot: float = 1.0,
    C_min: float = 3e7,
    N0_dBm: float = -174.0,
    K_dB: float = 5.0,
    geometry: LinkGeometry | None = None,
    ici_gain: float | None = None,
    rng=None,
) -> BroadbandScenario:
    """Draw independent per-carrier Rician channels for ``K`` VUEs.

    VUE ``k`` sits ``distances[k]`` metres from the BS. Carriers share the
    large-scale parameters and draw their small-scale fading
    independently. ``ici_gain`` defaults to the mean non-coherent RIS path
    gain ``M * P_L(BR) * P_L(RV)`` so that leakage is expressed at the
    receiver on the same scale as the useful signal.
    """
    gen = as_generator(rng)
    geo = geometry or LinkGeometry()
    I = M if I is None else I
    d = np.resize(np.asarray(distances, dtype=float), K)
    v = np.full(K, 27.78) if velocities is None else np.resize(np.asarray(velocities, dtype=float), K)
    grouping = build_grouping(M, I)
    mem = grouping.membership()
    Kr = 10 ** (K_dB / 10)
    pl_rv = path_loss_linear(geo.d_RV, geo, "RV")
    slices = np.empty((K, N, I, N_r, N_t), dtype=complex)
    pl_br = np.empty(K)
    for k in range(K):
        pl_br[k] = path_loss_linear(d[k], geo, "BR")
        H = sample_cscg(pl_br[k] * Kr / (1 + Kr), (N, M, N_t), gen) + sample_cscg(pl_br[k] / (1 + Kr), (N, M, N_t), gen)
        G = sample_cscg(pl_rv, (N, N_r, M), gen)
        slices[k] = np.einsum("nrm,im,nmt->nirt", G, mem, H)
    if ici_gain is None:
        ici_gain = float(M * pl_rv * pl_br.mean())
    return BroadbandScenario(
        slices=slices,
        delta_f=bandwidth / N,
        f_c=f_c,
        velocities=v,
        P_max=P_max,
        P_tot=P_tot,
        C_min=C_min,
        N0=float(dbm_to_watt(N0_dBm)),
        distances=d,
        group_sizes=grouping.sizes(),
        ici_gain=ici_gain,
    )


def ici_kernel(N: int) -> np.ndarray:
    """``W[l, n] = 1 / (l - n)^2`` off the diagonal, 0 on it (read-only, cached)."""
    return _ici_kernel(int(N))


@lru_cache(maxsize=16)
def _ici_kernel(N: int) -> np.ndarray:
    idx = np.arange(N)
    diff = (idx[:, None] - idx[None, :]).astype(float)
    W = np.zeros((N, N))
    off = diff != 0
    W[off] = 1.0 / diff[off] ** 2
    W.flags.writeable = False
    return W


def ici_vector(power, scen: BroadbandScenario) -> np.ndarray:
    """ICI on every carrier for the effective powers ``rho * p`` (``K x N``).

    The leakage does not depend on the receiving VUE, so one length-``N``
    vector serves all ``k``.
    """
    w = (scen.velocities[:, None] ** 2 * np.asarray(power)).sum(axis=0)
    return scen.doppler_coef * (w @ ici_kernel(scen.N))


def ici(k: int, n: int, alloc: Allocation, scen: BroadbandScenario) -> float:
    """ICI power seen by VUE ``k`` on carrier ``n``."""
    return float(ici_vector(alloc.rho * alloc.p, scen)[n])


def isotropic_beams(scen: BroadbandScenario) -> np.ndarray:
    """``F[n] = I / sqrt(N_t)`` on every carrier."""
    eye = np.eye(scen.N_t, dtype=complex) / np.sqrt(scen.N_t)
    return np.broadcast_to(eye, (scen.N, scen.N_t, scen.N_t)).copy()


def effective_channels(theta, F, scen: BroadbandScenario) -> np.ndarray:
    """``H[k, n] = (sum_i theta[k, i] S[k, n, i]) F[n]``, shape ``(K, N, N_r, N_t)``."""
    theta = np.asarray(theta.theta if isinstance(theta, RISProfiles) else theta)
    Hs = np.einsum("ki,knirt->knrt", theta, scen.slices)
    return Hs @ np.asarray(F)[None]


def channel_eigs(theta, F, scen: BroadbandScenario) -> np.ndarray:
    """Eigenvalues of ``H H^H`` per ``(k, n)``, shape ``(K, N, N_r)``."""
    Hm = effective_channels(theta, F, scen)
    Q = Hm @ Hm.conj().swapaxes(-1, -2)
    return np.clip(np.linalg.eigvalsh(Q), 0.0, None)


def rate_matrix(alloc: Allocation, theta, F, scen: BroadbandScenario, eigs=None) -> np.ndarray:
    """``C[k, n]`` in bits/s for every VUE and carrier."""
    q = channel_eigs(theta, F, scen) if eigs is None else eigs
    eff = alloc.rho * alloc.p
    den = ici_vector(eff, scen) + scen.noise
    snr = eff[:, :, None] * q / den[None, :, None]
    return scen.delta_f * np.log2(1.0 + snr).sum(axis=-1)


def rate_bb(k: int, n: int, alloc: Allocation, theta_k, F_n, scen: BroadbandScenario) -> float:
    """Rate of VUE ``k`` on carrier ``n``:
    ``delta_f log2 det(I + rho p H H^H / (ICI + N0 delta_f))``.
    """
    Hm = np.tensordot(np.asarray(theta_k), scen.slices[k, n], axes=1) @ np.asarray(F_n)
    den = ici_vector(alloc.rho * alloc.p, scen)[n] + scen.noise
    X = np.eye(scen.N_r) + alloc.rho[k, n] * alloc.p[k, n] * (Hm @ Hm.conj().T) / den
    _, ld = np.linalg.slogdet(X)
    return float(scen.delta_f * ld / LN2)


def total_throughput(alloc: Allocation, theta, F, scen: BroadbandScenario, check: bool = True):
    """Sum rate over VUEs and carriers plus per-VUE subtotals (bits/s).

    With ``check=True`` the structural constraints (power box, total power,
    binary and exclusive assignment) are verified first.
    """
    if check:
        bad = check_feasible(alloc, scen, None)
        if bad:
            raise InfeasibleAllocation(bad)
    C = rate_matrix(alloc, theta, F, scen)
    per = C.sum(axis=1)
    return float(per.sum()), per


def check_feasible(alloc: Allocation, scen: BroadbandScenario, throughputs=None, tol: float = 1e-9) -> list:
    """List the violated P1 constraints (empty when feasible).

    ``throughputs`` (per-VUE bits/s) enables the QoS check.
    """
    out = []
    rho, p = np.asarray(alloc.rho), np.asarray(alloc.p)
    if np.any(p < -tol) or np.any(p > scen.P_max * (1 + tol)):
        out.append("box: 0 <= p <= P_max violated")
    if np.sum(rho * p) > scen.P_tot * (1 + tol):
        out.append("total power: sum p > P_tot")
    if not np.all((np.abs(rho) < tol) | (np.abs(rho - 1) < tol)):
        out.append("binary: rho not in {0, 1}")
    if not np.allclose(rho.sum(axis=0), 1.0, atol=tol):
        out.append("assignment: each carrier must serve exactly one VUE")
    if throughputs is not None:
        short = np.flatnonzero(np.asarray(throughputs) < scen.C_min * (1 - tol))
        for k in short:
            out.append(f"QoS: VUE {k} below C_min")
    return out
