"""Two-timescale Rician channel synthesis for the BS-RIS-VUE link."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .exceptions import NonPositiveDistance, NonPositiveSpeed
from .numerics import sample_cscg

SPEED_OF_LIGHT = 3e8

__all__ = [
    "SPEED_OF_LIGHT",
    "LinkGeometry",
    "ChannelSet",
    "TimescaleModel",
    "path_loss_linear",
    "sample_channels",
    "refresh_nlos",
    "coherence_from_speed",
    "noise_power",
    "db_to_linear",
    "dbm_to_watt",
]


def db_to_linear(x_db):
    return 10.0 ** (np.asarray(x_db, dtype=float) / 10.0)


def dbm_to_watt(x_dbm):
    return 10.0 ** ((np.asarray(x_dbm, dtype=float) - 30.0) / 10.0)


@dataclass(frozen=True)
class LinkGeometry:
    d_BR: float = 1500.0
    d_RV: float = 2.0
    alpha_BR: float = 2.2
    alpha_RV: float = 2.8
    P0_dB: float = -30.0

    def __post_init__(self):
        if self.d_BR <= 0 or self.d_RV <= 0:
            raise NonPositiveDistance("link distances must be positive")
        if self.alpha_BR < 0 or self.alpha_RV < 0:
            raise ValueError("path-loss exponents must be non-negative")

    @property
    def pl_BR(self) -> float:
        return path_loss_linear(self.d_BR, self, "BR")

    @property
    def pl_RV(self) -> float:
        return path_loss_linear(self.d_RV, self, "RV")


def path_loss_linear(d: float, geo: LinkGeometry, which: str = "BR") -> float:
    """Large-scale gain ``P0 * (d / 1 m) ** -alpha`` in linear scale."""
    if d <= 0:
        raise NonPositiveDistance(f"distance must be positive, got {d}")
    if which == "BR":
        alpha = geo.alpha_BR
    elif which == "RV":
        alpha = geo.alpha_RV
    else:
        raise ValueError(f"unknown link {which!r}; use 'BR' or 'RV'")
    return float(db_to_linear(geo.P0_dB)) * float(d) ** (-alpha)


@dataclass(frozen=True)
class ChannelSet:
    """One channel realization.

    ``H = H_los + H_nlos`` is the M x N_t BS-RIS channel, ``G`` the
    N_r x M RIS-VUE channel. The direct BS-VUE link is absent.
    """

    H_los: np.ndarray
    H_nlos: np.ndarray
    G: np.ndarray
    rician_K: float
    pl_BR: float
    pl_RV: float

    @property
    def H(self) -> np.ndarray:
        return self.H_los + self.H_nlos

    @property
    def dims(self):
        """``(N_t, N_r, M)``."""
        return self.H_los.shape[1], self.G.shape[0], self.H_los.shape[0]


@dataclass(frozen=True)
class TimescaleModel:
    """Coherence times of the fast (NLoS) and slow (LoS, G) components."""

    T_coh_nlos: float
    slot: float
    T: int
    los_ratio: float = 50.0

    def __post_init__(self):
        if self.T_coh_nlos <= 0 or self.slot <= 0:
            raise ValueError("coherence time and slot must be positive")
        if self.los_ratio < 1:
            raise ValueError("LoS coherence must not be shorter than NLoS coherence")

    @property
    def T_coh_los(self) -> float:
        return self.los_ratio * self.T_coh_nlos

    def check_pilot_length(self, N_t: int) -> None:
        if self.T < N_t:
            raise ValueError(f"pilot length T={self.T} must be >= N_t={N_t}")

    @classmethod
    def from_speed(cls, v, f_c, slot, T, los_ratio=50.0):
        return cls(coherence_from_speed(v, f_c), slot, T, los_ratio)


def sample_channels(N_t: int, N_r: int, M: int, geo: LinkGeometry, K_dB: float, rng) -> ChannelSet:
    """Draw ``H_LoS``, ``H_NLoS`` and ``G`` with zero-mean CSCG entries.

    Per-entry variances are ``P_L K/(1+K)`` (LoS), ``P_L/(1+K)`` (NLoS) and
    the RIS-VUE path loss for ``G``.
    """
    if min(N_t, N_r, M) < 1:
        raise ValueError("all dimensions must be >= 1")
    K = float(db_to_linear(K_dB))
    pl_br = geo.pl_BR
    pl_rv = geo.pl_RV
    if np.isinf(K):
        w_los, w_nlos = 1.0, 0.0
    else:
        w_los, w_nlos = K / (1.0 + K), 1.0 / (1.0 + K)
    H_los = sample_cscg(pl_br * w_los, (M, N_t), rng)
    H_nlos = sample_cscg(pl_br * w_nlos, (M, N_t), rng)
    G = sample_cscg(pl_rv, (N_r, M), rng)
    return ChannelSet(H_los, H_nlos, G, K, pl_br, pl_rv)


def refresh_nlos(cs: ChannelSet, rng) -> ChannelSet:
    """Redraw only the fast NLoS component; ``H_los`` and ``G`` are reused."""
    K = cs.rician_K
    w_nlos = 0.0 if np.isinf(K) else 1.0 / (1.0 + K)
    H_nlos = sample_cscg(cs.pl_BR * w_nlos, cs.H_nlos.shape, rng)
    return replace(cs, H_nlos=H_nlos)


def coherence_from_speed(v: float, f_c: float) -> float:
    """NLoS coherence time ``0.423 c / (f_c v)`` (Clarke model)."""
    if v <= 0:
        raise NonPositiveSpeed(f"speed must be positive, got {v}")
    return 0.423 * SPEED_OF_LIGHT / (f_c * v)


def noise_power(N0_dBm_per_Hz: float, bandwidth: float) -> float:
    """Thermal noise power ``N0 * B`` in watts."""
    return float(dbm_to_watt(N0_dBm_per_Hz)) * bandwidth
