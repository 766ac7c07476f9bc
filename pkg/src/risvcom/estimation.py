"""Adaptive grouped-pilot estimation of the cascaded RIS channel.

Training is organised in ``I`` blocks of ``T`` slots. In block ``i`` the RIS
elements are split into ``i`` contiguous groups that share one pilot phase;
stacking the equalized blocks gives ``Y^I = Psi^I H_agg^I + noise`` and the
aggregated channel of each group follows from one ``I x I`` solve. With
``I = M`` every group is a single element and the estimate is the ordinary
least-squares cascaded channel.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .channel import ChannelSet, coherence_from_speed, refresh_nlos
from .exceptions import (
    BadRange,
    NoFeasibleCandidate,
    RankDeficientPilot,
    SingularPsi,
    SizeMismatch,
    ZeroTruth,
)
from .numerics import as_generator, khatri_rao, sample_cscg, vec

__all__ = [
    "GroupingScheme",
    "PilotSchedule",
    "AggregatedEstimate",
    "build_grouping",
    "build_pilots",
    "cascaded_channel",
    "aggregate_rows",
    "expand_to_elements",
    "simulate_training_rx",
    "unfold",
    "unfold_and_equalize",
    "estimate_aggregated",
    "estimate_los",
    "ls_full_estimate",
    "nmse",
    "select_pilot_blocks",
]

Range = tuple  # (start, stop), 0-based half-open


@dataclass(frozen=True)
class GroupingScheme:
    """Recursive partition of ``M`` elements over ``I`` training blocks.

    ``blocks[i - 1]`` lists the ``i`` contiguous ``(start, stop)`` ranges
    used in block ``i``; ``splits[i - 2]`` is the 0-based index of the block
    ``i - 1`` group that was halved to form block ``i``.
    """

    M: int
    blocks: tuple
    splits: tuple

    @property
    def I(self) -> int:
        return len(self.blocks)

    def groups(self, i: int | None = None) -> tuple:
        """Ranges of block ``i`` (1-based; default: the last block)."""
        return self.blocks[(self.I if i is None else i) - 1]

    def sizes(self, i: int | None = None) -> np.ndarray:
        return np.array([b - a for a, b in self.groups(i)])

    def labels(self, i: int | None = None) -> np.ndarray:
        """Group index of every element under block ``i``."""
        lab = np.empty(self.M, dtype=int)
        for k, (a, b) in enumerate(self.groups(i)):
            lab[a:b] = k
        return lab

    def membership(self, i: int | None = None) -> np.ndarray:
        """``(n_groups, M)`` 0/1 matrix mapping elements to groups."""
        lab = self.labels(i)
        return (lab[None, :] == np.arange(lab.max() + 1)[:, None]).astype(float)


def build_grouping(M: int, I_max: int) -> GroupingScheme:
    """Split the largest group in half block after block.

    Ties go to the group with the lowest start index; an ``n``-element
    group becomes ``ceil(n/2)`` and ``floor(n/2)`` elements.
    """
    if not 1 <= I_max <= M:
        raise BadRange(f"need 1 <= I_max <= M, got I_max={I_max}, M={M}")
    blocks = [((0, M),)]
    splits = []
    for _ in range(1, I_max):
        prev = blocks[-1]
        sizes = [b - a for a, b in prev]
        j = int(np.argmax(sizes))  # first maximum == lowest start
        a, b = prev[j]
        mid = a + (b - a + 1) // 2
        blocks.append(prev[:j] + ((a, mid), (mid, b)) + prev[j + 1:])
        splits.append(j)
    return GroupingScheme(M, tuple(blocks), tuple(splits))


@dataclass(frozen=True)
class PilotSchedule:
    """Pilot matrix ``X`` plus the group-phase design.

    ``psi[i - 1]`` is the length-``i`` group-phase row of block ``i``;
    ``Psi`` is the stacked ``I x I`` group-phase matrix and ``Xi`` the
    ``M x I`` element-level phase matrix ``[theta_1, ..., theta_I]``.
    """

    X: np.ndarray
    psi: tuple
    Psi: np.ndarray
    Xi: np.ndarray
    grouping: GroupingScheme

    @property
    def I(self) -> int:
        return self.Psi.shape[0]

    @property
    def T(self) -> int:
        return self.X.shape[1]

    def phases(self, i: int) -> np.ndarray:
        """Element phases ``theta_i`` of block ``i`` (1-based)."""
        return self.Xi[:, i - 1]


def _dft_pilot(N_t: int, T: int, power: float) -> np.ndarray:
    n = np.arange(N_t)[:, None]
    t = np.arange(T)[None, :]
    return np.sqrt(power / N_t) * np.exp(-2j * np.pi * n * t / T)


def _quantize(phi, bits):
    if not bits:
        return phi
    step = 2 * np.pi / 2 ** bits
    return np.round(phi / step) * step


def build_pilots(
    grouping: GroupingScheme,
    T: int,
    N_t: int,
    rng=None,
    power: float = 1.0,
    design: str = "flip",
    phase_bits: int = 0,
    det_floor: float = 0.5,
    max_redraws: int = 1000,
) -> PilotSchedule:
    """Build the pilot matrix and the recursive group-phase matrix.

    ``Psi^i`` stacks ``Psi^{i-1}`` with the split column duplicated on top
    of the new row ``psi^i``. Because the duplicated columns are equal,
    ``|det Psi^i| = |psi^i_j - psi^i_{j+1}| |det Psi^{i-1}|``, which is the
    quantity the redraw loop checks against ``det_floor``.

    Parameters
    ----------
    grouping : GroupingScheme
    T : int
        Pilot slots per block, ``T >= N_t``.
    N_t : int
    rng : Generator, RngStream, int or None
    power : float
        Per-slot pilot power ``||x_t||^2``.
    design : {"flip", "random"}
        ``"random"`` draws every ``psi^i`` uniformly (optionally quantized
        to ``phase_bits``). ``"flip"`` draws a common phase and only flips
        the sign on the newly created group, which keeps the error of each
        split at half the noise variance instead of accumulating the errors
        of all other groups.
    phase_bits : int
        Phase-shifter resolution for the random design, 0 = continuous.
    det_floor : float
        Minimum accepted ``|det Psi^i| / |det Psi^{i-1}|``.
    """
    if T < N_t:
        raise ValueError(f"pilot length T={T} must be >= N_t={N_t}")
    if design not in ("flip", "random"):
        raise ValueError(f"unknown pilot design {design!r}")
    gen = as_generator(rng)
    X = _dft_pilot(N_t, T, power)
    I = grouping.I
    M = grouping.M

    phi0 = _quantize(gen.uniform(0, 2 * np.pi), phase_bits)
    psi = [np.array([np.exp(1j * phi0)])]
    Psi = psi[0].reshape(1, 1)
    for i in range(2, I + 1):
        j = grouping.splits[i - 2]
        top = np.insert(Psi, j + 1, Psi[:, j], axis=1)
        for _ in range(max_redraws):
            if design == "flip":
                row = np.full(i, np.exp(1j * phi0))
                row[j + 1] = -row[j + 1]
            else:
                row = np.exp(1j * _quantize(gen.uniform(0, 2 * np.pi, i), phase_bits))
            if abs(row[j] - row[j + 1]) >= det_floor:
                break
        else:
            raise SingularPsi(f"no admissible psi^{i} after {max_redraws} draws")
        psi.append(row)
        Psi = np.vstack([top, row[None, :]])

    Xi = np.empty((M, I), dtype=complex)
    for i in range(1, I + 1):
        Xi[:, i - 1] = psi[i - 1][grouping.labels(i)]
    return PilotSchedule(X, tuple(psi), Psi, Xi, grouping)


def cascaded_channel(H, G) -> np.ndarray:
    """``(H^T ⊙ G)^T``: row ``m`` is ``vec(g_m h_m)`` (``M x N_t N_r``)."""
    return khatri_rao(np.asarray(H).T, np.asarray(G)).T


def aggregate_rows(Hbar, grouping_or_groups) -> np.ndarray:
    """Sum the rows of ``Hbar`` within every group."""
    groups = grouping_or_groups.groups() if isinstance(grouping_or_groups, GroupingScheme) else grouping_or_groups
    Hbar = np.asarray(Hbar)
    return np.stack([Hbar[a:b].sum(axis=0) for a, b in groups])


def expand_to_elements(H_agg, grouping_or_groups) -> np.ndarray:
    """Spread each aggregated row evenly over the elements of its group."""
    groups = grouping_or_groups.groups() if isinstance(grouping_or_groups, GroupingScheme) else grouping_or_groups
    rows = [np.repeat(H_agg[k][None, :] / (b - a), b - a, axis=0) for k, (a, b) in enumerate(groups)]
    return np.vstack(rows)


def simulate_training_rx(cs: ChannelSet, sched: PilotSchedule, noise_var: float, rng=None) -> np.ndarray:
    """Received pilot tensor of shape ``(N_r, T, I)``.

    Slice ``i`` is ``G diag(theta_i) H X + N_i`` with AWGN of per-entry
    variance ``noise_var``.
    """
    H, G, X = cs.H, cs.G, sched.X
    N_r = G.shape[0]
    HX = H @ X
    Y = np.einsum("rm,mi,mt->rti", G, sched.Xi, HX)
    if noise_var > 0:
        Y = Y + sample_cscg(noise_var, (N_r, sched.T, sched.I), rng)
    return Y


def unfold(Y) -> np.ndarray:
    """``[vec(Y_1), ..., vec(Y_I)]^T`` for a ``(N_r, T, I)`` tensor."""
    Y = np.asarray(Y)
    return np.stack([vec(Y[:, :, i]) for i in range(Y.shape[2])])


def _right_pinv(X) -> np.ndarray:
    X = np.asarray(X)
    N_t, T = X.shape
    if T < N_t or np.linalg.matrix_rank(X) < N_t:
        raise RankDeficientPilot("pilot matrix must have full row rank N_t")
    return X.conj().T @ np.linalg.inv(X @ X.conj().T)


def unfold_and_equalize(Y, X) -> np.ndarray:
    """Unfold the pilot tensor and remove the pilot matrix.

    Returns ``Y~ (X^+ ⊗ I_{N_r})`` with ``X^+`` the right pseudo-inverse,
    i.e. an ``I x N_t N_r`` matrix whose noiseless value is
    ``Xi^T (H^T ⊙ G)^T``. Row ``i`` is computed as ``vec(Y_i X^+)``.
    """
    Xp = _right_pinv(X)
    Y = np.asarray(Y)
    return np.stack([vec(Y[:, :, i] @ Xp) for i in range(Y.shape[2])])


@dataclass(frozen=True)
class AggregatedEstimate:
    """Estimated ``I x N_t N_r`` aggregated cascaded channel."""

    H_agg: np.ndarray
    groups: tuple
    timescale: str = "small"
    t_count: int = 1

    @property
    def I(self) -> int:
        return self.H_agg.shape[0]

    def expand(self) -> np.ndarray:
        return expand_to_elements(self.H_agg, self.groups)


def _solve_psi(Psi, Ybar):
    Psi = np.asarray(Psi)
    if Psi.shape[0] != Psi.shape[1] or Psi.shape[0] != np.asarray(Ybar).shape[0]:
        raise SizeMismatch("Psi must be square and match the rows of the received matrix")
    s = np.linalg.svd(Psi, compute_uv=False)
    if s[-1] <= 1e-12 * s[0]:
        raise SingularPsi("group-phase matrix is singular")
    return np.linalg.solve(Psi, Ybar)


def estimate_aggregated(Ybar, Psi, groups=None) -> AggregatedEstimate:
    """``(Psi^I)^{-1} Y^I``: the small-timescale aggregated estimate."""
    H = _solve_psi(Psi, Ybar)
    return AggregatedEstimate(H, tuple(groups) if groups is not None else (), "small", 1)


def estimate_los(Ybars: Sequence, Psi, groups=None) -> AggregatedEstimate:
    """Average equalized blocks over ``t_coh`` NLoS intervals, then solve.

    The NLoS part and the noise are zero mean, so the error of the LoS
    aggregated estimate shrinks as ``1/sqrt(len(Ybars))``.
    """
    Ybars = [np.asarray(y) for y in Ybars]
    if not Ybars:
        raise ValueError("need at least one received block")
    H = _solve_psi(Psi, np.mean(Ybars, axis=0))
    return AggregatedEstimate(H, tuple(groups) if groups is not None else (), "los", len(Ybars))


def ls_full_estimate(Ybar, Xi) -> np.ndarray:
    """Ungrouped least-squares estimate ``Xi^{-T} Ybar`` (needs ``I = M``)."""
    Xi = np.asarray(Xi)
    if Xi.shape[0] != Xi.shape[1]:
        raise SizeMismatch("plain least squares needs I == M training blocks")
    return np.linalg.solve(Xi.T, Ybar)


def nmse(est, truth) -> float:
    """``||est - truth||_F^2 / ||truth||_F^2``."""
    est = np.asarray(est)
    truth = np.asarray(truth)
    if est.shape != truth.shape:
        raise SizeMismatch(f"shape mismatch {est.shape} vs {truth.shape}")
    den = np.sum(np.abs(truth) ** 2)
    if den == 0:
        raise ZeroTruth("reference channel is identically zero")
    return float(np.sum(np.abs(est - truth) ** 2) / den)


def select_pilot_blocks(
    v: float,
    f_c: float,
    T: int,
    slot: float,
    rate_predictor: Callable[[int], float] | Mapping[int, float],
    candidates: Sequence[int],
) -> int:
    """Pick the block count maximizing the overhead-discounted rate.

    The score of ``I`` is ``(1 - I T slot / T_coh(v)) * R(I)``; ``I = 0``
    stands for statistical-CSI operation without per-interval training.
    Candidates whose training does not fit in the coherence time are
    discarded. Ties go to the smaller ``I``.
    """
    if not len(candidates):
        raise NoFeasibleCandidate("empty candidate list")
    T_coh = np.inf if v == 0 else coherence_from_speed(v, f_c)
    rate = rate_predictor.__getitem__ if isinstance(rate_predictor, Mapping) else rate_predictor
    best, best_score = None, -np.inf
    for I in sorted(candidates):
        frac = 1.0 - I * T * slot / T_coh
        if I > 0 and frac <= 0:
            continue
        score = frac * float(rate(I))
        if score > best_score:
            best, best_score = I, score
    if best is None:
        raise NoFeasibleCandidate("no candidate fits inside the coherence time")
    return best
