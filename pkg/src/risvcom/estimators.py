"""scikit-learn style wrappers around the estimation and design routines.

The wrappers follow the usual contract: hyper-parameters are set in
``__init__`` and exposed through ``get_params``/``set_params``; ``fit``
learns attributes with a trailing underscore and returns ``self``.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_complex_array, check_int_range, check_positive
from .beamform_nb import alternating_optimize, rate_nb, channel_slices
from .estimation import (
    build_grouping,
    build_pilots,
    estimate_aggregated,
    estimate_los,
    nmse,
    unfold_and_equalize,
)
from .ofdm import BroadbandScenario, rate_matrix
from .resource_alloc import alternate_P1

__all__ = ["AdaptiveChannelEstimator", "NarrowbandBeamformer", "BroadbandAllocator"]


class AdaptiveChannelEstimator(BaseEstimator):
    """Grouped-pilot estimator of the aggregated cascaded channel.

    Parameters
    ----------
    M : int
        RIS elements.
    n_blocks : int
        Training blocks ``I`` (``1 <= I <= M``); one RIS group per block.
    N_t : int
        BS antennas.
    T : int or None
        Pilot slots per block; defaults to ``N_t``.
    design : {"flip", "random"}
        Group-phase design, see :func:`risvcom.estimation.build_pilots`.
    phase_bits : int
        Phase-shifter resolution of the random design (0 = continuous).
    pilot_power : float
    random_state : int, Generator or None
        Seeds the group-phase draw. The schedule is a pure function of the
        parameters, so :meth:`make_schedule` may be called before ``fit`` to
        generate training data.

    Attributes
    ----------
    schedule_ : PilotSchedule
    los_ : AggregatedEstimate
        Large-timescale estimate averaged over the tensors passed to ``fit``.
    """

    def __init__(self, M=16, n_blocks=16, N_t=4, T=None, design="flip", phase_bits=0, pilot_power=1.0, random_state=None):
        self.M = M
        self.n_blocks = n_blocks
        self.N_t = N_t
        self.T = T
        self.design = design
        self.phase_bits = phase_bits
        self.pilot_power = pilot_power
        self.random_state = random_state

    def make_schedule(self):
        M = check_int_range(self.M, "M", 1)
        I = check_int_range(self.n_blocks, "n_blocks", 1, M)
        N_t = check_int_range(self.N_t, "N_t", 1)
        T = N_t if self.T is None else check_int_range(self.T, "T", N_t)
        check_positive(self.pilot_power, "pilot_power")
        return build_pilots(
            build_grouping(M, I), T, N_t, rng=self.random_state,
            power=self.pilot_power, design=self.design, phase_bits=self.phase_bits,
        )

    def _equalize(self, Y):
        Y = check_complex_array(Y, ndim=3, name="Y")
        sched = self.schedule_
        if Y.shape[1:] != (sched.T, sched.I):
            raise ValueError(f"Y must have shape (N_r, {sched.T}, {sched.I}), got {Y.shape}")
        return unfold_and_equalize(Y, sched.X)

    def fit(self, Y, y=None):
        """Learn the LoS estimate from one tensor or a stack of tensors.

        Parameters
        ----------
        Y : array_like, shape (N_r, T, I) or (n_intervals, N_r, T, I)
        """
        self.schedule_ = self.make_schedule()
        Y = np.asarray(Y)
        stack = Y[None] if Y.ndim == 3 else Y
        if stack.ndim != 4:
            raise ValueError("Y must be a 3-d tensor or a stack of them")
        bars = [self._equalize(y_) for y_ in stack]
        self.N_r_ = stack.shape[1]
        self.los_ = estimate_los(bars, self.schedule_.Psi, self.schedule_.grouping.groups())
        return self

    def predict(self, Y):
        """Small-timescale aggregated estimate ``(I, N_t N_r)`` for one tensor."""
        check_is_fitted(self, "schedule_")
        est = estimate_aggregated(self._equalize(Y), self.schedule_.Psi, self.schedule_.grouping.groups())
        return est.H_agg

    def score(self, Y, H_agg_true):
        """Negative NMSE of :meth:`predict` against the aggregated truth."""
        return -nmse(self.predict(Y), check_complex_array(H_agg_true, ndim=2, name="H_agg_true"))


class NarrowbandBeamformer(BaseEstimator):
    """Alternating water-filling / group-phase design for one VUE.

    Parameters
    ----------
    N_t, N_r : int
    noise : float
        Receiver noise power (W).
    P_t : float
        Transmit power budget (W).
    init : {"random", "los"}
    passive : {"auto", "closed", "gradient", "exhaustive"}
    bits : int
        Resolution of the exhaustive phase search.
    max_outer : int
    tol : float
    random_state : int, Generator or None

    Attributes
    ----------
    theta_ : ndarray of shape (I,)
    F_ : ndarray of shape (N_t, N_t)
    trace_ : list of (outer, inner, rate)
    rate_ : float
        Rate on the driving channel passed to ``fit`` (bit/s/Hz).
    """

    def __init__(self, N_t=4, N_r=4, noise=1e-9, P_t=0.1, init="random", passive="auto", bits=8, max_outer=20, tol=1e-5, random_state=None):
        self.N_t = N_t
        self.N_r = N_r
        self.noise = noise
        self.P_t = P_t
        self.init = init
        self.passive = passive
        self.bits = bits
        self.max_outer = max_outer
        self.tol = tol
        self.random_state = random_state

    def fit(self, H_agg, H_agg_los=None, group_sizes=None):
        N_t = check_int_range(self.N_t, "N_t", 1)
        N_r = check_int_range(self.N_r, "N_r", 1)
        H_agg = check_complex_array(H_agg, ndim=2, name="H_agg", shape=(None, N_t * N_r))
        if H_agg_los is not None:
            H_agg_los = check_complex_array(H_agg_los, ndim=2, name="H_agg_los", shape=H_agg.shape)
        sol = alternating_optimize(
            H_agg, N_r, N_t, check_positive(self.noise, "noise"), check_positive(self.P_t, "P_t"),
            group_sizes=group_sizes, init=self.init, H_agg_los=H_agg_los, passive=self.passive,
            bits=self.bits, max_outer=check_int_range(self.max_outer, "max_outer", 1),
            tol=self.tol, rng=self.random_state,
        )
        self.theta_, self.F_, self.trace_, self.rate_ = sol.theta, sol.F, sol.trace, sol.rate
        return self

    def predict(self, H_agg):
        """Rate (bit/s/Hz) of the fitted design on another channel, e.g. the truth."""
        check_is_fitted(self, "theta_")
        H_agg = check_complex_array(H_agg, ndim=2, name="H_agg", shape=(self.theta_.size, self.N_t * self.N_r))
        return rate_nb(self.theta_, channel_slices(H_agg, self.N_r, self.N_t) @ self.F_, self.noise)

    def score(self, H_agg, y=None):
        return self.predict(H_agg)


class BroadbandAllocator(BaseEstimator):
    """Joint carrier, power, beam and RIS design for several VUEs.

    Parameters
    ----------
    rounds : int
        Outer alternation rounds.
    tol : float
        Relative throughput gain below which the alternation stops.
    passive_sweeps : int
    random_state : int, Generator or None
        Seeds the random initial RIS phases.

    Attributes
    ----------
    alloc_ : Allocation
    theta_ : ndarray of shape (K, I)
    F_ : ndarray of shape (N, N_t, N_t)
    trace_ : list of dict
    total_ : float
        Total throughput (bit/s) on the fitted scenario.
    per_vue_ : ndarray of shape (K,)
    """

    def __init__(self, rounds=10, tol=1e-4, passive_sweeps=2, random_state=None):
        self.rounds = rounds
        self.tol = tol
        self.passive_sweeps = passive_sweeps
        self.random_state = random_state

    def fit(self, scen, y=None):
        if not isinstance(scen, BroadbandScenario):
            raise ValueError("fit expects a BroadbandScenario")
        res = alternate_P1(
            scen, rounds=check_int_range(self.rounds, "rounds", 1), tol=self.tol,
            rng=self.random_state, passive_sweeps=check_int_range(self.passive_sweeps, "passive_sweeps", 0),
        )
        self.alloc_, self.theta_, self.F_ = res.alloc, res.profiles.theta, res.F
        self.trace_, self.total_, self.per_vue_ = res.trace, res.total, res.per_vue
        self.n_features_in_ = scen.K * scen.N
        return self

    def predict(self, scen):
        """Per-VUE, per-carrier rates ``(K, N)`` of the fitted design on ``scen``."""
        check_is_fitted(self, "alloc_")
        if not isinstance(scen, BroadbandScenario):
            raise ValueError("predict expects a BroadbandScenario")
        if scen.K * scen.N != self.n_features_in_:
            raise ValueError("scenario size differs from the fitted one")
        return rate_matrix(self.alloc_, self.theta_, self.F_, scen)

    def score(self, scen, y=None):
        """Total throughput (bit/s)."""
        return float(self.predict(scen).sum())
