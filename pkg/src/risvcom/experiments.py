"""Seeded experiment suites producing CSV-ready result tables.

Every experiment is split into independent tasks keyed by (sweep point,
seed). Tasks draw their randomness from ``RngStream(seed, stream)`` only,
so the rows do not depend on scheduling; rows are sorted before they are
written, which makes the CSV body a pure function of (config, seeds).
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .beamform_nb import achievable_rate, alternating_optimize, channel_slices, rate_nb
from .channel import (
    LinkGeometry,
    coherence_from_speed,
    dbm_to_watt,
    noise_power,
    refresh_nlos,
    sample_channels,
)
from .config import ScenarioConfig, config_hash
from .estimation import (
    aggregate_rows,
    build_grouping,
    build_pilots,
    cascaded_channel,
    estimate_aggregated,
    estimate_los,
    expand_to_elements,
    ls_full_estimate,
    nmse,
    select_pilot_blocks,
    simulate_training_rx,
    unfold_and_equalize,
)
from .exceptions import NumericalFailure, QoSInfeasible
from .numerics import RngStream
from .ofdm import check_feasible, make_scenario
from .resource_alloc import alternate_P1

__all__ = ["ResultTable", "EXPERIMENTS", "run_experiment", "cyclic_prefix_factor"]

AGG_ORDER = {"seed": 0, "mean": 1, "std": 2}


@dataclass
class ResultTable:
    """Rows of one experiment plus its run manifest.

    ``key`` names the sweep-point columns; aggregated rows share the key of
    the per-seed rows they summarize.
    """

    experiment: str
    columns: list
    key: list
    rows: list = field(default_factory=list)
    manifest: dict = field(default_factory=dict)

    def sorted_rows(self) -> list:
        ki = [self.columns.index(c) for c in self.key]
        si = self.columns.index("seed")
        ai = self.columns.index("agg")

        def sort_key(row):
            return tuple(_sortable(row[i]) for i in ki) + (AGG_ORDER[row[ai]], _sortable(row[si]))

        return sorted(self.rows, key=sort_key)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.sorted_rows():
            w.writerow([_fmt(v) for v in row])
        return buf.getvalue()

    def write(self, out_dir) -> tuple:
        os.makedirs(out_dir, exist_ok=True)
        csv_path = os.path.join(out_dir, f"{self.experiment}.csv")
        man_path = os.path.join(out_dir, f"{self.experiment}.manifest.json")
        with open(csv_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())
        with open(man_path, "w", encoding="utf-8") as fh:
            json.dump(self.manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return csv_path, man_path

    def column(self, name, agg="seed", **where) -> np.ndarray:
        """Values of ``name`` over rows with the given ``agg`` flag and key values."""
        idx = {c: i for i, c in enumerate(self.columns)}
        out = []
        for row in self.sorted_rows():
            if row[idx["agg"]] != agg:
                continue
            if all(row[idx[k]] == v for k, v in where.items()):
                out.append(row[idx[name]])
        return np.asarray(out)


def _sortable(v):
    if v == "" or v is None:
        return (0, "")
    if isinstance(v, str):
        return (1, v)
    return (2, float(v))


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _aggregate(rows, columns, key, values):
    """Append mean and std rows (population std) per key over the per-seed rows."""
    idx = {c: i for i, c in enumerate(columns)}
    groups: dict = {}
    for row in rows:
        groups.setdefault(tuple(row[idx[k]] for k in key), []).append(row)
    out = []
    for kv, members in groups.items():
        for agg, fn in (("mean", np.mean), ("std", np.std)):
            new = [""] * len(columns)
            for k, v in zip(key, kv):
                new[idx[k]] = v
            new[idx["agg"]] = agg
            for c in values:
                vals = np.array([m[idx[c]] for m in members], dtype=float)
                vals = vals[np.isfinite(vals)]
                new[idx[c]] = float(fn(vals)) if vals.size else math.nan
            out.append(new)
    return out


def _map(fn, tasks, workers: int):
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, tasks))
    return [fn(t) for t in tasks]


def _seeds(cfg: ScenarioConfig):
    return list(range(cfg.seed_offset, cfg.seed_offset + cfg.seeds))


def _geometry(cfg: ScenarioConfig) -> LinkGeometry:
    return LinkGeometry(cfg.d_BR, cfg.d_RV, cfg.alpha_BR, cfg.alpha_RV, cfg.P0_dB)


# --------------------------------------------------------------------------
# narrowband training helpers


@dataclass
class _Link:
    """One seeded narrowband link with its training observations."""

    cfg: ScenarioConfig
    seed: int
    M: int | None = None

    def __post_init__(self):
        cfg = self.cfg
        self.M = cfg.M if self.M is None else self.M
        self.stream = RngStream(self.seed)
        self.cs = sample_channels(cfg.N_t, cfg.N_r, self.M, _geometry(cfg), cfg.rician_K_dB, self.stream.child(0).generator())
        self.noise = noise_power(cfg.N0_dBm_per_Hz, cfg.B_nb)
        self.P_u = float(dbm_to_watt(cfg.P_u_dBm))
        self.P_t = float(dbm_to_watt(cfg.P_t_dBm))
        self.Hbar = cascaded_channel(self.cs.H, self.cs.G)

    def pilots(self, I, design="flip", bits=0, stream=1):
        g = build_grouping(self.M, I)
        gen = self.stream.child(stream * 1000 + I).generator()
        return build_pilots(g, self.cfg.pilot_T, self.cfg.N_t, rng=gen, power=self.P_u, design=design, phase_bits=bits)

    def observe(self, sched, stream, cs=None, noise=None):
        gen = self.stream.child(stream).generator()
        Y = simulate_training_rx(self.cs if cs is None else cs, sched, self.noise if noise is None else noise, gen)
        return unfold_and_equalize(Y, sched.X)

    def los_estimate(self, sched):
        """Average ``los_intervals`` blocks, each with a fresh NLoS draw."""
        bars = []
        for t in range(self.cfg.los_intervals):
            cs_t = refresh_nlos(self.cs, self.stream.child(5000 + 10 * t).generator())
            bars.append(self.observe(sched, 5001 + 10 * t + sched.I * 100_000, cs=cs_t))
        return estimate_los(bars, sched.Psi, sched.grouping.groups()).H_agg

    def design(self, H_drive, sched_or_sizes, init="random", H_los=None, stream=7):
        sizes = sched_or_sizes.grouping.sizes() if hasattr(sched_or_sizes, "grouping") else sched_or_sizes
        cfg = self.cfg
        return alternating_optimize(
            H_drive, cfg.N_r, cfg.N_t, self.noise, self.P_t, group_sizes=sizes, init=init,
            H_agg_los=H_los, passive=cfg.passive, max_outer=cfg.nb_max_outer,
            rng=self.stream.child(stream).generator(),
        )

    def true_rate(self, sol, groups):
        truth = aggregate_rows(self.Hbar, groups)
        S = channel_slices(truth, self.cfg.N_r, self.cfg.N_t)
        return rate_nb(sol.theta, S @ sol.F, self.noise)


# --------------------------------------------------------------------------
# nmse


def _nmse_task(args):
    cfg, seed = args
    link = _Link(cfg, seed)
    rows = []
    for I in cfg.I_list:
        sched = link.pilots(I)
        est = estimate_aggregated(link.observe(sched, 10 + I), sched.Psi, sched.grouping.groups())
        truth_agg = aggregate_rows(link.Hbar, sched.grouping)
        q = link.pilots(I, design="random", bits=cfg.phase_bits, stream=2)
        est_q = estimate_aggregated(link.observe(q, 20 + I), q.Psi, q.grouping.groups())
        ls = math.nan
        if I == link.M:
            ls = nmse(ls_full_estimate(link.observe(sched, 10 + I), sched.Xi), link.Hbar)
        rows.append([
            "seed", I, seed,
            nmse(est.H_agg, truth_agg),
            nmse(est.expand(), link.Hbar),
            nmse(expand_to_elements(est_q.H_agg, q.grouping), link.Hbar),
            ls,
        ])
    return rows


def cmd_nmse(cfg: ScenarioConfig) -> ResultTable:
    """NMSE of the grouped estimate versus the number of training blocks."""
    cols = ["agg", "I", "seed", "nmse_agg", "nmse_full", "nmse_full_random_bits", "nmse_ls"]
    rows = [r for rs in _map(_nmse_task, [(cfg, s) for s in _seeds(cfg)], cfg.workers) for r in rs]
    rows += _aggregate(rows, cols, ["I"], cols[3:])
    return ResultTable("nmse", cols, ["I"], rows)


# --------------------------------------------------------------------------
# nb-converge


def _nb_task(args):
    cfg, seed = args
    link = _Link(cfg, seed)
    sched = link.pilots(cfg.I)
    est = estimate_aggregated(link.observe(sched, 30), sched.Psi).H_agg
    los = link.los_estimate(sched)
    rows = []
    for init in ("los", "random"):
        sol = link.design(est, sched, init=init, H_los=los if init == "los" else None)
        last_outer = {}
        for outer, inner, rate in sol.trace:
            rows.append(["seed", init, "inner", outer, inner, seed, rate])
            last_outer[outer] = (inner, rate)
        for outer, (inner, rate) in sorted(last_outer.items()):
            if outer > 0:
                rows.append(["seed", init, "outer", outer, inner, seed, rate])
    return rows


def cmd_nb_converge(cfg: ScenarioConfig) -> ResultTable:
    """Rate traces of the alternating design, random versus LoS-CSI start.

    ``rate`` is measured on the driving (estimated) channel in bit/s/Hz.
    ``inner`` rows follow every phase update, ``outer`` rows close every
    outer iteration. Aggregates hold the last value of finished traces.
    """
    cols = ["agg", "init", "level", "outer", "inner", "seed", "rate"]
    key = ["init", "level", "outer", "inner"]
    rows = [r for rs in _map(_nb_task, [(cfg, s) for s in _seeds(cfg)], cfg.workers) for r in rs]
    rows += _aggregate(_pad_traces(rows, cols), cols, key, ["rate"])
    return ResultTable("nb-converge", cols, key, rows)


def _pad_traces(rows, cols):
    """Extend finished inner traces with their last value up to the longest one."""
    idx = {c: i for i, c in enumerate(cols)}
    out = [r for r in rows if r[idx["level"]] == "outer"]
    inner = [r for r in rows if r[idx["level"]] == "inner"]
    by = {}
    for r in inner:
        by.setdefault((r[idx["init"]], r[idx["seed"]]), []).append(r)
    for init in {k[0] for k in by}:
        traces = [sorted(v, key=lambda r: r[idx["inner"]]) for k, v in by.items() if k[0] == init]
        longest = max(traces, key=len)
        for tr in traces:
            out.extend(tr)
            for ref in longest[len(tr):]:
                pad = list(tr[-1])
                pad[idx["outer"]], pad[idx["inner"]] = ref[idx["outer"]], ref[idx["inner"]]
                out.append(pad)
    return out


# --------------------------------------------------------------------------
# rate-vs-blocks


def _ungrouped(link: _Link):
    """Perfect-CSI and least-squares designs without grouping (``I = M``)."""
    M = link.M
    sizes = np.ones(M, dtype=int)
    singles = tuple((m, m + 1) for m in range(M))
    perfect = link.design(link.Hbar, sizes, stream=41)
    sched = link.pilots(M)
    est = ls_full_estimate(link.observe(sched, 42), sched.Xi)
    estimated = link.design(est, sizes, stream=41)
    return link.true_rate(perfect, singles), link.true_rate(estimated, singles)


def _blocks_task(args):
    cfg, seed = args
    link = _Link(cfg, seed)
    r_perfect, r_est = _ungrouped(link)
    rows = []
    for I in cfg.I_list:
        sched = link.pilots(I)
        g = sched.grouping
        truth = aggregate_rows(link.Hbar, g)
        est = estimate_aggregated(link.observe(sched, 50 + I), sched.Psi).H_agg
        los = link.los_estimate(sched)
        # same random start as the ungrouped design so that I = M reproduces it
        grouped = link.design(truth, sched, stream=41)
        stat = link.design(los, sched, stream=43)
        prop = link.design(est, sched, init="los", H_los=los, stream=43)
        rows.append([
            "seed", I, seed, r_perfect, r_est,
            link.true_rate(grouped, g), link.true_rate(stat, g), link.true_rate(prop, g),
        ])
    return rows


def cmd_rate_vs_blocks(cfg: ScenarioConfig) -> ResultTable:
    """Rates (bit/s/Hz, on the true channel) versus the number of blocks."""
    cols = ["agg", "I", "seed", "perfect_ungrouped", "estimated_ungrouped", "perfect_grouped", "statistical_grouped", "proposed"]
    rows = [r for rs in _map(_blocks_task, [(cfg, s) for s in _seeds(cfg)], cfg.workers) for r in rs]
    rows += _aggregate(rows, cols, ["I"], cols[3:])
    return ResultTable("rate-vs-blocks", cols, ["I"], rows)


# --------------------------------------------------------------------------
# rate-vs-speed


def _speed_task(args):
    """Speed-independent rates of one seed; overheads are applied afterwards."""
    cfg, seed = args
    link = _Link(cfg, seed)
    cands = sorted(set(cfg.I_list) | {cfg.I_fixed, cfg.I})
    out = {"seed": seed, "grouped": {}}
    for I in cands:
        sched = link.pilots(I)
        est = estimate_aggregated(link.observe(sched, 60 + I), sched.Psi).H_agg
        los = link.los_estimate(sched)
        prop = link.design(est, sched, init="los", H_los=los, stream=61)
        out["grouped"][I] = link.true_rate(prop, sched.grouping)
        if I == cfg.I:
            stat = link.design(los, sched, stream=61)
            out["statistical"] = link.true_rate(stat, sched.grouping)
    out["full_M"] = _ungrouped(link)[1]
    small = _Link(cfg, seed, M=cfg.M_small)
    out["full_small"] = _ungrouped(small)[1]
    return out


def cmd_rate_vs_speed(cfg: ScenarioConfig) -> ResultTable:
    """Overhead-discounted rates (bit/s/Hz) versus speed.

    The adaptive scheme picks, per speed, the block count with the highest
    seed-averaged discounted rate among the swept counts, the fixed count
    and statistical CSI (``I = 0``); the estimation time of ``I`` blocks is
    ``I T slot``.
    """
    per_seed = _map(_speed_task, [(cfg, s) for s in _seeds(cfg)], cfg.workers)
    T, slot = cfg.pilot_T, cfg.slot_nb
    mean_rate = {I: float(np.mean([r["grouped"][I] for r in per_seed])) for I in per_seed[0]["grouped"]}
    mean_rate[0] = float(np.mean([r["statistical"] for r in per_seed]))
    cols = ["agg", "speed_kmh", "seed", "I_adaptive", "adaptive", "fixed_I", "full_small_M", "full_M", "statistical"]
    rows = []
    for v_kmh in cfg.speeds_kmh:
        v = v_kmh / 3.6
        Tc = coherence_from_speed(v, cfg.f_c)
        I_star = select_pilot_blocks(v, cfg.f_c, T, slot, mean_rate, sorted(mean_rate))
        for r in per_seed:
            def disc(rate, n_blocks):
                return achievable_rate(rate, n_blocks * T * slot, Tc)

            adaptive = r["statistical"] if I_star == 0 else disc(r["grouped"][I_star], I_star)
            rows.append([
                "seed", v_kmh, r["seed"], I_star, adaptive,
                disc(r["grouped"][cfg.I_fixed], cfg.I_fixed),
                disc(r["full_small"], cfg.M_small),
                disc(r["full_M"], cfg.M),
                r["statistical"],
            ])
    rows += _aggregate(rows, cols, ["speed_kmh"], cols[3:])
    return ResultTable("rate-vs-speed", cols, ["speed_kmh"], rows)


# --------------------------------------------------------------------------
# bb-allocate


def cyclic_prefix_factor(bandwidth: float, N: int, tau_rms: float) -> float:
    """Useful-time fraction ``T_s / (T_s + T_cp)`` with ``T_cp = 4 tau_rms``."""
    Ts = N / bandwidth
    return Ts / (Ts + 4.0 * tau_rms)


def bb_scenario(cfg: ScenarioConfig, K: int, N: int, seed: int):
    dist = np.resize(np.asarray(cfg.distances, dtype=float), K)
    return make_scenario(
        K=K, N=N, N_t=cfg.N_t, N_r=cfg.N_r, M=cfg.M, I=cfg.I, bandwidth=cfg.B_bb, f_c=cfg.f_c,
        distances=dist, velocities=np.full(K, cfg.velocity), P_max=float(dbm_to_watt(cfg.P_max_dBm)),
        P_tot=float(dbm_to_watt(cfg.P_tot_dBm)), C_min=cfg.C_min, N0_dBm=cfg.N0_dBm_per_Hz,
        K_dB=cfg.rician_K_dB, geometry=_geometry(cfg), rng=RngStream(seed, 1000 * K + N).generator(),
    )


def _bb_run(cfg, K, N, seed):
    scen = bb_scenario(cfg, K, N, seed)
    res = alternate_P1(scen, rounds=cfg.rounds, rng=RngStream(seed, 7).generator())
    bad = check_feasible(res.alloc, scen, res.per_vue)
    if any(not b.startswith("QoS") for b in bad):
        raise NumericalFailure(f"allocation violates {bad}")
    return res


def _bb_task(args):
    cfg, kind, K, N, seed = args
    cp = cyclic_prefix_factor(cfg.B_bb, N, cfg.tau_rms)
    if kind == "trace":
        res = _bb_run(cfg, K, N, seed)
        rows = []
        for rec in res.trace:
            for k in range(K):
                rows.append(["trace", "seed", N, K, rec["round"], k + 1, seed, rec["per_vue"][k], rec["power"][k], math.nan, math.nan, 1])
            rows.append(["trace", "seed", N, K, rec["round"], 0, seed, rec["total"], float(rec["power"].sum()), math.nan, math.nan, 1])
        return rows
    try:
        res = _bb_run(cfg, K, N, seed)
    except QoSInfeasible:
        return [["sweep", "seed", N, K, 0, 0, seed, math.nan, math.nan, math.nan, math.nan, 0]]
    ok = int(np.all(res.per_vue >= cfg.C_min * (1 - 1e-3)))
    return [["sweep", "seed", N, K, 0, 0, seed, math.nan, math.nan, res.total, res.total * cp, ok]]


def cmd_bb_allocate(cfg: ScenarioConfig) -> ResultTable:
    """Per-round traces at (K, N) and the total-throughput sweep over N and K.

    Trace rows carry per-VUE throughput (bit/s) and power (W) after every
    round, ``vue = 0`` being the sum. Sweep rows carry the gross total and
    the total after the cyclic-prefix discount; ``feasible`` flags runs
    that met the QoS floor.
    """
    cols = ["table", "agg", "N", "K", "round", "vue", "seed", "throughput", "power", "total", "total_cp", "feasible"]
    key = ["table", "N", "K", "round", "vue"]
    seeds = _seeds(cfg)
    tasks = [(cfg, "trace", cfg.K, cfg.N, s) for s in seeds]
    tasks += [(cfg, "sweep", K, N, s) for N in cfg.N_list for K in cfg.K_list for s in seeds]
    rows = [r for rs in _map(_bb_task, tasks, cfg.workers) for r in rs]
    rows += _aggregate(rows, cols, key, ["throughput", "power", "total", "total_cp", "feasible"])
    return ResultTable("bb-allocate", cols, key, rows)


EXPERIMENTS = {
    "nmse": cmd_nmse,
    "nb-converge": cmd_nb_converge,
    "rate-vs-blocks": cmd_rate_vs_blocks,
    "rate-vs-speed": cmd_rate_vs_speed,
    "bb-allocate": cmd_bb_allocate,
}


def run_experiment(name: str, cfg: ScenarioConfig) -> ResultTable:
    """Run one experiment and attach its manifest.

    Raises
    ------
    KeyError
        Unknown experiment name.
    NumericalFailure
        Non-finite per-seed values or an infeasible emitted allocation.
    """
    fn = EXPERIMENTS[name]
    t0 = time.perf_counter()
    with np.errstate(all="ignore"):
        table = fn(cfg)
    _check_finite(table)
    table.manifest = {
        "experiment": name,
        "config": cfg.to_dict(),
        "config_hash": config_hash(cfg),
        "seeds": _seeds(cfg),
        "version": f"risvcom {__version__} (numpy {np.__version__}, python {platform.python_version()})",
        "wall_time_s": round(time.perf_counter() - t0, 3),
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "rows": len(table.rows),
    }
    return table


def _check_finite(table: ResultTable):
    """Per-seed rows must be finite except for columns that are NaN by design."""
    idx = {c: i for i, c in enumerate(table.columns)}
    optional = {"nmse_ls", "throughput", "power", "total", "total_cp"}
    for row in table.rows:
        if row[idx["agg"]] != "seed":
            continue
        for c, i in idx.items():
            v = row[i]
            if c in optional or not isinstance(v, (float, np.floating)):
                continue
            if not np.isfinite(v):
                raise NumericalFailure(f"{table.experiment}: non-finite {c} in row {row}")
