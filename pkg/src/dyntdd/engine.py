"""The per-subframe simulation engine.

One drop is a deterministic sequential state machine over 1 ms subframes:
transmitter activation from each cell's frame schedule and proportional-fair
selection, SINR with inter-link interference and the configured cancellation
policy, capped-Shannon link adaptation, flat-error HARQ, buffer draining and
per-packet throughput accounting. The hot path is vectorised across cells;
scalar reference implementations of the per-link quantities live alongside
for oracle checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import het_schedule, ilim, planner, splitting
from .schemes import SchemeSpec, get_scheme
from .tdd_config import SetKind, build_set
from .topology import (
    DEFAULT_RADIO,
    STREAM_HARQ,
    Association,
    LinkGainTable,
    NetworkLayout,
    RadioParams,
    Scenario,
    associate_best_rsrp,
    compute_link_gains,
    generate_layout,
    rsrp_matrix,
    wideband_dl_sinr_matrix,
)
from .traffic import DL, UL, TrafficSource, generate_arrivals

FRAME_LEN = 10

# per-subframe cell roles
ROLE_DL = 0          # plain DL: every served UE eligible
ROLE_UL = 1
ROLE_ABS = 2
ROLE_ALIGNED_DL = 3  # DL overlapping macro DL: non-offloaded UEs only
ROLE_DYN_DL = 4      # dynamic DL: offloaded UEs first

_ROLE_CHAR = {ROLE_DL: "D", ROLE_UL: "U", ROLE_ABS: "A", ROLE_ALIGNED_DL: "M", ROLE_DYN_DL: "D"}


class EngineSetupError(ValueError):
    pass


@dataclass(frozen=True)
class SimParams:
    """Run-time knobs of the engine and the mitigation schemes."""

    horizon_subframes: int = 60_000
    pf_beta: float = 0.01
    pf_floor_bps: float = 1.0
    harq_fail_prob: float = 0.1
    harq_max_retx: int = 4
    se_cap_bpshz: float = 7.8
    overhead: float = 11.0 / 14.0
    reb_y_db: float = 9.0
    alpha_m_dl: float = 0.625
    pl_cc_db: float = 90.0
    ulpb_boost_db: float = 10.0
    x1_db: float = 9.0
    x2_db: float = 120.0
    fpc_p0_dbm: float = -66.0
    fpc_alpha: float = 0.8
    ic_probe: bool = False
    trace_schedule: bool = False


def genie_la(
    sinr_linear: float,
    bandwidth_hz: float,
    cap_bpshz: float = 7.8,
    overhead: float = 11.0 / 14.0,
) -> int:
    """Deliverable bits in one 1 ms subframe: capped Shannon with symbol overhead."""
    if sinr_linear < 0:
        raise ValueError("SINR cannot be negative")
    se = min(math.log2(1.0 + sinr_linear), cap_bpshz)
    return int(se * bandwidth_hz * 1e-3 * overhead)


def _genie_bits_vec(sinr_lin, bandwidth_hz, cap, overhead):
    se = np.minimum(np.log2(1.0 + sinr_lin), cap)
    return np.floor(se * bandwidth_hz * 1e-3 * overhead).astype(np.int64)


def harq_transmit(bits: int, rng, fail_prob: float = 0.1) -> str:
    """Single transmission attempt outcome under the flat target error rate."""
    if bits <= 0:
        raise ValueError("transport must carry bits")
    return "retransmit" if rng.random() < fail_prob else "delivered"


def pf_select(eligible_ues, achievable_rate, averaged_rate) -> int | None:
    """Proportional-fair pick: argmax of rate/average, ties to the lowest id."""
    best, best_metric = None, -1.0
    for q in eligible_ues:
        metric = achievable_rate[q] / averaged_rate[q]
        if metric > best_metric:
            best, best_metric = q, metric
    return best


@dataclass
class SubframeState:
    """Explicit transmitter sets for the scalar SINR reference path."""

    dl_tx: dict[int, tuple[int, float]] = field(default_factory=dict)  # cell -> (ue, dBm)
    ul_tx: dict[int, tuple[int, float]] = field(default_factory=dict)  # cell -> (ue, dBm)
    subframe: int = 0


def instantaneous_sinr(
    state: SubframeState,
    gains: LinkGainTable,
    radio: RadioParams,
    cell: int,
    direction: int,
    ic_policy: ilim.IcPolicy | None = None,
    rx_ue_is_edge: bool = False,
) -> float:
    """Linear SINR of one active link in `state` (scalar reference path)."""
    lin = lambda db: 10.0 ** (db / 10.0)
    if direction == DL:
        ue, p_dbm = state.dl_tx[cell]
        signal = lin(p_dbm + gains.bs_to_ue[cell, ue])
        interf = lin(radio.noise_dbm("ue"))
        for b, (_, pb) in state.dl_tx.items():
            if b != cell:
                interf += lin(pb + gains.bs_to_ue[b, ue])
        for _, (v, pv) in state.ul_tx.items():
            if v != ue:
                interf += lin(pv + gains.ue_to_ue[v, ue])
        return signal / interf
    ue, p_dbm = state.ul_tx[cell]
    signal = lin(p_dbm + gains.ue_to_bs[ue, cell])
    interf = lin(radio.noise_dbm("bs"))
    for b, (_, pb) in state.dl_tx.items():
        if b == cell:
            continue
        if ic_policy is not None and ilim.cancelled_power(
            ic_policy, cell, rx_ue_is_edge, b, gains
        ):
            continue
        interf += lin(pb + gains.bs_to_bs[b, cell])
    for c2, (v, pv) in state.ul_tx.items():
        if v != ue:
            interf += lin(pv + gains.ue_to_bs[v, cell])
    return signal / interf


def upt_percentiles(values, percentiles) -> list[float | None]:
    """Nearest-rank empirical percentiles; None marks an empty record set."""
    arr = np.sort(np.asarray(values, dtype=float))
    out = []
    for p in percentiles:
        if arr.size == 0:
            out.append(None)
            continue
        rank = max(1, math.ceil(p / 100.0 * arr.size))
        out.append(float(arr[rank - 1]))
    return out


@dataclass
class DropStats:
    scheme_id: str
    scenario: str
    seed: int
    lambda_dl: float
    horizon: int
    upt: dict[str, np.ndarray]
    generated_bits: int
    delivered_bits: int
    buffered_bits: int
    counters: dict[str, int]
    t_inst_hist: np.ndarray
    plan_info: dict | None = None
    schedule_trace: list[tuple[int, int, str]] | None = None

    def upt_by(self, direction: int, tier: int | None = None) -> np.ndarray:
        mask = self.upt["direction"] == direction
        if tier is not None:
            mask &= self.upt["tier"] == tier
        return self.upt["upt_bps"][mask]


class Drop:
    """One seeded simulation drop; immutable inputs, sequential state."""

    def __init__(
        self,
        layout: NetworkLayout,
        gains: LinkGainTable,
        scheme: SchemeSpec,
        seed: int,
        source: TrafficSource,
        sim: SimParams,
        radio: RadioParams | None = None,
    ):
        self.layout = layout
        self.gains = gains
        self.scheme = scheme
        self.seed = seed
        self.source = source
        self.sim = sim
        self.radio = radio or layout.params
        self._validate()
        self._setup()

    def _validate(self):
        s = self.scheme
        if s.cc and s.small_mode != "dyn_full":
            raise EngineSetupError("cell clustering requires full-frame dynamic splitting")
        if s.cc and s.scenario == Scenario.HETNET:
            raise EngineSetupError("cell clustering is a homogeneous-network scheme")
        if s.scenario != self.layout.scenario:
            raise EngineSetupError("scheme and layout scenarios differ")

    # -- setup ---------------------------------------------------------------

    def _setup(self):
        layout, gains, sim, radio = self.layout, self.gains, self.sim, self.radio
        scheme = self.scheme
        M, B, Q = layout.n_macro, layout.n_cells, layout.n_ue
        N = layout.n_small
        self.M, self.B, self.Q, self.N = M, B, Q, N

        lam_dl = np.full(Q, self.source.lambda_dl)
        lam_ul = np.full(Q, self.source.lambda_ul)
        assoc0 = associate_best_rsrp(gains, layout)

        self.plan_info = None
        self.frame_plan = None
        self.outcome = None
        if scheme.cre_abs:
            problem = planner.PlannerProblem.from_drop(layout, gains, assoc0, lam_dl, lam_ul)
            outcome = planner.plan(problem, sim.alpha_m_dl, sim.reb_y_db)
            self.outcome = outcome
            self.assoc = outcome.association
            self.frame_plan = outcome.plan
            self.plan_info = {
                "a_opt": outcome.a_opt,
                "f_m_dl": outcome.plan.f_m_dl,
                "f_m_ul": outcome.plan.f_m_ul,
                "f_s_dyn": outcome.plan.f_s_dyn,
                "n_er": int(sum(len(s) for s in outcome.association.er_sets)),
                "admissibility_checks": outcome.admissibility_checks,
            }
        else:
            self.assoc = assoc0
        self.assoc.check_partition()

        self.serving = self.assoc.serving_cell.astype(np.intp)
        self.er = self.assoc.is_er()
        self.tier = (self.serving >= M).astype(np.int8)  # 0 macro, 1 small
        self.lam_dl, self.lam_ul = lam_dl, lam_ul

        # membership matrices for frame-boundary sums
        self.member = np.zeros((B, Q))
        self.member[self.serving, np.arange(Q)] = 1.0
        if scheme.small_mode == "dyn_het":
            self.er_member = np.zeros((N, Q))
            er_ues = np.flatnonzero(self.er)
            self.er_member[self.serving[er_ues] - M, er_ues] = 1.0
            self.conn_member = self.member[M:, :]

        # traffic
        events = generate_arrivals(self.source, Q, sim.horizon_subframes, self.seed)
        self.ev_sf = np.array([e.subframe for e in events], dtype=np.int64)
        self.ev_ue = np.array([e.ue for e in events], dtype=np.intp)
        self.ev_dir = np.array([e.direction for e in events], dtype=np.int8)
        self.ev_ptr = 0

        # linear power-weighted gain matrices (mW at the receiver)
        lin = lambda db: 10.0 ** (np.asarray(db) / 10.0)
        p_dl_lin = lin(layout.bs_tx_power_dbm())
        self.p_dl_lin = p_dl_lin
        pl_serving = -gains.ue_to_bs[np.arange(Q), self.serving]
        fpc = ilim.UlPowerParams(
            p0_dbm=sim.fpc_p0_dbm,
            alpha=sim.fpc_alpha,
            pmax_dbm=radio.ue_max_tx_dbm,
            boost_db=sim.ulpb_boost_db if scheme.ulpb else 0.0,
        )
        self.p_ul_dbm = np.array([ilim.ul_tx_power(pl, fpc) for pl in pl_serving])
        p_ul_lin = lin(self.p_ul_dbm)
        self.PG_bu = p_dl_lin[:, None] * lin(gains.bs_to_ue)
        self.PGu_ub = p_ul_lin[:, None] * lin(gains.ue_to_bs)
        self.PG_uu = p_ul_lin[:, None] * lin(gains.ue_to_ue)
        np.fill_diagonal(self.PG_uu, 0.0)
        PG_bb = p_dl_lin[:, None] * lin(gains.bs_to_bs)
        np.fill_diagonal(PG_bb, 0.0)
        self.PG_bb_none = PG_bb

        ic = scheme.ic
        ic = replace(ic, x1_db=sim.x1_db, x2_db=sim.x2_db)
        self.ic = ic
        keep = ~ilim.bs_cancel_mask(ic, gains, edge_rx=False)
        self.PG_bb_eff = PG_bb * keep
        self.uoic = ic.intra == ilim.IntraIcMode.UOIC
        if self.uoic:
            keep_edge = ~ilim.bs_cancel_mask(ic, gains, edge_rx=True)
            self.PG_bb_eff_edge = PG_bb * keep_edge
        if sim.ic_probe:
            boic_ref = ilim.IcPolicy(intra=ilim.IntraIcMode.BOIC, x2_db=sim.x2_db)
            self.PG_bb_probe_boic = PG_bb * ~ilim.bs_cancel_mask(boic_ref, gains, edge_rx=False)

        # edge flags for UE-oriented IC
        self.edge = np.zeros(Q, dtype=bool)
        if self.uoic:
            small_rsrp = rsrp_matrix(gains, layout)[M:, :].T
            for n in range(N):
                members = self.assoc.small_sets[n] + self.assoc.er_sets[n]
                for q in ilim.edge_ue_set(n, members, small_rsrp, ic.x1_db):
                    self.edge[q] = True

        # clusters
        self.clusters = None
        if scheme.cc:
            self.clusters = ilim.cluster_cells(gains, sim.pl_cc_db)
            self.cluster_of = self.clusters.cluster_of
            self.n_clusters = len(self.clusters.clusters)

        # noise
        self.noise_ue = 10.0 ** (radio.noise_dbm("ue") / 10.0)
        self.noise_bs = 10.0 ** (radio.noise_dbm("bs") / 10.0)

        # PF state and rate estimates
        wb = wideband_dl_sinr_matrix(gains, layout)
        sinr_dl_est = 10.0 ** (wb[self.serving, np.arange(Q)] / 10.0)
        sinr_ul_est = self.PGu_ub[np.arange(Q), self.serving] / self.noise_bs
        self.rate_dl_est = _genie_bits_vec(
            sinr_dl_est, radio.bandwidth_hz, sim.se_cap_bpshz, sim.overhead
        ).astype(float) * 1000.0
        self.rate_ul_est = _genie_bits_vec(
            sinr_ul_est, radio.bandwidth_hz, sim.se_cap_bpshz, sim.overhead
        ).astype(float) * 1000.0
        self.avg = [np.full(Q, sim.pf_floor_bps), np.full(Q, sim.pf_floor_bps)]

        # buffers: running totals plus head-of-line packet, rest queued aside
        self.buf_tot = [np.zeros(Q, dtype=np.int64), np.zeros(Q, dtype=np.int64)]
        self.head_rem = [np.zeros(Q, dtype=np.int64), np.zeros(Q, dtype=np.int64)]
        self.head_arr = [np.zeros(Q, dtype=np.int64), np.zeros(Q, dtype=np.int64)]
        self.rest: list[list[list]] = [[[] for _ in range(Q)], [[] for _ in range(Q)]]
        self.retx_bits = [np.zeros(Q, dtype=np.int64), np.zeros(Q, dtype=np.int64)]
        self.retx_att = [np.zeros(Q, dtype=np.int64), np.zeros(Q, dtype=np.int64)]

        self.generated = 0
        self.delivered = 0
        self._last_tb = [np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)]
        self.rec_ue: list[int] = []
        self.rec_dir: list[int] = []
        self.rec_arr: list[int] = []
        self.rec_comp: list[int] = []

        self.rng = np.random.default_rng([self.seed & 0xFFFFFFFFFFFFFFFF, STREAM_HARQ])

        self.counters = {
            "intra_cluster_dl_ul_events": 0,
            "dl_to_ul_cell_pairs": 0,
            "ic_probe_violations": 0,
            "er_dl_in_aligned_violations": 0,
        }
        if self.plan_info:
            self.counters["admissibility_checks"] = self.plan_info["admissibility_checks"]
        self.t_inst_hist = np.zeros(FRAME_LEN + 1, dtype=np.int64)
        self.trace: list[tuple[int, int, str]] | None = [] if sim.trace_schedule else None

        self._setup_roles()
        self.sf = 0

    def _setup_roles(self):
        scheme, M, B, N = self.scheme, self.M, self.B, self.N
        self.roles = np.zeros((B, FRAME_LEN), dtype=np.int8)
        pos = np.arange(FRAME_LEN)

        if scheme.scenario == Scenario.HETNET:
            pattern = (
                het_schedule.macro_frame_pattern(self.frame_plan)
                if scheme.cre_abs
                else het_schedule.MACRO_DL * 7 + het_schedule.MACRO_UL * 3
            )
            self.macro_pattern = pattern
            macro_roles = np.array(
                [
                    {"D": ROLE_DL, "A": ROLE_ABS, "U": ROLE_UL}[c]
                    for c in pattern
                ],
                dtype=np.int8,
            )
            self.roles[:M, :] = macro_roles[None, :]
        else:
            self.macro_pattern = None

        if scheme.small_mode in ("static", "dyn_full"):
            self.cfg_set = build_set(scheme.tdd_set)
            t0 = scheme.static_ul
            self.roles[M:, :] = np.where(pos[None, :] >= FRAME_LEN - t0, ROLE_UL, ROLE_DL)
        else:
            fp = self.frame_plan
            self.cfg_set = planner.build_het_config_set(fp)
            t0 = min(max(scheme.static_ul, 1), fp.f_s_dyn)
            self._het_templates = {}
            for t in range(1, fp.f_s_dyn + 1):
                sched = het_schedule.build_frame_schedule(t, fp, self.macro_pattern)
                self._het_templates[t] = np.array(
                    [
                        {"M": ROLE_ALIGNED_DL, "D": ROLE_DYN_DL, "U": ROLE_UL}[c]
                        for c in sched.roles
                    ],
                    dtype=np.int8,
                )
            self.roles[M:, :] = self._het_templates[t0][None, :]

        self.t_values = np.asarray(self.cfg_set.allowed_ul_counts, dtype=np.int64)
        self.dynamic = scheme.small_mode in ("dyn_full", "dyn_het")
        self._has_het_roles = scheme.small_mode in ("static_het", "dyn_het")
        if self.dynamic:
            self._setup_stat_splits()

    def _setup_stat_splits(self):
        """Idle-state fallback splits; arrival rates are fixed, so these are
        constants of the drop."""
        scheme, M, N = self.scheme, self.M, self.N
        if scheme.small_mode == "dyn_full":
            dl_sums = self.member[M:, :] @ self.lam_dl
            ul_sums = self.member[M:, :] @ self.lam_ul
            if scheme.cc:
                dl_sums = np.bincount(self.cluster_of, weights=dl_sums, minlength=self.n_clusters)
                ul_sums = np.bincount(self.cluster_of, weights=ul_sums, minlength=self.n_clusters)
            self.t_stat = self._argmin_full_frame(dl_sums, ul_sums)
        else:
            self.t_stat = self.outcome.per_cell_t_stat.astype(np.int64)

    def _argmin_full_frame(self, dl_sums, ul_sums):
        t = self.t_values[:, None].astype(float)
        gaps = np.abs(ul_sums[None, :] / t - dl_sums[None, :] / (FRAME_LEN - t))
        return self.t_values[np.argmin(gaps, axis=0)]

    def _argmin_dyn_portion(self, dl_sums, ul_sums):
        f_dyn = self.frame_plan.f_s_dyn
        t = self.t_values[:, None].astype(float)
        slots = f_dyn - t
        d_dl = dl_sums[None, :] / np.maximum(slots, 1.0)
        d_dl[slots[:, 0] == 0, :] = np.where(dl_sums == 0, 0.0, np.inf)
        gaps = np.abs(ul_sums[None, :] / t - d_dl)
        return self.t_values[np.argmin(gaps, axis=0)]

    # -- per-frame reconfiguration --------------------------------------------

    def _reconfigure(self, sf: int):
        scheme, M = self.scheme, self.M
        pos = np.arange(FRAME_LEN)
        if scheme.small_mode == "dyn_full":
            dl_sums = self.member[M:, :] @ self.buf_tot[DL].astype(float)
            ul_sums = self.member[M:, :] @ self.buf_tot[UL].astype(float)
            if scheme.cc:
                dl_sums = np.bincount(self.cluster_of, weights=dl_sums, minlength=self.n_clusters)
                ul_sums = np.bincount(self.cluster_of, weights=ul_sums, minlength=self.n_clusters)
            idle = (dl_sums == 0) & (ul_sums == 0)
            t = np.where(idle, self.t_stat, self._argmin_full_frame(dl_sums, ul_sums))
            if scheme.cc:
                t = t[self.cluster_of]
            self.roles[M:, :] = np.where(
                pos[None, :] >= FRAME_LEN - t[:, None], ROLE_UL, ROLE_DL
            )
        else:
            er_dl = self.er_member @ self.buf_tot[DL].astype(float)
            conn_ul = self.conn_member @ self.buf_tot[UL].astype(float)
            # the dynamic portion is idle when no UL anywhere and no offloaded DL
            idle = (er_dl == 0) & (conn_ul == 0)
            t = np.where(idle, self.t_stat, self._argmin_dyn_portion(er_dl, conn_ul))
            tmpl = np.stack([self._het_templates[k] for k in range(1, self.frame_plan.f_s_dyn + 1)])
            self.roles[M:, :] = tmpl[t - 1]
        np.add.at(self.t_inst_hist, t, 1)
        if self.trace is not None:
            for c in range(self.N):
                chars = "".join(_ROLE_CHAR[r] for r in self.roles[M + c])
                self.trace.append((sf // FRAME_LEN, M + c, chars))

    # -- per-subframe step -----------------------------------------------------

    def step(self):
        sf = self.sf
        sim = self.sim
        Q, M, B = self.Q, self.M, self.B

        # arrivals first so a frame-boundary resplit sees them
        while self.ev_ptr < len(self.ev_sf) and self.ev_sf[self.ev_ptr] == sf:
            q = self.ev_ue[self.ev_ptr]
            d = int(self.ev_dir[self.ev_ptr])
            bits = self.source.packet_bits
            if self.buf_tot[d][q] == 0:
                self.head_rem[d][q] = bits
                self.head_arr[d][q] = sf
            else:
                self.rest[d][q].append([bits, sf])
            self.buf_tot[d][q] += bits
            self.generated += bits
            self.ev_ptr += 1

        if self.dynamic and sf % self.scheme.reconfig_period == 0:
            self._reconfigure(sf)
        elif self.trace is not None and sf % FRAME_LEN == 0:
            for c in range(self.N):
                chars = "".join(_ROLE_CHAR[r] for r in self.roles[M + c])
                self.trace.append((sf // FRAME_LEN, M + c, chars))

        role_cell = self.roles[:, sf % FRAME_LEN]
        ue_role = role_cell[self.serving]

        has_dl = self.buf_tot[DL] > 0
        has_ul = self.buf_tot[UL] > 0
        if self._has_het_roles:
            er_dl_cell = np.zeros(B, dtype=bool)
            er_dl_cell[self.serving[self.er & has_dl]] = True
            elig_dl = has_dl & (
                (ue_role == ROLE_DL)
                | ((ue_role == ROLE_ALIGNED_DL) & ~self.er)
                | ((ue_role == ROLE_DYN_DL) & (self.er | ~er_dl_cell[self.serving]))
            )
        else:
            elig_dl = has_dl & (ue_role == ROLE_DL)
        elig_ul = has_ul & (ue_role == ROLE_UL)

        win_dl_cells, win_dl_ues = self._select(elig_dl, DL)
        win_ul_cells, win_ul_ues = self._select(elig_ul, UL)

        if win_dl_ues.size and self._has_het_roles:
            bad = self.er[win_dl_ues] & (role_cell[win_dl_cells] == ROLE_ALIGNED_DL)
            self.counters["er_dl_in_aligned_violations"] += int(bad.sum())

        n_dl, n_ul = win_dl_cells.size, win_ul_cells.size
        sinr_dl = sinr_ul = None
        if n_dl:
            dl_pvec = np.zeros(B)
            dl_pvec[win_dl_cells] = self.p_dl_lin[win_dl_cells]
            i_bu = dl_pvec @ self.PG_bu           # total DL power at every UE
        if n_ul:
            ul_vec = np.zeros(Q)
            ul_vec[win_ul_ues] = 1.0
            i_ub = ul_vec @ self.PGu_ub           # total UL power at every BS

        if n_dl:
            sig = self.PG_bu[win_dl_cells, win_dl_ues]
            interf = i_bu[win_dl_ues] - sig + self.noise_ue
            if n_ul:
                interf = interf + self.PG_uu[np.ix_(win_ul_ues, win_dl_ues)].sum(axis=0)
            sinr_dl = sig / interf
        if n_ul:
            sig = self.PGu_ub[win_ul_ues, win_ul_cells]
            if n_dl:
                i_bb = dl_pvec @ self.PG_bb_eff
                if self.uoic:
                    i_bb_edge = dl_pvec @ self.PG_bb_eff_edge
                    i_bb = np.where(self.edge[win_ul_ues], i_bb_edge[win_ul_cells], i_bb[win_ul_cells])
                else:
                    i_bb = i_bb[win_ul_cells]
            else:
                i_bb = 0.0
            interf = i_bb + i_ub[win_ul_cells] - sig + self.noise_bs
            sinr_ul = sig / interf
            if sim.ic_probe and n_dl:
                i_none = (dl_pvec @ self.PG_bb_none)[win_ul_cells]
                i_boic = (dl_pvec @ self.PG_bb_probe_boic)[win_ul_cells]
                # full IC removes every BS term: 0 <= boic-residual <= none-residual
                self.counters["ic_probe_violations"] += int(np.sum(i_boic > i_none))

        if n_dl and n_ul:
            self.counters["dl_to_ul_cell_pairs"] += n_dl * n_ul
            if self.clusters is not None:
                dl_small = win_dl_cells[win_dl_cells >= M] - M
                ul_small = win_ul_cells[win_ul_cells >= M] - M
                if dl_small.size and ul_small.size:
                    per_cluster = np.bincount(
                        self.cluster_of[dl_small], minlength=self.n_clusters
                    )
                    self.counters["intra_cluster_dl_ul_events"] += int(
                        per_cluster[self.cluster_of[ul_small]].sum()
                    )

        self._serve(win_dl_ues, sinr_dl, DL, sf)
        self._serve(win_ul_ues, sinr_ul, UL, sf)

        beta = sim.pf_beta
        for d, ues in ((DL, win_dl_ues), (UL, win_ul_ues)):
            avg = self.avg[d]
            avg *= 1.0 - beta
            if ues.size:
                avg[ues] += beta * self._last_tb[d] * 1000.0
            np.maximum(avg, sim.pf_floor_bps, out=avg)

        self.sf += 1

    def _select(self, elig: np.ndarray, d: int):
        """Group argmax of rate/average per serving cell; pending
        retransmissions preempt; ties go to the lowest UE id."""
        if not elig.any():
            return np.empty(0, dtype=np.intp), np.empty(0, dtype=np.intp)
        Q, B = self.Q, self.B
        rate = self.rate_dl_est if d == DL else self.rate_ul_est
        metric = np.where(elig, rate / self.avg[d], -1.0)
        metric[elig & (self.retx_bits[d] > 0)] = np.inf
        groupmax = np.full(B, -1.0)
        np.maximum.at(groupmax, self.serving[elig], metric[elig])
        cand = elig & (metric == groupmax[self.serving])
        win_ue = np.full(B, Q, dtype=np.intp)
        cand_idx = np.flatnonzero(cand)
        np.minimum.at(win_ue, self.serving[cand_idx], cand_idx)
        cells = np.flatnonzero(win_ue < Q)
        return cells, win_ue[cells]

    def _serve(self, ues: np.ndarray, sinr_lin, d: int, sf: int):
        if ues.size == 0:
            self._last_tb[d] = np.zeros(0, dtype=np.int64)
            return
        sim = self.sim
        bits_now = _genie_bits_vec(
            sinr_lin, self.radio.bandwidth_hz, sim.se_cap_bpshz, sim.overhead
        )
        pending = self.retx_bits[d][ues] > 0
        tb = np.where(pending, self.retx_bits[d][ues], np.minimum(bits_now, self.buf_tot[d][ues]))
        attempts = np.where(pending, self.retx_att[d][ues], 0)
        attempt_no = attempts + 1
        forced = attempt_no > sim.harq_max_retx
        draws = self.rng.random(ues.size)
        success = (draws >= sim.harq_fail_prob) | forced
        delivered_tb = np.where(forced, np.minimum(tb, bits_now), tb)
        self._last_tb[d] = tb

        ok = np.flatnonzero(success)
        if ok.size:
            oq = ues[ok]
            amount = np.minimum(delivered_tb[ok], self.buf_tot[d][oq])
            self.buf_tot[d][oq] -= amount
            self.delivered += int(amount.sum())
            self.retx_bits[d][oq] = 0
            self.retx_att[d][oq] = 0
            simple = amount < self.head_rem[d][oq]
            self.head_rem[d][oq] -= np.where(simple, amount, 0)
            for i in np.flatnonzero(~simple):
                self._drain_completions(int(oq[i]), d, int(amount[i]), sf)
        bad = np.flatnonzero(~success)
        if bad.size:
            bq = ues[bad]
            self.retx_bits[d][bq] = tb[bad]
            self.retx_att[d][bq] = attempt_no[bad]

    def _drain_completions(self, q: int, d: int, amount: int, sf: int):
        """Slow path: the drained amount crosses one or more packet boundaries."""
        head = self.head_rem[d]
        while amount >= head[q] and head[q] > 0:
            amount -= int(head[q])
            self.rec_ue.append(q)
            self.rec_dir.append(d)
            self.rec_arr.append(int(self.head_arr[d][q]))
            self.rec_comp.append(sf)
            rest = self.rest[d][q]
            if rest:
                bits, arr = rest.pop(0)
                head[q] = bits
                self.head_arr[d][q] = arr
            else:
                head[q] = 0
        if amount > 0:
            head[q] -= amount

    # -- whole-drop run ---------------------------------------------------------

    def run(self) -> DropStats:
        for _ in range(self.sim.horizon_subframes):
            self.step()
        return self.stats()

    def stats(self) -> DropStats:
        buffered = int(self.buf_tot[DL].sum() + self.buf_tot[UL].sum())
        assert self.generated == self.delivered + buffered, "bit conservation violated"
        rec_ue = np.asarray(self.rec_ue, dtype=np.int64)
        rec_dir = np.asarray(self.rec_dir, dtype=np.int8)
        rec_arr = np.asarray(self.rec_arr, dtype=np.int64)
        rec_comp = np.asarray(self.rec_comp, dtype=np.int64)
        bits = np.full(rec_ue.shape, self.source.packet_bits, dtype=np.int64)
        upt_bps = bits / ((rec_comp - rec_arr + 1) * 1e-3)
        upt = {
            "ue": rec_ue,
            "direction": rec_dir,
            "tier": self.tier[rec_ue] if rec_ue.size else np.zeros(0, dtype=np.int8),
            "er": self.er[rec_ue] if rec_ue.size else np.zeros(0, dtype=bool),
            "bits": bits,
            "arrival": rec_arr,
            "completion": rec_comp,
            "upt_bps": upt_bps,
        }
        return DropStats(
            scheme_id=self.scheme.id,
            scenario=self.scheme.scenario.value,
            seed=self.seed,
            lambda_dl=self.source.lambda_dl,
            horizon=self.sim.horizon_subframes,
            upt=upt,
            generated_bits=self.generated,
            delivered_bits=self.delivered,
            buffered_bits=buffered,
            counters=dict(self.counters),
            t_inst_hist=self.t_inst_hist.copy(),
            plan_info=self.plan_info,
            schedule_trace=self.trace,
        )


def run_drop(
    scheme: SchemeSpec | str,
    seed: int,
    lambda_dl: float,
    sim: SimParams = SimParams(),
    radio: RadioParams = DEFAULT_RADIO,
) -> DropStats:
    """Build a drop (layout, gains, association, plan) and run it to the horizon."""
    if isinstance(scheme, str):
        scheme = get_scheme(scheme)
    layout = generate_layout(scheme.scenario, seed, radio)
    gains = compute_link_gains(layout, seed, radio)
    source = TrafficSource.from_dl_rate(lambda_dl)
    drop = Drop(layout, gains, scheme, seed, source, sim, radio)
    return drop.run()


def export_schedule_trace(trace) -> str:
    lines = ["frame,cell,roles"]
    for frame, cell, roles in trace:
        lines.append(f"{frame},{cell},{roles}")
    return "\n".join(lines) + "\n"
