"""Joint UE cell association and macrocell ABS duty cycle selection.

For every candidate ABS count A the planner rebuilds the association from
the best-RSRP baseline: macro UEs are examined worst-wideband-SINR first
and offered to small cells in descending RSRP order; a UE is offloaded to
the first small cell that would stay less loaded than its macrocell (DL
and UL demand densities, strict) and whose RSRP is within the range
expansion bias. The A minimising the mean per-cell demand density across
both tiers wins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .splitting import argmin_split, _density_pair
from .tdd_config import SetKind, TddConfigSet, build_set
from .topology import Association, LinkGainTable, NetworkLayout, rsrp_matrix, wideband_dl_sinr_matrix

FRAME_LEN = 10


class InfeasiblePlanError(ValueError):
    pass


def _round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


@dataclass(frozen=True)
class FramePlan:
    """Per-frame subframe budget for a given ABS count."""

    abs_count: int
    f_m_dl: int
    f_m_ul: int
    alpha_dl: float
    frame_len: int = FRAME_LEN

    @property
    def f_s_dyn(self) -> int:
        return self.f_m_ul + self.abs_count


def make_frame_plan(abs_count: int, alpha_dl: float, frame_len: int = FRAME_LEN) -> FramePlan:
    """Macro DL/UL/ABS budget; raises when either macro direction would vanish."""
    if not 0 <= abs_count <= frame_len - 1:
        raise InfeasiblePlanError(f"ABS count must lie in [0, {frame_len - 1}]")
    f_m_dl = _round_half_up((frame_len - abs_count) * alpha_dl)
    f_m_ul = frame_len - abs_count - f_m_dl
    if f_m_dl < 1 or f_m_ul < 1:
        raise InfeasiblePlanError(
            f"A={abs_count}: macro split {f_m_dl}/{f_m_ul} leaves a direction empty"
        )
    return FramePlan(abs_count=abs_count, f_m_dl=f_m_dl, f_m_ul=f_m_ul,
                     alpha_dl=alpha_dl, frame_len=frame_len)


def macro_densities(m, assoc, lambda_dl, lambda_ul, plan) -> tuple[float, float]:
    ues = assoc.macro_sets[m]
    return (
        sum(lambda_dl[q] for q in ues) / plan.f_m_dl,
        sum(lambda_ul[q] for q in ues) / plan.f_m_ul,
    )


def macro_densities_minus_candidate(
    m, candidate, assoc, lambda_dl, lambda_ul, plan
) -> tuple[float, float]:
    d_dl, d_ul = macro_densities(m, assoc, lambda_dl, lambda_ul, plan)
    return (
        d_dl - lambda_dl[candidate] / plan.f_m_dl,
        d_ul - lambda_ul[candidate] / plan.f_m_ul,
    )


def smallcell_dl_density_macro_sf(n, assoc, lambda_dl, plan) -> float:
    """DL demand density of a small cell in the macro-DL-aligned subframes.

    Only non-offloaded UEs count: offloaded UEs are never scheduled there.
    """
    return sum(lambda_dl[q] for q in assoc.small_sets[n]) / plan.f_m_dl


def dyn_densities_with_candidate(
    n, candidate, assoc, lambda_dl, lambda_ul, plan, t: int
) -> tuple[float, float]:
    """Demand densities in the dynamic portion for a candidate UL count t.

    The DL side carries offloaded-UE traffic (plus the candidate under
    test); the UL side carries every connected UE plus the candidate.
    """
    num_dl = sum(lambda_dl[q] for q in assoc.er_sets[n])
    num_ul = sum(lambda_ul[q] for q in assoc.small_sets[n]) + sum(
        lambda_ul[q] for q in assoc.er_sets[n]
    )
    if candidate is not None:
        num_dl += lambda_dl[candidate]
        num_ul += lambda_ul[candidate]
    return _density_pair(num_dl, num_ul, t, plan.f_s_dyn)


def t_stat_het(
    n, candidate, assoc, lambda_dl, lambda_ul, plan, cfg_set: TddConfigSet
) -> int:
    num_dl = sum(lambda_dl[q] for q in assoc.er_sets[n])
    num_ul = sum(lambda_ul[q] for q in assoc.small_sets[n]) + sum(
        lambda_ul[q] for q in assoc.er_sets[n]
    )
    if candidate is not None:
        num_dl += lambda_dl[candidate]
        num_ul += lambda_ul[candidate]
    return argmin_split(num_dl, num_ul, cfg_set)


def effective_smallcell_densities(
    n, candidate, assoc, lambda_dl, lambda_ul, plan, cfg_set
) -> tuple[float, float]:
    """Load of the candidate host cell: the DL side is the worse of its two
    DL density components (dynamic-portion vs macro-aligned subframes)."""
    ts = t_stat_het(n, candidate, assoc, lambda_dl, lambda_ul, plan, cfg_set)
    d_dl_dyn, d_ul_dyn = dyn_densities_with_candidate(
        n, candidate, assoc, lambda_dl, lambda_ul, plan, ts
    )
    d_dl_aligned = smallcell_dl_density_macro_sf(n, assoc, lambda_dl, plan)
    return max(d_dl_dyn, d_dl_aligned), d_ul_dyn


def offload_admissible(
    d_s_dl: float,
    d_s_ul: float,
    d_m_dl_prime: float,
    d_m_ul_prime: float,
    rsrp_gap_db: float,
    reb_y_db: float,
) -> bool:
    """All three strict checks: the host stays less loaded than the macro in
    both directions and the candidate is within the range expansion bias."""
    return d_s_dl < d_m_dl_prime and d_s_ul < d_m_ul_prime and rsrp_gap_db < reb_y_db


@dataclass
class PlannerProblem:
    """Everything the A-sweep needs, detached from the full-drop machinery."""

    n_macro: int
    n_small: int
    lambda_dl: np.ndarray          # (Q,)
    lambda_ul: np.ndarray          # (Q,)
    assoc0: Association            # pre-offload, best-RSRP
    macro_rsrp: np.ndarray         # (Q,) serving-macro RSRP, NaN for small-cell UEs
    macro_sinr: np.ndarray         # (Q,) serving-macro wideband DL SINR, NaN likewise
    small_rsrp: np.ndarray         # (Q, N) RSRP towards every small cell

    @classmethod
    def from_drop(
        cls,
        layout: NetworkLayout,
        gains: LinkGainTable,
        assoc0: Association,
        lambda_dl: np.ndarray,
        lambda_ul: np.ndarray,
    ) -> "PlannerProblem":
        r = rsrp_matrix(gains, layout)
        sinr = wideband_dl_sinr_matrix(gains, layout)
        M = layout.n_macro
        q_idx = np.arange(layout.n_ue)
        serving = assoc0.serving_cell
        macro_rsrp = np.full(layout.n_ue, np.nan)
        macro_sinr = np.full(layout.n_ue, np.nan)
        on_macro = serving < M
        macro_rsrp[on_macro] = r[serving[on_macro], q_idx[on_macro]]
        macro_sinr[on_macro] = sinr[serving[on_macro], q_idx[on_macro]]
        return cls(
            n_macro=M,
            n_small=layout.n_small,
            lambda_dl=np.asarray(lambda_dl, dtype=float),
            lambda_ul=np.asarray(lambda_ul, dtype=float),
            assoc0=assoc0,
            macro_rsrp=macro_rsrp,
            macro_sinr=macro_sinr,
            small_rsrp=r[M:, :].T.copy(),
        )


@dataclass(frozen=True)
class AdmissionRecord:
    abs_count: int
    ue: int
    macro: int
    smallcell: int                # local small-cell index
    d_s_dl: float
    d_s_ul: float
    d_m_dl_prime: float
    d_m_ul_prime: float
    rsrp_gap_db: float
    reb_y_db: float


@dataclass
class PlanOutcome:
    a_opt: int
    plan: FramePlan
    association: Association               # at a_opt, offload sets filled
    per_cell_t_stat: np.ndarray            # (N,) split at a_opt with no extra candidate
    objective_per_a: dict[int, float]
    feasible_a: list[int]
    associations_per_a: dict[int, Association]
    admissions_per_a: dict[int, list[AdmissionRecord]]
    admissibility_checks: int = 0


def _pass_for_a(problem: PlannerProblem, plan: FramePlan, reb_y_db: float, sorted_small: np.ndarray):
    """One association pass for a fixed A. Returns the final association,
    admission records, the objective value and per-cell stat splits."""
    M, N = problem.n_macro, problem.n_small
    lam_dl, lam_ul = problem.lambda_dl, problem.lambda_ul
    f_dyn = plan.f_s_dyn
    assoc = problem.assoc0.copy()
    admissions: list[AdmissionRecord] = []
    checks = 0

    s_dl_sum = np.array([sum(lam_dl[q] for q in assoc.small_sets[n]) for n in range(N)])
    s_ul_sum = np.array([sum(lam_ul[q] for q in assoc.small_sets[n]) for n in range(N)])
    er_dl_sum = np.zeros(N)
    er_ul_sum = np.zeros(N)
    d_aligned = s_dl_sum / plan.f_m_dl

    t_grid = np.arange(1, f_dyn + 1, dtype=float)[:, None]  # ascending: argmin ties pick smallest
    dl_slots = f_dyn - t_grid

    def small_tier_eval(extra_dl: float, extra_ul: float):
        """Vector over all small cells: stat split plus effective densities,
        with an optional candidate contribution added everywhere."""
        num_dl = er_dl_sum + extra_dl
        num_ul = s_ul_sum + er_ul_sum + extra_ul
        d_dl = num_dl[None, :] / np.maximum(dl_slots, 1.0)
        # t = f_s_dyn leaves no DL slot: 0/0 := 0, otherwise unservable
        d_dl[dl_slots[:, 0] == 0, :] = np.where(num_dl == 0, 0.0, np.inf)
        d_ul = num_ul[None, :] / t_grid
        gaps = np.abs(d_ul - d_dl)
        pick = np.argmin(gaps, axis=0)
        cols = np.arange(N)
        t_stat = (pick + 1).astype(int)
        d_s_dl = np.maximum(d_dl[pick, cols], d_aligned)
        d_s_ul = d_ul[pick, cols]
        return t_stat, d_s_dl, d_s_ul

    macro_dl = np.array([sum(lam_dl[q] for q in assoc.macro_sets[m]) for m in range(M)])
    macro_ul = np.array([sum(lam_ul[q] for q in assoc.macro_sets[m]) for m in range(M)])

    for m in range(M):
        members = np.array(assoc.macro_sets[m], dtype=int)
        if members.size == 0:
            continue
        order = np.lexsort((members, problem.macro_sinr[members]))
        for q in members[order]:
            d_dl_prime = (macro_dl[m] - lam_dl[q]) / plan.f_m_dl
            d_ul_prime = (macro_ul[m] - lam_ul[q]) / plan.f_m_ul
            t_stat, d_s_dl, d_s_ul = small_tier_eval(lam_dl[q], lam_ul[q])
            gap = problem.macro_rsrp[q] - problem.small_rsrp[q]
            ok = (d_s_dl < d_dl_prime) & (d_s_ul < d_ul_prime) & (gap < reb_y_db)
            checks += N
            ranked = sorted_small[q]
            hits = ok[ranked]
            if not hits.any():
                continue
            n = int(ranked[np.argmax(hits)])
            assoc.er_sets[n].append(int(q))
            assoc.macro_sets[m].remove(int(q))
            assoc.serving_cell[q] = M + n
            er_dl_sum[n] += lam_dl[q]
            er_ul_sum[n] += lam_ul[q]
            macro_dl[m] -= lam_dl[q]
            macro_ul[m] -= lam_ul[q]
            admissions.append(
                AdmissionRecord(
                    abs_count=plan.abs_count, ue=int(q), macro=m, smallcell=n,
                    d_s_dl=float(d_s_dl[n]), d_s_ul=float(d_s_ul[n]),
                    d_m_dl_prime=float(d_dl_prime), d_m_ul_prime=float(d_ul_prime),
                    rsrp_gap_db=float(gap[n]), reb_y_db=reb_y_db,
                )
            )

    # pass-end objective over every cell of both tiers
    t_stat, d_s_dl, d_s_ul = small_tier_eval(0.0, 0.0)
    d_macro = (macro_dl / plan.f_m_dl + macro_ul / plan.f_m_ul) / 2.0
    d_small = (d_s_dl + d_s_ul) / 2.0
    objective = float((d_macro.sum() + d_small.sum()) / (M + N))
    return assoc, admissions, objective, t_stat, checks


def plan(
    problem: PlannerProblem,
    alpha_dl: float = 0.625,
    reb_y_db: float = 9.0,
    frame_len: int = FRAME_LEN,
) -> PlanOutcome:
    """Exhaustive A-sweep; smallest A wins ties of the tier-load objective."""
    N = problem.n_small
    # per-UE host order: descending RSRP, ties towards the lower cell id
    sorted_small = np.lexsort(
        (np.broadcast_to(np.arange(N), problem.small_rsrp.shape), -problem.small_rsrp), axis=1
    )

    objective_per_a: dict[int, float] = {}
    associations: dict[int, Association] = {}
    admissions: dict[int, list[AdmissionRecord]] = {}
    t_stats: dict[int, np.ndarray] = {}
    plans: dict[int, FramePlan] = {}
    feasible: list[int] = []
    total_checks = 0

    for a in range(frame_len):
        try:
            fp = make_frame_plan(a, alpha_dl, frame_len)
        except InfeasiblePlanError:
            continue
        assoc, adm, obj, t_stat, checks = _pass_for_a(problem, fp, reb_y_db, sorted_small)
        feasible.append(a)
        plans[a] = fp
        objective_per_a[a] = obj
        associations[a] = assoc
        admissions[a] = adm
        t_stats[a] = t_stat
        total_checks += checks

    if not feasible:
        raise InfeasiblePlanError("no ABS count yields a usable macro DL/UL split")

    a_opt = feasible[0]
    for a in feasible[1:]:
        if objective_per_a[a] < objective_per_a[a_opt]:
            a_opt = a

    out = PlanOutcome(
        a_opt=a_opt,
        plan=plans[a_opt],
        association=associations[a_opt],
        per_cell_t_stat=t_stats[a_opt],
        objective_per_a=objective_per_a,
        feasible_a=feasible,
        associations_per_a=associations,
        admissions_per_a=admissions,
        admissibility_checks=total_checks,
    )
    out.association.check_partition()
    return out


def build_het_config_set(plan: FramePlan) -> TddConfigSet:
    return build_set(SetKind.HET, f_dyn=plan.f_s_dyn)


def export_plan_report(outcome: PlanOutcome) -> str:
    """CSV report of the A-sweep plus the chosen association."""
    lines = ["A,objective,feasible"]
    for a in range(outcome.plan.frame_len):
        if a in outcome.objective_per_a:
            lines.append(f"{a},{outcome.objective_per_a[a]!r},1")
        else:
            lines.append(f"{a},,0")
    lines.append("ue,serving_cell,is_er")
    er = outcome.association.is_er()
    for q, c in enumerate(outcome.association.serving_cell):
        lines.append(f"{q},{int(c)},{int(er[q])}")
    return "\n".join(lines) + "\n"
