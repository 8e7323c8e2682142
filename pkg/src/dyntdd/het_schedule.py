"""Per-frame small-cell scheduling in the HetNet: which subframes a small
cell spends on aligned DL, dynamic DL and dynamic UL, and who may be
scheduled in each.

Small cells transmit DL only while the macrocells do; the remaining
(macro UL and ABS aligned) subframes form the dynamic portion that is
re-split every frame from live buffers. Offloaded-UE DL rides the dynamic
DL subframes exclusively; everyone's UL rides the dynamic UL subframes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .planner import FramePlan, t_stat_het
from .splitting import argmin_split, _density_pair
from .tdd_config import TddConfigSet

# small-cell subframe roles
ALIGNED_DL = "M"    # overlaps macro DL: non-offloaded DL only
DYN_DL = "D"        # dynamic DL: offloaded-UE DL first
DYN_UL = "U"        # dynamic UL: all connected UEs

# macro subframe roles
MACRO_DL = "D"
MACRO_ABS = "A"
MACRO_UL = "U"


def macro_frame_pattern(plan: FramePlan) -> str:
    """Network-wide macro pattern: DL block, then ABS block, then UL block."""
    return MACRO_DL * plan.f_m_dl + MACRO_ABS * plan.abs_count + MACRO_UL * plan.f_m_ul


@dataclass(frozen=True)
class SmallCellFrameSchedule:
    roles: str          # length-T string of ALIGNED_DL / DYN_DL / DYN_UL
    t_inst: int

    def count(self, role: str) -> int:
        return self.roles.count(role)


def inst_dyn_densities(
    n, assoc, buf_dl: Sequence[int], buf_ul: Sequence[int], plan: FramePlan, t: int
) -> tuple[float, float]:
    """Buffer-volume densities of the dynamic portion for a UL count t."""
    num_dl = float(sum(buf_dl[q] for q in assoc.er_sets[n]))
    num_ul = float(
        sum(buf_ul[q] for q in assoc.small_sets[n]) + sum(buf_ul[q] for q in assoc.er_sets[n])
    )
    return _density_pair(num_dl, num_ul, t, plan.f_s_dyn)


def t_inst_het(
    n,
    assoc,
    lambda_dl: Sequence[float],
    lambda_ul: Sequence[float],
    buf_dl: Sequence[int],
    buf_ul: Sequence[int],
    plan: FramePlan,
    cfg_set: TddConfigSet,
) -> int:
    """Per-frame UL count for a HetNet small cell from live buffers.

    When nothing the dynamic portion serves is pending (no UL anywhere,
    no offloaded-UE DL), the statistical split takes over.
    """
    num_dl = sum(buf_dl[q] for q in assoc.er_sets[n])
    num_ul = sum(buf_ul[q] for q in assoc.small_sets[n]) + sum(
        buf_ul[q] for q in assoc.er_sets[n]
    )
    if num_dl == 0 and num_ul == 0:
        return t_stat_het(n, None, assoc, lambda_dl, lambda_ul, plan, cfg_set)
    return argmin_split(float(num_dl), float(num_ul), cfg_set)


def build_frame_schedule(t_inst: int, plan: FramePlan, macro_pattern: str | None = None) -> SmallCellFrameSchedule:
    """Subframe roles for one frame: macro-DL positions become aligned DL;
    the last t_inst dynamic positions (frame order) become dynamic UL."""
    pattern = macro_pattern or macro_frame_pattern(plan)
    if len(pattern) != plan.frame_len:
        raise ValueError("macro pattern length must equal the frame length")
    if not 1 <= t_inst <= plan.f_s_dyn:
        raise ValueError(f"UL count {t_inst} outside [1, {plan.f_s_dyn}]")
    dyn_positions = [i for i, r in enumerate(pattern) if r != MACRO_DL]
    ul_positions = set(dyn_positions[-t_inst:])
    roles = []
    for i, r in enumerate(pattern):
        if r == MACRO_DL:
            roles.append(ALIGNED_DL)
        elif i in ul_positions:
            roles.append(DYN_UL)
        else:
            roles.append(DYN_DL)
    return SmallCellFrameSchedule(roles="".join(roles), t_inst=t_inst)
