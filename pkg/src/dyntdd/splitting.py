"""Per-cell DL/UL subframe splitting for homogeneous small-cell networks.

A cell (or a cluster of cells) balances its DL and UL traffic demand
densities: traffic volume divided by the number of subframes available to
serve it. The split is chosen as the UL subframe count that minimises the
density gap, from average rates when the cell is idle and from live buffer
volumes otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

from .tdd_config import TddConfigSet


class DensityBasis(str, Enum):
    AVERAGE = "average"          # packets per second per subframe slot
    INSTANTANEOUS = "instantaneous"  # buffered bits per subframe slot


@dataclass(frozen=True)
class DensityReport:
    d_dl: float
    d_ul: float
    basis: DensityBasis


def _density_pair(num_dl: float, num_ul: float, t: int, span: int) -> tuple[float, float]:
    """Densities for a split with t UL subframes out of `span`.

    The DL denominator span - t may be zero in the HetNet dynamic portion;
    the convention there is 0/0 := 0 and x/0 := +inf for x > 0.
    """
    dl_slots = span - t
    if dl_slots > 0:
        d_dl = num_dl / dl_slots
    else:
        d_dl = 0.0 if num_dl == 0 else math.inf
    return d_dl, num_ul / t


def split_gap(num_dl: float, num_ul: float, t: int, span: int) -> float:
    d_dl, d_ul = _density_pair(num_dl, num_ul, t, span)
    return abs(d_ul - d_dl)


def argmin_split(num_dl: float, num_ul: float, cfg_set: TddConfigSet) -> int:
    """UL count minimising the density gap; ties resolve to the smallest count."""
    best_t = None
    best_gap = math.inf
    for cfg in cfg_set:            # configs are sorted by ascending UL count
        gap = split_gap(num_dl, num_ul, cfg.ul, cfg_set.span)
        if best_t is None or gap < best_gap:
            best_t, best_gap = cfg.ul, gap
    return best_t


def avg_densities(
    ues: Iterable[int],
    lambda_dl: Sequence[float],
    lambda_ul: Sequence[float],
    t: int,
    frame_len: int = 10,
) -> DensityReport:
    """Average demand densities of a cell for a candidate UL count t."""
    ues = list(ues)
    d_dl, d_ul = _density_pair(
        sum(lambda_dl[q] for q in ues), sum(lambda_ul[q] for q in ues), t, frame_len
    )
    return DensityReport(d_dl=d_dl, d_ul=d_ul, basis=DensityBasis.AVERAGE)


def inst_densities(
    ues: Iterable[int],
    buf_dl: Sequence[int],
    buf_ul: Sequence[int],
    t: int,
    frame_len: int = 10,
) -> DensityReport:
    """Instantaneous demand densities (buffer volumes) for a candidate UL count t."""
    ues = list(ues)
    d_dl, d_ul = _density_pair(
        float(sum(buf_dl[q] for q in ues)), float(sum(buf_ul[q] for q in ues)), t, frame_len
    )
    return DensityReport(d_dl=d_dl, d_ul=d_ul, basis=DensityBasis.INSTANTANEOUS)


def t_stat_homo(
    ues: Iterable[int],
    lambda_dl: Sequence[float],
    lambda_ul: Sequence[float],
    cfg_set: TddConfigSet,
) -> int:
    """Statistically optimal UL subframe count from average arrival rates."""
    ues = list(ues)
    return argmin_split(
        sum(lambda_dl[q] for q in ues), sum(lambda_ul[q] for q in ues), cfg_set
    )


def t_inst_homo(
    ues: Iterable[int],
    lambda_dl: Sequence[float],
    lambda_ul: Sequence[float],
    buf_dl: Sequence[int],
    buf_ul: Sequence[int],
    cfg_set: TddConfigSet,
) -> int:
    """Per-frame UL subframe count from live buffers.

    A completely idle cell (all DL and UL buffers zero) falls back to the
    statistical split so it stands ready for the upcoming traffic.
    """
    ues = list(ues)
    sum_dl = sum(buf_dl[q] for q in ues)
    sum_ul = sum(buf_ul[q] for q in ues)
    if sum_dl == 0 and sum_ul == 0:
        return t_stat_homo(ues, lambda_dl, lambda_ul, cfg_set)
    return argmin_split(float(sum_dl), float(sum_ul), cfg_set)


def t_inst_cluster(
    cells_ues: Sequence[Iterable[int]],
    lambda_dl: Sequence[float],
    lambda_ul: Sequence[float],
    buf_dl: Sequence[int],
    buf_ul: Sequence[int],
    cfg_set: TddConfigSet,
) -> int:
    """Cluster-wide split: the per-cell sums are aggregated over the cluster
    and every member cell adopts the same result."""
    merged: list[int] = []
    for ues in cells_ues:
        merged.extend(ues)
    return t_inst_homo(merged, lambda_dl, lambda_ul, buf_dl, buf_ul, cfg_set)
