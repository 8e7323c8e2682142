"""Inter-link interference mitigation: cell clustering, UL power boosting,
and full/partial cancellation of BS-to-BS interference at UL receivers.

Cancellation only ever applies to the DL-to-UL direction (a BS removing a
neighbouring BS's DL signal from its UL interference sum); UE-to-UE and
UL-to-DL interference is never cancelled.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .topology import LinkGainTable


@dataclass(frozen=True)
class ClusterSet:
    clusters: tuple[tuple[int, ...], ...]   # partition of local small-cell ids
    cluster_of: np.ndarray                  # (N,) cluster index per cell
    threshold_db: float


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, u):
        while self.parent[u] != u:
            self.parent[u] = self.parent[self.parent[u]]
            u = self.parent[u]
        return u

    def union(self, u, v):
        ru, rv = self.find(u), self.find(v)
        if ru != rv:
            self.parent[max(ru, rv)] = min(ru, rv)


def sbs_loss_matrix(gains: LinkGainTable) -> np.ndarray:
    """Coupling loss (propagation loss, antenna-independent) between small cells."""
    M = gains.n_macro
    return gains.bs_to_bs_loss_db[M:, M:]


def cluster_cells(gains: LinkGainTable, threshold_db: float) -> ClusterSet:
    """Transitive closure of the `coupling loss < threshold` relation."""
    loss = sbs_loss_matrix(gains)
    n = loss.shape[0]
    uf = _UnionFind(n)
    ii, jj = np.nonzero(loss < threshold_db)
    for i, j in zip(ii, jj):
        if i < j:
            uf.union(int(i), int(j))
    roots = [uf.find(i) for i in range(n)]
    order = sorted(set(roots))
    index = {r: k for k, r in enumerate(order)}
    cluster_of = np.array([index[r] for r in roots], dtype=int)
    clusters = tuple(
        tuple(int(i) for i in np.flatnonzero(cluster_of == k)) for k in range(len(order))
    )
    return ClusterSet(clusters=clusters, cluster_of=cluster_of, threshold_db=threshold_db)


@dataclass(frozen=True)
class UlPowerParams:
    """Fractional path-loss compensation power control with an optional boost."""

    p0_dbm: float = -66.0
    alpha: float = 0.8
    pmax_dbm: float = 23.0
    boost_db: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("compensation fraction must lie in [0, 1]")
        if self.boost_db < 0.0:
            raise ValueError("power boost cannot be negative")


def ul_tx_power(pl_to_serving_db: float, params: UlPowerParams) -> float:
    return min(params.pmax_dbm, params.p0_dbm + params.alpha * pl_to_serving_db + params.boost_db)


class IntraIcMode(str, Enum):
    NONE = "none"
    FULL = "full"
    UOIC = "uoic"      # only cell-edge UEs' uplinks get (full) cancellation
    BOIC = "boic"      # only close-by interfering BSs are cancelled


@dataclass(frozen=True)
class IcPolicy:
    """What a BS may cancel while receiving UL.

    `intra` governs small-cell interferers at small-cell receivers;
    `inter_tier` additionally cancels cross-tier BS interference
    (small-cell DL at macro UL receivers and vice versa).
    """

    intra: IntraIcMode = IntraIcMode.NONE
    inter_tier: bool = False
    x1_db: float = 9.0
    x2_db: float = 120.0

    @property
    def any_ic(self) -> bool:
        return self.inter_tier or self.intra != IntraIcMode.NONE


def edge_ue_set(cell: int, members, small_rsrp: np.ndarray, x1_db: float) -> set[int]:
    """UEs of a small cell whose strongest neighbour RSRP comes within x1 dB
    of (or exceeds) the serving RSRP; they qualify for UE-oriented IC."""
    out = set()
    for q in members:
        row = small_rsrp[q]
        own = row[cell]
        best_other = np.max(np.delete(row, cell)) if row.size > 1 else -np.inf
        if best_other > own - x1_db:
            out.add(int(q))
    return out


def boic_set(cell: int, gains: LinkGainTable, x2_db: float) -> set[int]:
    """Neighbouring small cells whose coupling loss to `cell` is below x2 dB."""
    loss = sbs_loss_matrix(gains)[:, cell]
    close = np.flatnonzero(loss < x2_db)
    return {int(m) for m in close if m != cell}


def cancelled_power(
    policy: IcPolicy,
    receiver: int,
    rx_ue_is_edge: bool,
    interferer: int,
    gains: LinkGainTable,
) -> bool:
    """Whether the interferer BS's DL power is removed at a BS UL reception.

    Cell ids are global (macros first). The serving BS itself is never an
    interferer, so it is never part of any cancelled set.
    """
    if interferer == receiver:
        return False
    M = gains.n_macro
    rx_macro = receiver < M
    tx_macro = interferer < M
    if rx_macro != tx_macro:
        return policy.inter_tier
    if rx_macro and tx_macro:
        return False
    # small-cell interferer at a small-cell receiver
    if policy.intra == IntraIcMode.FULL:
        return True
    if policy.intra == IntraIcMode.UOIC:
        return rx_ue_is_edge
    if policy.intra == IntraIcMode.BOIC:
        return (interferer - M) in boic_set(receiver - M, gains, policy.x2_db)
    return False


def bs_cancel_mask(policy: IcPolicy, gains: LinkGainTable, edge_rx: bool) -> np.ndarray:
    """(B, B) boolean: True where interferer row b is cancelled at receiver
    column c, assuming the received uplink's UE edge status `edge_rx`."""
    B = gains.bs_to_bs.shape[0]
    M = gains.n_macro
    mask = np.zeros((B, B), dtype=bool)
    tier = np.arange(B) < M
    cross = tier[:, None] != tier[None, :]
    if policy.inter_tier:
        mask |= cross
    small_pair = ~tier[:, None] & ~tier[None, :]
    if policy.intra == IntraIcMode.FULL:
        mask |= small_pair
    elif policy.intra == IntraIcMode.UOIC and edge_rx:
        mask |= small_pair
    elif policy.intra == IntraIcMode.BOIC:
        close = sbs_loss_matrix(gains) < policy.x2_db
        mask[M:, M:] |= close
    np.fill_diagonal(mask, False)
    return mask
