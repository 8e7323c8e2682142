"""Network layouts, link gains and UE association.

Builds the two deployment scenarios (homogeneous small-cell network and
macro + small-cell HetNet) on a 7-site tri-sector hexagonal grid with
wrap-around, computes pairwise channel gains for every link class
(BS-to-UE, UE-to-BS, BS-to-BS, UE-to-UE), and derives RSRP, wideband DL
SINR and the best-RSRP association from them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

SUBFRAME_S = 1e-3
FRAME_LEN = 10

# rng sub-stream ids; every consumer seeds as default_rng([seed, stream])
STREAM_LAYOUT = 0
STREAM_SHADOWING = 1
STREAM_TRAFFIC = 2
STREAM_HARQ = 3


class Scenario(str, Enum):
    HOMSCN = "homscn"
    HETNET = "hetnet"


class LayoutError(RuntimeError):
    """Raised when a deployment constraint cannot be met after bounded retries."""


@dataclass(frozen=True)
class RadioParams:
    """Radio constants: powers, antenna gains, noise, drop constraints."""

    isd_m: float = 500.0
    macro_tx_dbm: float = 46.0
    pico_tx_dbm: float = 30.0
    ue_max_tx_dbm: float = 23.0
    macro_ant_gain_db: float = 14.0
    pico_ant_gain_db: float = 5.0
    ue_ant_gain_db: float = 0.0
    bs_noise_figure_db: float = 5.0
    ue_noise_figure_db: float = 9.0
    bandwidth_hz: float = 10e6
    thermal_noise_dbm_hz: float = -174.0
    shadow_sigma_macro_db: float = 10.0
    shadow_sigma_pico_db: float = 6.0
    min_sbs_mbs_m: float = 75.0
    min_sbs_sbs_m: float = 40.0
    min_ue_pico_m: float = 10.0
    min_ue_macro_m: float = 35.0
    smallcell_radius_m: float = 40.0
    smallcells_per_macro_area: int = 4
    ues_per_smallcell_homscn: int = 10
    ues_per_macrocell_hetnet: int = 10
    ues_per_smallcell_hetnet: int = 5

    def noise_dbm(self, receiver: str) -> float:
        nf = self.bs_noise_figure_db if receiver == "bs" else self.ue_noise_figure_db
        return self.thermal_noise_dbm_hz + 10.0 * math.log10(self.bandwidth_hz) + nf


DEFAULT_RADIO = RadioParams()


class PathLossKind(str, Enum):
    MACRO_TO_UE = "macro_to_ue"
    PICO_TO_UE = "pico_to_ue"
    BS_TO_BS = "bs_to_bs"
    UE_TO_UE = "ue_to_ue"


def path_loss(kind: PathLossKind, distance_m) -> np.ndarray | float:
    """Distance-dependent path loss in dB. Distances below 1 m are clamped.

    Macro links follow 128.1 + 37.6 log10(d_km); pico-class links follow
    140.7 + 36.7 log10(d_km). BS-to-BS additionally gets a -5 dB LOS bonus
    below 100 m (small-cell pairs sit at similar heights).
    """
    d_km = np.maximum(np.asarray(distance_m, dtype=float), 1.0) / 1000.0
    if kind == PathLossKind.MACRO_TO_UE:
        pl = 128.1 + 37.6 * np.log10(d_km)
    else:
        pl = 140.7 + 36.7 * np.log10(d_km)
        if kind == PathLossKind.BS_TO_BS:
            pl = pl - 5.0 * (d_km < 0.1)
    if np.ndim(distance_m) == 0:
        return float(pl)
    return pl


@dataclass(frozen=True)
class Macrocell:
    site: int
    azimuth_deg: float
    tx_power_dbm: float


@dataclass(frozen=True)
class SmallCell:
    x: float
    y: float
    tx_power_dbm: float


@dataclass(frozen=True)
class Ue:
    x: float
    y: float
    max_tx_power_dbm: float


@dataclass
class NetworkLayout:
    """Immutable deployment snapshot: sites, cells and terminals.

    Cells carry a single global index space: macrocells first
    (0 .. n_macro-1), small cells after (n_macro .. n_macro+n_small-1).
    """

    scenario: Scenario
    seed: int
    isd_m: float
    sites: np.ndarray                      # (S, 2) meters
    macrocells: list[Macrocell]
    smallcells: list[SmallCell]
    ues: list[Ue]
    params: RadioParams = field(default_factory=RadioParams)

    @property
    def n_macro(self) -> int:
        return len(self.macrocells)

    @property
    def n_small(self) -> int:
        return len(self.smallcells)

    @property
    def n_cells(self) -> int:
        return self.n_macro + self.n_small

    @property
    def n_ue(self) -> int:
        return len(self.ues)

    def bs_positions(self) -> np.ndarray:
        pos = [self.sites[m.site] for m in self.macrocells]
        pos += [(c.x, c.y) for c in self.smallcells]
        return np.asarray(pos, dtype=float).reshape(self.n_cells, 2)

    def ue_positions(self) -> np.ndarray:
        return np.asarray([(u.x, u.y) for u in self.ues], dtype=float).reshape(self.n_ue, 2)

    def bs_tx_power_dbm(self) -> np.ndarray:
        return np.asarray(
            [m.tx_power_dbm for m in self.macrocells]
            + [c.tx_power_dbm for c in self.smallcells]
        )

    def is_macro(self) -> np.ndarray:
        return np.arange(self.n_cells) < self.n_macro

    def wrap_offsets(self) -> np.ndarray:
        return wrap_offsets(self.isd_m)


def wrap_offsets(isd_m: float) -> np.ndarray:
    """The 7 displacement vectors of the hexagonal wrap-around (identity + 6 mirrors)."""
    base = isd_m * np.array([2.5, math.sqrt(3.0) / 2.0])
    offs = [np.zeros(2)]
    for k in range(6):
        a = k * math.pi / 3.0
        rot = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
        offs.append(rot @ base)
    return np.asarray(offs)


def wrap_distance(p, q, offsets: np.ndarray) -> float:
    d = np.asarray(p, dtype=float) - np.asarray(q, dtype=float)
    return float(np.min(np.hypot(d[0] + offsets[:, 0], d[1] + offsets[:, 1])))


def wrap_distance_matrix(a: np.ndarray, b: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Minimum-over-mirrors distance between every row of `a` and of `b`."""
    dx = a[:, None, 0] - b[None, :, 0]
    dy = a[:, None, 1] - b[None, :, 1]
    best = None
    for ox, oy in offsets:
        d = np.hypot(dx + ox, dy + oy)
        best = d if best is None else np.minimum(best, d)
    return best


def _site_positions(isd_m: float) -> np.ndarray:
    pts = [np.zeros(2)]
    for k in range(6):
        a = k * math.pi / 3.0
        pts.append(isd_m * np.array([math.cos(a), math.sin(a)]))
    return np.asarray(pts)


def _in_fundamental_region(pts: np.ndarray, sites: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """True where the nearest real site is at least as close as every mirror copy."""
    plain = np.min(
        np.hypot(pts[:, None, 0] - sites[None, :, 0], pts[:, None, 1] - sites[None, :, 1]),
        axis=1,
    )
    wrapped = np.min(wrap_distance_matrix(pts, sites, offsets), axis=1)
    return plain <= wrapped + 1e-9


def _sector_index(delta: np.ndarray) -> np.ndarray:
    # sector boresights at 0/120/240 deg, each covering +-60 deg
    ang = np.degrees(np.arctan2(delta[:, 1], delta[:, 0])) % 360.0
    return (((ang + 60.0) % 360.0) // 120.0).astype(int)


_MAX_DRAW_ROUNDS = 400
_BATCH = 256


def _sample_in_macro_area(
    rng, site_xy, sector, sites, offsets, accept_extra, what: str
) -> np.ndarray:
    """Rejection-sample one point uniform over a site's sector area.

    `accept_extra` applies the scenario-specific minimum-distance rules.
    """
    # circumradius of the site hexagon; candidate disc must cover the sector
    hex_r = np.linalg.norm(sites[1] - sites[0]) / math.sqrt(3.0) if len(sites) > 1 else 300.0
    for _ in range(_MAX_DRAW_ROUNDS):
        r = hex_r * np.sqrt(rng.random(_BATCH))
        th = 2.0 * math.pi * rng.random(_BATCH)
        pts = site_xy + np.column_stack([r * np.cos(th), r * np.sin(th)])
        ok = _in_fundamental_region(pts, sites, offsets)
        near = np.min(wrap_distance_matrix(pts, sites, offsets), axis=1)
        own = wrap_distance_matrix(pts, site_xy[None, :], offsets)[:, 0]
        ok &= np.abs(near - own) < 1e-9          # closest site is this one
        ok &= _sector_index(pts - site_xy) == sector
        ok &= accept_extra(pts)
        if ok.any():
            return pts[np.argmax(ok)]
    raise LayoutError(f"could not place {what}: sector area constraints unsatisfied")


def _sample_in_disc(rng, center_xy, radius, accept_extra, what: str) -> np.ndarray:
    for _ in range(_MAX_DRAW_ROUNDS):
        r = radius * np.sqrt(rng.random(_BATCH))
        th = 2.0 * math.pi * rng.random(_BATCH)
        pts = center_xy + np.column_stack([r * np.cos(th), r * np.sin(th)])
        ok = accept_extra(pts)
        if ok.any():
            return pts[np.argmax(ok)]
    raise LayoutError(f"could not place {what}: disc drop constraints unsatisfied")


def generate_layout(
    scenario: Scenario | str,
    seed: int,
    params: RadioParams = DEFAULT_RADIO,
) -> NetworkLayout:
    """Deterministic random deployment for the given scenario and seed."""
    scenario = Scenario(scenario)
    rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, STREAM_LAYOUT])
    p = params
    sites = _site_positions(p.isd_m)
    offsets = wrap_offsets(p.isd_m)

    macrocells = []
    if scenario == Scenario.HETNET:
        for s in range(len(sites)):
            for az in (0.0, 120.0, 240.0):
                macrocells.append(Macrocell(site=s, azimuth_deg=az, tx_power_dbm=p.macro_tx_dbm))

    smallcells: list[SmallCell] = []
    placed: list[np.ndarray] = []
    for s in range(len(sites)):
        for sector in range(3):
            for _ in range(p.smallcells_per_macro_area):

                def ok_sbs(pts):
                    d_site = np.min(wrap_distance_matrix(pts, sites, offsets), axis=1)
                    good = d_site >= p.min_sbs_mbs_m
                    if placed:
                        d_sbs = np.min(
                            wrap_distance_matrix(pts, np.asarray(placed), offsets), axis=1
                        )
                        good &= d_sbs >= p.min_sbs_sbs_m
                    return good

                xy = _sample_in_macro_area(
                    rng, sites[s], sector, sites, offsets, ok_sbs, "small cell"
                )
                placed.append(xy)
                smallcells.append(SmallCell(x=xy[0], y=xy[1], tx_power_dbm=p.pico_tx_dbm))
    sbs_xy = np.asarray(placed)

    def ok_ue(pts):
        good = _in_fundamental_region(pts, sites, offsets)
        d_sbs = np.min(wrap_distance_matrix(pts, sbs_xy, offsets), axis=1)
        good &= d_sbs >= p.min_ue_pico_m
        if scenario == Scenario.HETNET:
            d_site = np.min(wrap_distance_matrix(pts, sites, offsets), axis=1)
            good &= d_site >= p.min_ue_macro_m
        return good

    ues: list[Ue] = []
    if scenario == Scenario.HETNET:
        for m in macrocells:
            sector = int(m.azimuth_deg // 120.0)
            for _ in range(p.ues_per_macrocell_hetnet):
                xy = _sample_in_macro_area(
                    rng, sites[m.site], sector, sites, offsets, ok_ue, "macro UE"
                )
                ues.append(Ue(x=xy[0], y=xy[1], max_tx_power_dbm=p.ue_max_tx_dbm))
    per_cell = (
        p.ues_per_smallcell_homscn if scenario == Scenario.HOMSCN else p.ues_per_smallcell_hetnet
    )
    for c in smallcells:
        for _ in range(per_cell):
            xy = _sample_in_disc(
                rng, np.array([c.x, c.y]), p.smallcell_radius_m, ok_ue, "small cell UE"
            )
            ues.append(Ue(x=xy[0], y=xy[1], max_tx_power_dbm=p.ue_max_tx_dbm))

    return NetworkLayout(
        scenario=scenario,
        seed=seed,
        isd_m=p.isd_m,
        sites=sites,
        macrocells=macrocells,
        smallcells=smallcells,
        ues=ues,
        params=p,
    )


@dataclass
class LinkGainTable:
    """Pairwise channel gains in dB (path loss + shadowing + antenna gains).

    `bs_to_bs_loss_db` keeps the antenna-independent propagation loss
    between base stations; it is the coupling-loss metric used for cell
    clustering and for the BS-oriented partial IC criterion.
    """

    bs_to_ue: np.ndarray        # (B, Q)
    bs_to_bs: np.ndarray        # (B, B), diagonal unused
    ue_to_ue: np.ndarray        # (Q, Q), diagonal unused
    bs_to_bs_loss_db: np.ndarray  # (B, B) path loss + shadowing, no antenna gains
    n_macro: int

    @property
    def ue_to_bs(self) -> np.ndarray:
        # reciprocal channel: same link gain in both directions
        return self.bs_to_ue.T


def compute_link_gains(
    layout: NetworkLayout, seed: int, params: RadioParams | None = None
) -> LinkGainTable:
    """Gain tables for a drop: -path_loss - shadowing + antenna gains, wrap-aware.

    Shadowing is log-normal, drawn once per link; links touching a macro BS
    use the macro sigma, all others the pico sigma. BS-BS and UE-UE draws
    are symmetrised so the propagation loss of a pair is direction-free.
    """
    p = params or layout.params
    rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, STREAM_SHADOWING])
    offs = layout.wrap_offsets()
    bs = layout.bs_positions()
    ue = layout.ue_positions()
    M, B, Q = layout.n_macro, layout.n_cells, layout.n_ue
    is_macro = layout.is_macro()

    # BS -> UE
    d = wrap_distance_matrix(bs, ue, offs)
    pl = np.where(
        is_macro[:, None],
        path_loss(PathLossKind.MACRO_TO_UE, d),
        path_loss(PathLossKind.PICO_TO_UE, d),
    )
    sigma = np.where(is_macro, p.shadow_sigma_macro_db, p.shadow_sigma_pico_db)[:, None]
    shadow_bu = rng.standard_normal((B, Q)) * sigma
    ant_bu = np.where(is_macro, p.macro_ant_gain_db, p.pico_ant_gain_db)[:, None] + p.ue_ant_gain_db
    bs_to_ue = -pl - shadow_bu + ant_bu

    # BS -> BS; macro-involved pairs use the plain pico-class law (no LOS bonus)
    d_bb = wrap_distance_matrix(bs, bs, offs)
    sbs_pair = ~is_macro[:, None] & ~is_macro[None, :]
    pl_bb = np.where(
        sbs_pair,
        path_loss(PathLossKind.BS_TO_BS, d_bb),
        path_loss(PathLossKind.PICO_TO_UE, d_bb),
    )
    macro_pair = is_macro[:, None] | is_macro[None, :]
    sig_bb = np.where(macro_pair, p.shadow_sigma_macro_db, p.shadow_sigma_pico_db)
    raw = rng.standard_normal((B, B))
    shadow_bb = np.triu(raw, 1) * sig_bb
    shadow_bb = shadow_bb + shadow_bb.T
    ant = np.where(is_macro, p.macro_ant_gain_db, p.pico_ant_gain_db)
    loss_bb = pl_bb + shadow_bb
    bs_to_bs = -loss_bb + ant[:, None] + ant[None, :]
    np.fill_diagonal(bs_to_bs, 0.0)
    np.fill_diagonal(loss_bb, 0.0)

    # UE -> UE
    d_uu = wrap_distance_matrix(ue, ue, offs)
    pl_uu = path_loss(PathLossKind.UE_TO_UE, d_uu)
    raw = rng.standard_normal((Q, Q))
    shadow_uu = np.triu(raw, 1) * p.shadow_sigma_pico_db
    shadow_uu = shadow_uu + shadow_uu.T
    ue_to_ue = -pl_uu - shadow_uu + 2.0 * p.ue_ant_gain_db
    np.fill_diagonal(ue_to_ue, 0.0)

    return LinkGainTable(
        bs_to_ue=bs_to_ue,
        bs_to_bs=bs_to_bs,
        ue_to_ue=ue_to_ue,
        bs_to_bs_loss_db=loss_bb,
        n_macro=M,
    )


def rsrp(gains: LinkGainTable, layout: NetworkLayout, cell: int, ue: int) -> float:
    return float(layout.bs_tx_power_dbm()[cell] + gains.bs_to_ue[cell, ue])


def rsrp_matrix(gains: LinkGainTable, layout: NetworkLayout) -> np.ndarray:
    """(B, Q) RSRP in dBm."""
    return layout.bs_tx_power_dbm()[:, None] + gains.bs_to_ue


def wideband_dl_sinr(
    gains: LinkGainTable, layout: NetworkLayout, cell: int, ue: int
) -> float:
    """DL SINR in dB under the all-cells-transmitting convention."""
    return float(wideband_dl_sinr_matrix(gains, layout)[cell, ue])


def wideband_dl_sinr_matrix(gains: LinkGainTable, layout: NetworkLayout) -> np.ndarray:
    rx_dbm = rsrp_matrix(gains, layout)
    rx_lin = 10.0 ** (rx_dbm / 10.0)
    noise = 10.0 ** (layout.params.noise_dbm("ue") / 10.0)
    total = rx_lin.sum(axis=0, keepdims=True)
    sinr = rx_lin / (total - rx_lin + noise)
    return 10.0 * np.log10(sinr)


@dataclass
class Association:
    """Partition of UEs into macro sets, small-cell sets and expanded-region sets."""

    serving_cell: np.ndarray                 # (Q,) global cell index
    macro_sets: list[list[int]]              # per macrocell
    small_sets: list[list[int]]              # per small cell, non-ER
    er_sets: list[list[int]]                 # per small cell, offloaded macro UEs

    def k1(self, m: int) -> int:
        return len(self.macro_sets[m])

    def k2(self, n: int) -> int:
        return len(self.small_sets[n])

    def k3(self, n: int) -> int:
        return len(self.er_sets[n])

    @property
    def n_ue(self) -> int:
        return len(self.serving_cell)

    def is_er(self) -> np.ndarray:
        flags = np.zeros(self.n_ue, dtype=bool)
        for ues in self.er_sets:
            flags[ues] = True
        return flags

    def check_partition(self) -> None:
        seen = np.zeros(self.n_ue, dtype=int)
        for ues in self.macro_sets + self.small_sets + self.er_sets:
            for q in ues:
                seen[q] += 1
        if not np.all(seen == 1):
            raise AssertionError("association sets do not partition the UE population")

    def copy(self) -> "Association":
        return Association(
            serving_cell=self.serving_cell.copy(),
            macro_sets=[list(s) for s in self.macro_sets],
            small_sets=[list(s) for s in self.small_sets],
            er_sets=[list(s) for s in self.er_sets],
        )


def associate_best_rsrp(gains: LinkGainTable, layout: NetworkLayout) -> Association:
    """Each UE attaches to its argmax-RSRP cell; exact ties go to the lowest cell id."""
    r = rsrp_matrix(gains, layout)
    serving = np.argmax(r, axis=0)           # first max -> lowest cell id on ties
    M, N = layout.n_macro, layout.n_small
    macro_sets = [[] for _ in range(M)]
    small_sets = [[] for _ in range(N)]
    for q, c in enumerate(serving):
        if c < M:
            macro_sets[c].append(q)
        else:
            small_sets[c - M].append(q)
    return Association(
        serving_cell=serving.astype(int),
        macro_sets=macro_sets,
        small_sets=small_sets,
        er_sets=[[] for _ in range(N)],
    )


def dump_layout(layout: NetworkLayout) -> str:
    """Line-oriented text dump: `kind id x y [extra]` with a seed/scenario header."""
    lines = [
        "# dyntdd layout v1",
        f"# scenario {layout.scenario.value} seed {layout.seed} isd {layout.isd_m!r}",
    ]
    for i, (x, y) in enumerate(layout.sites):
        lines.append(f"site {i} {x!r} {y!r}")
    for i, m in enumerate(layout.macrocells):
        lines.append(f"macro {i} {layout.sites[m.site][0]!r} {layout.sites[m.site][1]!r} "
                     f"{m.site} {m.azimuth_deg!r} {m.tx_power_dbm!r}")
    for i, c in enumerate(layout.smallcells):
        lines.append(f"small {i} {c.x!r} {c.y!r} {c.tx_power_dbm!r}")
    for i, u in enumerate(layout.ues):
        lines.append(f"ue {i} {u.x!r} {u.y!r} {u.max_tx_power_dbm!r}")
    return "\n".join(lines) + "\n"


def load_layout(text: str, params: RadioParams = DEFAULT_RADIO) -> NetworkLayout:
    scenario = None
    seed = 0
    isd = params.isd_m
    sites, macrocells, smallcells, ues = [], [], [], []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            toks = line[1:].split()
            if toks and toks[0] == "scenario":
                scenario = Scenario(toks[1])
                seed = int(toks[3])
                isd = float(toks[5])
            continue
        toks = line.split()
        kind = toks[0]
        if kind == "site":
            sites.append((float(toks[2]), float(toks[3])))
        elif kind == "macro":
            macrocells.append(
                Macrocell(site=int(toks[4]), azimuth_deg=float(toks[5]),
                          tx_power_dbm=float(toks[6]))
            )
        elif kind == "small":
            smallcells.append(SmallCell(x=float(toks[2]), y=float(toks[3]),
                                        tx_power_dbm=float(toks[4])))
        elif kind == "ue":
            ues.append(Ue(x=float(toks[2]), y=float(toks[3]),
                          max_tx_power_dbm=float(toks[4])))
        else:
            raise ValueError(f"unknown layout record kind: {kind}")
    if scenario is None:
        raise ValueError("layout text is missing the scenario header")
    return NetworkLayout(
        scenario=scenario,
        seed=seed,
        isd_m=isd,
        sites=np.asarray(sites, dtype=float),
        macrocells=macrocells,
        smallcells=smallcells,
        ues=ues,
        params=replace(params, isd_m=isd),
    )
