"""TDD configuration sets: which per-frame UL subframe counts a cell may pick.

A configuration is identified by its (dl, ul) subframe count pair; within a
frame the UL subframes always occupy the last positions. Special subframes
of the LTE patterns are counted as DL, which keeps UL counts integer.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

FRAME_LEN = 10

# LTE release-12 uplink-downlink configurations 0..6 (D = downlink,
# S = special counted as DL, U = uplink), used to derive the homogeneous set.
LTE_TDD_PATTERNS = (
    "DSUUUDSUUU",   # 0
    "DSUUDDSUUD",   # 1
    "DSUDDDSUDD",   # 2
    "DSUUUDDDDD",   # 3
    "DSUUDDDDDD",   # 4
    "DSUDDDDDDD",   # 5
    "DSUUUDSUUD",   # 6
)


class SetKind(str, Enum):
    REL12_HOMO = "rel12"
    FUTURE_HOMO = "future"
    HET = "het"


class ConfigSetError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class TddConfig:
    dl: int
    ul: int

    @property
    def label(self) -> str:
        return f"{self.dl}:{self.ul}"


def ul_count(config: TddConfig) -> int:
    return config.ul


@dataclass(frozen=True)
class TddConfigSet:
    kind: SetKind
    configs: tuple[TddConfig, ...]   # sorted by ascending UL count
    span: int                        # subframes split between DL and UL

    @property
    def allowed_ul_counts(self) -> tuple[int, ...]:
        return tuple(c.ul for c in self.configs)

    def __iter__(self):
        return iter(self.configs)

    def __len__(self):
        return len(self.configs)


def build_set(kind: SetKind | str, f_dyn: int | None = None) -> TddConfigSet:
    """The available configuration set for a deployment flavour.

    rel12: UL counts reachable by the LTE patterns, {1..6} out of 10.
    future: full flexibility, {1..9} out of 10.
    het: {1..f_dyn} out of the f_dyn subframes a small cell may repurpose.
    """
    kind = SetKind(kind)
    if kind == SetKind.REL12_HOMO:
        counts = sorted({pat.count("U") for pat in LTE_TDD_PATTERNS})
        span = FRAME_LEN
    elif kind == SetKind.FUTURE_HOMO:
        counts = list(range(1, FRAME_LEN))
        span = FRAME_LEN
    else:
        if f_dyn is None or not 1 <= f_dyn <= FRAME_LEN - 1:
            raise ConfigSetError(f"dynamic subframe budget must be in [1, {FRAME_LEN - 1}]")
        counts = list(range(1, f_dyn + 1))
        span = f_dyn
    configs = tuple(TddConfig(dl=span - t, ul=t) for t in counts)
    return TddConfigSet(kind=kind, configs=configs, span=span)
