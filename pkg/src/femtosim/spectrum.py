"""Femto-tier channel bookkeeping.

Dynamic FFR decides which macro bands are off-limits in a sector/region;
what is left is partitioned into disjoint per-cluster channel sets, with the
remainder kept as the reserve list for FAPs that could not join a cluster.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .csvio import CSV_VERSION_LINE
from .radio import sinr

TOTAL_CHANNELS = 50
CHANNEL_WIDTH_HZ = 180_000.0
MAX_FEMTO_CHANNELS = 20

INNER, OUTER = "inner", "outer"


class InsufficientChannels(ValueError):
    pass


@dataclass(frozen=True)
class Channel:
    index: int
    width: float = CHANNEL_WIDTH_HZ


@dataclass(frozen=True)
class FfrLayout:
    """Band plan of one macrocell.

    ``bands`` lists the spectrum bands in frequency order; the first is the
    inner-region band.  ``band_of_sector`` gives the band macro users of each
    outer sector transmit on.  The default is the three-sector plan with
    bands S, A, B, C.
    """
    bands: tuple = ("S", "A", "B", "C")
    band_of_sector: dict = field(default_factory=lambda: {1: "C", 2: "A", 3: "B"})
    inner_bands: frozenset = frozenset({"S"})

    @property
    def n_sectors(self):
        return len(self.band_of_sector)

    def __post_init__(self):
        for b in list(self.band_of_sector.values()) + list(self.inner_bands):
            if b not in self.bands:
                raise ValueError(f"unknown band {b!r}")

    def band_channels(self, all_channels):
        """Contiguous split of channel indices 0..all_channels-1 into bands."""
        chunks = np.array_split(np.arange(all_channels), len(self.bands))
        return {b: tuple(int(c) for c in chunk) for b, chunk in zip(self.bands, chunks)}


def ffr_femto_bands(layout, sector, region):
    if sector not in layout.band_of_sector:
        raise ValueError(f"unknown sector {sector!r}")
    macro_outer = layout.band_of_sector[sector]
    if region == OUTER:
        barred = {macro_outer}
    elif region == INNER:
        barred = set(layout.inner_bands) | {macro_outer}
    else:
        raise ValueError(f"unknown region {region!r}")
    return tuple(b for b in layout.bands if b not in barred)


def ffr_femto_pool(layout, sector, region, all_channels=TOTAL_CHANNELS):
    """Ordered channel indices a femtocell in (sector, region) may use."""
    per_band = layout.band_channels(all_channels)
    return tuple(c for b in ffr_femto_bands(layout, sector, region) for c in per_band[b])


@dataclass(frozen=True)
class ChannelPool:
    femto_available: tuple
    reserve: tuple = ()
    cluster_sets: dict = field(default_factory=dict)

    def __post_init__(self):
        avail = set(self.femto_available)
        if len(avail) != len(self.femto_available):
            raise ValueError("duplicate channels in femto pool")
        seen = set()
        for k, chans in self.cluster_sets.items():
            s = set(chans)
            if s & seen:
                raise ValueError(f"cluster set {k} overlaps another cluster set")
            if not s <= avail:
                raise ValueError(f"cluster set {k} uses channels outside the pool")
            seen |= s
        if set(self.reserve) & seen:
            raise ValueError("reserve overlaps a cluster set")
        if len(self.reserve) + len(seen) > len(avail):
            raise ValueError("more channels in use than available")

    @property
    def n_vc(self):
        return len(self.cluster_sets)

    @property
    def set_size(self):
        return len(self.cluster_sets[0]) if self.cluster_sets else 0


def build_cluster_sets(pool, n_vc, set_size):
    pool = tuple(pool)
    if n_vc < 1 or set_size < 1:
        raise ValueError("n_vc and set_size must be positive")
    if n_vc * set_size > len(pool):
        raise InsufficientChannels(
            f"{n_vc} sets of {set_size} need {n_vc * set_size} channels, pool has {len(pool)}")
    sets = {k: pool[k * set_size:(k + 1) * set_size] for k in range(n_vc)}
    return ChannelPool(pool, pool[n_vc * set_size:], sets)


def update_reserve(pool, released=(), reclaimed=()):
    released, reclaimed = set(released), set(reclaimed)
    if released & reclaimed:
        raise ValueError("a channel cannot be both released and reclaimed")
    missing = reclaimed - set(pool.reserve) - released
    if missing:
        raise ValueError(f"cannot reclaim channels not in reserve: {sorted(missing)}")
    reserve = (set(pool.reserve) | released) - reclaimed
    avail = tuple(pool.femto_available) + tuple(
        sorted(c for c in released if c not in pool.femto_available))
    return ChannelPool(avail, tuple(sorted(reserve)), dict(pool.cluster_sets))


def allocate_channel_to_ms(ms, candidate_channels, per_channel_links):
    """Best-C/I channel for ``ms``; ties go to the lowest channel index."""
    if not candidate_channels:
        raise ValueError(f"no candidate channels for MS {getattr(ms, 'id', ms)}")
    best, best_val = None, None
    for c in sorted(candidate_channels):
        v = sinr(per_channel_links[c])
        if best_val is None or v > best_val:
            best, best_val = c, v
    return best


def write_pool(pool, fh):
    w = csv.writer(fh, lineterminator="\n")
    fh.write(CSV_VERSION_LINE + "\n")
    w.writerow(["cluster_id", "channel_index"])
    for k in sorted(pool.cluster_sets):
        for c in pool.cluster_sets[k]:
            w.writerow([k, c])
    for c in pool.reserve:
        w.writerow(["reserve", c])
