"""FAP / MS placement and the inter-FAP distance matrix.

Everything here is a pure function of its inputs and an integer seed.
"""

import csv
import io
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .csvio import CSV_VERSION_LINE, CsvSchemaError, fmt

DEFAULT_TX_DBM = 10.0
DEFAULT_MAX_MS = 4

FAP_HEADER = ("fap_id", "x_m", "y_m", "tx_dbm", "n_ms")
MS_HEADER = ("ms_id", "fap_id", "x_m", "y_m")


class Point2D(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class Area:
    side: float = 200.0
    femto_radius: float = 10.0
    macro_radius: float = 500.0

    def __post_init__(self):
        if not self.side > 0:
            raise ValueError(f"area side must be positive, got {self.side}")
        if not 0 < self.femto_radius < self.macro_radius:
            raise ValueError("need 0 < femto_radius < macro_radius")


@dataclass(frozen=True)
class MobileStation:
    id: int
    position: Point2D
    serving_fap: int
    assigned_channel: Optional[int] = None


@dataclass(frozen=True)
class FapNode:
    id: int
    position: Point2D
    tx_power: float = DEFAULT_TX_DBM
    mobiles: tuple = field(default_factory=tuple)


class DistanceMatrix:
    """Symmetric N x N Euclidean distances with a zero diagonal.

    The underlying array is read-only; use ``.entries`` for vectorised
    access and ``d[i, j]`` for scalar lookups.
    """

    def __init__(self, entries):
        a = np.array(entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("distance matrix must be square")
        if not np.all(np.isfinite(a)) or np.any(a < 0):
            raise ValueError("distances must be finite and non-negative")
        if not np.array_equal(a, a.T):
            raise ValueError("distance matrix must be symmetric")
        if np.any(np.diag(a) != 0):
            raise ValueError("distance matrix must have a zero diagonal")
        a.setflags(write=False)
        self.entries = a

    @property
    def n(self):
        return self.entries.shape[0]

    def __getitem__(self, ij):
        return self.entries[ij]

    def __len__(self):
        return self.n

    def __repr__(self):
        return f"DistanceMatrix(n={self.n})"


def derive_seed(seed, *keys):
    """Integer seed for an independent named stream under ``seed``."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *keys])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def place_faps(area, n_faps, rng_seed, tx_power=DEFAULT_TX_DBM):
    """Drop ``n_faps`` FAPs i.i.d. uniformly over the square [0, side]^2."""
    if n_faps < 1:
        raise ValueError("n_faps must be >= 1")
    rng = np.random.default_rng(rng_seed)
    xy = rng.uniform(0.0, area.side, size=(n_faps, 2))
    return [FapNode(i, Point2D(float(x), float(y)), tx_power) for i, (x, y) in enumerate(xy)]


def place_mobiles(fap, count, rng_seed, femto_radius=10.0,
                  max_ms_per_fap=DEFAULT_MAX_MS, first_id=0):
    """Uniform-by-area drop of ``count`` MSs inside the femtocell disc."""
    if not 1 <= count <= max_ms_per_fap:
        raise ValueError(f"MS count must lie in [1, {max_ms_per_fap}], got {count}")
    rng = np.random.default_rng(rng_seed)
    r = femto_radius * np.sqrt(rng.uniform(0.0, 1.0, size=count))
    theta = rng.uniform(0.0, 2.0 * np.pi, size=count)
    cx, cy = fap.position
    return [
        MobileStation(first_id + k, Point2D(float(cx + rk * math.cos(tk)),
                                             float(cy + rk * math.sin(tk))), fap.id)
        for k, (rk, tk) in enumerate(zip(r, theta))
    ]


def _pairwise(xy):
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    diff = xy[:, None, :] - xy[None, :, :]
    d = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    # exact symmetry regardless of rounding in the subtraction
    d = np.triu(d, 1)
    return d + d.T


def distance_matrix(positions: Sequence[Point2D]) -> DistanceMatrix:
    if len(positions) < 2:
        raise ValueError("need at least two positions")
    return DistanceMatrix(_pairwise(positions))


def min_distance_to_set(candidate, members, d):
    if not members:
        raise ValueError("member set is empty")
    if candidate in members:
        raise ValueError("candidate must not be a member")
    idx = np.fromiter(members, dtype=int)
    return float(d.entries[candidate, idx].min())


def build_topology(area, n_faps, seed, max_ms_per_fap=DEFAULT_MAX_MS,
                   ms_per_fap=None, tx_power=DEFAULT_TX_DBM):
    """FAPs plus their attached MSs, all streams derived from ``seed``.

    ``ms_per_fap=None`` draws each FAP's MS count uniformly from
    {1..max_ms_per_fap}; an integer fixes it.
    """
    faps = place_faps(area, n_faps, derive_seed(seed, 1), tx_power)
    count_rng = np.random.default_rng(derive_seed(seed, 2))
    if ms_per_fap is None:
        counts = count_rng.integers(1, max_ms_per_fap + 1, size=n_faps)
    else:
        counts = np.full(n_faps, ms_per_fap)
    out = []
    next_id = 0
    for fap, c in zip(faps, counts):
        ms = place_mobiles(fap, int(c), derive_seed(seed, 3, fap.id), area.femto_radius,
                           max_ms_per_fap, first_id=next_id)
        next_id += len(ms)
        out.append(FapNode(fap.id, fap.position, fap.tx_power, tuple(ms)))
    return out


def write_topology(faps, fh):
    w = csv.writer(fh, lineterminator="\n")
    fh.write(CSV_VERSION_LINE + "\n")
    w.writerow(FAP_HEADER)
    for f in faps:
        w.writerow([f.id, fmt(f.position.x), fmt(f.position.y), fmt(f.tx_power), len(f.mobiles)])
    w.writerow(MS_HEADER)
    for f in faps:
        for m in f.mobiles:
            w.writerow([m.id, f.id, fmt(m.position.x), fmt(m.position.y)])


def topology_to_csv(faps):
    buf = io.StringIO()
    write_topology(faps, buf)
    return buf.getvalue()


def read_topology(fh):
    text = fh.read() if hasattr(fh, "read") else fh
    lines = text.splitlines()
    if not lines or lines[0] != CSV_VERSION_LINE:
        raise CsvSchemaError("missing femtosim-csv version line")
    rows = list(csv.reader(lines[1:]))
    if not rows or tuple(rows[0]) != FAP_HEADER:
        raise CsvSchemaError("bad FAP header")
    try:
        split = [tuple(r) for r in rows].index(MS_HEADER)
    except ValueError:
        raise CsvSchemaError("missing MS section") from None
    fap_rows, ms_rows = rows[1:split], rows[split + 1:]
    mobiles = {}
    for r in ms_rows:
        if len(r) != len(MS_HEADER):
            raise CsvSchemaError(f"ragged MS row {r!r}")
        ms = MobileStation(int(r[0]), Point2D(float(r[2]), float(r[3])), int(r[1]))
        mobiles.setdefault(ms.serving_fap, []).append(ms)
    faps = []
    for k, r in enumerate(fap_rows):
        if len(r) != len(FAP_HEADER):
            raise CsvSchemaError(f"ragged FAP row {r!r}")
        fid = int(r[0])
        if fid != k:
            raise CsvSchemaError("FAP ids must be dense 0..N-1")
        ms = tuple(mobiles.get(fid, ()))
        if len(ms) != int(r[4]):
            raise CsvSchemaError(f"FAP {fid} declares {r[4]} MSs, found {len(ms)}")
        faps.append(FapNode(fid, Point2D(float(r[1]), float(r[2])), float(r[3]), ms))
    return faps
