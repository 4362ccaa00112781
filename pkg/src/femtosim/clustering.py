"""Virtual clustering of FAPs (GVCF) and the random-set baseline (NCS).

GVCF walks FAP pairs from closest to farthest.  The first ``n_vc`` FAPs it
meets seed one cluster each; every later FAP joins the cluster whose nearest
member is farthest away, provided that distance is at least the safety
distance, otherwise it goes to the reserve set.
"""

import csv
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np

from .csvio import CSV_VERSION_LINE, CsvSchemaError, read_table
from .geometry import DistanceMatrix, Point2D, _pairwise

RESERVE = -1
UNASSIGNED = -2

SEEDING = "seed"
MINIMAX = "minimax"


class Step(NamedTuple):
    """One allocation decision, recorded for tracing and oracle checks."""
    fap: int
    phase: str
    label: int
    min_dists: tuple    # per-VCC nearest-member distance at decision time


@dataclass(frozen=True)
class ClusterAssignment:
    labels: tuple                      # per FAP row: VCC index or RESERVE
    n_vc: int
    d_th: float
    hosts: dict = field(default_factory=dict)   # reserve FAP -> VCC whose channels it borrows
    steps: tuple = ()
    fap_ids: Optional[tuple] = None    # external ids when rows are not 0..N-1

    def __post_init__(self):
        for lab in self.labels:
            if lab != RESERVE and lab != UNASSIGNED and not 0 <= lab < self.n_vc:
                raise ValueError(f"label {lab} outside 0..{self.n_vc - 1}")

    @property
    def n_faps(self):
        return len(self.labels)

    @property
    def complete(self):
        return UNASSIGNED not in self.labels

    @property
    def reserve_set(self):
        return frozenset(i for i, lab in enumerate(self.labels) if lab == RESERVE)

    def members(self, k):
        return [i for i, lab in enumerate(self.labels) if lab == k]

    def channel_groups(self):
        """Effective co-channel label per FAP.

        Cluster members keep their VCC; reserve FAPs borrowing a cluster's
        channels (no reserve list available) count as members of the host;
        reserve FAPs served from the reserve list get ``None`` and are left
        out of co-channel statistics.
        """
        out = []
        for i, lab in enumerate(self.labels):
            if lab == RESERVE:
                out.append(self.hosts.get(i))
            else:
                out.append(lab)
        return out

    def label_of(self, fap_id):
        row = self.fap_ids.index(fap_id) if self.fap_ids is not None else fap_id
        return self.labels[row]

    def same_partition(self, other):
        return self.labels == other.labels and self.hosts == other.hosts


@dataclass(frozen=True)
class GvcfConfig:
    d_th: float = 20.0
    max_ms_per_fap: int = 4
    se_target: Optional[float] = None
    sinr_target: Optional[float] = None
    percentile_for_targets: int = 50
    max_channels: int = 20

    def __post_init__(self):
        if not self.d_th > 0:
            raise ValueError("d_th must be positive")
        if self.percentile_for_targets not in (50, 90):
            raise ValueError("percentile_for_targets must be 50 or 90")


NO_CHANGE = "no_change"
REQUEST = "request_channels"
RELEASE = "release_channels"
RECLUSTER = "recluster"


@dataclass(frozen=True)
class AdaptationAction:
    kind: str = NO_CHANGE
    count: int = 0

    def __post_init__(self):
        if self.kind not in (NO_CHANGE, REQUEST, RELEASE, RECLUSTER):
            raise ValueError(f"unknown adaptation action {self.kind!r}")
        if self.kind in (REQUEST, RELEASE) and self.count <= 0:
            raise ValueError("request/release counts must be positive")


def compute_num_clusters(n_channels_available, max_ms_per_fap):
    if n_channels_available < 1 or max_ms_per_fap < 1:
        raise ValueError("channel count and max MS per FAP must be >= 1")
    return max(1, n_channels_available // max_ms_per_fap)


def sorted_pairs(d):
    """FAP pairs (i < j) by ascending distance, ties by (i, j)."""
    n = d.n
    ii, jj = np.triu_indices(n, 1)
    dd = d.entries[ii, jj]
    order = np.lexsort((jj, ii, dd))
    return ii[order], jj[order]


def gvcf_assign(d, n_vc, d_th):
    if n_vc < 1:
        raise ValueError("n_vc must be >= 1")
    D = d.entries
    n = d.n
    labels = [UNASSIGNED] * n
    # nearest-member distance from every FAP to every VCC, inf while empty
    mind = np.full((n, n_vc), math.inf)
    sizes = [0] * n_vc
    n_filled = 0
    n_done = 0
    steps = []

    def allocate(f):
        nonlocal n_filled, n_done
        row = tuple(float(v) for v in mind[f])
        if n_filled < n_vc:
            k = sizes.index(0)
            phase = SEEDING
        else:
            k = int(np.argmax(mind[f]))     # first max -> lowest VCC index
            phase = MINIMAX
            if mind[f, k] < d_th:
                k = RESERVE
        labels[f] = k
        n_done += 1
        steps.append(Step(f, phase, k, row))
        if k != RESERVE:
            if sizes[k] == 0:
                n_filled += 1
            sizes[k] += 1
            np.minimum(mind[:, k], D[:, f], out=mind[:, k])

    ii, jj = sorted_pairs(d)
    for i, j in zip(ii.tolist(), jj.tolist()):
        if n_done == n:
            break
        if labels[i] == UNASSIGNED:
            allocate(i)
        if labels[j] == UNASSIGNED:
            allocate(j)
    # only reached with a single FAP (no pairs)
    for f in range(n):
        if labels[f] == UNASSIGNED:
            allocate(f)
    return ClusterAssignment(tuple(labels), n_vc, d_th, steps=tuple(steps))


def host_reserve(assignment, d):
    """Lend each reserve FAP the channel set of one VCC.

    Used when the reserve channel list is empty: the FAP still has to
    transmit somewhere.  The host is the VCC where the fewest FAPs that
    still respect the safety distance would lose it; ties go to the VCC
    whose nearest member is farthest, then to the lowest index.  Hosts are
    chosen in reserve-assignment order and count toward later choices.
    """
    D = d.entries
    th = assignment.d_th
    groups = {k: assignment.members(k) for k in range(assignment.n_vc)}
    order = [s.fap for s in assignment.steps if s.label == RESERVE] or sorted(assignment.reserve_set)
    violated = set()
    hosts = {}
    for f in order:
        best_key, best, best_close = None, None, ()
        for k in range(assignment.n_vc):
            m = groups[k]
            close = [x for x in m if D[f, x] < th]
            newly = sum(1 for x in close if x not in violated)
            key = (newly, -(D[f, m].min() if m else math.inf), k)
            if best_key is None or key < best_key:
                best_key, best, best_close = key, k, close
        hosts[f] = best
        groups[best].append(f)
        violated.add(f)
        violated.update(best_close)
    return replace(assignment, hosts=hosts)


def ncs_assign(n_faps, n_sets, rng_seed):
    """Each FAP picks one of ``n_sets`` channel sets uniformly at random."""
    if n_sets < 1:
        raise ValueError("n_sets must be >= 1")
    rng = np.random.default_rng(rng_seed)
    labels = rng.integers(0, n_sets, size=n_faps)
    return ClusterAssignment(tuple(int(x) for x in labels), n_sets, 0.0)


def _nearest_cochannel(assignment, d):
    """Per FAP: distance to nearest co-channel FAP, None if not applicable."""
    groups = assignment.channel_groups()
    by_group = {}
    for i, g in enumerate(groups):
        if g is not None:
            by_group.setdefault(g, []).append(i)
    out = [None] * len(groups)
    for members in by_group.values():
        if len(members) < 2:
            continue
        sub = d.entries[np.ix_(members, members)].copy()
        np.fill_diagonal(sub, math.inf)
        for i, v in zip(members, sub.min(axis=1)):
            out[i] = float(v)
    return groups, out


def failure_ratio(assignment, d, d_th):
    """Share of co-channel FAPs whose nearest co-channel neighbour is closer
    than ``d_th``.  Reserve FAPs on reserve channels are not counted."""
    groups, nearest = _nearest_cochannel(assignment, d)
    considered = [i for i, g in enumerate(groups) if g is not None]
    if not considered:
        return 0.0
    failed = sum(1 for i in considered if nearest[i] is not None and nearest[i] < d_th)
    return failed / len(considered)


def avg_min_cochannel_distance(assignment, d):
    """Mean nearest co-channel distance; ``None`` if every group is a singleton."""
    _, nearest = _nearest_cochannel(assignment, d)
    vals = [v for v in nearest if v is not None]
    if not vals:
        return None
    return math.fsum(vals) / len(vals)


def adapt(current, report, cfg, pool, lut=None, algorithm="gvcf"):
    """One round of the adaptation policy.

    ``report`` needs ``p50_se``/``x90_se`` and ``p50_sinr``/``x90_sinr``
    attributes.  ``lut`` (optional) is anything with a
    ``meets(n_faps, n_clusters, metric, percentile, target, algorithm)``
    method; without it channels are never released.
    """
    checks = []
    if cfg.se_target is not None:
        checks.append(("se", cfg.se_target))
    if cfg.sinr_target is not None:
        checks.append(("sinr", cfg.sinr_target))
    if not checks:
        return AdaptationAction(NO_CHANGE)

    pct = cfg.percentile_for_targets
    prefix = "p50" if pct == 50 else "x90"
    met = all(getattr(report, f"{prefix}_{metric}") >= target for metric, target in checks)
    step = pool.set_size or cfg.max_ms_per_fap

    if not met:
        if len(pool.femto_available) + step <= cfg.max_channels:
            return AdaptationAction(REQUEST, step)
        return AdaptationAction(NO_CHANGE)
    n_vc = current.n_vc
    if lut is not None and n_vc > 1:
        if all(lut.meets(current.n_faps, n_vc - 1, metric, pct, target, algorithm)
               for metric, target in checks):
            return AdaptationAction(RELEASE, step)
    return AdaptationAction(NO_CHANGE)


# -- topology changes ---------------------------------------------------------

@dataclass(frozen=True)
class FapJoined:
    fap_id: int
    position: Point2D
    n_ms: int = 1


@dataclass(frozen=True)
class FapLeft:
    fap_id: int


@dataclass(frozen=True)
class MsCountChanged:
    fap_id: int
    n_ms: int


@dataclass(frozen=True)
class NetworkState:
    """What the gateway knows: FAP positions and attached-MS counts.

    ``use_observed_max`` sizes clusters from the largest current MS count
    instead of the provisioned ``max_ms_per_fap``.
    """
    positions: dict            # fap_id -> Point2D
    ms_counts: dict            # fap_id -> int
    channels_available: int
    cfg: GvcfConfig = GvcfConfig()
    use_observed_max: bool = False

    @property
    def fap_ids(self):
        return tuple(sorted(self.positions))

    def set_size(self):
        if self.use_observed_max and self.ms_counts:
            return max(1, max(self.ms_counts.values()))
        return self.cfg.max_ms_per_fap

    def n_vc(self):
        return compute_num_clusters(self.channels_available, self.set_size())


def apply_event(state, event):
    positions = dict(state.positions)
    counts = dict(state.ms_counts)
    if isinstance(event, FapJoined):
        if event.fap_id in positions:
            raise ValueError(f"FAP {event.fap_id} already present")
        positions[event.fap_id] = Point2D(*event.position)
        counts[event.fap_id] = event.n_ms
    elif isinstance(event, FapLeft):
        if event.fap_id not in positions:
            raise KeyError(f"unknown FAP {event.fap_id}")
        del positions[event.fap_id]
        del counts[event.fap_id]
    elif isinstance(event, MsCountChanged):
        if event.fap_id not in positions:
            raise KeyError(f"unknown FAP {event.fap_id}")
        counts[event.fap_id] = event.n_ms
    else:
        raise TypeError(f"unsupported event {event!r}")
    return replace(state, positions=positions, ms_counts=counts)


def cluster_state(state):
    ids = state.fap_ids
    if not ids:
        return ClusterAssignment((), state.n_vc(), state.cfg.d_th, fap_ids=())
    d = DistanceMatrix(_pairwise([state.positions[i] for i in ids]))
    a = gvcf_assign(d, state.n_vc(), state.cfg.d_th)
    return replace(a, fap_ids=ids)


def handle_topology_change(event, state):
    """Full re-clustering after a join/leave/MS-count event."""
    return cluster_state(apply_event(state, event))


# -- dumps ----------------------------------------------------------------------

ASSIGNMENT_HEADER = ("fap_id", "label")


def label_str(label):
    return "reserve" if label == RESERVE else f"vcc:{label}"


def write_assignment(assignment, fh):
    w = csv.writer(fh, lineterminator="\n")
    fh.write(CSV_VERSION_LINE + "\n")
    w.writerow(ASSIGNMENT_HEADER)
    ids = assignment.fap_ids or range(assignment.n_faps)
    for fid, lab in zip(ids, assignment.labels):
        w.writerow([fid, label_str(lab)])


def read_assignment(fh):
    out = {}
    for fid, lab in read_table(fh, ASSIGNMENT_HEADER):
        if lab == "reserve":
            out[int(fid)] = RESERVE
        elif lab.startswith("vcc:"):
            out[int(fid)] = int(lab[4:])
        else:
            raise CsvSchemaError(f"bad label {lab!r}")
    return out
