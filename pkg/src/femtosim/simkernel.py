"""Monte-Carlo scenario runner, percentile metrics, GVCF/NCS comparison and
the look-up tables that drive channel demand/release.

Each replica owns three seeded streams derived from ``base_seed + r``:
topology, shadowing and (NCS only) random set choice.  The first two are
identical for both algorithms, so paired comparisons use common random
numbers.
"""

import csv
import hashlib
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import clustering as cl
from .csvio import CSV_VERSION_LINE, fmt
from .geometry import Area, DistanceMatrix, _pairwise, build_topology, derive_seed, topology_to_csv
from .radio import (MIN_DISTANCE_M, LinkSample, RadioParams, noise_power, path_loss_nlos,
                    shadowing_draws, sinr, spectral_efficiency)
from .spectrum import (OUTER, FfrLayout, allocate_channel_to_ms, build_cluster_sets,
                       ffr_femto_pool)

log = logging.getLogger(__name__)

GVCF = "gvcf"
NCS = "ncs"
ALGORITHMS = (GVCF, NCS)

STREAM_SHADOWING = 20
STREAM_NCS = 30


class ReplicaError(RuntimeError):
    def __init__(self, seed, cause):
        super().__init__(f"replica with seed {seed} failed: {cause}")
        self.seed = seed


@dataclass(frozen=True)
class ScenarioConfig:
    area: Area = Area()
    n_faps: int = 50
    channels_available: int = 20
    algorithm: str = GVCF
    n_replicas: int = 30
    base_seed: int = 0
    radio: RadioParams = RadioParams()
    gvcf: cl.GvcfConfig = cl.GvcfConfig()
    tx_power: float = 10.0
    ms_per_fap: Optional[int] = None     # None: uniform in 1..max_ms_per_fap
    total_channels: int = 50
    sector: int = 1
    region: str = OUTER
    # carried for completeness of the scenario description; the femto-tier
    # SINR does not depend on them
    macro_tx_power: float = 46.0
    min_qos_sinr: float = 0.0
    total_bandwidth: float = 10e6

    def __post_init__(self):
        if self.n_replicas < 1:
            raise ValueError("n_replicas must be >= 1")
        if self.n_faps < 1:
            raise ValueError("n_faps must be >= 1")
        if not 1 <= self.channels_available <= self.total_channels:
            raise ValueError(f"channels_available must be in [1, {self.total_channels}]")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")

    @property
    def n_clusters(self):
        return cl.compute_num_clusters(self.channels_available, self.gvcf.max_ms_per_fap)


@dataclass(frozen=True)
class ReplicaResult:
    replica: int
    seed: int
    ms_ids: tuple
    sinr_db: tuple
    se: tuple
    failure_ratio: float
    avg_min_distance: Optional[float]
    n_reserve: int          # FAPs served from the reserve channel list
    fingerprint: str


@dataclass(frozen=True)
class MetricsReport:
    sinr_samples: tuple
    se_samples: tuple
    p50_sinr: float
    p90_sinr: float
    x90_sinr: float          # level exceeded by 90% of samples
    mean_sinr: float         # arithmetic mean of dB samples
    p50_se: float
    p90_se: float
    x90_se: float
    mean_se: float
    failure_ratio_mean: float
    avg_min_cochannel_distance_mean: Optional[float]
    n_samples: int
    n_clusters: int
    per_replica_failure: tuple = ()
    per_replica_min_distance: tuple = ()
    fingerprints: tuple = ()
    reserve_fraction_mean: float = 0.0


# -- percentiles ---------------------------------------------------------------

def _rank(p, n):
    # round() guards against 0.7 * 10 == 7.000000000000001
    return max(1, math.ceil(round(p * n, 9)))


def percentile(samples, p):
    """Nearest-rank percentile: sorted(samples)[ceil(p*n) - 1]."""
    if len(samples) == 0:
        raise ValueError("percentile of an empty sample")
    if not 0 < p < 1:
        raise ValueError("p must lie strictly between 0 and 1")
    s = np.sort(np.asarray(samples, dtype=float))
    return float(s[_rank(p, len(s)) - 1])


def exceedance(samples, q):
    """Level achieved in a fraction ``q`` of the samples (nearest rank)."""
    return percentile(samples, 1.0 - q)


# -- one replica ------------------------------------------------------------

def _transmit_sets(assignment, pool, faps):
    """Channels each FAP transmits on, plus per-FAP candidate lists for its MSs.

    Cluster (or hosted) FAPs use their whole set.  Reserve FAPs on the
    reserve list get one channel per MS, round-robin over the list.
    """
    groups = assignment.channel_groups()
    tx = []
    rr = 0
    reserve = list(pool.reserve)
    for f, g in zip(faps, groups):
        if g is not None:
            tx.append(tuple(pool.cluster_sets[g]))
        else:
            chans = []
            for _ in f.mobiles:
                chans.append(reserve[rr % len(reserve)])
                rr += 1
            tx.append(tuple(chans))
    return tx


def _area_pool(cfg):
    full = ffr_femto_pool(FfrLayout(), cfg.sector, cfg.region, cfg.total_channels)
    if cfg.channels_available > len(full):
        raise ValueError(f"FFR leaves only {len(full)} femto channels")
    return full[:cfg.channels_available]


def _cluster(cfg, d, pool, seed):
    n_vc = pool.n_vc
    if cfg.algorithm == GVCF:
        a = cl.gvcf_assign(d, n_vc, cfg.gvcf.d_th)
        if a.reserve_set and not pool.reserve:
            a = cl.host_reserve(a, d)
        return a
    return cl.ncs_assign(d.n, n_vc, derive_seed(seed, STREAM_NCS))


def build_replica(cfg, replica):
    """Topology, channel pool and assignment for one replica."""
    seed = cfg.base_seed + replica
    faps = build_topology(cfg.area, cfg.n_faps, seed, cfg.gvcf.max_ms_per_fap,
                          cfg.ms_per_fap, cfg.tx_power)
    d = DistanceMatrix(_pairwise([f.position for f in faps]))
    n_vc = cfg.n_clusters
    set_size = min(cfg.gvcf.max_ms_per_fap, cfg.channels_available)
    pool = build_cluster_sets(_area_pool(cfg), n_vc, set_size)
    return seed, faps, d, pool, _cluster(cfg, d, pool, seed)


def run_replica(cfg, replica):
    seed = cfg.base_seed + replica
    try:
        return _run_replica(cfg, replica)
    except Exception as exc:
        raise ReplicaError(seed, exc) from exc


def _run_replica(cfg, replica):
    seed, faps, d, pool, assignment = build_replica(cfg, replica)
    radio = cfg.radio
    mobiles = [m for f in faps for m in f.mobiles]
    n_ms, n_faps = len(mobiles), len(faps)

    ms_xy = np.array([m.position for m in mobiles], dtype=float)
    fap_xy = np.array([f.position for f in faps], dtype=float)
    serving = np.array([m.serving_fap for m in mobiles])
    dist = np.hypot(ms_xy[:, None, 0] - fap_xy[None, :, 0], ms_xy[:, None, 1] - fap_xy[None, :, 1])
    dist = np.maximum(dist, MIN_DISTANCE_M)
    wall = np.full((n_ms, n_faps), radio.interference_wall_loss)
    wall[np.arange(n_ms), serving] = radio.internal_wall_loss
    shadow_rng = np.random.default_rng(derive_seed(seed, STREAM_SHADOWING))
    shadow = shadowing_draws(shadow_rng, radio.shadowing_sigma, (n_ms, n_faps))
    tx_dbm = np.array([f.tx_power for f in faps])
    rx_dbm = tx_dbm[None, :] - path_loss_nlos(dist, radio.carrier_freq, 0.0) - wall + shadow

    tx_sets = _transmit_sets(assignment, pool, faps)
    all_chans = sorted({c for s in tx_sets for c in s})
    col = {c: k for k, c in enumerate(all_chans)}
    users = np.zeros((len(all_chans), n_faps))
    for f, s in enumerate(tx_sets):
        for c in s:
            users[col[c], f] = 1.0
    rx_lin = np.power(10.0, rx_dbm / 10.0)
    carrier_lin = rx_lin[np.arange(n_ms), serving]
    interf_lin = rx_lin.copy()
    interf_lin[np.arange(n_ms), serving] = 0.0
    interf = interf_lin @ users.T           # (n_ms, n_channels)
    n0 = noise_power(radio)

    groups = assignment.channel_groups()
    sinrs, ses, ms_ids = [], [], []
    m = 0
    for f, fap in enumerate(faps):
        own = tx_sets[f]
        taken = set()
        for k, ms in enumerate(fap.mobiles):
            if groups[f] is None:
                cands = [own[k]]
            else:
                cands = [c for c in own if c not in taken] or list(own)
            links = {}
            for c in cands:
                i = interf[m, col[c]]
                ip = (10.0 * math.log10(i),) if i > 0 else ()
                links[c] = LinkSample(float(rx_dbm[m, f]), ip, n0)
            ch = allocate_channel_to_ms(ms, cands, links)
            taken.add(ch)
            s = sinr(links[ch])
            sinrs.append(s)
            ses.append(spectral_efficiency(s, radio.se_cap))
            ms_ids.append(ms.id)
            m += 1

    fp = hashlib.sha256(topology_to_csv(faps).encode() + shadow.tobytes()).hexdigest()
    return ReplicaResult(
        replica=replica, seed=seed, ms_ids=tuple(ms_ids), sinr_db=tuple(sinrs), se=tuple(ses),
        failure_ratio=cl.failure_ratio(assignment, d, cfg.gvcf.d_th),
        avg_min_distance=cl.avg_min_cochannel_distance(assignment, d),
        n_reserve=sum(g is None for g in groups), fingerprint=fp)


# -- aggregation ------------------------------------------------------------

def _mean(xs):
    return math.fsum(xs) / len(xs)


def aggregate(cfg, results):
    """Order-insensitive reduction of replica results into a report."""
    results = sorted(results, key=lambda r: r.replica)
    sinr_s = tuple(v for r in results for v in r.sinr_db)
    se_s = tuple(v for r in results for v in r.se)
    dists = [r.avg_min_distance for r in results if r.avg_min_distance is not None]
    return MetricsReport(
        sinr_samples=sinr_s, se_samples=se_s,
        p50_sinr=percentile(sinr_s, 0.5), p90_sinr=percentile(sinr_s, 0.9),
        x90_sinr=exceedance(sinr_s, 0.9), mean_sinr=_mean(sinr_s),
        p50_se=percentile(se_s, 0.5), p90_se=percentile(se_s, 0.9),
        x90_se=exceedance(se_s, 0.9), mean_se=_mean(se_s),
        failure_ratio_mean=_mean([r.failure_ratio for r in results]),
        avg_min_cochannel_distance_mean=_mean(dists) if dists else None,
        n_samples=len(sinr_s), n_clusters=cfg.n_clusters,
        per_replica_failure=tuple(r.failure_ratio for r in results),
        per_replica_min_distance=tuple(r.avg_min_distance for r in results),
        fingerprints=tuple(r.fingerprint for r in results),
        reserve_fraction_mean=_mean([r.n_reserve / cfg.n_faps for r in results]),
    )


def _run_one(args):
    cfg, r = args
    return run_replica(cfg, r)


def run_replicas(cfg, jobs=1):
    tasks = [(cfg, r) for r in range(cfg.n_replicas)]
    if jobs > 1 and cfg.n_replicas > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(_run_one, tasks))
    return [_run_one(t) for t in tasks]


def run_scenario(cfg, jobs=1, results_out=None):
    """Run every replica of ``cfg`` and summarise.

    ``results_out``, if given, is a list that receives the per-replica
    results (for the per-MS CSV).
    """
    results = run_replicas(cfg, jobs)
    if results_out is not None:
        results_out.extend(results)
    rep = aggregate(cfg, results)
    log.debug("%s n=%d ch=%d: p50 SINR %.2f dB, failure %.3f", cfg.algorithm, cfg.n_faps,
              cfg.channels_available, rep.p50_sinr, rep.failure_ratio_mean)
    return rep


# -- comparison ----------------------------------------------------------------

@dataclass(frozen=True)
class Comparison:
    n_faps: int
    channels: int
    n_clusters: int
    algorithm_a: str
    algorithm_b: str
    d_p50_sinr: float
    d_x90_sinr: float
    d_mean_se: float
    d_p90_se: float
    d_x90_se: float
    d_failure_ratio: float
    d_avg_min_distance: Optional[float]
    report_a: MetricsReport = field(repr=False, compare=False, default=None)
    report_b: MetricsReport = field(repr=False, compare=False, default=None)


def compare_pair(cfg_a, cfg_b, jobs=1):
    if replace(cfg_a, algorithm=cfg_b.algorithm) != cfg_b:
        raise ValueError("paired configs must differ only in algorithm")
    a = run_scenario(cfg_a, jobs)
    b = run_scenario(cfg_b, jobs)
    if a.fingerprints != b.fingerprints:
        raise RuntimeError("common random numbers violated: stream fingerprints differ")
    dd = None
    if a.avg_min_cochannel_distance_mean is not None and b.avg_min_cochannel_distance_mean is not None:
        dd = a.avg_min_cochannel_distance_mean - b.avg_min_cochannel_distance_mean
    return Comparison(
        cfg_a.n_faps, cfg_a.channels_available, cfg_a.n_clusters, cfg_a.algorithm, cfg_b.algorithm,
        d_p50_sinr=a.p50_sinr - b.p50_sinr, d_x90_sinr=a.x90_sinr - b.x90_sinr,
        d_mean_se=a.mean_se - b.mean_se, d_p90_se=a.p90_se - b.p90_se, d_x90_se=a.x90_se - b.x90_se,
        d_failure_ratio=a.failure_ratio_mean - b.failure_ratio_mean,
        d_avg_min_distance=dd, report_a=a, report_b=b)


def compare(cfg_pairs, jobs=1):
    return [compare_pair(a, b, jobs) for a, b in cfg_pairs]


def gvcf_vs_ncs(cfg):
    return replace(cfg, algorithm=GVCF), replace(cfg, algorithm=NCS)


# -- look-up tables ------------------------------------------------------------

PERCENTILES = ("p50", "x90", "mean")


@dataclass(frozen=True)
class LutRow:
    algorithm: str
    n_faps: int
    channels: int
    n_clusters: int
    percentile: str
    sinr: float
    se: float


def lut_rows(cfg, report):
    return [
        LutRow(cfg.algorithm, cfg.n_faps, cfg.channels_available, report.n_clusters, p,
               getattr(report, f"{p}_sinr"), getattr(report, f"{p}_se"))
        for p in PERCENTILES
    ]


class Lut:
    """Achievable SINR/SE per (algorithm, density, cluster count)."""

    def __init__(self, rows):
        self.rows = list(rows)
        self._index = {}
        for r in self.rows:
            key = (r.algorithm, r.n_faps, r.n_clusters, r.percentile)
            # keep the smallest channel count that yields this cluster count
            if key not in self._index or r.channels < self._index[key].channels:
                self._index[key] = r

    def densities(self, algorithm=GVCF):
        return sorted({r.n_faps for r in self.rows if r.algorithm == algorithm})

    def _density_for(self, n_faps, algorithm):
        # conservative: the smallest tabulated density that is >= n_faps
        for n in self.densities(algorithm):
            if n >= n_faps:
                return n
        raise KeyError(f"no LUT rows for {n_faps} FAPs or more")

    def row(self, n_faps, n_clusters, percentile, algorithm=GVCF):
        n = self._density_for(n_faps, algorithm)
        return self._index.get((algorithm, n, n_clusters, percentile))

    @staticmethod
    def _pct_key(pct):
        return {50: "p50", 90: "x90"}.get(pct, pct)

    def meets(self, n_faps, n_clusters, metric, pct, target, algorithm=GVCF):
        r = self.row(n_faps, n_clusters, self._pct_key(pct), algorithm)
        return r is not None and getattr(r, metric) >= target

    def min_clusters(self, n_faps, metric, pct, target, algorithm=GVCF):
        """Smallest tabulated cluster count meeting ``target``; None if none does."""
        n = self._density_for(n_faps, algorithm)
        key = self._pct_key(pct)
        ks = sorted(k for (a, nf, k, p) in self._index if a == algorithm and nf == n and p == key)
        for k in ks:
            if getattr(self._index[(algorithm, n, k, key)], metric) >= target:
                return k
        return None

    def channels_for(self, n_faps, n_clusters, algorithm=GVCF):
        r = self.row(n_faps, n_clusters, "p50", algorithm)
        return None if r is None else r.channels


def sweep(base, n_faps_list, channels_list, algorithms=ALGORITHMS, jobs=1, results_out=None):
    """Run the (algorithm x n_faps x channels) grid; returns [(cfg, report)]."""
    out = []
    for alg in algorithms:
        for n in n_faps_list:
            for ch in channels_list:
                cfg = replace(base, algorithm=alg, n_faps=n, channels_available=ch)
                res = [] if results_out is not None else None
                try:
                    rep = run_scenario(cfg, jobs, res)
                except Exception as exc:
                    raise RuntimeError(f"grid point {alg} n_faps={n} channels={ch}: {exc}") from exc
                if results_out is not None:
                    results_out.append((cfg, res))
                out.append((cfg, rep))
    return out


def build_lut(sweep_cfgs, jobs=1):
    rows = []
    for cfg in sweep_cfgs:
        rows.extend(lut_rows(cfg, run_scenario(cfg, jobs)))
    return Lut(rows)


def lut_from_sweep(results):
    return Lut(row for cfg, rep in results for row in lut_rows(cfg, rep))


# -- adaptation loop ------------------------------------------------------------

@dataclass(frozen=True)
class AdaptationRound:
    round: int
    action: str
    n_vc: int
    pool_size: int


def run_adaptation(cfg, lut=None, max_rounds=10, jobs=1, trace=None):
    """Drive ``clustering.adapt`` until it settles.

    Each round evaluates the current channel count, asks for an action and
    applies it (the RNC grants any request up to ``gvcf.max_channels``).
    Returns the final config and the list of rounds; ``trace`` (a text
    file) receives ``round,action,n_vc,pool_size`` lines as they happen.
    """
    rounds = []
    for k in range(max_rounds):
        report = run_scenario(cfg, jobs)
        _, _, _, pool, assignment = build_replica(cfg, 0)
        action = cl.adapt(assignment, report, cfg.gvcf, pool, lut, cfg.algorithm)
        rounds.append(AdaptationRound(k, action.kind, cfg.n_clusters, cfg.channels_available))
        if trace is not None:
            trace.write(f"{k},{action.kind},{cfg.n_clusters},{cfg.channels_available}\n")
            trace.flush()
        if action.kind == cl.REQUEST:
            cfg = replace(cfg, channels_available=cfg.channels_available + action.count)
        elif action.kind == cl.RELEASE:
            cfg = replace(cfg, channels_available=cfg.channels_available - action.count)
        else:
            break
    return cfg, rounds


# -- CSV output -------------------------------------------------------------------

RESULTS_HEADER = ("algorithm", "n_faps", "channels", "n_clusters", "replica", "ms_id",
                  "sinr_db", "se_bpshz")
SUMMARY_HEADER = ("algorithm", "n_faps", "channels", "n_clusters", "n_samples",
                  "p50_sinr_db", "p90_sinr_db", "x90_sinr_db", "mean_sinr_db",
                  "p50_se_bpshz", "p90_se_bpshz", "x90_se_bpshz", "mean_se_bpshz",
                  "failure_ratio", "avg_min_cochannel_m", "reserve_fraction")


def write_results(fh, cfg, results, with_header=True):
    w = csv.writer(fh, lineterminator="\n")
    if with_header:
        fh.write(CSV_VERSION_LINE + "\n")
        w.writerow(RESULTS_HEADER)
    for r in sorted(results, key=lambda r: r.replica):
        for ms_id, s, e in zip(r.ms_ids, r.sinr_db, r.se):
            w.writerow([cfg.algorithm, cfg.n_faps, cfg.channels_available, cfg.n_clusters,
                        r.replica, ms_id, fmt(s, 6), fmt(e, 6)])


def summary_row(cfg, rep):
    dist = rep.avg_min_cochannel_distance_mean
    return [cfg.algorithm, cfg.n_faps, cfg.channels_available, rep.n_clusters, rep.n_samples,
            fmt(rep.p50_sinr, 6), fmt(rep.p90_sinr, 6), fmt(rep.x90_sinr, 6), fmt(rep.mean_sinr, 6),
            fmt(rep.p50_se, 6), fmt(rep.p90_se, 6), fmt(rep.x90_se, 6), fmt(rep.mean_se, 6),
            fmt(rep.failure_ratio_mean, 6), "" if dist is None else fmt(dist, 6),
            fmt(rep.reserve_fraction_mean, 6)]
