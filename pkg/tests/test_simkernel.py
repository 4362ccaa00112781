import io
import math
import random
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import grid
from femtosim import clustering as cl
from femtosim import simkernel as sk
from femtosim.csvio import read_table
from femtosim.geometry import build_topology, derive_seed
from femtosim.radio import RadioParams, noise_power, path_loss_nlos

small = sk.ScenarioConfig(n_faps=20, channels_available=12, n_replicas=4, base_seed=3)


def lin(x):
    return 10 ** (x / 10)


def oracle_replica(cfg, replica):
    """Per-MS SINR recomputed with plain loops from the replica's topology,
    assignment and shadowing stream."""
    seed, faps, d, pool, a = sk.build_replica(cfg, replica)
    mobiles = [m for f in faps for m in f.mobiles]
    r = cfg.radio
    shadow = np.random.default_rng(derive_seed(seed, sk.STREAM_SHADOWING)).normal(
        0.0, r.shadowing_sigma, size=(len(mobiles), len(faps)))
    groups = a.channel_groups()
    tx = []
    rr = 0
    for f, g in zip(faps, groups):
        if g is not None:
            tx.append(list(pool.cluster_sets[g]))
        else:
            tx.append([pool.reserve[(rr + k) % len(pool.reserve)] for k in range(len(f.mobiles))])
            rr += len(f.mobiles)

    def rx(m_row, ms, f):
        dist = max(math.dist(ms.position, faps[f].position), 0.1)
        wall = r.internal_wall_loss if f == ms.serving_fap else r.interference_wall_loss
        return faps[f].tx_power - path_loss_nlos(dist, r.carrier_freq, wall) + shadow[m_row, f]

    out = []
    row = 0
    for f, fap in enumerate(faps):
        taken = []
        for k, ms in enumerate(fap.mobiles):
            if groups[f] is None:
                cands = [tx[f][k]]
            else:
                cands = [c for c in tx[f] if c not in taken] or tx[f]
            best_c, best_s = None, -math.inf
            for c in sorted(cands):
                i = sum(lin(rx(row, ms, g)) for g in range(len(faps)) if g != f and c in tx[g])
                s = 10 * math.log10(lin(rx(row, ms, f)) / (i + lin(noise_power(r))))
                if s > best_s:
                    best_c, best_s = c, s
            taken.append(best_c)
            out.append(best_s)
            row += 1
    return out


class TestPercentile:
    def test_median(self):
        assert sk.percentile(list(range(1, 11)), 0.5) == 5

    def test_exceedance(self):
        assert sk.exceedance(list(range(1, 11)), 0.9) == 1

    def test_errors(self):
        with pytest.raises(ValueError):
            sk.percentile([], 0.5)
        for p in (0, 1, 1.5):
            with pytest.raises(ValueError):
                sk.percentile([1, 2], p)

    @pytest.mark.invariant
    @settings(max_examples=1000)
    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=200), st.floats(0.001, 0.999))
    def test_sort_oracle(self, xs, p):
        s = sorted(xs)
        k = 1
        while k < len(s) and k < p * len(s) - 1e-9:
            k += 1
        assert sk.percentile(xs, p) == s[k - 1]


class TestScenarioConfig:
    @pytest.mark.parametrize("kw", [{"n_replicas": 0}, {"n_faps": 0}, {"channels_available": 0},
                                    {"channels_available": 51}, {"algorithm": "greedy"}])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            sk.ScenarioConfig(**kw)

    def test_cluster_count(self):
        assert sk.ScenarioConfig(channels_available=20).n_clusters == 5
        assert sk.ScenarioConfig(channels_available=3).n_clusters == 1


class TestRunScenario:
    def test_single_fap_is_snr(self):
        cfg = sk.ScenarioConfig(n_faps=1, channels_available=8, n_replicas=3, ms_per_fap=4,
                                radio=RadioParams(shadowing_sigma=0.0))
        res = []
        rep = sk.run_scenario(cfg, results_out=res)
        expected = []
        for r in range(3):
            (fap,) = build_topology(cfg.area, 1, r, ms_per_fap=4)
            for ms in fap.mobiles:
                d = max(math.dist(ms.position, fap.position), 0.1)
                expected.append(10 - path_loss_nlos(d, 2.0, 5.0) - noise_power(cfg.radio))
        assert rep.sinr_samples == pytest.approx(expected, abs=1e-9)

    def test_matches_loop_oracle(self):
        for cfg in (small, replace(small, algorithm=sk.NCS), replace(small, channels_available=10),
                    replace(small, n_faps=60, channels_available=20)):
            res = sk.run_replicas(cfg)
            for r in res:
                assert r.sinr_db == pytest.approx(oracle_replica(cfg, r.replica), abs=1e-9)

    def test_reserve_channels_used_when_available(self):
        cfg = replace(small, n_faps=80, channels_available=10)
        _, _, _, pool, a = sk.build_replica(cfg, 0)
        assert pool.reserve == (8, 9) and a.reserve_set and not a.hosts

    def test_sample_accounting(self):
        rep = sk.run_scenario(small)
        expected = sum(len(f.mobiles) for r in range(4)
                       for f in build_topology(small.area, small.n_faps, small.base_seed + r))
        assert rep.n_samples == len(rep.sinr_samples) == len(rep.se_samples) == expected

    def test_percentile_order(self):
        rep = sk.run_scenario(small)
        assert rep.p50_sinr <= rep.p90_sinr and rep.p50_se <= rep.p90_se
        assert rep.x90_sinr <= rep.p50_sinr

    def test_deterministic(self):
        assert sk.run_scenario(small) == sk.run_scenario(small)

    def test_parallel_matches_serial(self):
        assert sk.run_scenario(small, jobs=2) == sk.run_scenario(small, jobs=1)

    @pytest.mark.invariant
    def test_replica_order_irrelevant(self):
        res = sk.run_replicas(replace(small, n_replicas=8))
        shuffled = res[:]
        random.Random(1).shuffle(shuffled)
        assert sk.aggregate(small, shuffled) == sk.aggregate(small, res)

    @pytest.mark.invariant
    def test_common_random_numbers(self):
        g = sk.run_scenario(small)
        n = sk.run_scenario(replace(small, algorithm=sk.NCS))
        assert g.fingerprints == n.fingerprints
        assert len(set(g.fingerprints)) == small.n_replicas

    def test_single_cluster_equivalence(self):
        cfg = replace(small, channels_available=4, n_faps=60)
        assert sk.run_scenario(cfg) == sk.run_scenario(replace(cfg, algorithm=sk.NCS))

    def test_replica_error_names_seed(self, monkeypatch):
        def boom(cfg, r):
            raise ValueError("bad draw")
        monkeypatch.setattr(sk, "_run_replica", boom)
        with pytest.raises(sk.ReplicaError) as exc:
            sk.run_scenario(small)
        assert exc.value.seed == 3 and "seed 3" in str(exc.value)

    def test_se_cap(self):
        rep = sk.run_scenario(replace(small, radio=RadioParams(se_cap=4.0)))
        assert max(rep.se_samples) == 4.0


class TestCompare:
    def test_self_comparison_zero(self):
        c = sk.compare_pair(small, small)
        assert (c.d_p50_sinr, c.d_x90_sinr, c.d_mean_se, c.d_p90_se, c.d_x90_se,
                c.d_failure_ratio, c.d_avg_min_distance) == (0, 0, 0, 0, 0, 0, 0)

    def test_mismatched_pair(self):
        with pytest.raises(ValueError):
            sk.compare_pair(small, replace(small, n_faps=21, algorithm=sk.NCS))

    def test_pair_builder(self):
        a, b = sk.gvcf_vs_ncs(small)
        assert (a.algorithm, b.algorithm) == (sk.GVCF, sk.NCS)
        assert replace(a, algorithm=sk.NCS) == b


@pytest.mark.slow
class TestGrid:
    @pytest.mark.invariant
    def test_failure_weakly_decreasing_in_channels(self):
        by = {(c.algorithm, c.n_faps, c.channels_available): r for c, r in grid.default_grid()}
        for alg in sk.ALGORITHMS:
            for n in grid.N_FAPS:
                f = [by[alg, n, ch].failure_ratio_mean for ch in grid.CHANNELS]
                assert all(b <= a for a, b in zip(f, f[1:])), (alg, n, f)

    def test_lut_sinr_monotone_in_clusters(self):
        lut = sk.lut_from_sweep(grid.default_grid())
        for alg in sk.ALGORITHMS:
            for n in grid.N_FAPS:
                for p in sk.PERCENTILES:
                    v = [lut.row(n, k, p, alg).sinr for k in range(1, 6)]
                    assert all(b >= a for a, b in zip(v, v[1:])), (alg, n, p, v)

    def test_lut_query_se_target(self):
        lut = sk.lut_from_sweep(grid.default_grid())
        assert lut.min_clusters(150, "se", 50, 3.6) == 2
        assert lut.channels_for(150, 2) == 8

    def test_lut_query_exceedance_gvcf_200(self):
        lut = sk.lut_from_sweep(grid.default_grid())
        assert lut.row(200, 3, "x90", sk.GVCF).sinr >= 14.0

    def test_lut_query_exceedance_ncs_beyond_50(self):
        lut = sk.lut_from_sweep(grid.default_grid())
        for n in (100, 150, 200):
            assert lut.row(n, 3, "x90", sk.NCS).sinr < 14.0


class TestLut:
    rows = [sk.LutRow(sk.GVCF, n, 4 * k, k, "p50", 5.0 * k + 100.0 / n, float(k))
            for n in (50, 100) for k in (1, 2, 3)]

    def test_density_rounds_up(self):
        lut = sk.Lut(self.rows)
        assert lut.row(60, 2, "p50").n_faps == 100
        assert lut.row(50, 2, "p50").n_faps == 50
        with pytest.raises(KeyError):
            lut.row(101, 1, "p50")

    def test_min_clusters(self):
        lut = sk.Lut(self.rows)
        assert lut.min_clusters(100, "se", 50, 2.0) == 2
        assert lut.min_clusters(100, "se", 50, 9.0) is None
        assert lut.meets(100, 3, "sinr", 50, 15.0)
        assert not lut.meets(100, 1, "sinr", 50, 15.0)

    def test_lut_rows(self):
        rep = sk.run_scenario(small)
        rows = sk.lut_rows(small, rep)
        assert [r.percentile for r in rows] == ["p50", "x90", "mean"]
        assert rows[0].sinr == rep.p50_sinr and rows[2].se == rep.mean_se


class TestCsv:
    def test_results_and_summary_parse_strictly(self):
        res = []
        rep = sk.run_scenario(small, results_out=res)
        buf = io.StringIO()
        sk.write_results(buf, small, res)
        rows = read_table(io.StringIO(buf.getvalue()), sk.RESULTS_HEADER)
        assert len(rows) == rep.n_samples
        assert sk.summary_row(small, rep)[0] == "gvcf"
        assert len(sk.summary_row(small, rep)) == len(sk.SUMMARY_HEADER)


def test_adaptation_trace_format():
    buf = io.StringIO()
    cfg = replace(small, channels_available=4, gvcf=cl.GvcfConfig(se_target=100.0))
    final, rounds = sk.run_adaptation(cfg, trace=buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "0,request_channels,1,4"
    assert final.channels_available == 20 and rounds[-1].action == cl.NO_CHANGE
    assert len(lines) == len(rounds) == 5
