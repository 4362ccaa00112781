"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line (collected in the terminal summary) and
then asserts the criterion at its stated tolerance.
"""

import math
import subprocess
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

import grid
from femtosim import clustering as cl
from femtosim import simkernel as sk
from femtosim.radio import LinkSample, path_loss_los, path_loss_nlos, sinr
from oracles import flowchart_oracle, random_instance, sinr_linear

pytestmark = pytest.mark.slow


def timed_compare(n_faps, channels, replicas=30):
    t0 = time.perf_counter()
    c = grid.comparison(n_faps, channels, replicas)
    return c, time.perf_counter() - t0


def test_c1_median_sinr_gain(verdict):
    c, secs = timed_compare(50, 20)
    ok = c.d_p50_sinr >= 4.0 and secs <= 60
    verdict("C1", ok, f"50 FAPs/20 ch: dp50_sinr = {c.d_p50_sinr:.2f} dB (need >= 4), {secs:.1f} s")
    assert c.d_p50_sinr >= 4.0
    assert secs <= 60


def test_c2_high_density_gain(verdict):
    c, secs = timed_compare(200, 20)
    ok = c.d_p50_sinr >= 3.0 and secs <= 180
    verdict("C2", ok, f"200 FAPs/20 ch: dp50_sinr = {c.d_p50_sinr:.2f} dB (need >= 3), {secs:.1f} s")
    assert c.d_p50_sinr >= 3.0
    assert secs <= 180


def test_c3_se_gain(verdict):
    c = grid.comparison(50, 20)
    ok = c.d_mean_se >= 0.3 and c.d_x90_se >= 0.4
    verdict("C3", ok, f"50 FAPs/20 ch: mean SE gain {c.d_mean_se:.3f} (need >= 0.3), "
                      f"x90 SE gain {c.d_x90_se:.3f} bps/Hz (need >= 0.4)")
    assert c.d_mean_se >= 0.3
    assert c.d_x90_se >= 0.4


def test_c4_failure_ratio_separation(verdict):
    c = grid.comparison(200, 20)
    g, n = c.report_a.failure_ratio_mean, c.report_b.failure_ratio_mean
    assert c.n_clusters == 5 and len(c.report_a.per_replica_failure) >= 30
    ok = g <= 0.20 and n >= 0.50
    verdict("C4", ok, f"200 FAPs/5 clusters: failure GVCF {g:.3f} (need <= 0.20), NCS {n:.3f} (need >= 0.50)")
    assert n >= 0.50
    assert g <= 0.20


def test_c5_reuse_distance_monotone(verdict):
    problems = []
    worst_share = 1.0
    for n in grid.N_FAPS:
        means = []
        for ch in grid.CHANNELS:
            g = grid.report(sk.GVCF, n, ch)
            x = grid.report(sk.NCS, n, ch)
            means.append(g.avg_min_cochannel_distance_mean)
            pairs = [(a, b) for a, b in zip(g.per_replica_min_distance, x.per_replica_min_distance)
                     if a is not None and b is not None]
            share = sum(a >= b for a, b in pairs) / len(pairs)
            worst_share = min(worst_share, share)
            if share < 0.9:
                problems.append(f"n={n} ch={ch}: GVCF>=NCS in {share:.0%}")
        if any(b < a for a, b in zip(means, means[1:])):
            problems.append(f"n={n}: means {np.round(means, 1).tolist()}")
    verdict("C5", not problems, "avg min co-channel distance monotone in n_vc, GVCF>=NCS in "
            f">= {worst_share:.0%} of replicas" + ("; " + "; ".join(problems) if problems else ""))
    assert not problems


def test_c6_degenerate_equivalence(verdict):
    mismatches = []
    for n in (10, 50, 200):
        for seed in (0, 17):
            cfg = sk.ScenarioConfig(n_faps=n, channels_available=4, n_replicas=5, base_seed=seed)
            if sk.run_scenario(cfg) != sk.run_scenario(replace(cfg, algorithm=sk.NCS)):
                mismatches.append((n, seed))
    verdict("C6", not mismatches, f"GVCF(1) == NCS(1) bitwise on 6 configs, mismatches {mismatches}")
    assert not mismatches


def test_c7_clustering_oracle(verdict):
    rng = np.random.default_rng(2025)
    bad = 0
    for _ in range(200):
        d = random_instance(rng, 12)
        n_vc = int(rng.integers(1, 4))
        d_th = float(rng.choice([0.0, 5.0, 10.0, 20.0, 40.0]))
        a = cl.gvcf_assign(d, n_vc, d_th)
        labels, trace = flowchart_oracle(d, n_vc, d_th)
        bad += a.labels != labels or [(s.fap, s.label) for s in a.steps] != trace
    big = random_instance(np.random.default_rng(1), 12)
    runs = [cl.gvcf_assign(big, 3, 10.0) for _ in range(3)]
    det = runs[0] == runs[1] == runs[2]
    verdict("C7", bad == 0 and det, f"{200 - bad}/200 instances match the flowchart oracle step by step, "
                                    f"3 runs identical: {det}")
    assert bad == 0 and det


def test_c8_link_budget(verdict):
    e1 = abs(path_loss_los(1, 5) - 46.8)
    e2 = abs(path_loss_nlos(20, 2, 20) - 84.46)
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(10_000):
        c = rng.uniform(-120, 0)
        i = tuple(rng.uniform(-140, -20, size=rng.integers(0, 8)))
        n = rng.uniform(-130, -90)
        worst = max(worst, abs(sinr(LinkSample(c, i, n)) - sinr_linear(c, i, n)))
    ok = e1 <= 0.01 and e2 <= 0.01 and worst <= 1e-9
    verdict("C8", ok, f"PL errors {e1:.4f}/{e2:.4f} dB, worst SINR oracle error {worst:.1e} dB over 10^4 samples")
    assert ok


def test_c9_adaptation(verdict):
    base = sk.ScenarioConfig(n_faps=100, n_replicas=10, base_seed=4)
    lut = sk.lut_from_sweep(sk.sweep(base, (100,), grid.CHANNELS, algorithms=(sk.GVCF,)))
    se = [lut.row(100, k, "p50").se for k in range(1, 6)]
    # a target between the 2- and 3-cluster rows, then one below the 1-cluster row
    up_target = (se[1] + se[2]) / 2
    down_target = se[0] - 0.1
    start = replace(base, channels_available=4, gvcf=cl.GvcfConfig(se_target=up_target))
    grown, up_rounds = sk.run_adaptation(start, lut)
    want_up = lut.min_clusters(100, "se", 50, up_target)
    lowered = replace(grown, gvcf=cl.GvcfConfig(se_target=down_target))
    shrunk, down_rounds = sk.run_adaptation(lowered, lut)
    want_down = lut.min_clusters(100, "se", 50, down_target)
    ok = (want_up == 3 and grown.n_clusters == want_up and want_down == 1
          and shrunk.n_clusters == want_down
          and [r.action for r in up_rounds] == [cl.REQUEST, cl.REQUEST, cl.NO_CHANGE]
          and [r.action for r in down_rounds] == [cl.RELEASE, cl.RELEASE, cl.NO_CHANGE])
    verdict("C9", ok, f"target {up_target:.2f} bps/Hz: 1 -> {grown.n_clusters} clusters (LUT minimum {want_up}); "
                      f"target {down_target:.2f}: back to {shrunk.n_clusters} (LUT minimum {want_down})")
    assert ok


def test_c10_invariant_suite(verdict):
    tests_dir = Path(__file__).parent
    proc = subprocess.run(
        [sys.executable, "-m", "pytest", "-q", "-m", "invariant", "-p", "no:cacheprovider",
         str(tests_dir)], capture_output=True, text=True, cwd=tests_dir.parent)
    last = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    failed = [l.split(" - ")[0].replace("FAILED ", "") for l in proc.stdout.splitlines()
              if l.startswith("FAILED")]
    verdict("C10", proc.returncode == 0, f"invariant suite: {last}" + (f"; failing: {failed}" if failed else ""))
    assert proc.returncode == 0, proc.stdout[-3000:]
