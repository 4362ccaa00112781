"""Command-line front end.

    femtosim run|sweep|compare|lut|trace-cluster [--config PATH] [--out DIR]
             [--jobs N] [--force] [--seed N] [--set key=value ...]

Exit codes: 0 ok, 2 malformed config / unknown key, 3 runtime error,
4 refusing to overwrite results, 5 config file missing, 6 value out of range.
"""

import argparse
import logging
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import clustering as cl
from . import simkernel as sk
from .csvio import fmt, write_table
from .geometry import Area, DistanceMatrix, _pairwise, read_topology, write_topology
from .radio import RadioParams
from .spectrum import MAX_FEMTO_CHANNELS, build_cluster_sets, write_pool

log = logging.getLogger("femtosim")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_OVERWRITE = 4
EXIT_MISSING = 5
EXIT_RANGE = 6

OUT_ENV = "FEMTOSIM_OUT"
DEFAULT_OUT = "femtosim-out"
COMMANDS = ("run", "sweep", "compare", "lut", "trace-cluster")


class ConfigError(Exception):
    exit_code = EXIT_CONFIG


class ConfigSyntaxError(ConfigError):
    exit_code = EXIT_CONFIG


class ConfigMissingError(ConfigError):
    exit_code = EXIT_MISSING


class ConfigRangeError(ConfigError):
    exit_code = EXIT_RANGE


class OverwriteRefused(Exception):
    exit_code = EXIT_OVERWRITE


# -- configuration -------------------------------------------------------------

def _opt_float(s):
    return None if s.lower() == "none" else float(s)


def _ms_count(s):
    return None if s.lower() == "random" else int(s)


def _int_list(s):
    return tuple(int(v) for v in s.split(",") if v.strip())


def _fmt_opt(v):
    return "none" if v is None else repr(v)


# key -> (section, parser, default, formatter)
KEYS = {
    "area_side_m": ("geometry", float, 200.0, repr),
    "femto_radius_m": ("geometry", float, 10.0, repr),
    "macro_radius_m": ("geometry", float, 500.0, repr),
    "n_faps": ("geometry", int, 50, str),
    "max_ms_per_fap": ("geometry", int, 4, str),
    "ms_per_fap": ("geometry", _ms_count, None, lambda v: "random" if v is None else str(v)),
    "femto_tx_power_dbm": ("radio", float, 10.0, repr),
    "macro_tx_power_dbm": ("radio", float, 46.0, repr),
    "carrier_freq_ghz": ("radio", float, 2.0, repr),
    "internal_wall_loss_db": ("radio", float, 5.0, repr),
    "external_wall_loss_db": ("radio", float, 10.0, repr),
    "n_external_walls": ("radio", int, 2, str),
    "shadowing_db": ("radio", float, 6.0, repr),
    "ms_noise_figure_db": ("radio", float, 8.0, repr),
    "min_qos_sinr_db": ("radio", float, 0.0, repr),
    "se_cap_bpshz": ("radio", _opt_float, None, _fmt_opt),
    "total_bandwidth_hz": ("spectrum", float, 10e6, repr),
    "channel_width_hz": ("spectrum", float, 180_000.0, repr),
    "total_channels": ("spectrum", int, 50, str),
    "channels": ("spectrum", int, 20, str),
    "algorithm": ("clustering", str, sk.GVCF, str),
    "d_th_m": ("clustering", float, 20.0, repr),
    "se_target_bpshz": ("clustering", _opt_float, None, _fmt_opt),
    "sinr_target_db": ("clustering", _opt_float, None, _fmt_opt),
    "target_percentile": ("clustering", int, 50, str),
    "n_replicas": ("run", int, 30, str),
    "base_seed": ("run", int, 0, str),
    "sweep_n_faps": ("run", _int_list, (50, 100, 150, 200), lambda v: ",".join(map(str, v))),
    "sweep_channels": ("run", _int_list, (4, 8, 12, 16, 20), lambda v: ",".join(map(str, v))),
}


def defaults():
    return {k: spec[2] for k, spec in KEYS.items()}


def _parse_line(text, where):
    if "=" not in text:
        raise ConfigSyntaxError(f"{where}: expected key = value, got {text!r}")
    key, value = (s.strip() for s in text.split("=", 1))
    if key not in KEYS:
        raise ConfigSyntaxError(f"{where}: unknown key {key!r}")
    if not value:
        raise ConfigSyntaxError(f"{where}: empty value for {key!r}")
    try:
        return key, KEYS[key][1](value)
    except ValueError as exc:
        raise ConfigSyntaxError(f"{where}: bad value for {key!r}: {exc}") from None


def parse_settings(text, overrides=(), source="<config>"):
    values = defaults()
    seen = set()
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, val = _parse_line(line, f"{source}:{n}")
        if key in seen:
            raise ConfigSyntaxError(f"{source}:{n}: duplicate key {key!r}")
        seen.add(key)
        values[key] = val
    for ov in overrides:
        key, val = _parse_line(ov, "override")
        values[key] = val
    check_ranges(values)
    return values


def check_ranges(v):
    def need(cond, msg):
        if not cond:
            raise ConfigRangeError(msg)

    need(v["area_side_m"] > 0, "area_side_m must be > 0")
    need(0 < v["femto_radius_m"] < v["macro_radius_m"], "need 0 < femto_radius_m < macro_radius_m")
    need(v["n_faps"] >= 1, "n_faps must be >= 1")
    need(v["max_ms_per_fap"] >= 1, "max_ms_per_fap must be >= 1")
    need(v["ms_per_fap"] is None or 1 <= v["ms_per_fap"] <= v["max_ms_per_fap"],
         "ms_per_fap must be 'random' or in [1, max_ms_per_fap]")
    need(v["carrier_freq_ghz"] > 0, "carrier_freq_ghz must be > 0")
    for k in ("internal_wall_loss_db", "external_wall_loss_db", "shadowing_db",
              "ms_noise_figure_db", "n_external_walls"):
        need(v[k] >= 0, f"{k} must be >= 0")
    need(v["se_cap_bpshz"] is None or v["se_cap_bpshz"] > 0, "se_cap_bpshz must be > 0")
    need(v["channel_width_hz"] > 0, "channel_width_hz must be > 0")
    need(v["total_channels"] >= 1, "total_channels must be >= 1")
    need(v["total_channels"] * v["channel_width_hz"] <= v["total_bandwidth_hz"] * (1 + 1e-9),
         "total_channels * channel_width_hz exceeds total_bandwidth_hz")
    need(1 <= v["channels"] <= min(MAX_FEMTO_CHANNELS, v["total_channels"]),
         f"channels must be in [1, {MAX_FEMTO_CHANNELS}]")
    need(v["algorithm"] in sk.ALGORITHMS, f"algorithm must be one of {sk.ALGORITHMS}")
    need(v["d_th_m"] > 0, "d_th_m must be > 0")
    need(v["target_percentile"] in (50, 90), "target_percentile must be 50 or 90")
    need(v["n_replicas"] >= 1, "n_replicas must be >= 1")
    need(v["sweep_n_faps"] and min(v["sweep_n_faps"]) >= 1, "sweep_n_faps needs positive entries")
    need(v["sweep_channels"] and all(1 <= c <= MAX_FEMTO_CHANNELS for c in v["sweep_channels"]),
         f"sweep_channels entries must be in [1, {MAX_FEMTO_CHANNELS}]")


def settings_to_config(v):
    radio = RadioParams(
        carrier_freq=v["carrier_freq_ghz"], internal_wall_loss=v["internal_wall_loss_db"],
        external_wall_loss_per_wall=v["external_wall_loss_db"],
        n_external_walls_interference=v["n_external_walls"], shadowing_sigma=v["shadowing_db"],
        ms_noise_figure=v["ms_noise_figure_db"], channel_width=v["channel_width_hz"],
        se_cap=v["se_cap_bpshz"])
    gvcf = cl.GvcfConfig(d_th=v["d_th_m"], max_ms_per_fap=v["max_ms_per_fap"],
                         se_target=v["se_target_bpshz"], sinr_target=v["sinr_target_db"],
                         percentile_for_targets=v["target_percentile"],
                         max_channels=min(MAX_FEMTO_CHANNELS, v["total_channels"]))
    return sk.ScenarioConfig(
        area=Area(v["area_side_m"], v["femto_radius_m"], v["macro_radius_m"]),
        n_faps=v["n_faps"], channels_available=v["channels"], algorithm=v["algorithm"],
        n_replicas=v["n_replicas"], base_seed=v["base_seed"], radio=radio, gvcf=gvcf,
        tx_power=v["femto_tx_power_dbm"], ms_per_fap=v["ms_per_fap"],
        total_channels=v["total_channels"], macro_tx_power=v["macro_tx_power_dbm"],
        min_qos_sinr=v["min_qos_sinr_db"], total_bandwidth=v["total_bandwidth_hz"])


def config_to_settings(cfg, sweep_n_faps=(50, 100, 150, 200), sweep_channels=(4, 8, 12, 16, 20)):
    r, g = cfg.radio, cfg.gvcf
    return {
        "area_side_m": cfg.area.side, "femto_radius_m": cfg.area.femto_radius,
        "macro_radius_m": cfg.area.macro_radius, "n_faps": cfg.n_faps,
        "max_ms_per_fap": g.max_ms_per_fap, "ms_per_fap": cfg.ms_per_fap,
        "femto_tx_power_dbm": cfg.tx_power, "macro_tx_power_dbm": cfg.macro_tx_power,
        "carrier_freq_ghz": r.carrier_freq, "internal_wall_loss_db": r.internal_wall_loss,
        "external_wall_loss_db": r.external_wall_loss_per_wall,
        "n_external_walls": r.n_external_walls_interference, "shadowing_db": r.shadowing_sigma,
        "ms_noise_figure_db": r.ms_noise_figure, "min_qos_sinr_db": cfg.min_qos_sinr,
        "se_cap_bpshz": r.se_cap, "total_bandwidth_hz": cfg.total_bandwidth,
        "channel_width_hz": r.channel_width, "total_channels": cfg.total_channels,
        "channels": cfg.channels_available, "algorithm": cfg.algorithm, "d_th_m": g.d_th,
        "se_target_bpshz": g.se_target, "sinr_target_db": g.sinr_target,
        "target_percentile": g.percentile_for_targets, "n_replicas": cfg.n_replicas,
        "base_seed": cfg.base_seed, "sweep_n_faps": tuple(sweep_n_faps),
        "sweep_channels": tuple(sweep_channels),
    }


def serialize_settings(values):
    lines = []
    section = None
    for key, (sec, _, _, to_text) in KEYS.items():
        if sec != section:
            lines.append(f"{'' if section is None else chr(10)}# --- {sec} ---")
            section = sec
        lines.append(f"{key} = {to_text(values[key])}")
    return "\n".join(lines) + "\n"


def serialize_config(cfg):
    return serialize_settings(config_to_settings(cfg))


def read_settings(path, overrides=()):
    if path is None:
        return parse_settings("", overrides)
    p = Path(path)
    if not p.is_file():
        raise ConfigMissingError(f"config file not found: {path}")
    return parse_settings(p.read_text(), overrides, source=str(p))


def parse_config(path, overrides=()):
    return settings_to_config(read_settings(path, overrides))


def parse_config_text(text, overrides=()):
    return settings_to_config(parse_settings(text, overrides))


# -- manifest / output guard -----------------------------------------------------------

@dataclass
class RunManifest:
    command: str
    config_path: str = None
    output_dir: Path = None
    overrides: list = field(default_factory=list)
    force: bool = False
    jobs: int = 1
    topology: str = None

    def __post_init__(self):
        if self.output_dir is None:
            self.output_dir = os.environ.get(OUT_ENV, DEFAULT_OUT)
        self.output_dir = Path(self.output_dir)

    def claim(self, *names):
        """Paths for ``names`` inside the output dir, refusing to clobber."""
        self.output_dir.mkdir(parents=True, exist_ok=True)
        paths = [self.output_dir / n for n in names]
        existing = [p for p in paths if p.exists()]
        if existing and not self.force:
            raise OverwriteRefused(
                f"refusing to overwrite {', '.join(map(str, existing))} (use --force)")
        return paths


# -- figure data -------------------------------------------------------------------

CDF_LEVELS = [k / 100 for k in range(1, 101)]


def _cdf_rows(cfg, rep, attr):
    samples = getattr(rep, attr)
    rows = []
    for q in CDF_LEVELS:
        v = sk.percentile(samples, q) if q < 1 else max(samples)
        rows.append([cfg.algorithm, cfg.n_faps, cfg.channels_available, rep.n_clusters,
                     fmt(v, 6), f"{q:.2f}"])
    return rows


FIGURES = {
    "fig7.csv": (("algorithm", "n_faps", "channels", "n_clusters", "sinr_db", "cdf"),
                 lambda c, r: _cdf_rows(c, r, "sinr_samples")),
    "fig8.csv": (("algorithm", "n_faps", "channels", "n_clusters", "se_bpshz", "cdf"),
                 lambda c, r: _cdf_rows(c, r, "se_samples")),
    "fig9.csv": (("algorithm", "n_faps", "channels", "n_clusters", "failure_ratio", "reserve_fraction"),
                 lambda c, r: [[c.algorithm, c.n_faps, c.channels_available, r.n_clusters,
                                fmt(r.failure_ratio_mean, 6), fmt(r.reserve_fraction_mean, 6)]]),
    "fig10.csv": (("algorithm", "n_faps", "channels", "n_clusters", "avg_min_cochannel_m"),
                  lambda c, r: [[c.algorithm, c.n_faps, c.channels_available, r.n_clusters,
                                 "" if r.avg_min_cochannel_distance_mean is None
                                 else fmt(r.avg_min_cochannel_distance_mean, 6)]]),
    "fig11.csv": (("algorithm", "n_faps", "channels", "n_clusters", "x90_sinr_db"),
                  lambda c, r: [[c.algorithm, c.n_faps, c.channels_available, r.n_clusters,
                                 fmt(r.x90_sinr, 6)]]),
    "fig12.csv": (("algorithm", "n_faps", "channels", "n_clusters", "x90_se_bpshz"),
                  lambda c, r: [[c.algorithm, c.n_faps, c.channels_available, r.n_clusters,
                                 fmt(r.x90_se, 6)]]),
    "fig13.csv": (("algorithm", "n_faps", "channels", "n_clusters", "p50_sinr_db", "mean_sinr_db"),
                  lambda c, r: [[c.algorithm, c.n_faps, c.channels_available, r.n_clusters,
                                 fmt(r.p50_sinr, 6), fmt(r.mean_sinr, 6)]]),
    "fig14.csv": (("algorithm", "n_faps", "channels", "n_clusters", "p50_se_bpshz", "mean_se_bpshz"),
                  lambda c, r: [[c.algorithm, c.n_faps, c.channels_available, r.n_clusters,
                                 fmt(r.p50_se, 6), fmt(r.mean_se, 6)]]),
}


def write_figures(results, paths):
    for (name, (header, rows_of)), path in zip(FIGURES.items(), paths):
        with open(path, "w", newline="") as fh:
            write_table(fh, header, [row for cfg, rep in results for row in rows_of(cfg, rep)])


def write_summary(results, path):
    with open(path, "w", newline="") as fh:
        write_table(fh, sk.SUMMARY_HEADER, [sk.summary_row(c, r) for c, r in results])


LUT_HEADER = ("algorithm", "n_faps", "channels", "n_clusters", "percentile", "sinr_db", "se_bpshz")
COMPARE_HEADER = ("n_faps", "channels", "n_clusters", "d_p50_sinr_db", "d_x90_sinr_db",
                  "d_mean_se_bpshz", "d_p90_se_bpshz", "d_x90_se_bpshz", "d_failure_ratio",
                  "d_avg_min_cochannel_m")


# -- commands ----------------------------------------------------------------------

def cmd_run(m, settings):
    cfg = settings_to_config(settings)
    results_path, summary_path = m.claim("results.csv", "summary.csv")
    res = []
    rep = sk.run_scenario(cfg, m.jobs, res)
    with open(results_path, "w", newline="") as fh:
        sk.write_results(fh, cfg, res)
    write_summary([(cfg, rep)], summary_path)
    print(f"{cfg.algorithm} n_faps={cfg.n_faps} channels={cfg.channels_available}: "
          f"median SINR {rep.p50_sinr:.2f} dB, mean SE {rep.mean_se:.3f} bps/Hz, "
          f"failure ratio {rep.failure_ratio_mean:.3f}")
    return EXIT_OK


def _sweep(m, settings):
    cfg = settings_to_config(settings)
    return sk.sweep(cfg, settings["sweep_n_faps"], settings["sweep_channels"], jobs=m.jobs)


def cmd_sweep(m, settings):
    paths = m.claim(*FIGURES, "summary.csv")
    results = _sweep(m, settings)
    write_figures(results, paths[:-1])
    write_summary(results, paths[-1])
    print(f"wrote {len(paths)} files to {m.output_dir}")
    return EXIT_OK


def cmd_compare(m, settings):
    cfg = settings_to_config(settings)
    compare_path, summary_path = m.claim("compare.csv", "summary.csv")
    pairs = [sk.gvcf_vs_ncs(replace(cfg, channels_available=ch))
             for ch in settings["sweep_channels"]]
    rows, summary = [], []
    for c in sk.compare(pairs, m.jobs):
        rows.append([c.n_faps, c.channels, c.n_clusters, fmt(c.d_p50_sinr, 6), fmt(c.d_x90_sinr, 6),
                     fmt(c.d_mean_se, 6), fmt(c.d_p90_se, 6), fmt(c.d_x90_se, 6),
                     fmt(c.d_failure_ratio, 6),
                     "" if c.d_avg_min_distance is None else fmt(c.d_avg_min_distance, 6)])
        summary += [(replace(cfg, algorithm=sk.GVCF, channels_available=c.channels), c.report_a),
                    (replace(cfg, algorithm=sk.NCS, channels_available=c.channels), c.report_b)]
        print(f"n_faps={c.n_faps} channels={c.channels}: dSINR50 {c.d_p50_sinr:+.2f} dB, "
              f"dSE(mean) {c.d_mean_se:+.3f}, dfailure {c.d_failure_ratio:+.3f}")
    with open(compare_path, "w", newline="") as fh:
        write_table(fh, COMPARE_HEADER, rows)
    write_summary(summary, summary_path)
    return EXIT_OK


def cmd_lut(m, settings):
    (lut_path,) = m.claim("lut.csv")
    lut = sk.lut_from_sweep(_sweep(m, settings))
    with open(lut_path, "w", newline="") as fh:
        write_table(fh, LUT_HEADER, [
            [r.algorithm, r.n_faps, r.channels, r.n_clusters, r.percentile,
             fmt(r.sinr, 6), fmt(r.se, 6)] for r in lut.rows])
    pct = settings["target_percentile"]
    for metric, key in (("se", "se_target_bpshz"), ("sinr", "sinr_target_db")):
        target = settings[key]
        if target is None:
            continue
        for alg in sk.ALGORITHMS:
            for n in lut.densities(alg):
                k = lut.min_clusters(n, metric, pct, target, alg)
                need = "unreachable" if k is None else f"{k} clusters ({lut.channels_for(n, k, alg)} channels)"
                print(f"{alg} n_faps={n} {metric}>={target} @p{pct}: {need}")
    return EXIT_OK


def cmd_trace_cluster(m, settings):
    cfg = settings_to_config(settings)
    names = ("topology.csv", "assignment_gvcf.csv", "assignment_ncs.csv", "pool.csv")
    paths = m.claim(*names)
    if m.topology:
        with open(m.topology) as fh:
            faps = read_topology(fh)
        cfg = replace(cfg, n_faps=len(faps))
        d = DistanceMatrix(_pairwise([f.position for f in faps]))
        n_vc = cfg.n_clusters
        pool = build_cluster_sets(sk._area_pool(cfg), n_vc, min(cfg.gvcf.max_ms_per_fap, cfg.channels_available))
        gvcf = sk._cluster(replace(cfg, algorithm=sk.GVCF), d, pool, cfg.base_seed)
        ncs = sk._cluster(replace(cfg, algorithm=sk.NCS), d, pool, cfg.base_seed)
    else:
        _, faps, _, pool, gvcf = sk.build_replica(replace(cfg, algorithm=sk.GVCF), 0)
        _, _, _, _, ncs = sk.build_replica(replace(cfg, algorithm=sk.NCS), 0)
    with open(paths[0], "w", newline="") as fh:
        write_topology(faps, fh)
    for a, p in ((gvcf, paths[1]), (ncs, paths[2])):
        with open(p, "w", newline="") as fh:
            cl.write_assignment(a, fh)
    with open(paths[3], "w", newline="") as fh:
        write_pool(pool, fh)
    print(f"{len(faps)} FAPs, {pool.n_vc} clusters, {len(gvcf.reserve_set)} in reserve set")
    return EXIT_OK


HANDLERS = {
    "run": cmd_run, "sweep": cmd_sweep, "compare": cmd_compare,
    "lut": cmd_lut, "trace-cluster": cmd_trace_cluster,
}


def build_parser():
    p = argparse.ArgumentParser(prog="femtosim", description=__doc__.split("\n")[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="flat key = value scenario file")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    p.add_argument("--jobs", type=int, default=1, help="parallel replica workers")
    p.add_argument("--force", action="store_true", help="overwrite existing result files")
    p.add_argument("--seed", type=int, help="override base_seed")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--topology", help="trace-cluster: read FAP/MS positions from this CSV")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"base_seed={args.seed}")
    m = RunManifest(args.command, args.config, args.out, overrides, args.force,
                    max(1, args.jobs), args.topology)
    try:
        settings = read_settings(m.config_path, m.overrides)
        return HANDLERS[m.command](m, settings)
    except (ConfigError, OverwriteRefused) as exc:
        print(f"femtosim: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:
        log.debug("runtime failure", exc_info=True)
        print(f"femtosim: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
