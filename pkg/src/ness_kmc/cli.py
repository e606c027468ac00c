"""Command-line front end: ``ness-kmc <command> --config PATH [--seed S] [--out DIR]``.

Every command writes CSV/JSON files into the output directory plus a
``manifest.json`` echoing the full configuration.  Exit codes: 0 success,
1 configuration error, 2 I/O error, 3 unsupported N, 4 numerical failure.
"""
import argparse
import hashlib
import json
import logging
import math
import os
import sys
import time

import numpy as np

from . import __version__
from . import kernels as K_
from .config import SCHEMA_VERSION, ConfigError, load_config
from .engine import fmt, run_trajectory, sample_time_h_chain, write_chain_csv, write_trajectory_csv
from .ensemble import parse_law, resolve_workers, stream_tag
from .lyapunov import (alpha_exponent, calibrate_thresholds, drift_estimate_induced_W,
                       drift_estimate_jump, drift_estimate_time_h, exponent_seq, v_total)
from .model import clock_rates
from .oracle import (GridSpec, GeneratorMatrix, OracleError, build_generator, stationary_mean,
                     stationary_solve, write_stationary_csv)
from .rng import RngStream
from . import stats

log = logging.getLogger("ness_kmc")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DIM, EXIT_NUMERIC = 0, 1, 2, 3, 4


class UnsupportedDimension(Exception):
    pass


class Run:
    """Output directory, manifest bookkeeping and shared setup."""

    def __init__(self, cfg, out, workers):
        self.cfg = cfg
        self.out = out
        self.workers = resolve_workers(workers if workers is not None else cfg.workers)
        self.outputs = []
        self.warnings = []
        self.n_events = 0
        self.extra = {}
        self.t0 = time.perf_counter()
        os.makedirs(out, exist_ok=True)

    def path(self, name):
        self.outputs.append(name)
        return os.path.join(self.out, name)

    def warn(self, msg):
        log.warning(msg)
        self.warnings.append(msg)

    def params(self, calibrate=True):
        p = self.cfg.params()
        if calibrate and not p.calibrated:
            q = calibrate_thresholds(p, self.cfg.calib_q, self.cfg.calib_t_pilot, self.cfg.calib_burn_in)
            p = q.with_thresholds(p.M0 or q.M0, p.M1 or q.M1)
            log.info("calibrated M0=%s M1=%s", fmt(p.M0), fmt(p.M1))
        self.extra["M0"], self.extra["M1"] = p.M0, p.M1
        return p

    def manifest(self):
        doc = {
            "schema_version": SCHEMA_VERSION,
            "code_version": __version__,
            "command": self.cfg.kind,
            "config": self.cfg.as_dict(),
            "config_ini": self.cfg.to_ini(),
            "wall_time_s": time.perf_counter() - self.t0,
            "n_events": int(self.n_events),
            "workers": self.workers,
            "warnings": self.warnings,
            "outputs": self.outputs,
        }
        doc.update(self.extra)
        _write_json(os.path.join(self.out, "manifest.json"), doc)


def _write_json(path, doc):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True, default=_json_default)
        f.write("\n")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _finite(x):
    return x if x is None or math.isfinite(x) else None


def cmd_simulate(run):
    cfg = run.cfg
    p = run.params(calibrate=cfg.sim_chain)
    law = parse_law(cfg.sim_initial, p)
    init = law.sample(p.N, p.seed, cfg.sim_count)
    for i in range(cfg.sim_count):
        tr = run_trajectory(init[i], p, cfg.sim_t_end, RngStream(p.seed, i))
        run.n_events += tr.n_events
        if tr.n_events == 0:
            run.warn(f"trajectory {i}: no events (all clocks frozen)")
        write_trajectory_csv(tr, run.path(f"trajectory_{i:04d}.csv"))
        if cfg.sim_chain and tr.t_end >= p.h:
            write_chain_csv(sample_time_h_chain(tr, p), run.path(f"chain_{i:04d}.csv"))


def _parse_window(text):
    if text in ("", "default"):
        return None
    if text.startswith("drop"):
        return text
    lo, _, hi = text.partition(":")
    return (float(lo), float(hi) if hi else math.inf)


def cmd_hitting(run):
    cfg = run.cfg
    p = run.params()
    ens = stats.run_hitting(cfg.hit_initial, p, cfg.hit_count, cfg.hit_t_max, cfg.hit_target,
                            cfg.hit_induced, run.workers)
    run.n_events += ens.n_events
    curve = stats.collect_hitting_tail(ens, cfg.hit_target)
    stats.write_survival_csv(run.path("survival.csv"), curve)
    extra = {"target": cfg.hit_target, "induced": cfg.hit_induced, "t_max": cfg.hit_t_max}
    try:
        if cfg.hit_induced:
            # "drop:f" is a power-law rule; the geometric fit takes lo:hi or its own default
            win = _parse_window(cfg.hit_window)
            fit = stats.fit_geometric_tail(curve, win if isinstance(win, tuple) else None,
                                           n_boot=cfg.hit_n_boot, seed=p.seed)
            extra.update(model="geometric", rate=fit.exponent)
        else:
            fit = stats.fit_tail_exponent(curve, _parse_window(cfg.hit_window), n_boot=cfg.hit_n_boot, seed=p.seed)
            extra["model"] = "power"
            extra["target_exponent"] = -(2 - 2 * p.eta)
            try:
                d = stats.fit_tail_exponent(curve, None, n_boot=200, seed=p.seed)
                extra["default_window_fit"] = {"exponent": d.exponent, "ci": [d.ci_low, d.ci_high],
                                               "window": list(d.window), "r2": d.r2}
            except ValueError as exc:
                extra["default_window_fit"] = {"error": str(exc)}
    except ValueError as exc:
        run.warn(f"tail fit failed: {exc}")
        _write_json(run.path("fit.json"), {"error": str(exc), **extra})
        return
    if fit.poor_fit:
        run.warn(f"poor fit: r2={fit.r2:.4f}")
    stats.write_fit_json(run.path("fit.json"), fit, extra)


def cmd_ness(run):
    cfg = run.cfg
    p = run.params(calibrate=False)
    ens = stats.run_flux(cfg.ness_initial, p, cfg.ness_t_end, cfg.ness_count, cfg.ness_burn_in, run.workers)
    run.n_events += ens.n_events
    dur = ens.t_end - ens.burn_in
    per_mean = ens.integral / dur
    mean = per_mean.mean(axis=0)
    second = (ens.integral_sq / dur).mean(axis=0)
    n = per_mean.shape[0]
    se = per_mean.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.full(p.N, np.nan)
    with open(run.path("profile.csv"), "w", newline="") as f:
        f.write("site,mean,variance,se_mean\n")
        for i in range(p.N):
            f.write(",".join((str(i + 1), fmt(mean[i]), fmt(second[i] - mean[i] ** 2), fmt(se[i]))) + "\n")
    r = stats.flux_rates(ens)
    bound = 0.5 * (p.T_L**1.5 + p.T_R**1.5)
    _write_json(run.path("flux.json"), {
        "inflow_rate": r.inflow, "inflow_se": _finite(r.inflow_se),
        "outflow_rate": r.outflow, "outflow_se": _finite(r.outflow_se),
        "inflow_bound": bound, "window": [ens.burn_in, ens.t_end], "count": n,
    })


def cmd_mixing(run):
    cfg = run.cfg
    p = run.params(calibrate=False)
    pts = stats.mixing_curve(p, cfg.mix_law_mu, cfg.mix_law_nu, cfg.mix_times, cfg.mix_count,
                             cfg.mix_bins, cfg.mix_mode, cfg.mix_n_boot, run.workers)
    with open(run.path("tv.csv"), "w", newline="") as f:
        f.write("t,tv,ci_low,ci_high,floor,corrected,above_floor\n")
        for q in pts:
            f.write(",".join(fmt(v) for v in (*q, q.tv > cfg.mix_floor_factor * q.floor)) + "\n")
    slope, se, k = stats.fit_mixing_slope(pts, cfg.mix_floor_factor)
    _write_json(run.path("fit.json"), {"slope": _finite(slope), "slope_se": _finite(se), "n_points": k,
                                        "floor_factor": cfg.mix_floor_factor, "conjectured_slope": -2.0,
                                        "mode": cfg.mix_mode, "bins": cfg.mix_bins})


def state_hash(e):
    return hashlib.sha1(np.asarray(e, dtype="<f8").tobytes()).hexdigest()[:16]


def cmd_drift(run):
    cfg = run.cfg
    p = run.params()
    seq = exponent_seq(p.N, p.eta)
    law = parse_law(cfg.drift_probe, p)
    states = law.sample(p.N, p.seed, cfg.drift_probes, stream_base=stream_tag(7))
    alpha = alpha_exponent(p.eta)
    rows = []
    for i, e in enumerate(states):
        rng = RngStream(p.seed, stream_tag(8) + i)
        v = v_total(e, seq).value
        w = float(e.sum())
        if cfg.drift_estimator == "time_h":
            est = drift_estimate_time_h(e, p, seq, cfg.drift_samples, rng, run.workers)
            bound = v**alpha
        elif cfg.drift_estimator == "jump":
            est = drift_estimate_jump(e, p, seq, cfg.drift_samples, rng)
            bound = v**alpha / clock_rates(e, p).sum()
        else:
            try:
                est = drift_estimate_induced_W(e, p, seq, cfg.drift_samples, rng, workers=run.workers)
            except ValueError as exc:
                run.warn(f"probe {i}: {exc}")
                continue
            bound = w
        rows.append((state_hash(e), v, w, est.mean_change, est.std_error, cfg.drift_samples, bound, *e))
    with open(run.path("drift.csv"), "w", newline="") as f:
        f.write(",".join(["state_hash", "V", "W", "estimate", "stderr", "samples", "alpha_bound_value"]
                         + [f"E_{i + 1}" for i in range(p.N)]) + "\n")
        for r in rows:
            f.write(",".join([r[0]] + [fmt(x) for x in r[1:]]) + "\n")
    run.extra.update({"estimator": cfg.drift_estimator, "alpha": alpha})


def _read_generator(path):
    rows = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip() and not line.startswith("#"):
                rows.append([float(x) for x in line.split(",")])
    Q = np.array(rows)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise ConfigError("generator CSV must hold a square matrix")
    return Q


def cmd_oracle(run):
    cfg = run.cfg
    p = run.params(calibrate=False)
    if cfg.oracle_generator:
        pi = stationary_solve(_read_generator(cfg.oracle_generator))
        with open(run.path("stationary.csv"), "w", newline="") as f:
            f.write("state,pi\n")
            for i, x in enumerate(pi):
                f.write(f"{i},{fmt(x)}\n")
        return
    if p.N > 2:
        raise UnsupportedDimension(f"the oracle supports N <= 2, got N={p.N}")
    grid = GridSpec.default(p, cfg.oracle_bins, cfg.oracle_spacing)
    if cfg.oracle_e_max is not None:
        grid = GridSpec(cfg.oracle_e_max, cfg.oracle_bins, cfg.oracle_spacing, grid.scale)
    pi = stationary_solve(build_generator(p, grid))
    mean = stationary_mean(pi, grid, p.N)
    write_stationary_csv(run.path("stationary.csv"), pi, grid, p.N,
                         {"T_L": p.T_L, "T_R": p.T_R, "K": p.K, "N": p.N})
    fine = grid.refine()
    mean_f = stationary_mean(stationary_solve(build_generator(p, fine)), fine, p.N)
    e0 = np.full(p.N, 0.5 * (p.T_L + p.T_R))
    k0, k1, sub = np.uint64(p.seed), np.uint64(stream_tag(9)), np.uint64(0)
    if p.N == 1:
        w = K_.occupation_1d(e0, 1, p.T_L, p.T_R, p.K, grid.edges, cfg.oracle_burn_events,
                             cfg.oracle_events, k0, k1, sub, 0)
    else:
        w = K_.occupation_2d(e0, p.T_L, p.T_R, p.K, grid.edges, cfg.oracle_burn_events,
                             cfg.oracle_events, k0, k1, sub).ravel()
    run.n_events += cfg.oracle_burn_events + cfg.oracle_events
    w = w / w.sum()
    _write_json(run.path("comparison.json"), {
        "oracle_mean": mean, "refined_mean": mean_f,
        "refinement_shift": float(np.max(np.abs(mean_f - mean) / np.abs(mean))),
        "simulator_mean": stationary_mean(w, grid, p.N),
        "tv_simulator_oracle": 0.5 * float(np.abs(w - pi).sum()),
        "bins": grid.bins, "spacing": grid.spacing, "e_max": grid.e_max,
        "events": cfg.oracle_events,
    })


COMMANDS = {"simulate": cmd_simulate, "hitting": cmd_hitting, "ness": cmd_ness,
            "mixing": cmd_mixing, "drift": cmd_drift, "oracle": cmd_oracle}


class _Parser(argparse.ArgumentParser):
    # usage errors are configuration errors; argparse's own code 2 means I/O here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser():
    ap = _Parser(prog="ness-kmc", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS), help="experiment to run")
    ap.add_argument("--config", required=True, help="INI configuration file")
    ap.add_argument("--seed", type=lambda s: int(s, 0), help="override model.seed")
    ap.add_argument("--out", default="out", help="output directory (default: out)")
    ap.add_argument("--workers", type=int, help="worker threads (overrides config and NESS_KMC_WORKERS)")
    ap.add_argument("--quiet", action="store_true", help="only report errors")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO,
                        format="ness-kmc: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config, {"seed": args.seed, "kind": args.command})
        run = Run(cfg, args.out, args.workers)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except ValueError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    try:
        COMMANDS[args.command](run)
        run.manifest()
    except UnsupportedDimension as exc:
        log.error("%s", exc)
        return EXIT_DIM
    except (OracleError, FloatingPointError, RuntimeError, np.linalg.LinAlgError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except ValueError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    log.info("wrote %d files to %s", len(run.outputs) + 1, args.out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
