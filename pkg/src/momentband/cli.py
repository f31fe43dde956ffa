"""Command-line front end: fit | band | simulate | ustat.

Every command is a pure function of (config, input files, seed): reruns
produce byte-identical CSVs and JSON identical up to the created_at field.
Exit codes: 0 ok, 2 config error, 3 resource/budget error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import errors as err
from .bootstrap import build_band, compute_roots, critical_value, studentize
from .data import Schema, load_dataset, make_query_grid
from .pipeline import band_from_fit, fit_pipeline
from .reports import (BAND_CSV, BAND_JSON, band_json_doc, band_rows,
                      heatmap_rows, load_fit_bundle, save_fit_bundle,
                      write_csv, write_json)
from .sim import DgpSpec, run_coverage
from .ustat import DiscreteLaw, residual_scaling_experiment

_CONFIG_EXIT = (err.ConfigError, err.SchemaError, err.ParseError, err.EmptyData,
                err.BadBounds, err.ZeroResolution, err.BadScheme, err.BadK,
                err.BadSize, err.BadAlpha, err.BadOrder, err.OrderTooHigh,
                err.MissingNuisance, err.MissingTreatment, err.EmptyArm,
                err.ZeroReplicates, err.TooSmall, err.UnsupportedLaw)
_RESOURCE_EXIT = (err.BudgetExceeded, err.TooFewReplicates)
_NUMERIC_EXIT = (err.IllPosed, err.EmptySupport, err.DegenerateQ, err.OddN,
                 err.OddFold, err.NotCentered)


def _fail(e: Exception, code: int) -> int:
    doc = {"error": type(e).__name__, "message": str(e), "exit_code": code}
    print(json.dumps(doc, sort_keys=True), file=sys.stderr)
    return code


def _config_epilog() -> str:
    lines = ["config keys (key = value; CLI flags override):"]
    for key, (_, default, help_text) in cfgmod.KEYS.items():
        lines.append(f"  {key:<18} default={default!r:<28} {help_text}")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="momentband",
        description="Simultaneous confidence bands for local structural "
                    "parameters via subsampled kernels and the half-sample "
                    "bootstrap.",
        epilog=_config_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="key=value config file")
        sp.add_argument("--data", help="input CSV path")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int, help="master seed")
        sp.add_argument("--threads", type=int, help="worker-pool cap")
        sp.add_argument("--alpha", type=float, help="band level")
        sp.add_argument("--bn", type=float, help="subsample fraction b/n")
        sp.add_argument("--trees", type=int, help="subsample count r")
        sp.add_argument("--replicates", type=int, help="bootstrap replicates B")
        sp.add_argument("--mode", help="half_grouped | half_exact | binomial | crossfit")
        sp.add_argument("--grid", help="query grid lo:hi:res[;...]")
        sp.add_argument("--moment", help="cate_aipw | conditional_mean")
        sp.add_argument("--scheme", help="same_sample | independent_split | kfold")
        sp.add_argument("--outcome", help="outcome column")
        sp.add_argument("--treatment", help="treatment column ('' for none)")
        sp.add_argument("--covariates", help="comma-separated covariate columns")
        sp.add_argument("--conditioning", help="comma-separated conditioning columns")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="set any config key (repeatable)")

    common(sub.add_parser("fit", help="fit the estimator, write the fit bundle"))
    band = sub.add_parser("band", help="build the simultaneous confidence band")
    common(band)
    band.add_argument("--fit", dest="fit_bundle",
                      help="existing fit bundle directory (skips refitting)")
    common(sub.add_parser("simulate", help="coverage/width/bias study on a parametric DGP"))
    common(sub.add_parser("ustat", help="U-statistic residual scaling experiment"))
    return p


_FLAG_KEYS = ("data", "out", "seed", "threads", "alpha", "bn", "trees",
              "replicates", "mode", "grid", "moment", "scheme", "outcome",
              "treatment", "covariates", "conditioning")


def resolve_config(args) -> cfgmod.RunConfig:
    cfg = cfgmod.default_config()
    if args.config:
        cfgmod.load_config_file(args.config, cfg)
    for key in _FLAG_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            cfgmod.set_key(cfg, key, v if isinstance(v, str) else repr(v))
    for item in args.set:
        key, eq, raw = item.partition("=")
        if not eq:
            raise err.ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        cfgmod.set_key(cfg, key.strip(), raw)
    cfgmod.validate(cfg)
    return cfg


def _schema_from(cfg) -> Schema:
    # the regression moment never reads a treatment column
    treatment = cfg.treatment.strip() or None
    if cfg.moment == "conditional_mean":
        treatment = None
    return Schema(outcome=cfg.outcome,
                  covariates=tuple(s.strip() for s in cfg.covariates.split(",") if s.strip()),
                  conditioning=tuple(s.strip() for s in cfg.conditioning.split(",") if s.strip()),
                  treatment=treatment)


def _load(cfg):
    if not cfg.data:
        raise err.ConfigError("no input data; pass --data or set data= in the config")
    schema = _schema_from(cfg)
    ds = load_dataset(cfg.data, schema)
    bounds, res = cfgmod.parse_grid_spec(cfg.grid)
    return ds, make_query_grid(bounds, res)


def _meta(cfg, extra=None) -> dict:
    keys = ("data", "seed", "threads", "moment", "scheme", "mode", "kernel",
            "bn", "alpha", "replicates", "grid")
    doc = {k: cfg.values[k] for k in keys}
    doc.update(extra or {})
    return doc


def cmd_fit(cfg) -> int:
    ds, queries = _load(cfg)
    fit = fit_pipeline(ds, queries, cfg.pipeline_config(), cfg.seed)
    save_fit_bundle(cfg.out, fit, _meta(cfg))
    counts = {s: fit.estimates.statuses.count(s) for s in set(fit.estimates.statuses)}
    print(f"fit: n={ds.n} estimation={fit.est_indices.shape[0]} "
          f"b={fit.state.config.b} trees={fit.state.config.trees} "
          f"d={queries.d} statuses={counts}")
    for w in fit.tuning_warnings:
        print(f"warning: {w}")
    print(f"wrote {cfg.out}/fit.json forest.json estimates.csv units.csv")
    return 0


def _write_band_files(cfg, band, queries_pts, statuses, meta):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / BAND_CSV, band_rows(band, queries_pts, statuses))
    write_json(out / BAND_JSON, band_json_doc(band, meta))
    if queries_pts.shape[1] == 2 and band.queries.shape[0] > 0:
        for name, vals in (("heat_theta.csv", band.theta_hat),
                           ("heat_lower.csv", band.lower),
                           ("heat_upper.csv", band.upper)):
            write_csv(out / name, heatmap_rows(band.queries, vals))
    print(f"band: d={queries_pts.shape[0]} retained={band.queries.shape[0]} "
          f"cv={band.cv:.6g} alpha={band.alpha} n={band.n}")
    print(f"wrote {cfg.out}/{BAND_CSV} {BAND_JSON}")


def cmd_band(cfg, fit_bundle=None, mode_override=None, reps_override=None) -> int:
    if fit_bundle:
        state, est, meta = load_fit_bundle(fit_bundle)
        # bundle settings win unless overridden explicitly on the command line
        mode = mode_override or meta.get("mode") or cfg.values["mode"]
        B = reps_override or meta.get("replicates") or cfg.replicates
        roots = compute_roots(state, B, state.master_seed, mode,
                              threads=cfg.threads)
        ok = state.ok_mask
        lam, sup_stats, clamped = studentize(roots.roots[:, ok], n=state.n,
                                             theta_hat=state.theta_full[ok])
        cv = critical_value(sup_stats, cfg.alpha)
        band = build_band(est, lam, cv, cfg.alpha, state.n,
                          lambda_clamped=clamped, mode=mode, B=B)
        meta_out = _meta(cfg, {"b": state.config.b, "fit_bundle": str(fit_bundle),
                               "mode": mode, "replicates": B})
        _write_band_files(cfg, band, state.queries, state.statuses, meta_out)
        return 0
    ds, queries = _load(cfg)
    fit = fit_pipeline(ds, queries, cfg.pipeline_config(), cfg.seed)
    res = band_from_fit(fit)
    save_fit_bundle(cfg.out, fit, _meta(cfg))
    meta_out = _meta(cfg, {"b": fit.state.config.b})
    _write_band_files(cfg, res.band, queries.points, fit.estimates.statuses, meta_out)
    return 0


def cmd_simulate(cfg) -> int:
    dgp = DgpSpec(kind=cfg.dgp, noise_scale=cfg.noise,
                  propensity=cfg.dgp_propensity,
                  logistic_slope=cfg.logistic_slope,
                  const_theta=cfg.const_theta)
    report = run_coverage(
        dgp, base_n=cfg.base_n,
        multipliers=cfgmod.parse_float_list(cfg.multipliers),
        regimes=cfgmod.parse_regimes(cfg.regimes),
        reps=cfg.sim_reps, alpha=cfg.alpha, seed=cfg.seed,
        grid_resolution=cfg.grid_resolution,
        pipeline=cfg.pipeline_config(), threads=cfg.threads)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "coverage.csv", report.to_rows())
    doc = _meta(cfg, {
        "dgp": cfg.dgp, "base_n": cfg.base_n, "sim_reps": cfg.sim_reps,
        "multipliers": cfg.multipliers, "regimes": cfg.regimes,
        "master_seed": report.master_seed,
        "failures": {f"{c.h}/{c.regime}": c.failures for c in report.cells},
        "created_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    })
    write_json(out / "coverage.json", doc)
    for c in report.cells:
        print(f"cell h={c.h} regime={c.regime} n={c.n} b={c.b}: "
              f"cov={c.cov_sim:.3f} lo={c.cov_lower:.3f} up={c.cov_upper:.3f} "
              f"width={c.width_mean:.4f} max_bias={c.bias_max_mean:.4f} "
              f"failures={c.failures}")
    print(f"wrote {cfg.out}/coverage.csv coverage.json")
    return 0


def cmd_ustat(cfg) -> int:
    support, probs = cfgmod.parse_law_spec(cfg.ustat_law)
    law = DiscreteLaw(support=np.array(support), probs=np.array(probs))
    report = residual_scaling_experiment(
        law, cfg.ustat_kernel, cfgmod.parse_int_list(cfg.ustat_n),
        cfgmod.parse_int_list(cfg.ustat_b), cfg.ustat_reps, cfg.seed,
        budget=cfg.budget)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "ustat_report.csv", report.to_rows())
    doc = {"kernel": cfg.ustat_kernel, "law": cfg.ustat_law,
           "n": cfg.ustat_n, "b": cfg.ustat_b, "reps": cfg.ustat_reps,
           "seed": cfg.seed, "budget": cfg.budget,
           "created_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())}
    write_json(out / "ustat_report.json", doc)
    for r in report.rows:
        print(f"n={r.n} b={r.b}: resid_q50={r.resid_q50:.6g} "
              f"hajek_scale={r.hajek_scale:.6g} ratio={r.ratio_med:.6g} "
              f"b*sigma_b^2={r.b_sigma_b2:.6g} nu^2={r.nu2:.6g} "
              f"check={'ok' if r.variance_check_ok else 'FAIL'}")
    print(f"wrote {cfg.out}/ustat_report.csv ustat_report.json")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.command == "fit":
            return cmd_fit(cfg)
        if args.command == "band":
            return cmd_band(cfg, fit_bundle=getattr(args, "fit_bundle", None),
                            mode_override=args.mode,
                            reps_override=args.replicates)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "ustat":
            return cmd_ustat(cfg)
        raise err.ConfigError(f"unknown command {args.command!r}")
    except _RESOURCE_EXIT as e:
        return _fail(e, 3)
    except _NUMERIC_EXIT as e:
        return _fail(e, 4)
    except _CONFIG_EXIT as e:
        return _fail(e, 2)
    except OSError as e:
        return _fail(e, 2)


if __name__ == "__main__":
    sys.exit(main())
