"""Serialized artifacts: fit bundles, band files, and report tables.

All CSVs carry full-precision floats via repr and no timestamps, so reruns
with the same seed are byte-identical; JSON documents carry one created_at
field and are otherwise deterministic (sorted keys).
"""

from __future__ import annotations

import csv
import json
import time
from pathlib import Path

import numpy as np

from .bootstrap import ConfidenceBand, FitState, FoldState
from .data import QueryVector
from .errors import ConfigError
from .estimator import STATUS_OK, LocalEstimateSet
from .kernels import ForestConfig, forest_from_json, forest_to_json
from .pipeline import PipelineFit

FIT_JSON = "fit.json"
FOREST_JSON = "forest.json"
ESTIMATES_CSV = "estimates.csv"
UNITS_CSV = "units.csv"
BAND_CSV = "band.csv"
BAND_JSON = "band.json"


def _fmt(v) -> str:
    return repr(float(v))


def write_csv(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh).writerows(rows)


def write_json(path, doc) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _x_header(q: int) -> list[str]:
    return [f"x{i + 1}" for i in range(q)]


def estimates_rows(est: LocalEstimateSet):
    q = est.queries.q
    rows = [_x_header(q) + ["theta_hat", "denominator", "support_size", "status"]]
    for j in range(est.queries.d):
        rows.append([_fmt(v) for v in est.queries.points[j]]
                    + [_fmt(est.theta_hat[j]) if est.statuses[j] == STATUS_OK else "",
                       _fmt(est.denominators[j]) if np.isfinite(est.denominators[j]) else "",
                       int(est.support_sizes[j]), est.statuses[j]])
    return rows


def save_fit_bundle(out_dir, fit: PipelineFit, meta: dict) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    state = fit.state
    if state.forest is not None:
        write_json(out / FOREST_JSON, forest_to_json(state.forest))
    write_csv(out / ESTIMATES_CSV, estimates_rows(fit.estimates))

    qx = state.x_units.shape[1]
    fold_of = None
    if state.folds is not None:
        fold_of = np.full(state.x_units.shape[0], -1, dtype=np.int64)
        for j, f in enumerate(state.folds):
            fold_of[f.indices] = j
    rows = [["unit", "row"] + _x_header(qx) + ["m1", "m2", "fold"]]
    for u in range(state.x_units.shape[0]):
        rows.append([u, int(fit.est_indices[u])]
                    + [_fmt(v) for v in state.x_units[u]]
                    + [_fmt(state.m1[u]), _fmt(state.m2[u]),
                       int(fold_of[u]) if fold_of is not None else ""])
    write_csv(out / UNITS_CSV, rows)

    doc = dict(meta)
    doc.update({
        "n_estimation": int(state.x_units.shape[0]),
        "universe": [int(u) for u in state.universe],
        "statuses": {s: fit.estimates.statuses.count(s)
                     for s in set(fit.estimates.statuses)},
        "theta_full": [None if not np.isfinite(t) else float(t)
                       for t in state.theta_full],
        "query_points": [[float(v) for v in row] for row in state.queries],
        "forest_config": {
            "kind": state.config.kind, "b": state.config.b,
            "trees": state.config.trees, "min_leaf": state.config.min_leaf,
            "max_depth": state.config.max_depth, "knn_k": state.config.knn_k,
        },
        "created_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    })
    if state.folds is not None:
        doc["folds"] = [{
            "b": f.config.b, "trees": f.config.trees,
            "theta": [None if not np.isfinite(t) else float(t) for t in f.theta],
        } for f in state.folds]
    write_json(out / FIT_JSON, doc)


def load_fit_bundle(bundle_dir):
    """Rebuild (FitState, LocalEstimateSet, meta) from a saved fit bundle."""
    out = Path(bundle_dir)
    if not (out / FIT_JSON).exists():
        raise ConfigError(f"{out} does not contain a fit bundle ({FIT_JSON} missing)")
    with open(out / FIT_JSON, encoding="utf-8") as fh:
        meta = json.load(fh)

    units = []
    with open(out / UNITS_CSV, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        qx = sum(1 for h in header if h.startswith("x"))
        for row in reader:
            units.append(row)
    m = len(units)
    x_units = np.array([[float(r[2 + i]) for i in range(qx)] for r in units])
    m1 = np.array([float(r[2 + qx]) for r in units])
    m2 = np.array([float(r[3 + qx]) for r in units])
    fold_col = [r[4 + qx] for r in units]

    queries = np.array(meta["query_points"], dtype=np.float64)
    theta = np.array([np.nan if t is None else t for t in meta["theta_full"]])
    fc = meta["forest_config"]
    cfg = ForestConfig(kind=fc["kind"], b=int(fc["b"]), trees=int(fc["trees"]),
                       min_leaf=int(fc["min_leaf"]), max_depth=int(fc["max_depth"]),
                       knn_k=int(fc["knn_k"]))

    with open(out / ESTIMATES_CSV, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        est_rows = list(reader)
    statuses = [r[-1] for r in est_rows]
    denoms = np.array([float(r[-3]) if r[-3] else np.nan for r in est_rows])
    support = np.array([int(r[-2]) for r in est_rows], dtype=np.int64)

    forest = None
    if (out / FOREST_JSON).exists():
        with open(out / FOREST_JSON, encoding="utf-8") as fh:
            forest = forest_from_json(json.load(fh), x_units)

    folds = None
    if meta.get("folds"):
        folds = []
        for j, fdoc in enumerate(meta["folds"]):
            fidx = np.array([u for u in range(m) if fold_col[u] != ""
                             and int(fold_col[u]) == j], dtype=np.int64)
            fcfg = ForestConfig(kind=cfg.kind, b=int(fdoc["b"]),
                                trees=int(fdoc["trees"]), min_leaf=cfg.min_leaf,
                                max_depth=cfg.max_depth, knn_k=cfg.knn_k)
            ftheta = np.array([np.nan if t is None else t for t in fdoc["theta"]])
            folds.append(FoldState(indices=fidx, config=fcfg, theta=ftheta))

    state = FitState(x_units=x_units, m1=m1, m2=m2, queries=queries, config=cfg,
                     master_seed=int(meta["seed"]),
                     universe=np.array(meta["universe"], dtype=np.int64),
                     theta_full=theta, statuses=statuses, forest=forest,
                     folds=folds)
    est = LocalEstimateSet(queries=QueryVector(points=queries), theta_hat=theta,
                           denominators=denoms, support_sizes=support,
                           statuses=statuses)
    return state, est, meta


def band_rows(band: ConfidenceBand, all_queries: np.ndarray, statuses: list[str]):
    q = all_queries.shape[1]
    rows = [_x_header(q) + ["theta_hat", "lower", "upper", "lambda_hat", "status"]]
    ok_j = 0
    for j in range(all_queries.shape[0]):
        coords = [_fmt(v) for v in all_queries[j]]
        if statuses[j] == STATUS_OK:
            rows.append(coords + [_fmt(band.theta_hat[ok_j]), _fmt(band.lower[ok_j]),
                                  _fmt(band.upper[ok_j]), _fmt(band.lambda_hat[ok_j]),
                                  STATUS_OK])
            ok_j += 1
        else:
            rows.append(coords + ["", "", "", "", statuses[j]])
    return rows


def band_json_doc(band: ConfidenceBand, meta: dict):
    doc = dict(meta)
    doc.update({
        "cv": band.cv, "alpha": band.alpha, "n": band.n, "mode": band.mode,
        "B": band.B,
        "queries": [[float(v) for v in row] for row in band.queries],
        "theta_hat": [float(v) for v in band.theta_hat],
        "lower": [float(v) for v in band.lower],
        "upper": [float(v) for v in band.upper],
        "lambda_hat": [float(v) for v in band.lambda_hat],
        "lambda_clamped": [bool(v) for v in band.lambda_clamped],
        "excluded": [{"query": int(j), "status": s} for j, s in band.excluded],
        "created_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    })
    return doc


def heatmap_rows(points: np.ndarray, values: np.ndarray):
    rows = [["x1", "x2", "value"]]
    for j in range(points.shape[0]):
        rows.append([_fmt(points[j, 0]), _fmt(points[j, 1]), _fmt(values[j])])
    return rows
