"""Flat key=value run configuration.

Config files are UTF-8 text, one ``key = value`` per line, '#' comments.
Every key is validated against the registry below before any compute; unknown
keys are errors. CLI flags override file keys.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigError
from .pipeline import PipelineConfig

_NONE_INT = "none"


def _parse_bool(v: str):
    if v.lower() in ("1", "true", "yes"):
        return True
    if v.lower() in ("0", "false", "no"):
        return False
    raise ValueError(v)


def _parse_opt_int(v: str):
    return None if v.strip().lower() in (_NONE_INT, "") else int(v)


def _parse_opt_float(v: str):
    return None if v.strip().lower() in (_NONE_INT, "") else float(v)


# key -> (parser, default, help)
KEYS = {
    "data": (str, "", "input CSV path (header row required)"),
    "out": (str, "out", "output directory"),
    "seed": (int, 0, "master seed; all randomness derives from it"),
    "threads": (int, 1, "worker-pool cap for parallel sections"),
    "moment": (str, "cate_aipw", "cate_aipw | conditional_mean"),
    "outcome": (str, "y", "outcome column name"),
    "treatment": (str, "w", "treatment column name ('' for none)"),
    "covariates": (str, "z1,z2", "comma-separated covariate columns"),
    "conditioning": (str, "z1", "comma-separated conditioning columns (subset of covariates)"),
    "grid": (str, "0:1:25", "query grid, per-axis lo:hi:res joined by ';'"),
    "kernel": (str, "tree", "tree | knn"),
    "knn_k": (int, 10, "neighbor count for knn kernels"),
    "bn": (float, 0.05, "subsample fraction b/n for the main kernel"),
    "b": (_parse_opt_int, None, "explicit subsample size (overrides bn)"),
    "trees": (_parse_opt_int, None, "subsample count r (default max(ceil((n/b)^2), 2000))"),
    "min_leaf": (int, 5, "minimum structure units per leaf"),
    "max_depth": (int, 0, "tree depth cap (0 = unlimited)"),
    "replicates": (int, 200, "bootstrap replicates B"),
    "alpha": (float, 0.1, "band level"),
    "mode": (str, "half_grouped", "half_grouped | half_exact | binomial | crossfit"),
    "scheme": (str, "same_sample", "same_sample | independent_split | kfold"),
    "split_fraction": (float, 0.5, "nuisance fraction under independent_split"),
    "kfold_k": (int, 2, "folds under kfold / crossfit"),
    "known_propensity": (_parse_opt_float, None, "constant propensity, skips the pi forest"),
    "pi_clip": (float, 0.01, "propensity clip level"),
    "nuisance_bn": (float, 0.025, "subsample fraction for nuisance forests"),
    "nuisance_trees": (int, 500, "subsample count for nuisance forests"),
    "nuisance_min_leaf": (int, 5, "min_leaf for nuisance forests"),
    "odd_n": (str, "lenient", "lenient (drop a seeded unit) | strict (error)"),
    # simulate
    "dgp": (str, "linear_cate", "linear_cate | nonlinear_cate | pure_regression"),
    "base_n": (int, 2438, "base sample size n0"),
    "multipliers": (str, "1,2.5,5,7.5", "sample-size multipliers h"),
    "regimes": (str, "const:0.05,mixed:0.05,fixed_b:0.05",
                "b/n regimes: const:c | mixed:c ((2/(h+1))c) | fixed_b:c (c/h)"),
    "sim_reps": (int, 200, "Monte Carlo reps per cell"),
    "noise": (float, 0.5, "DGP noise scale"),
    "dgp_propensity": (float, 0.5, "DGP constant propensity"),
    "logistic_slope": (_parse_opt_float, None, "logistic propensity slope (overrides constant)"),
    "const_theta": (_parse_opt_float, None, "constant target override"),
    "grid_resolution": (int, 25, "1-D query grid cells for simulate"),
    # ustat
    "ustat_kernel": (str, "pairwise_interaction",
                     "additive | product | pairwise_interaction | additive_product"),
    "ustat_law": (str, "-1:0.25,0:0.5,1:0.25", "atoms value:prob, comma separated"),
    "ustat_n": (str, "40", "comma-separated sample sizes"),
    "ustat_b": (str, "2,3,4", "comma-separated kernel orders"),
    "ustat_reps": (int, 200, "Monte Carlo reps per (n, b)"),
    "budget": (int, 10_000_000, "enumeration budget (kernel evaluations)"),
}


@dataclass
class RunConfig:
    values: dict

    def __getattr__(self, key):
        try:
            return self.values[key]
        except KeyError:
            raise AttributeError(key) from None

    def pipeline_config(self) -> PipelineConfig:
        v = self.values
        return PipelineConfig(
            moment=v["moment"], kernel=v["kernel"], bn=v["bn"], b=v["b"],
            trees=v["trees"], min_leaf=v["min_leaf"], max_depth=v["max_depth"],
            knn_k=v["knn_k"], replicates=v["replicates"], alpha=v["alpha"],
            mode=v["mode"], scheme=v["scheme"],
            split_fraction=v["split_fraction"], kfold_k=v["kfold_k"],
            known_propensity=v["known_propensity"], pi_clip=v["pi_clip"],
            nuisance_bn=v["nuisance_bn"], nuisance_trees=v["nuisance_trees"],
            nuisance_min_leaf=v["nuisance_min_leaf"], odd_policy=v["odd_n"],
            threads=v["threads"])


def default_config() -> RunConfig:
    return RunConfig(values={k: d for k, (_, d, _) in KEYS.items()})


def set_key(cfg: RunConfig, key: str, raw) -> None:
    if key not in KEYS:
        raise ConfigError(f"unknown config key {key!r}")
    parser = KEYS[key][0]
    if isinstance(raw, str):
        try:
            cfg.values[key] = parser(raw.strip())
        except (ValueError, TypeError):
            raise ConfigError(f"bad value {raw!r} for key {key!r}") from None
    else:
        cfg.values[key] = raw


def load_config_file(path, cfg: RunConfig | None = None) -> RunConfig:
    cfg = cfg or default_config()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected key = value")
            key, _, raw = line.partition("=")
            set_key(cfg, key.strip(), raw)
    return cfg


def validate(cfg: RunConfig) -> None:
    v = cfg.values
    if v["moment"] not in ("cate_aipw", "conditional_mean"):
        raise ConfigError(f"moment must be cate_aipw | conditional_mean, got {v['moment']!r}")
    if v["kernel"] not in ("tree", "knn"):
        raise ConfigError(f"kernel must be tree | knn, got {v['kernel']!r}")
    if v["mode"] not in ("half_grouped", "half_exact", "binomial", "crossfit"):
        raise ConfigError(f"unknown mode {v['mode']!r}")
    if v["scheme"] not in ("same_sample", "independent_split", "kfold"):
        raise ConfigError(f"unknown scheme {v['scheme']!r}")
    if v["odd_n"] not in ("lenient", "strict"):
        raise ConfigError(f"odd_n must be lenient | strict, got {v['odd_n']!r}")
    if not (0.0 < v["alpha"] < 1.0):
        raise ConfigError(f"alpha must be in (0,1), got {v['alpha']}")
    if not (0.0 < v["bn"] <= 1.0):
        raise ConfigError(f"bn must be in (0,1], got {v['bn']}")
    if v["replicates"] < 1:
        raise ConfigError(f"replicates must be >= 1, got {v['replicates']}")
    if v["threads"] < 1:
        raise ConfigError(f"threads must be >= 1, got {v['threads']}")
    if not (0.0 < v["pi_clip"] < 0.5):
        raise ConfigError(f"pi_clip must be in (0,0.5), got {v['pi_clip']}")


def parse_grid_spec(spec: str):
    """'lo:hi:res[;lo:hi:res...]' -> (bounds list, resolution list)."""
    bounds, res = [], []
    for axis in spec.split(";"):
        parts = axis.split(":")
        if len(parts) != 3:
            raise ConfigError(f"grid axis {axis!r} is not lo:hi:res")
        try:
            lo, hi, r = float(parts[0]), float(parts[1]), int(parts[2])
        except ValueError:
            raise ConfigError(f"grid axis {axis!r} is not numeric") from None
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise ConfigError(f"grid axis {axis!r} has non-finite bounds")
        bounds.append((lo, hi))
        res.append(r)
    return bounds, res


def parse_float_list(spec: str):
    try:
        return [float(s) for s in spec.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"bad numeric list {spec!r}") from None


def parse_int_list(spec: str):
    try:
        return [int(s) for s in spec.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"bad integer list {spec!r}") from None


def parse_law_spec(spec: str):
    """'value:prob,value:prob,...' -> (support, probs)."""
    support, probs = [], []
    for atom in spec.split(","):
        parts = atom.split(":")
        if len(parts) != 2:
            raise ConfigError(f"law atom {atom!r} is not value:prob")
        try:
            support.append(float(parts[0]))
            probs.append(float(parts[1]))
        except ValueError:
            raise ConfigError(f"law atom {atom!r} is not numeric") from None
    return support, probs


def parse_regimes(spec: str):
    from .sim import Regime
    out = []
    for token in spec.split(","):
        token = token.strip()
        if not token:
            continue
        kind, _, c = token.partition(":")
        try:
            out.append(Regime(kind=kind.strip(), c=float(c) if c else 0.05))
        except ValueError as e:
            raise ConfigError(f"bad regime {token!r}: {e}") from None
    if not out:
        raise ConfigError("no regimes specified")
    return out
