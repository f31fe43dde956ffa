"""End-to-end fitting: nuisance stage, main kernel, local solves, band.

This is the composition layer used by the CLI and the simulation harness;
the pieces remain individually usable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import seeds
from .bootstrap import (BootstrapRoots, ConfidenceBand, FitState, FoldState,
                        build_band, compute_roots, critical_value,
                        resolve_universe, studentize)
from .data import Dataset, QueryVector
from .errors import ConfigError
from .estimator import STATUS_OK, LocalEstimateSet, solve_queries
from .kernels import ForestConfig, ForestGroups, fit_forest, validate_tuning
from .moments import MomentSpec, compute_terms
from .nuisance import FittingScheme, fit_nuisance

DEFAULT_B = 200
DEFAULT_ALPHA = 0.1
DEFAULT_BN = 0.05
DEFAULT_NUISANCE_BN = 0.025


@dataclass(frozen=True)
class PipelineConfig:
    moment: str = "cate_aipw"
    kernel: str = "tree"
    bn: float = DEFAULT_BN
    b: int | None = None
    trees: int | None = None
    min_leaf: int = 5
    max_depth: int = 0
    knn_k: int = 1
    replicates: int = DEFAULT_B          # bootstrap replicates B
    alpha: float = DEFAULT_ALPHA
    mode: str = "half_grouped"
    scheme: str = "same_sample"
    split_fraction: float = 0.5
    kfold_k: int = 2
    known_propensity: float | None = None
    pi_clip: float = 0.01
    nuisance_bn: float = DEFAULT_NUISANCE_BN
    nuisance_trees: int = 500
    nuisance_min_leaf: int = 5
    odd_policy: str = "lenient"
    threads: int = 1

    def forest_config(self) -> ForestConfig:
        return ForestConfig(kind=self.kernel, b=self.b, trees=self.trees,
                            min_leaf=self.min_leaf, max_depth=self.max_depth,
                            knn_k=self.knn_k, b_fraction=self.bn)

    def nuisance_config(self) -> ForestConfig:
        return ForestConfig(kind="tree", trees=self.nuisance_trees,
                            min_leaf=self.nuisance_min_leaf,
                            b_fraction=self.nuisance_bn)

    def fitting_scheme(self) -> FittingScheme:
        if self.scheme == "independent_split":
            return FittingScheme("independent_split", fraction=self.split_fraction)
        if self.scheme == "kfold":
            return FittingScheme("kfold", k=self.kfold_k)
        return FittingScheme(self.scheme)


@dataclass(frozen=True)
class PipelineFit:
    moment: MomentSpec
    config: PipelineConfig
    seed: int
    nuisance_fit: object
    est_indices: np.ndarray          # dataset rows forming the estimation sample
    state: FitState
    estimates: LocalEstimateSet
    tuning_warnings: list[str] = field(default_factory=list)


def _draw_groups(universe: np.ndarray, B: int, trees: int, seed: int) -> ForestGroups:
    tpg = max(1, math.ceil(trees / B))
    tree_group = np.repeat(np.arange(B, dtype=np.int64), tpg)
    halves = []
    m = universe.shape[0]
    for l in range(B):
        rng = seeds.rng_from(seed, seeds.GROUP, l)
        halves.append(np.sort(universe[rng.choice(m, size=m // 2, replace=False)]))
    return ForestGroups(count=B, tree_group=tree_group, half_samples=halves)


def fit_pipeline(data: Dataset, queries: QueryVector, cfg: PipelineConfig,
                 seed: int) -> PipelineFit:
    """Fit nuisances, grow the main kernel over the estimation sample, and
    solve the local moment at every query."""
    if queries.q != data.q:
        raise ConfigError(f"query dimension {queries.q} does not match the "
                          f"conditioning dimension {data.q}")
    moment = MomentSpec(cfg.moment)
    scheme = cfg.fitting_scheme()
    if cfg.mode == "crossfit":
        if scheme.kind != "kfold":
            if cfg.kfold_k == 1:
                return _fit_single_fold_crossfit(data, queries, cfg, seed, moment)
            raise ConfigError("mode=crossfit requires scheme=kfold (or kfold_k=1)")
        return _fit_crossfit(data, queries, cfg, seed, moment, scheme)

    nfit = fit_nuisance(data, moment, scheme, cfg.nuisance_config(),
                        seed=seeds.derive_seed(seed, seeds.NUISANCE),
                        known_propensity=cfg.known_propensity, pi_clip=cfg.pi_clip)
    est_idx = nfit.estimation_indices
    mu0 = mu1 = pi = None
    if moment.required_nuisances:
        mu0, mu1, pi = nfit.predict_units(data, est_idx)
    m1, m2 = compute_terms(moment, data, mu0=mu0, mu1=mu1, pi=pi, indices=est_idx)
    x_units = np.ascontiguousarray(data.x[est_idx])

    m = est_idx.shape[0]
    needs_even = cfg.mode in ("half_exact", "half_grouped")
    universe = resolve_universe(np.arange(m), seed, cfg.odd_policy,
                                multiple=2 if needs_even else 1)
    fcfg = cfg.forest_config().resolve(universe.shape[0])
    groups = None
    if cfg.mode == "half_grouped":
        groups = _draw_groups(universe, cfg.replicates, fcfg.trees, seed)
        fcfg = replace(fcfg, trees=groups.tree_group.shape[0])
    warnings = validate_tuning(universe.shape[0], fcfg.b, fcfg.trees)

    forest = fit_forest(x_units, m2, fcfg, seed, groups=groups, universe=universe)
    theta, denom, support, statuses = solve_queries(forest, queries, m1, m2)
    state = FitState(x_units=x_units, m1=m1, m2=m2, queries=queries.points,
                     config=fcfg, master_seed=int(seed), universe=universe,
                     theta_full=theta, statuses=statuses, forest=forest)
    est = LocalEstimateSet(queries=queries, theta_hat=theta, denominators=denom,
                           support_sizes=support, statuses=statuses)
    return PipelineFit(moment=moment, config=cfg, seed=int(seed), nuisance_fit=nfit,
                       est_indices=est_idx, state=state, estimates=est,
                       tuning_warnings=warnings)


def _fit_crossfit(data, queries, cfg, seed, moment, scheme):
    k = scheme.k
    universe_global = resolve_universe(np.arange(data.n), seed, cfg.odd_policy,
                                       multiple=2 * k)
    rng = seeds.rng_from(seed, seeds.FOLD)
    perm = rng.permutation(universe_global)
    fold_size = universe_global.shape[0] // k
    fold_of = np.full(data.n, -1, dtype=np.int64)
    for j in range(k):
        fold_of[perm[j * fold_size:(j + 1) * fold_size]] = j

    nfit = fit_nuisance(data, moment, scheme, cfg.nuisance_config(),
                        seed=seeds.derive_seed(seed, seeds.NUISANCE),
                        known_propensity=cfg.known_propensity,
                        pi_clip=cfg.pi_clip, fold_of=fold_of)
    est_idx = np.sort(universe_global)
    mu0 = mu1 = pi = None
    if moment.required_nuisances:
        mu0, mu1, pi = nfit.predict_units(data, est_idx)
    m1, m2 = compute_terms(moment, data, mu0=mu0, mu1=mu1, pi=pi, indices=est_idx)
    x_units = np.ascontiguousarray(data.x[est_idx])

    local_fold = fold_of[est_idx]
    folds = []
    thetas = []
    status_rows = []
    for j in range(k):
        fidx = np.nonzero(local_fold == j)[0].astype(np.int64)
        fcfg = cfg.forest_config().resolve(fidx.shape[0])
        forest = fit_forest(x_units, m2, fcfg,
                            seeds.derive_seed(seed, seeds.TREE, j),
                            universe=fidx)
        th, _, _, st = solve_queries(forest, queries, m1, m2)
        thetas.append(th)
        status_rows.append(st)
        folds.append(FoldState(indices=fidx, config=fcfg, theta=th))
    theta = np.mean(np.stack(thetas, axis=0), axis=0)
    statuses = []
    for j in range(queries.d):
        bad = [row[j] for row in status_rows if row[j] != STATUS_OK]
        statuses.append(bad[0] if bad else STATUS_OK)
    theta = np.where([s == STATUS_OK for s in statuses], theta, np.nan)

    fcfg_main = cfg.forest_config().resolve(est_idx.shape[0])
    state = FitState(x_units=x_units, m1=m1, m2=m2, queries=queries.points,
                     config=fcfg_main, master_seed=int(seed),
                     universe=np.arange(est_idx.shape[0]), theta_full=theta,
                     statuses=statuses, forest=None, folds=folds)
    est = LocalEstimateSet(queries=queries, theta_hat=theta,
                           denominators=np.full(queries.d, np.nan),
                           support_sizes=np.zeros(queries.d, dtype=np.int64),
                           statuses=statuses)
    return PipelineFit(moment=moment, config=cfg, seed=int(seed), nuisance_fit=nfit,
                       est_indices=est_idx, state=state, estimates=est)


def _fit_single_fold_crossfit(data, queries, cfg, seed, moment):
    """crossfit with k=1 degenerates to the exact half-sample bootstrap on a
    same-sample fit: a single fold covering the whole estimation sample."""
    base = fit_pipeline(data, queries, replace(cfg, mode="half_exact",
                                               scheme="same_sample"), seed)
    fold = FoldState(indices=base.state.universe, config=base.state.config,
                     theta=base.state.theta_full)
    state = replace(base.state, folds=[fold])
    return replace(base, state=state, config=cfg)


@dataclass(frozen=True)
class BandResult:
    band: ConfidenceBand
    roots: BootstrapRoots
    sup_stats: np.ndarray


def band_from_fit(fit: PipelineFit, B: int | None = None,
                  alpha: float | None = None, mode: str | None = None,
                  threads: int | None = None) -> BandResult:
    """Bootstrap roots, studentization, critical value, and the band."""
    cfg = fit.config
    B = cfg.replicates if B is None else B
    alpha = cfg.alpha if alpha is None else alpha
    mode = cfg.mode if mode is None else mode
    threads = cfg.threads if threads is None else threads
    state = fit.state
    roots = compute_roots(state, B, fit.seed, mode, threads=threads)
    ok = state.ok_mask
    lam, sup_stats, clamped = studentize(roots.roots[:, ok], n=state.n,
                                         theta_hat=state.theta_full[ok])
    cv = critical_value(sup_stats, alpha)
    band = build_band(fit.estimates, lam, cv, alpha, state.n,
                      lambda_clamped=clamped, mode=mode, B=B)
    return BandResult(band=band, roots=roots, sup_stats=sup_stats)
