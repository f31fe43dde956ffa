"""Bootstrap roots, studentization, critical values, and confidence bands.

Root modes
  half_exact    draw a uniform half-sample h, regrow the forest on D_h (fresh
                subsamples inside h, same tree config), root = theta_h - theta_n
  half_grouped  "little bags": trees were grown in B groups at fit time, each
                group inside a pre-drawn half-sample; replicate l re-solves
                with group l's trees only, no regrowth
  binomial      re-estimate on a uniform subset of size Q ~ Bin(n, 1/2) and
                scale the difference by 2Q/n (fully independent sign weights)
  crossfit      stratified half-samples, one half per fold of the k-fold
                cross-fit estimator, reusing each fold's nuisance predictions

Nuisance values are never re-estimated inside a replicate: the per-unit
moment terms are frozen at fit time.

Intervals follow theta_hat(x_j) +/- n^{-1/2} * lambda_hat_j * cv(alpha), with
lambda_hat_j the standard deviation of sqrt(n) * root_j across replicates and
cv the ceil((1-alpha)B)-th order statistic of the studentized sup statistic.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from . import accel, seeds
from .errors import (BadAlpha, DegenerateQ, EmptySupport, OddFold, OddN,
                     TooFewReplicates)
from .estimator import (STATUS_OK, LocalEstimateSet, solve_queries,
                        theta_from_sums)
from .kernels import ForestConfig, ForestKernel, fit_forest
from .parallel import pmap_ordered

log = logging.getLogger(__name__)

MODES = ("half_exact", "half_grouped", "binomial", "crossfit")
LAMBDA_FLOOR_SCALE = 1e-12


# ---------------------------------------------------------------------------
# fitted-state context


@dataclass(frozen=True)
class FoldState:
    """Per-fold piece of a k-fold cross-fit estimator."""

    indices: np.ndarray        # local unit ids of the fold
    config: ForestConfig       # resolved for the fold size
    theta: np.ndarray          # fold-level estimates at the queries


@dataclass(frozen=True)
class FitState:
    """Everything a bootstrap replicate needs to re-solve the estimator.

    Unit indexing is local to the estimation sample; x_units are the kernel
    coordinates and (m1, m2) the frozen moment terms.
    """

    x_units: np.ndarray
    m1: np.ndarray
    m2: np.ndarray
    queries: np.ndarray
    config: ForestConfig
    master_seed: int
    universe: np.ndarray
    theta_full: np.ndarray
    statuses: list[str]
    forest: ForestKernel | None = None
    folds: list[FoldState] | None = None

    @property
    def n(self) -> int:
        return self.universe.shape[0]

    @property
    def d(self) -> int:
        return self.queries.shape[0]

    @property
    def ok_mask(self) -> np.ndarray:
        return np.array([s == STATUS_OK for s in self.statuses])

    def solve_on(self, indices: np.ndarray, grow_seed: int,
                 config: ForestConfig | None = None) -> np.ndarray:
        """Re-estimate at the queries on a unit subset (fresh subsamples of
        size min(b, |subset|), same tree config)."""
        cfg = config or self.config
        sub = np.sort(indices)
        if cfg.kind == "knn" and cfg.trees == 1 and cfg.b >= sub.shape[0]:
            # the single subsample is the whole subset; skip plan and forest
            # construction (identical reduction, exercised by the identity
            # tests)
            ptr = np.array([0, sub.shape[0]], dtype=np.int64)
            sel = np.zeros(1, dtype=np.int64)
            s1, s2, sw, _ = accel.knn_forest_solve(
                sub, ptr, cfg.knn_k, self.x_units, sel, self.queries,
                self.m1, self.m2, self.x_units.shape[0])
            return theta_from_sums(s1, s2, sw)[0]
        forest = fit_forest(self.x_units, self.m2, cfg, grow_seed, universe=sub)
        theta, _, _, statuses = solve_queries(forest, self.queries, self.m1, self.m2)
        return theta


@dataclass(frozen=True)
class RootDraw:
    root: np.ndarray
    subset: np.ndarray               # units whose sign weight is +1
    q: int | None = None             # binomial subset size


@dataclass(frozen=True)
class BootstrapRoots:
    roots: np.ndarray                # B x d
    mode: str
    B: int
    n: int
    master_seed: int
    subsets: list[np.ndarray] | None = None


def resolve_universe(indices: np.ndarray, master_seed: int, odd_policy: str = "lenient",
                     multiple: int = 2) -> np.ndarray:
    """Trim the resampling universe to a multiple of ``multiple`` units.

    The half-sample algebra needs |h| = n/2 exactly (and equal even folds for
    the cross-split mode). lenient mode drops seeded-random units with a
    warning; strict mode raises.
    """
    idx = np.sort(np.asarray(indices, dtype=np.int64))
    n = idx.shape[0]
    drop = n % multiple
    if drop == 0:
        return idx
    if odd_policy == "strict":
        err = OddN if multiple == 2 else OddFold
        raise err(f"resampling universe of {n} units is not a multiple of {multiple}")
    rng = seeds.rng_from(master_seed, seeds.ODD_DROP)
    out = np.delete(idx, rng.choice(n, size=drop, replace=False))
    log.warning("dropped %d seeded-random unit(s) to make the resampling "
                "universe a multiple of %d (lenient odd-n policy)", drop, multiple)
    return out


# ---------------------------------------------------------------------------
# root draws


def half_sample_root(state: FitState, replicate_seed: int,
                     mode: str = "half_exact", group: int | None = None) -> RootDraw:
    if mode == "half_grouped":
        if state.forest is None or state.forest.groups is None:
            raise ValueError("half_grouped roots need a forest fitted with groups")
        theta_g, _, _, _ = solve_queries(state.forest, state.queries,
                                         state.m1, state.m2, group=group)
        return RootDraw(root=theta_g - state.theta_full,
                        subset=state.forest.groups.half_samples[group])
    n = state.n
    if n % 2 != 0:
        raise OddN(f"half-sampling needs an even universe, got {n}")
    draw_seed, grow_seed = seeds.derive_seed_block(replicate_seed, seeds.HALF,
                                                   count=2)
    rng = np.random.default_rng(draw_seed)
    h = np.sort(state.universe[rng.choice(n, size=n // 2, replace=False)])
    theta_h = state.solve_on(h, grow_seed)
    return RootDraw(root=theta_h - state.theta_full, subset=h)


def binomial_root(state: FitState, replicate_seed: int) -> RootDraw:
    n = state.n
    draw_seed, grow_seed = seeds.derive_seed_block(replicate_seed, seeds.HALF,
                                                   count=2)
    rng = np.random.default_rng(draw_seed)
    q = 0
    for _ in range(100):
        q = int(rng.binomial(n, 0.5))
        if 0 < q < n:
            break
    else:
        raise DegenerateQ("binomial subset size stuck at 0 or n after 100 redraws")
    s = np.sort(state.universe[rng.choice(n, size=q, replace=False)])
    theta_s = state.solve_on(s, grow_seed)
    return RootDraw(root=(2.0 * q / n) * (theta_s - state.theta_full),
                    subset=s, q=q)


def crossfit_root(state: FitState, replicate_seed: int) -> RootDraw:
    if not state.folds:
        raise ValueError("crossfit roots need a state built with k-fold parts")
    thetas = []
    halves = []
    for l, fold in enumerate(state.folds):
        nl = fold.indices.shape[0]
        if nl % 2 != 0:
            raise OddFold(f"fold {l} has odd size {nl}")
        draw_seed, grow = seeds.derive_seed_block(replicate_seed, seeds.HALF, l,
                                                  count=2)
        rng = np.random.default_rng(draw_seed)
        h = np.sort(fold.indices[rng.choice(nl, size=nl // 2, replace=False)])
        halves.append(h)
        thetas.append(state.solve_on(h, grow, config=fold.config))
    theta_h = np.mean(np.stack(thetas, axis=0), axis=0)
    return RootDraw(root=theta_h - state.theta_full,
                    subset=np.concatenate(halves))


def _one_root(state, mode, l, seed):
    if mode == "half_grouped":
        return half_sample_root(state, seed, mode="half_grouped", group=l)
    if mode == "half_exact":
        return half_sample_root(state, seed, mode="half_exact")
    if mode == "binomial":
        return binomial_root(state, seed)
    if mode == "crossfit":
        return crossfit_root(state, seed)
    raise ValueError(f"unknown bootstrap mode {mode!r}")


def _root_chunk(args):
    state, mode, ls, chunk_seeds = args
    return [_one_root(state, mode, l, s) for l, s in zip(ls, chunk_seeds)]


def compute_roots(state: FitState, B: int, master_seed: int, mode: str,
                  threads: int = 1, keep_subsets: bool = False) -> BootstrapRoots:
    """B independent root draws, reduced in replicate order (seed-derived, so
    identical for any thread count)."""
    if mode not in MODES:
        raise ValueError(f"unknown bootstrap mode {mode!r}")
    if B < 1:
        raise TooFewReplicates(f"need B >= 1 replicates, got {B}")
    if mode == "half_grouped":
        if state.forest is None or state.forest.groups is None:
            raise ValueError("half_grouped roots need a forest fitted with groups")
        if B > state.forest.groups.count:
            raise TooFewReplicates(f"forest holds {state.forest.groups.count} "
                                   f"groups, requested B={B}")
    ship = state
    if mode != "half_grouped" and state.forest is not None:
        ship = replace(state, forest=None)   # exact modes regrow; don't ship it
    rep_seeds = seeds.derive_seed_block(master_seed, seeds.REPLICATE, count=B)
    chunk = max(1, B // (8 * max(threads, 1)))
    items = [(ship, mode, list(range(lo, min(lo + chunk, B))),
              [int(s) for s in rep_seeds[lo:min(lo + chunk, B)]])
             for lo in range(0, B, chunk)]
    nested = pmap_ordered(_root_chunk, items, threads=threads)
    draws = [d for block in nested for d in block]
    roots = np.stack([d.root for d in draws], axis=0)
    return BootstrapRoots(roots=roots, mode=mode, B=B, n=state.n,
                          master_seed=int(master_seed),
                          subsets=[d.subset for d in draws] if keep_subsets else None)


# ---------------------------------------------------------------------------
# studentization, critical value, band


def studentize(roots: BootstrapRoots | np.ndarray, n: int | None = None,
               theta_hat: np.ndarray | None = None):
    """Per-query bootstrap scales and the studentized sup statistics.

    lambda_hat_j^2 is the (B-1)-denominator sample variance of sqrt(n)*root_j;
    degenerate scales are clamped at 1e-12 * (1 + |theta_hat_j|) and flagged.
    Returns (lambda_hat, sup_stats, clamped_flags).
    """
    if isinstance(roots, BootstrapRoots):
        mat = roots.roots
        n = roots.n if n is None else n
    else:
        mat = np.asarray(roots, dtype=np.float64)
        if n is None:
            raise ValueError("n is required when passing a raw roots matrix")
    B, d = mat.shape
    if B < 2:
        raise TooFewReplicates(f"studentization needs B >= 2, got {B}")
    if np.any(~np.isfinite(mat)):
        raise EmptySupport("non-finite bootstrap root (replicate lost support)")
    scaled = math.sqrt(n) * mat
    lam = np.std(scaled, axis=0, ddof=1)
    floor = LAMBDA_FLOOR_SCALE * (1.0 + np.abs(theta_hat if theta_hat is not None
                                               else np.zeros(d)))
    clamped = lam < floor
    if np.any(clamped):
        log.warning("clamped %d degenerate bootstrap scale(s)", int(clamped.sum()))
    lam = np.maximum(lam, floor)
    sup_stats = np.max(np.abs(scaled) / lam, axis=1)
    return lam, sup_stats, clamped


def critical_value(sup_stats: np.ndarray, alpha: float) -> float:
    """ceil((1-alpha) * B)-th order statistic of the sup stats (ascending)."""
    if not (0.0 < alpha < 1.0):
        raise BadAlpha(f"alpha must be in (0,1), got {alpha}")
    s = np.sort(np.asarray(sup_stats, dtype=np.float64))
    B = s.shape[0]
    if B < math.ceil(1.0 / alpha):
        raise TooFewReplicates(f"need B >= ceil(1/alpha) = {math.ceil(1 / alpha)}, "
                               f"got {B}")
    k = math.ceil((1.0 - alpha) * B)
    return float(s[k - 1])


@dataclass(frozen=True)
class ConfidenceBand:
    queries: np.ndarray
    theta_hat: np.ndarray
    lambda_hat: np.ndarray
    cv: float
    alpha: float
    n: int
    lower: np.ndarray
    upper: np.ndarray
    excluded: list[tuple[int, str]]
    lambda_clamped: np.ndarray
    mode: str = ""
    B: int = 0

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower


def build_band(est: LocalEstimateSet, lambda_hat: np.ndarray, cv: float,
               alpha: float, n: int, lambda_clamped=None, mode: str = "",
               B: int = 0) -> ConfidenceBand:
    """Per-query intervals theta_hat +/- n^{-1/2} lambda_hat cv over the ok
    queries; non-ok queries are excluded and listed."""
    ok = est.ok
    pts = est.queries.points[ok]
    theta = est.theta_hat[ok]
    lam = np.asarray(lambda_hat, dtype=np.float64)
    if lam.shape[0] == est.theta_hat.shape[0]:
        lam = lam[ok]
    half = lam * cv / math.sqrt(n)
    excluded = [(j, s) for j, s in enumerate(est.statuses) if s != STATUS_OK]
    clamped = (np.zeros(lam.shape[0], dtype=bool) if lambda_clamped is None
               else np.asarray(lambda_clamped, dtype=bool))
    return ConfidenceBand(queries=pts, theta_hat=theta, lambda_hat=lam,
                          cv=float(cv), alpha=float(alpha), n=int(n),
                          lower=theta - half, upper=theta + half,
                          excluded=excluded, lambda_clamped=clamped,
                          mode=mode, B=B)
