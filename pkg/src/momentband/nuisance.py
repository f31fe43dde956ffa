"""First-stage nuisance estimation: g = (mu0, mu1, pi) by honest forest
regression over the full covariate vector z.

Three data-usage schemes:

  same_sample        fit on all data (default; logged once as a warning since
                     it leans on stability rather than independence)
  independent_split  fit on a held-out fraction; the rest is the estimation
                     sample for the second stage
  kfold(k)           k fits, each trained without one fold; unit i is always
                     predicted by the fit that never saw fold(i)

mu_w forests are fit on the w-arm stratum with outcome y; the propensity
forest regresses w on z. Predictions are convex combinations of training
outcomes, so mu stays in the observed range; pi is clipped into
[pi_clip, 1 - pi_clip].
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import seeds
from .data import Dataset
from .errors import BadScheme, EmptyArm
from .kernels import ForestConfig, ForestKernel, fit_forest
from .moments import MomentSpec, NuisanceValues, clip_pi

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FittingScheme:
    kind: str                      # "same_sample" | "independent_split" | "kfold"
    fraction: float = 0.5
    k: int = 2

    def __post_init__(self):
        if self.kind not in ("same_sample", "independent_split", "kfold"):
            raise BadScheme(f"unknown scheme {self.kind!r}")
        if self.kind == "independent_split" and not (0.0 < self.fraction < 1.0):
            raise BadScheme(f"split fraction must be in (0,1), got {self.fraction}")
        if self.kind == "kfold" and self.k < 2:
            raise BadScheme(f"kfold needs k >= 2, got {self.k}")


@dataclass
class _RoleFit:
    """One regression forest plus its training outcomes."""

    forest: ForestKernel
    values: np.ndarray

    def predict(self, zq: np.ndarray) -> np.ndarray:
        sv, sw = self.forest.predict_sums(zq, self.values)
        return sv / sw


@dataclass
class NuisanceFit:
    moment: MomentSpec
    scheme: FittingScheme
    fold_of: np.ndarray | None           # per-unit fold id under kfold
    estimation_indices: np.ndarray       # units available to the second stage
    models: list[dict[str, _RoleFit]]    # one dict per fold (or a single one)
    known_propensity: float | None
    pi_clip: float
    seed: int

    def _fit_for(self, role: str, fold: int) -> _RoleFit:
        return self.models[fold][role]

    def predict_units(self, data: Dataset, indices=None):
        """(mu0, mu1, pi) arrays for dataset units, with kfold routing."""
        idx = np.arange(data.n) if indices is None else np.asarray(indices)
        roles = sorted(self.moment.required_nuisances)
        out = {r: np.zeros(idx.shape[0]) for r in roles}
        if not roles:
            return out.get("mu0"), out.get("mu1"), out.get("pi")
        folds = np.zeros(idx.shape[0], dtype=np.int64)
        if self.fold_of is not None:
            folds = self.fold_of[idx]
            if np.any(folds < 0):
                raise BadScheme("prediction requested for units excluded from "
                                "every fold")
        zq = np.ascontiguousarray(data.z[idx])
        for fold in np.unique(folds):
            m = folds == fold
            for role in roles:
                if role == "pi" and self.known_propensity is not None:
                    out["pi"][m] = self.known_propensity
                else:
                    out[role][m] = self._fit_for(role, int(fold)).predict(zq[m])
        if "pi" in out:
            out["pi"] = clip_pi(out["pi"], self.pi_clip)
        return out.get("mu0"), out.get("mu1"), out.get("pi")

    def predict_fresh(self, z) -> NuisanceValues:
        """Predict at a fresh covariate vector; under kfold this routes to
        fold 0 by convention (logged)."""
        if self.scheme.kind == "kfold":
            log.warning("fresh point under kfold routed to fold 0 by convention")
        zq = np.atleast_2d(np.asarray(z, dtype=np.float64))
        vals = {}
        for role in sorted(self.moment.required_nuisances):
            if role == "pi" and self.known_propensity is not None:
                vals["pi"] = float(self.known_propensity)
            else:
                vals[role] = float(self._fit_for(role, 0).predict(zq)[0])
        if "pi" in vals:
            vals["pi"] = float(clip_pi(vals["pi"], self.pi_clip))
        return NuisanceValues(**vals)


def predict(fit: NuisanceFit, data: Dataset, unit) -> NuisanceValues:
    """Nuisance values for one dataset unit (by index) or a fresh z-vector."""
    if isinstance(unit, (int, np.integer)):
        mu0, mu1, pi = fit.predict_units(data, np.array([unit]))
        return NuisanceValues(
            mu0=None if mu0 is None else float(mu0[0]),
            mu1=None if mu1 is None else float(mu1[0]),
            pi=None if pi is None else float(pi[0]))
    return fit.predict_fresh(unit)


def _train_sets(n: int, scheme: FittingScheme, seed: int, fold_of=None):
    """Per-fold training index sets plus (fold_of, estimation indices)."""
    all_idx = np.arange(n, dtype=np.int64)
    if scheme.kind == "same_sample":
        return [all_idx], None, all_idx
    if scheme.kind == "independent_split":
        rng = seeds.rng_from(seed, seeds.SPLIT)
        perm = rng.permutation(n)
        n_train = max(2, min(int(round(scheme.fraction * n)), n - 2))
        train = np.sort(perm[:n_train])
        est = np.sort(perm[n_train:])
        return [train], None, est
    if fold_of is None:
        rng = seeds.rng_from(seed, seeds.FOLD)
        perm = rng.permutation(n)
        fold_of = np.empty(n, dtype=np.int64)
        for j in range(scheme.k):
            fold_of[perm[j::scheme.k]] = j
    else:
        fold_of = np.asarray(fold_of, dtype=np.int64)
        if fold_of.shape[0] != n:
            raise BadScheme("fold_of length must match the dataset")
    # units with fold id < 0 are excluded from training and estimation
    trains = [np.sort(np.nonzero((fold_of != j) & (fold_of >= 0))[0])
              for j in range(scheme.k)]
    est = np.sort(np.nonzero(fold_of >= 0)[0])
    return trains, fold_of, est


def _fit_role_forest(z: np.ndarray, outcome: np.ndarray, train: np.ndarray,
                     cfg: ForestConfig, seed: int) -> _RoleFit:
    zt = np.ascontiguousarray(z[train])
    vt = np.ascontiguousarray(outcome[train])
    b = max(2, min(cfg.b if cfg.b is not None else
                   math.ceil(cfg.b_fraction * train.shape[0]), train.shape[0]))
    min_leaf = cfg.min_leaf
    if b < 2 * min_leaf:
        min_leaf = max(1, b // 4)
    local = ForestConfig(kind="tree", b=b, trees=cfg.trees, min_leaf=min_leaf,
                         max_depth=cfg.max_depth, b_fraction=cfg.b_fraction)
    forest = fit_forest(zt, vt, local, seed)
    return _RoleFit(forest=forest, values=vt)


_WARNED_SAME_SAMPLE = False


def fit_nuisance(data: Dataset, moment: MomentSpec, scheme: FittingScheme,
                 forest_config: ForestConfig | None = None, seed: int = 0,
                 known_propensity: float | None = None,
                 pi_clip: float = 0.01, fold_of=None) -> NuisanceFit:
    """Fit all nuisance roles the moment requires under the given scheme."""
    global _WARNED_SAME_SAMPLE
    cfg = forest_config or ForestConfig(b_fraction=0.025, trees=500)
    trains, fold_of, est_idx = _train_sets(data.n, scheme, seed, fold_of=fold_of)
    if scheme.kind == "same_sample" and not _WARNED_SAME_SAMPLE and \
            moment.required_nuisances:
        log.warning("nuisance fit reuses the estimation sample (same_sample "
                    "scheme); selectable alternatives: independent_split, kfold")
        _WARNED_SAME_SAMPLE = True

    models: list[dict[str, _RoleFit]] = []
    roles = sorted(moment.required_nuisances)
    if roles and moment.needs_treatment and data.w is None:
        raise EmptyArm("moment requires a treatment column")
    for fold, train in enumerate(trains):
        fits: dict[str, _RoleFit] = {}
        for ri, role in enumerate(roles):
            role_seed = seeds.derive_seed(seed, seeds.NUISANCE, fold, ri)
            if role == "pi":
                if known_propensity is None:
                    fits["pi"] = _fit_role_forest(data.z, data.w.astype(np.float64),
                                                  train, cfg, role_seed)
                continue
            wv = 1 if role == "mu1" else 0
            arm = train[data.w[train] == wv]
            if arm.shape[0] < 2:
                raise EmptyArm(f"treatment arm w={wv} has {arm.shape[0]} units "
                               "in the training set")
            fits[role] = _fit_role_forest(data.z, data.y, arm, cfg, role_seed)
        models.append(fits)

    return NuisanceFit(moment=moment, scheme=scheme, fold_of=fold_of,
                       estimation_indices=est_idx, models=models,
                       known_propensity=known_propensity, pi_clip=pi_clip,
                       seed=int(seed))
