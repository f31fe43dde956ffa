"""Subsampled kernels: honest CART trees and subsampled k-NN.

A forest kernel is a collection of r subsamples of size b, each carrying a
per-subsample kernel (an honest tree partition or a k-NN rule). Aggregated
weights follow the plain sum over subsamples

    K(x, X_i) = sum_q 1{i in s_q} * kappa_q(x, X_i)

with no 1/r factor; downstream solvers use ratio forms, so the overall scale
is irrelevant. Trees are honest: splits depend on the structure half only, so
permuting estimation-half pseudo-outcomes leaves the tree bit-identical.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import accel, seeds
from .data import Dataset
from .errors import BadK, BadSize, EmptySupport, TooSmall, ZeroReplicates

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ForestConfig:
    """Kernel construction parameters.

    b/trees default to ceil(0.05 * n) and max(ceil((n/b)^2), 2000): the first
    keeps n <= b * sqrt(r), the second matches the reference tree counts.
    """

    kind: str = "tree"            # "tree" | "knn"
    b: int | None = None
    trees: int | None = None
    min_leaf: int = 5
    max_depth: int = 0            # 0 = unlimited
    knn_k: int = 1
    b_fraction: float = 0.05

    def resolve(self, n: int) -> "ForestConfig":
        b = self.b if self.b is not None else max(2, math.ceil(self.b_fraction * n))
        b = min(b, n)
        trees = self.trees
        if trees is None:
            trees = max(math.ceil((n / b) ** 2), 2000)
        return ForestConfig(kind=self.kind, b=b, trees=trees, min_leaf=self.min_leaf,
                            max_depth=self.max_depth, knn_k=self.knn_k,
                            b_fraction=self.b_fraction)


def validate_tuning(n: int, b: int, r: int) -> list[str]:
    """Check the replicate-count and subsample-size guidance n <= b*sqrt(r),
    b >= log n. Violations are warnings, not errors: the defaults satisfy both
    and small validation runs may legitimately break them."""
    msgs = []
    if n > b * math.sqrt(r):
        msgs.append(f"n={n} exceeds b*sqrt(r)={b * math.sqrt(r):.0f}; "
                    "increase the number of subsamples")
    if b < math.log(max(n, 2)):
        msgs.append(f"b={b} is below log(n)={math.log(n):.1f}")
    for m in msgs:
        log.warning("tuning: %s", m)
    return msgs


# ---------------------------------------------------------------------------
# subsample plans


@dataclass(frozen=True)
class SubsamplePlan:
    """r index sets of size <= b drawn uniformly without replacement, plus the
    derived per-subsample seeds that house the auxiliary tree randomness.

    Seed q is a pure function of (master_seed, q); the array is derived on
    first access since whole-set draws never consume it.
    """

    n: int
    b: int
    r: int
    subsets: list[np.ndarray]
    master_seed: int
    _seed_cache: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def per_subsample_seeds(self) -> np.ndarray:
        if self._seed_cache is None:
            object.__setattr__(self, "_seed_cache",
                               _subsample_seeds(self.master_seed, self.r))
        return self._seed_cache


def _subsample_seeds(master_seed: int, r: int) -> np.ndarray:
    return seeds.derive_seed_block(master_seed, seeds.SUBSAMPLE, count=r)


def draw_subsamples(n: int, b: int, r: int, master_seed: int,
                    within_per_tree=None) -> SubsamplePlan:
    """Draw r uniform size-b subsets of [0, n).

    ``within_per_tree`` optionally restricts tree q's draw to a given index
    array (used by the grouped half-sample construction); the effective size
    is then min(b, len(within)). Output is a pure function of the arguments.
    """
    if r < 1:
        raise ZeroReplicates(f"need r >= 1 subsamples, got {r}")
    if b < 2 or b > n:
        raise BadSize(f"need 2 <= b <= n, got b={b}, n={n}")
    subsets = []
    sub_seeds = None
    for q in range(r):
        if within_per_tree is not None and b >= within_per_tree[q].shape[0]:
            idx = within_per_tree[q].copy()      # the draw takes the whole set
        else:
            if sub_seeds is None:
                sub_seeds = _subsample_seeds(master_seed, r)
            rng = np.random.default_rng(sub_seeds[q])
            if within_per_tree is None:
                idx = rng.choice(n, size=b, replace=False)
            else:
                w = within_per_tree[q]
                idx = w[rng.choice(w.shape[0], size=b, replace=False)]
        idx.sort()
        subsets.append(idx.astype(np.int64))
    return SubsamplePlan(n=n, b=b, r=r, subsets=subsets,
                         master_seed=int(master_seed), _seed_cache=sub_seeds)


# ---------------------------------------------------------------------------
# single-subsample kernels


@dataclass(frozen=True)
class HonestPartition:
    """Axis-aligned honest tree over one subsample.

    structure_half/estimation_half are disjoint global unit-id arrays; splits
    are a function of (structure X, structure pseudo-outcome) only.
    """

    structure_half: np.ndarray
    estimation_half: np.ndarray
    node_feat: np.ndarray
    node_thr: np.ndarray
    node_left: np.ndarray
    node_right: np.ndarray
    node_eoff: np.ndarray
    node_ecnt: np.ndarray
    est_ids: np.ndarray     # global unit ids grouped by leaf

    @property
    def n_nodes(self) -> int:
        return self.node_feat.shape[0]

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.node_feat < 0))

    def leaf_of(self, x) -> int:
        pts = np.atleast_2d(np.asarray(x, dtype=np.float64))
        base = np.zeros(1, dtype=np.int64)
        out = accel.route_points(self.node_feat, self.node_thr, self.node_left,
                                 self.node_right, base[0], pts)
        return int(out[0]) if out.shape[0] == 1 else out

    def leaf_units(self, leaf: int) -> np.ndarray:
        off = int(self.node_eoff[leaf])
        cnt = int(self.node_ecnt[leaf])
        return self.est_ids[off:off + cnt]


@dataclass(frozen=True)
class KnnKernel:
    """Subsampled k-NN rule: weight 1/k on the k nearest subsample members in
    sup-norm, ties broken by lower unit index."""

    subsample: np.ndarray
    k: int
    xunits: np.ndarray

    def neighbors(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        ptr = np.array([0, self.subsample.shape[0]], dtype=np.int64)
        sel = np.zeros(1, dtype=np.int64)
        w = accel.knn_forest_weights_at(self.subsample, ptr, self.k, self.xunits,
                                        sel, x, self.xunits.shape[0])
        return np.nonzero(w)[0]


@dataclass(frozen=True)
class KernelWeights:
    query: np.ndarray
    weights: dict[int, float]


def _as_coords(data) -> np.ndarray:
    if isinstance(data, Dataset):
        return np.ascontiguousarray(data.x)
    return np.ascontiguousarray(np.atleast_2d(np.asarray(data, dtype=np.float64)))


def _mtry(q: int) -> int:
    return max(1, math.ceil(q / 3))


def _grow_arrays(X, sub, ps, config: ForestConfig, seed: int):
    """Raw honest growth: seeded 50/50 halving plus CART on the structure
    half. Returns (structure, estimation, flat arrays..., n_nodes, est_ids)."""
    if sub.shape[0] < 2 * config.min_leaf or sub.shape[0] < 2:
        raise TooSmall(
            f"subsample of {sub.shape[0]} units cannot honor min_leaf={config.min_leaf}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(sub.shape[0])
    n_struct = (sub.shape[0] + 1) // 2
    structure = sub[perm[:n_struct]]
    estimation = sub[perm[n_struct:]]
    mtry = _mtry(X.shape[1])
    cap = 2 * n_struct + 2
    axis_rands = rng.random((cap, mtry))
    (feat, thr, left, right, eoff, ecnt, est_order, n_nodes) = accel.grow_tree(
        X[structure], ps[structure], X[estimation],
        config.min_leaf, config.max_depth, mtry, axis_rands)
    return (structure, estimation, feat, thr, left, right, eoff, ecnt,
            int(n_nodes), estimation[est_order])


def grow_honest_tree(data, subsample, pseudo_outcome, config: ForestConfig,
                     seed: int) -> HonestPartition:
    """Split the subsample 50/50 (seeded), grow CART on the structure half
    maximizing variance reduction of the pseudo-outcome, subject to every leaf
    keeping >= min_leaf structure units and >= 1 estimation unit."""
    X = _as_coords(data)
    sub = np.asarray(subsample, dtype=np.int64)
    ps = np.asarray(pseudo_outcome, dtype=np.float64)
    (structure, estimation, feat, thr, left, right, eoff, ecnt, n_nodes,
     est_ids) = _grow_arrays(X, sub, ps, config, seed)
    return HonestPartition(
        structure_half=structure, estimation_half=estimation,
        node_feat=feat[:n_nodes].copy(), node_thr=thr[:n_nodes].copy(),
        node_left=left[:n_nodes].copy(), node_right=right[:n_nodes].copy(),
        node_eoff=eoff[:n_nodes].copy(), node_ecnt=ecnt[:n_nodes].copy(),
        est_ids=est_ids)


def build_knn_kernel(data, subsample, k: int) -> KnnKernel:
    X = _as_coords(data)
    sub = np.sort(np.asarray(subsample, dtype=np.int64))
    if k < 1 or k > sub.shape[0]:
        raise BadK(f"need 1 <= k <= |subsample|={sub.shape[0]}, got k={k}")
    return KnnKernel(subsample=sub, k=int(k), xunits=X)


def local_weights(kernel, x) -> KernelWeights:
    """Per-unit weights of one subsample kernel at x; they sum to one."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if isinstance(kernel, HonestPartition):
        leaf = kernel.leaf_of(x)
        units = kernel.leaf_units(leaf)
        if units.shape[0] == 0:
            raise EmptySupport(f"tree leaf at {x} holds no estimation units")
        w = 1.0 / units.shape[0]
        return KernelWeights(query=x, weights={int(u): w for u in units})
    if isinstance(kernel, KnnKernel):
        units = kernel.neighbors(x)
        if units.shape[0] == 0:
            raise EmptySupport(f"no k-NN support at {x}")
        w = 1.0 / units.shape[0]
        return KernelWeights(query=x, weights={int(u): w for u in units})
    raise TypeError(f"unknown kernel type {type(kernel)!r}")


# ---------------------------------------------------------------------------
# forests


@dataclass(frozen=True)
class ForestGroups:
    """Little-bags bookkeeping: each tree belongs to a group grown inside a
    pre-drawn half-sample of the resampling universe."""

    count: int
    tree_group: np.ndarray
    half_samples: list[np.ndarray]


@dataclass(frozen=True)
class ForestKernel:
    kind: str
    xunits: np.ndarray
    plan: SubsamplePlan
    config: ForestConfig
    master_seed: int
    groups: ForestGroups | None = None
    # tree forests
    node_feat: np.ndarray | None = None
    node_thr: np.ndarray | None = None
    node_left: np.ndarray | None = None
    node_right: np.ndarray | None = None
    node_eoff: np.ndarray | None = None
    node_ecnt: np.ndarray | None = None
    tree_ptr: np.ndarray | None = None
    est_ids: np.ndarray | None = None
    tree_est_ptr: np.ndarray | None = None
    structure_halves: list[np.ndarray] | None = None
    # knn forests
    sub_ids: np.ndarray | None = None
    sub_ptr: np.ndarray | None = None
    _all_trees: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_all_trees", np.arange(self.r, dtype=np.int64))

    @property
    def r(self) -> int:
        return self.plan.r

    @property
    def n_units(self) -> int:
        return self.xunits.shape[0]

    def tree_selection(self, group: int | None = None) -> np.ndarray:
        if group is None:
            return self._all_trees
        if self.groups is None:
            raise ValueError("forest was built without groups")
        return np.nonzero(self.groups.tree_group == group)[0].astype(np.int64)

    def partition(self, q: int) -> HonestPartition:
        """Materialize subsample q's honest partition (tree forests)."""
        if self.kind != "tree":
            raise TypeError("partition() is only defined for tree forests")
        lo, hi = int(self.tree_ptr[q]), int(self.tree_ptr[q + 1])
        elo, ehi = int(self.tree_est_ptr[q]), int(self.tree_est_ptr[q + 1])
        eoff = self.node_eoff[lo:hi].copy()
        leaf_mask = self.node_feat[lo:hi] < 0
        eoff[leaf_mask] -= elo
        return HonestPartition(
            structure_half=self.structure_halves[q],
            estimation_half=np.sort(self.est_ids[elo:ehi]),
            node_feat=self.node_feat[lo:hi], node_thr=self.node_thr[lo:hi],
            node_left=self.node_left[lo:hi], node_right=self.node_right[lo:hi],
            node_eoff=eoff, node_ecnt=self.node_ecnt[lo:hi],
            est_ids=self.est_ids[elo:ehi])

    def knn_kernel(self, q: int) -> KnnKernel:
        if self.kind != "knn":
            raise TypeError("knn_kernel() is only defined for knn forests")
        lo, hi = int(self.sub_ptr[q]), int(self.sub_ptr[q + 1])
        return KnnKernel(subsample=self.sub_ids[lo:hi], k=self.config.knn_k,
                         xunits=self.xunits)

    # fused reductions --------------------------------------------------

    def solve_sums(self, queries: np.ndarray, m1: np.ndarray, m2: np.ndarray,
                   group: int | None = None):
        sel = self.tree_selection(group)
        xq = np.ascontiguousarray(np.atleast_2d(queries))
        if self.kind == "tree":
            return accel.tree_forest_solve(
                self.node_feat, self.node_thr, self.node_left, self.node_right,
                self.node_eoff, self.node_ecnt, self.tree_ptr, self.est_ids,
                sel, xq, m1, m2, self.n_units)
        return accel.knn_forest_solve(
            self.sub_ids, self.sub_ptr, self.config.knn_k, self.xunits,
            sel, xq, m1, m2, self.n_units)

    def predict_sums(self, queries: np.ndarray, vals: np.ndarray,
                     group: int | None = None):
        sel = self.tree_selection(group)
        xq = np.ascontiguousarray(np.atleast_2d(queries))
        if self.kind == "tree":
            return accel.tree_forest_predict(
                self.node_feat, self.node_thr, self.node_left, self.node_right,
                self.node_eoff, self.node_ecnt, self.tree_ptr, self.est_ids,
                sel, xq, vals)
        return accel.knn_forest_predict(
            self.sub_ids, self.sub_ptr, self.config.knn_k, self.xunits,
            sel, xq, vals)

    def weights_at(self, x, group: int | None = None) -> np.ndarray:
        sel = self.tree_selection(group)
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if self.kind == "tree":
            return accel.tree_forest_weights_at(
                self.node_feat, self.node_thr, self.node_left, self.node_right,
                self.node_eoff, self.node_ecnt, self.tree_ptr, self.est_ids,
                sel, x, self.n_units)
        return accel.knn_forest_weights_at(
            self.sub_ids, self.sub_ptr, self.config.knn_k, self.xunits,
            sel, x, self.n_units)


def _tree_seeds(master_seed: int, r: int) -> np.ndarray:
    return seeds.derive_seed_block(master_seed, seeds.TREE, count=r)


def fit_forest(data, pseudo_outcome, config: ForestConfig, master_seed: int,
               groups: ForestGroups | None = None,
               universe: np.ndarray | None = None) -> ForestKernel:
    """Grow a forest kernel over the given units.

    ``universe`` restricts subsampling to an index subset (defaults to all
    units); with ``groups``, tree q draws its subsample inside the half-sample
    of its group. Determinism: every tree's subsample and growth randomness is
    a pure function of (master_seed, q).
    """
    X = _as_coords(data)
    n = X.shape[0]
    cfg = config.resolve(n if universe is None else max(2, universe.shape[0]))
    if universe is None:
        universe = np.arange(n, dtype=np.int64)
    within = None
    if groups is not None:
        if len(groups.half_samples) != groups.count:
            raise ValueError("groups.half_samples length mismatch")
        within = [groups.half_samples[groups.tree_group[q]] for q in range(cfg.trees)]
    elif universe.shape[0] != n:
        within = [universe] * cfg.trees
    # per-tree draws clamp to min(b, |within|), so tiny resampled universes
    # (e.g. binomial subsets) stay valid
    plan = draw_subsamples(n, cfg.b, cfg.trees, master_seed,
                           within_per_tree=within)

    if cfg.kind == "knn":
        k = cfg.knn_k
        if k < 1:
            raise BadK(f"need k >= 1, got {k}")
        sub_ptr = np.zeros(cfg.trees + 1, dtype=np.int64)
        for q, s in enumerate(plan.subsets):
            sub_ptr[q + 1] = sub_ptr[q] + s.shape[0]
        sub_ids = np.concatenate(plan.subsets).astype(np.int64)
        return ForestKernel(kind="knn", xunits=X, plan=plan, config=cfg,
                            master_seed=int(master_seed), groups=groups,
                            sub_ids=sub_ids, sub_ptr=sub_ptr)

    feats, thrs, lefts, rights, eoffs, ecnts = [], [], [], [], [], []
    est_all, struct_halves = [], []
    tree_ptr = np.zeros(cfg.trees + 1, dtype=np.int64)
    tree_est_ptr = np.zeros(cfg.trees + 1, dtype=np.int64)
    ps = np.asarray(pseudo_outcome, dtype=np.float64)
    tseeds = _tree_seeds(master_seed, cfg.trees)
    for q, sub in enumerate(plan.subsets):
        (structure, _, feat, thr, left, right, eoff, ecnt, n_nodes,
         est_ids) = _grow_arrays(X, sub, ps, cfg, tseeds[q])
        eoff = eoff[:n_nodes].copy()
        eoff[feat[:n_nodes] < 0] += tree_est_ptr[q]
        feats.append(feat[:n_nodes])
        thrs.append(thr[:n_nodes])
        lefts.append(left[:n_nodes])
        rights.append(right[:n_nodes])
        eoffs.append(eoff)
        ecnts.append(ecnt[:n_nodes])
        est_all.append(est_ids)
        struct_halves.append(structure)
        tree_ptr[q + 1] = tree_ptr[q] + n_nodes
        tree_est_ptr[q + 1] = tree_est_ptr[q] + est_ids.shape[0]

    return ForestKernel(
        kind="tree", xunits=X, plan=plan, config=cfg,
        master_seed=int(master_seed), groups=groups,
        node_feat=np.concatenate(feats), node_thr=np.concatenate(thrs),
        node_left=np.concatenate(lefts), node_right=np.concatenate(rights),
        node_eoff=np.concatenate(eoffs), node_ecnt=np.concatenate(ecnts),
        tree_ptr=tree_ptr, est_ids=np.concatenate(est_all),
        tree_est_ptr=tree_est_ptr, structure_halves=struct_halves)


def forest_weights(forest: ForestKernel, x) -> dict[int, float]:
    """Aggregated per-unit weights K(x, X_i) at x (sparse map)."""
    w = forest.weights_at(x)
    nz = np.nonzero(w)[0]
    if nz.shape[0] == 0:
        raise EmptySupport(f"no unit receives weight at {np.asarray(x)}")
    return {int(u): float(w[u]) for u in nz}


def shrinkage_diagnostic(forest: ForestKernel, queries) -> np.ndarray:
    """Empirical bandwidth proxy: per query, the average over subsamples of the
    max sup-distance of positive-weight units."""
    pts = queries.points if hasattr(queries, "points") else np.atleast_2d(queries)
    xq = np.ascontiguousarray(np.asarray(pts, dtype=np.float64))
    sel = forest.tree_selection()
    if forest.kind == "tree":
        out = accel.tree_forest_shrinkage(
            forest.node_feat, forest.node_thr, forest.node_left, forest.node_right,
            forest.node_eoff, forest.node_ecnt, forest.tree_ptr, forest.est_ids,
            sel, xq, forest.xunits)
    else:
        out = accel.knn_forest_shrinkage(
            forest.sub_ids, forest.sub_ptr, forest.config.knn_k, forest.xunits,
            sel, xq)
    if np.any(np.isnan(out)):
        raise EmptySupport("a query has no supported subsample kernel")
    return out


# ---------------------------------------------------------------------------
# serialization (documented JSON structure for the fit -> band handoff)


def _node_to_dict(forest: ForestKernel, base: int, node: int) -> dict:
    i = base + node
    if forest.node_feat[i] < 0:
        off, cnt = int(forest.node_eoff[i]), int(forest.node_ecnt[i])
        return {"leaf": True,
                "units": [int(u) for u in forest.est_ids[off:off + cnt]]}
    return {"axis": int(forest.node_feat[i]),
            "threshold": float(forest.node_thr[i]),
            "left": _node_to_dict(forest, base, int(forest.node_left[i])),
            "right": _node_to_dict(forest, base, int(forest.node_right[i]))}


def forest_to_json(forest: ForestKernel) -> dict:
    doc = {
        "kind": forest.kind,
        "n_units": forest.n_units,
        "b": forest.plan.b,
        "r": forest.plan.r,
        "master_seed": forest.master_seed,
        "min_leaf": forest.config.min_leaf,
        "max_depth": forest.config.max_depth,
        "knn_k": forest.config.knn_k,
        "groups": None,
        "trees": [],
    }
    if forest.groups is not None:
        doc["groups"] = {
            "count": forest.groups.count,
            "tree_group": [int(g) for g in forest.groups.tree_group],
            "half_samples": [[int(u) for u in h] for h in forest.groups.half_samples],
        }
    for q in range(forest.r):
        entry = {"subsample": [int(u) for u in forest.plan.subsets[q]]}
        if forest.kind == "tree":
            entry["structure"] = [int(u) for u in forest.structure_halves[q]]
            entry["root"] = _node_to_dict(forest, int(forest.tree_ptr[q]), 0)
        doc["trees"].append(entry)
    return doc


def _dict_to_flat(node: dict, feats, thrs, lefts, rights, eoffs, ecnts, est_ids):
    my = len(feats)
    feats.append(-1)
    thrs.append(0.0)
    lefts.append(-1)
    rights.append(-1)
    eoffs.append(-1)
    ecnts.append(0)
    if node.get("leaf"):
        feats[my] = -1
        eoffs[my] = len(est_ids)
        ecnts[my] = len(node["units"])
        est_ids.extend(int(u) for u in node["units"])
        return my
    feats[my] = int(node["axis"])
    thrs[my] = float(node["threshold"])
    lefts[my] = _dict_to_flat(node["left"], feats, thrs, lefts, rights, eoffs, ecnts, est_ids)
    rights[my] = _dict_to_flat(node["right"], feats, thrs, lefts, rights, eoffs, ecnts, est_ids)
    return my


def forest_from_json(doc: dict, xunits: np.ndarray) -> ForestKernel:
    xunits = np.ascontiguousarray(np.atleast_2d(np.asarray(xunits, dtype=np.float64)))
    cfg = ForestConfig(kind=doc["kind"], b=int(doc["b"]), trees=int(doc["r"]),
                       min_leaf=int(doc["min_leaf"]), max_depth=int(doc["max_depth"]),
                       knn_k=int(doc["knn_k"]))
    subsets = [np.asarray(t["subsample"], dtype=np.int64) for t in doc["trees"]]
    r = int(doc["r"])
    plan = SubsamplePlan(n=int(doc["n_units"]), b=int(doc["b"]), r=r,
                         subsets=subsets, master_seed=int(doc["master_seed"]))
    groups = None
    if doc.get("groups"):
        g = doc["groups"]
        groups = ForestGroups(
            count=int(g["count"]),
            tree_group=np.asarray(g["tree_group"], dtype=np.int64),
            half_samples=[np.asarray(h, dtype=np.int64) for h in g["half_samples"]])

    if doc["kind"] == "knn":
        sub_ptr = np.zeros(r + 1, dtype=np.int64)
        for q, s in enumerate(subsets):
            sub_ptr[q + 1] = sub_ptr[q] + s.shape[0]
        return ForestKernel(kind="knn", xunits=xunits, plan=plan, config=cfg,
                            master_seed=int(doc["master_seed"]), groups=groups,
                            sub_ids=np.concatenate(subsets), sub_ptr=sub_ptr)

    feats, thrs, lefts, rights, eoffs, ecnts, est_ids = [], [], [], [], [], [], []
    tree_ptr = np.zeros(r + 1, dtype=np.int64)
    tree_est_ptr = np.zeros(r + 1, dtype=np.int64)
    struct_halves = []
    for q, t in enumerate(doc["trees"]):
        _dict_to_flat(t["root"], feats, thrs, lefts, rights, eoffs, ecnts, est_ids)
        tree_ptr[q + 1] = len(feats)
        tree_est_ptr[q + 1] = len(est_ids)
        struct_halves.append(np.asarray(t["structure"], dtype=np.int64))
    # child ids were produced tree-local-absolute; convert to tree-local
    feats = np.asarray(feats, dtype=np.int32)
    lefts = np.asarray(lefts, dtype=np.int32)
    rights = np.asarray(rights, dtype=np.int32)
    for q in range(r):
        lo, hi = tree_ptr[q], tree_ptr[q + 1]
        mask = feats[lo:hi] >= 0
        lefts[lo:hi][mask] -= lo
        rights[lo:hi][mask] -= lo
    return ForestKernel(
        kind="tree", xunits=xunits, plan=plan, config=cfg,
        master_seed=int(doc["master_seed"]), groups=groups,
        node_feat=feats, node_thr=np.asarray(thrs, dtype=np.float64),
        node_left=lefts, node_right=rights,
        node_eoff=np.asarray(eoffs, dtype=np.int64),
        node_ecnt=np.asarray(ecnts, dtype=np.int64),
        tree_ptr=tree_ptr, est_ids=np.asarray(est_ids, dtype=np.int64),
        tree_est_ptr=tree_est_ptr, structure_halves=struct_halves)
