"""U-statistic laboratory.

Complete and incomplete evaluation, Hajek projections and residuals, the
Hoeffding decomposition (orders <= 3), a full-permutation block-average
representation check, and a Monte Carlo residual-scaling experiment.

Projections and decompositions are computed under an explicit finite
DiscreteLaw by exact enumeration, which is what makes them testable; samples
feed the complete/incomplete evaluators. Subset enumeration is chunked in
fixed lexicographic order, so partial sums combine deterministically (and
bit-exactly in single-threaded mode).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import seeds
from .errors import (BadOrder, BudgetExceeded, NotCentered, OrderTooHigh,
                     UnsupportedLaw, ZeroReplicates)
from .parallel import pmap_ordered

DEFAULT_BUDGET = 10_000_000
_CHUNK = 200_000


@dataclass(frozen=True)
class DiscreteLaw:
    """Finite scalar law: atoms with probabilities summing to one."""

    support: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.support, dtype=np.float64)
        p = np.asarray(self.probs, dtype=np.float64)
        if s.ndim != 1 or p.shape != s.shape:
            raise UnsupportedLaw("support and probs must be matching 1-D arrays")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise UnsupportedLaw("probabilities must be nonnegative and sum to 1")
        object.__setattr__(self, "support", s)
        object.__setattr__(self, "probs", p)
        s.setflags(write=False)
        p.setflags(write=False)

    @property
    def n_atoms(self) -> int:
        return self.support.shape[0]

    @property
    def mean(self) -> float:
        return float(np.dot(self.probs, self.support))

    def sample(self, n: int, rng) -> np.ndarray:
        idx = rng.choice(self.n_atoms, size=n, p=self.probs)
        return self.support[idx]


@dataclass(frozen=True)
class SymmetricKernel:
    """Order-b symmetric kernel with a vectorized evaluator.

    ``fn`` maps an (m, b) array of argument tuples to an (m,) array; it must
    be permutation-invariant over columns (spot-checked by check_symmetry).
    declared_centered asserts zero mean under the working law.
    """

    order: int
    fn: object
    name: str = ""
    declared_centered: bool = False

    def __call__(self, tuples: np.ndarray) -> np.ndarray:
        t = np.atleast_2d(np.asarray(tuples, dtype=np.float64))
        if t.shape[1] != self.order:
            raise BadOrder(f"kernel of order {self.order} got tuples of width {t.shape[1]}")
        return np.asarray(self.fn(t), dtype=np.float64).reshape(t.shape[0])


def check_symmetry(kernel: SymmetricKernel, sample, rng=None, trials: int = 16,
                   tol: float = 1e-10) -> bool:
    """Randomized permutation-invariance spot check."""
    rng = rng or np.random.default_rng(0)
    sample = np.asarray(sample, dtype=np.float64)
    b = kernel.order
    for _ in range(trials):
        t = sample[rng.choice(sample.shape[0], size=b, replace=False)]
        v0 = kernel(t[None, :])[0]
        v1 = kernel(t[rng.permutation(b)][None, :])[0]
        if abs(v0 - v1) > tol * (1.0 + abs(v0)):
            return False
    return True


# ---------------------------------------------------------------------------
# built-in kernel registry


@dataclass(frozen=True)
class _Additive:
    center: float

    def __call__(self, t):
        return np.sum(t - self.center, axis=1)


@dataclass(frozen=True)
class _Product:
    center: float

    def __call__(self, t):
        return np.prod(t - self.center, axis=1)


@dataclass(frozen=True)
class _Pairwise:
    """sum over pairs of (a_i + a_j + a_i * a_j) on centered arguments."""

    center: float

    def __call__(self, t):
        a = t - self.center
        b = a.shape[1]
        s = np.sum(a, axis=1)
        pair_prod = 0.5 * (s * s - np.sum(a * a, axis=1))
        return (b - 1) * s + pair_prod


@dataclass(frozen=True)
class _AdditiveProduct:
    """sum of a_i plus the full order-b product: a non-degenerate linear part
    riding with a completely degenerate top-order interaction."""

    center: float

    def __call__(self, t):
        a = t - self.center
        return np.sum(a, axis=1) + np.prod(a, axis=1)


KERNEL_REGISTRY = {
    "additive": _Additive,
    "product": _Product,
    "pairwise_interaction": _Pairwise,
    "additive_product": _AdditiveProduct,
}


def make_kernel(name: str, order: int, law: DiscreteLaw | None = None,
                center: float | None = None) -> SymmetricKernel:
    """Registry constructor; arguments are centered at the law mean so every
    registry kernel is mean-zero under its law."""
    if name not in KERNEL_REGISTRY:
        raise KeyError(f"unknown kernel {name!r}; choose from {sorted(KERNEL_REGISTRY)}")
    if center is None:
        center = law.mean if law is not None else 0.0
    return SymmetricKernel(order=order, fn=KERNEL_REGISTRY[name](center=float(center)),
                           name=name, declared_centered=True)


@dataclass(frozen=True)
class ForestMomentKernel:
    """Bridge to the kernel machinery: u(x; D_s) is the k-NN kernel-weighted
    moment sum over the subsample, evaluated at a fixed query point.

    Tuples are unit indices (stored as floats) into the attached arrays.
    """

    xunits: np.ndarray
    moments: np.ndarray
    query: np.ndarray
    k: int

    def __call__(self, t):
        idx = np.asarray(t, dtype=np.int64)
        out = np.empty(idx.shape[0])
        for r in range(idx.shape[0]):
            units = idx[r]
            d = np.max(np.abs(self.xunits[units] - self.query[None, :]), axis=1)
            k = min(self.k, units.shape[0])
            order = np.lexsort((units, d))[:k]
            out[r] = np.mean(self.moments[units[order]])
        return out


def make_forest_moment_kernel(order: int, xunits, moments, query, k) -> SymmetricKernel:
    fn = ForestMomentKernel(xunits=np.atleast_2d(np.asarray(xunits, dtype=np.float64)),
                            moments=np.asarray(moments, dtype=np.float64),
                            query=np.asarray(query, dtype=np.float64).reshape(-1),
                            k=int(k))
    return SymmetricKernel(order=order, fn=fn, name="forest_moment")


# ---------------------------------------------------------------------------
# complete / incomplete evaluation


def _check_order(b: int, n: int):
    if b < 1 or b > n:
        raise BadOrder(f"kernel order {b} incompatible with sample size {n}")


def _comb_chunks(n: int, b: int):
    """Lexicographic size-b index tuples in fixed-size chunks."""
    it = itertools.combinations(range(n), b)
    while True:
        block = list(itertools.islice(it, _CHUNK))
        if not block:
            return
        yield np.array(block, dtype=np.int64)


def _chunk_sum(args):
    kernel, values = args
    return float(np.sum(kernel(values)))


def complete_ustat(kernel: SymmetricKernel, sample, budget: int = DEFAULT_BUDGET,
                   threads: int = 1) -> float:
    """Average over all C(n, b) subsets in lexicographic order.

    Evaluation is partitioned into fixed subset ranges whose partial sums are
    combined in range order, so the result is bit-identical for any thread
    count (threads > 1 requires a picklable kernel).
    """
    sample = np.asarray(sample, dtype=np.float64)
    n = sample.shape[0]
    b = kernel.order
    _check_order(b, n)
    total = math.comb(n, b)
    if total > budget:
        raise BudgetExceeded(f"C({n},{b}) = {total} exceeds the budget {budget}")
    if threads > 1:
        items = [(kernel, sample[idx]) for idx in _comb_chunks(n, b)]
        return sum(pmap_ordered(_chunk_sum, items, threads=threads)) / total
    acc = 0.0
    for idx in _comb_chunks(n, b):
        acc += float(np.sum(kernel(sample[idx])))
    return acc / total


def incomplete_ustat(kernel: SymmetricKernel, sample, r: int, seed: int,
                     exhaustive: bool = False, budget: int = DEFAULT_BUDGET) -> float:
    """Average over r uniformly drawn size-b subsets (or every subset exactly
    once in exhaustive mode, matching complete_ustat to the last bit)."""
    sample = np.asarray(sample, dtype=np.float64)
    n = sample.shape[0]
    b = kernel.order
    _check_order(b, n)
    if exhaustive:
        return complete_ustat(kernel, sample, budget=budget)
    if r < 1:
        raise ZeroReplicates(f"need r >= 1 subsets, got {r}")
    rng = seeds.rng_from(seed, seeds.SUBSAMPLE)
    acc = 0.0
    done = 0
    while done < r:
        m = min(r - done, _CHUNK // max(b, 1))
        keys = rng.random((m, n))
        idx = np.argpartition(keys, b - 1, axis=1)[:, :b]
        acc += float(np.sum(kernel(sample[idx])))
        done += m
    return acc / r


# ---------------------------------------------------------------------------
# Hajek projection and residual


def _completion_tuples(law: DiscreteLaw, dims: int, budget: int):
    if dims == 0:
        return np.empty((1, 0)), np.ones(1)
    total = law.n_atoms ** dims
    if total > budget:
        raise BudgetExceeded(f"support^{dims} = {total} exceeds the budget {budget}")
    idx = np.array(list(itertools.product(range(law.n_atoms), repeat=dims)),
                   dtype=np.int64)
    return law.support[idx], np.prod(law.probs[idx], axis=1)


def hajek_projection(kernel: SymmetricKernel, law: DiscreteLaw, point: float,
                     budget: int = DEFAULT_BUDGET) -> float:
    """u1(point) = E[u(point, D_2, ..., D_b)] by exact enumeration."""
    vals, w = _completion_tuples(law, kernel.order - 1, budget)
    tuples = np.column_stack([np.full(vals.shape[0], float(point)), vals])
    return float(np.dot(w, kernel(tuples)))


def hajek_projection_table(kernel: SymmetricKernel, law: DiscreteLaw,
                           budget: int = DEFAULT_BUDGET) -> np.ndarray:
    """u1 evaluated at every law atom."""
    vals, w = _completion_tuples(law, kernel.order - 1, budget)
    out = np.empty(law.n_atoms)
    for i, atom in enumerate(law.support):
        tuples = np.column_stack([np.full(vals.shape[0], atom), vals])
        out[i] = np.dot(w, kernel(tuples))
    return out


def hajek_residual(kernel: SymmetricKernel, sample, law: DiscreteLaw,
                   budget: int = DEFAULT_BUDGET) -> float:
    """complete_ustat(sample) - (b/n) * sum_i u1(D_i) under the supplied law."""
    if not kernel.declared_centered:
        raise NotCentered("hajek_residual requires a kernel declared centered "
                          "under the working law")
    sample = np.asarray(sample, dtype=np.float64)
    u_full = complete_ustat(kernel, sample, budget=budget)
    table = hajek_projection_table(kernel, law, budget=budget)
    proj = _lookup_atoms(sample, law, table)
    return u_full - kernel.order / sample.shape[0] * float(np.sum(proj))


def _lookup_atoms(sample: np.ndarray, law: DiscreteLaw, table: np.ndarray) -> np.ndarray:
    pos = {float(a): i for i, a in enumerate(law.support)}
    try:
        idx = np.array([pos[float(v)] for v in sample], dtype=np.int64)
    except KeyError as e:
        raise UnsupportedLaw(f"sample value {e} is not a law atom") from None
    return table[idx]


# ---------------------------------------------------------------------------
# Hoeffding decomposition (orders <= 3)


@dataclass(frozen=True)
class HoeffdingReport:
    mean: float
    components: dict
    max_abs_mean: float
    max_abs_crosscov: float
    reconstruction_max_err: float
    degeneracy_max: float


def _value_grid(kernel: SymmetricKernel, law: DiscreteLaw, budget: int) -> np.ndarray:
    b = kernel.order
    vals, _ = _completion_tuples(law, b, budget)
    return kernel(vals).reshape((law.n_atoms,) * b)


def _prob_tensor(law: DiscreteLaw, dims: int) -> np.ndarray:
    pt = np.ones(())
    for _ in range(dims):
        pt = np.multiply.outer(pt, law.probs)
    return pt


def hoeffding_components(kernel: SymmetricKernel, law: DiscreteLaw,
                         budget: int = DEFAULT_BUDGET) -> HoeffdingReport:
    """Exact component tables u1..ub over the law support, b <= 3.

    The components reconstruct the kernel pointwise on support^b, are
    mean-zero, and are mutually uncorrelated across all 2^b - 1 instances;
    the report carries the exact max |mean| and max |cross-covariance|, plus
    the max conditional mean of the residual kernel (complete degeneracy).
    """
    b = kernel.order
    if b > 3:
        raise OrderTooHigh(f"hoeffding_components supports order <= 3, got {b}")
    s = law.n_atoms
    p = law.probs
    grid = _value_grid(kernel, law, budget)

    def contract_last(a, times):
        for _ in range(times):
            a = np.tensordot(a, p, axes=([a.ndim - 1], [0]))
        return a

    mean = float(contract_last(grid, b))
    comps = {}
    ubar1 = contract_last(grid, b - 1)
    comps[1] = ubar1 - mean
    if b >= 2:
        ubar2 = contract_last(grid, b - 2)
        comps[2] = ubar2 - comps[1][:, None] - comps[1][None, :] - mean
    if b == 3:
        ubar3 = grid
        u1, u2 = comps[1], comps[2]
        comps[3] = (ubar3
                    - u2[:, :, None] - u2[:, None, :] - u2[None, :, :]
                    - u1[:, None, None] - u1[None, :, None] - u1[None, None, :]
                    - mean)

    # reconstruction on support^b
    recon = np.full((s,) * b, mean)
    instances = []  # (order l, position subset) value grids broadcast to (s,)*b
    for l in range(1, b + 1):
        for pos in itertools.combinations(range(b), l):
            shape = [1] * b
            for ax_out, ax_in in zip(pos, range(l)):
                shape[ax_out] = s
            g = comps[l].reshape(shape)
            g = np.broadcast_to(g, (s,) * b)
            recon = recon + g
            instances.append(g)
    reconstruction_max_err = float(np.max(np.abs(grid - recon)))

    pt = _prob_tensor(law, b)
    means = [float(np.sum(pt * g)) for g in instances]
    max_abs_mean = max(abs(m) for m in means)
    max_abs_crosscov = 0.0
    for i in range(len(instances)):
        for j in range(i + 1, len(instances)):
            cc = float(np.sum(pt * instances[i] * instances[j])) - means[i] * means[j]
            max_abs_crosscov = max(max_abs_crosscov, abs(cc))

    # residual kernel degeneracy: E[u - sum_i u1(D_i) | D_1 = d] = mean for all d
    h = grid - recon_order1(comps[1], b, s)
    cond = h
    for _ in range(b - 1):
        cond = np.tensordot(cond, p, axes=([cond.ndim - 1], [0]))
    degeneracy_max = float(np.max(np.abs(cond - mean)))

    return HoeffdingReport(mean=mean, components=comps,
                           max_abs_mean=max_abs_mean,
                           max_abs_crosscov=max_abs_crosscov,
                           reconstruction_max_err=reconstruction_max_err,
                           degeneracy_max=degeneracy_max)


def recon_order1(u1: np.ndarray, b: int, s: int) -> np.ndarray:
    out = np.zeros((s,) * b)
    for ax in range(b):
        shape = [1] * b
        shape[ax] = s
        out = out + u1.reshape(shape)
    return out


# ---------------------------------------------------------------------------
# permutation representation


def permutation_block_average(kernel: SymmetricKernel, sample) -> float:
    """Average over all n! permutations of the mean kernel value across the
    floor(n/b) disjoint blocks of each permutation; equals the complete
    U-statistic."""
    sample = np.asarray(sample, dtype=np.float64)
    n = sample.shape[0]
    b = kernel.order
    _check_order(b, n)
    if n > 8:
        raise BudgetExceeded(f"full permutation enumeration limited to n <= 8, got {n}")
    m = n // b
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.int64)
    blocks = perms[:, :m * b].reshape(-1, b)
    vals = kernel(sample[blocks]).reshape(-1, m)
    return float(np.mean(np.mean(vals, axis=1)))


# ---------------------------------------------------------------------------
# residual scaling experiment


@dataclass(frozen=True)
class ScalingRow:
    n: int
    b: int
    reps: int
    resid_q50: float
    resid_q90: float
    hajek_scale: float
    sigma_b2: float
    nu2: float
    b_sigma_b2: float
    variance_check_ok: bool
    ratio_med: float


@dataclass(frozen=True)
class ScalingReport:
    kernel: str
    law_support: np.ndarray
    law_probs: np.ndarray
    rows: list = field(default_factory=list)

    def to_rows(self):
        header = ["n", "b", "reps", "resid_q50", "resid_q90", "hajek_scale",
                  "sigma_b2", "nu2", "b_sigma_b2", "variance_check_ok", "ratio_med"]
        out = [header]
        for r in self.rows:
            out.append([r.n, r.b, r.reps, repr(r.resid_q50), repr(r.resid_q90),
                        repr(r.hajek_scale), repr(r.sigma_b2), repr(r.nu2),
                        repr(r.b_sigma_b2), int(r.variance_check_ok),
                        repr(r.ratio_med)])
        return out


def kernel_law_moments(kernel: SymmetricKernel, law: DiscreteLaw,
                       budget: int = DEFAULT_BUDGET):
    """(sigma_b^2, nu^2) = Var of the Hajek projection and of the kernel under
    the law, by exact enumeration."""
    table = hajek_projection_table(kernel, law, budget=budget)
    mean1 = float(np.dot(law.probs, table))
    sigma_b2 = float(np.dot(law.probs, (table - mean1) ** 2))
    vals, w = _completion_tuples(law, kernel.order, budget)
    u = kernel(vals)
    mu = float(np.dot(w, u))
    nu2 = float(np.dot(w, (u - mu) ** 2))
    return sigma_b2, nu2


def residual_scaling_experiment(law: DiscreteLaw, kernel_name: str,
                                n_list, b_list, reps: int, seed: int,
                                budget: int = DEFAULT_BUDGET) -> ScalingReport:
    """Per (n, b): Monte Carlo quantiles of |Hajek residual|, the Hajek-term
    scale sqrt(b^2 sigma_b^2 / n), the exact kernel variance nu^2, and the
    variance-ordering check b * sigma_b^2 <= 1.05 * nu^2."""
    rows = []
    for n in sorted(int(v) for v in n_list):
        for b in sorted(int(v) for v in b_list):
            kernel = make_kernel(kernel_name, b, law)
            _check_order(b, n)
            if math.comb(n, b) > budget:
                raise BudgetExceeded(
                    f"C({n},{b}) = {math.comb(n, b)} exceeds the budget {budget}")
            table = hajek_projection_table(kernel, law, budget=budget)
            sigma_b2, nu2 = kernel_law_moments(kernel, law, budget=budget)
            idx_chunks = list(_comb_chunks(n, b))
            resid = np.empty(reps)
            for rep in range(reps):
                rng = seeds.rng_from(seed, seeds.SIM_REP, n, b, rep)
                atom_idx = rng.choice(law.n_atoms, size=n, p=law.probs)
                sample = law.support[atom_idx]
                acc = 0.0
                for idx in idx_chunks:
                    acc += float(np.sum(kernel(sample[idx])))
                u_full = acc / math.comb(n, b)
                proj = table[atom_idx]
                resid[rep] = u_full - b / n * float(np.sum(proj))
            absr = np.abs(resid)
            hajek_scale = math.sqrt(b * b * sigma_b2 / n)
            q50 = float(np.quantile(absr, 0.5))
            rows.append(ScalingRow(
                n=n, b=b, reps=reps,
                resid_q50=q50, resid_q90=float(np.quantile(absr, 0.9)),
                hajek_scale=hajek_scale, sigma_b2=sigma_b2, nu2=nu2,
                b_sigma_b2=b * sigma_b2,
                variance_check_ok=bool(b * sigma_b2 <= 1.05 * nu2),
                ratio_med=q50 / hajek_scale if hajek_scale > 0 else math.inf))
    return ScalingReport(kernel=kernel_name, law_support=law.support,
                         law_probs=law.probs, rows=rows)
