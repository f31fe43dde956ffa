"""Solve the empirical conditional moment equation at every query point.

The moment is linear, so the root is closed form:

    theta_hat(x) = - sum_i K(x, X_i) m2_i / sum_i K(x, X_i) m1_i

Queries whose total weight vanishes or whose denominator falls below the
ill-posedness floor are reported with a per-query status instead of failing
the whole solve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, QueryVector
from .errors import EmptySupport, IllPosed
from .kernels import ForestKernel
from .moments import MomentSpec, compute_terms

STATUS_OK = "ok"
STATUS_EMPTY = "empty_support"
STATUS_ILL_POSED = "ill_posed"

ILLPOSED_FLOOR_REL = 1e-8
RESIDUAL_TOL_REL = 1e-10


@dataclass(frozen=True)
class LocalEstimateSet:
    queries: QueryVector
    theta_hat: np.ndarray
    denominators: np.ndarray
    support_sizes: np.ndarray
    statuses: list[str]

    @property
    def ok(self) -> np.ndarray:
        return np.array([s == STATUS_OK for s in self.statuses])


def solve_local(weights, m1, m2, illposed_floor_rel: float = ILLPOSED_FLOOR_REL):
    """Closed-form root for one query from raw per-unit weights.

    Returns (theta_hat, denominator). The floor is relative to the total
    weight so rescaling the kernel cannot flip statuses.
    """
    w = np.asarray(weights, dtype=np.float64)
    m1 = np.asarray(m1, dtype=np.float64)
    m2 = np.asarray(m2, dtype=np.float64)
    total = float(np.sum(w))
    if w.size == 0 or total <= 0.0:
        raise EmptySupport("no positive kernel weight at the query")
    s1 = float(np.dot(w, m1))
    s2 = float(np.dot(w, m2))
    if abs(s1) < illposed_floor_rel * total:
        raise IllPosed(f"|sum K m1| = {abs(s1):.3e} below floor "
                       f"{illposed_floor_rel * total:.3e}")
    theta = -s2 / s1
    resid = s1 * theta + s2
    scale = float(np.dot(w, np.abs(m2))) + 1.0
    assert abs(resid) <= RESIDUAL_TOL_REL * scale, \
        f"root residual {resid:.3e} exceeds tolerance"
    return theta, s1


def theta_from_sums(s1, s2, sw):
    """Roots plus statuses from per-query weighted sums."""
    d = s1.shape[0]
    theta = np.full(d, np.nan)
    statuses = []
    for j in range(d):
        if sw[j] <= 0.0:
            statuses.append(STATUS_EMPTY)
        elif abs(s1[j]) < ILLPOSED_FLOOR_REL * sw[j]:
            statuses.append(STATUS_ILL_POSED)
        else:
            theta[j] = -s2[j] / s1[j]
            statuses.append(STATUS_OK)
    return theta, statuses


def solve_queries(forest: ForestKernel, queries, m1, m2,
                  group: int | None = None):
    """Vector of roots over queries via the fused forest reduction.

    Returns (theta (d,), denominators, support sizes, statuses). NaN is
    reported where the status is not ok.
    """
    pts = queries.points if isinstance(queries, QueryVector) else np.atleast_2d(queries)
    s1, s2, sw, support = forest.solve_sums(pts, np.asarray(m1, dtype=np.float64),
                                            np.asarray(m2, dtype=np.float64),
                                            group=group)
    theta, statuses = theta_from_sums(s1, s2, sw)
    return theta, s1, support, statuses


def estimate_all(forest: ForestKernel, data: Dataset, moment: MomentSpec,
                 nuisance_fit, queries: QueryVector,
                 indices=None) -> LocalEstimateSet:
    """Apply forest weights and the local solve at every query point.

    ``indices`` selects the estimation sample the forest was built over
    (defaults to the nuisance fit's estimation indices, or all units).
    """
    if indices is None:
        indices = (nuisance_fit.estimation_indices
                   if nuisance_fit is not None else np.arange(data.n))
    mu0 = mu1 = pi = None
    if nuisance_fit is not None and moment.required_nuisances:
        mu0, mu1, pi = nuisance_fit.predict_units(data, indices)
    m1, m2 = compute_terms(moment, data, mu0=mu0, mu1=mu1, pi=pi, indices=indices)
    theta, denom, support, statuses = solve_queries(forest, queries, m1, m2)
    return LocalEstimateSet(queries=queries, theta_hat=theta, denominators=denom,
                            support_sizes=support, statuses=statuses)
