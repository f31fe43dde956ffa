"""Linear moment functions and their diagnostics.

Two moments are built in, both linear in theta, m(D; theta, g) = m1 * theta + m2:

  cate_aipw         m1 = -1,  m2 = (mu1 - mu0) + beta(W,Z) * (Y - mu_W)
                    with beta(w,z) = w/pi - (1-w)/(1-pi)
  conditional_mean  m1 = -1,  m2 = Y

The doubly robust cate_aipw moment is first-order insensitive to nuisance
error; ``orthogonality_check`` quantifies that by exact enumeration over a
finite discrete law. A deliberately non-orthogonal plug-in contrast moment
(m = mu1 - mu0 - theta) exists solely for that contrast and is not exposed
through the estimation CLI.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, Observation
from .errors import MissingNuisance, MissingTreatment, UnsupportedLaw

PI_CLIP_DEFAULT = 0.01

_KINDS = {
    "cate_aipw": frozenset({"mu0", "mu1", "pi"}),
    "conditional_mean": frozenset(),
    # contrast-only; see module docstring
    "plugin_contrast": frozenset({"mu0", "mu1"}),
}


@dataclass(frozen=True)
class MomentSpec:
    kind: str

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown moment kind {self.kind!r}")

    @property
    def required_nuisances(self) -> frozenset[str]:
        return _KINDS[self.kind]

    @property
    def needs_treatment(self) -> bool:
        return self.kind in ("cate_aipw", "plugin_contrast")


@dataclass(frozen=True)
class NuisanceValues:
    """Per-unit nuisance evaluations; pi is stored post-clipping."""

    mu0: float | None = None
    mu1: float | None = None
    pi: float | None = None

    def beta(self, w: int) -> float:
        return w / self.pi - (1 - w) / (1 - self.pi)


def clip_pi(pi, clip: float = PI_CLIP_DEFAULT):
    return np.clip(pi, clip, 1.0 - clip)


def evaluate_terms(moment: MomentSpec, obs: Observation,
                   g: NuisanceValues | None = None) -> tuple[float, float]:
    """(m1, m2) for one observation; m(D; theta, g) = m1 * theta + m2."""
    if moment.kind == "conditional_mean":
        return -1.0, float(obs.y)
    if g is None:
        g = NuisanceValues()
    for role in moment.required_nuisances:
        if getattr(g, role) is None:
            raise MissingNuisance(f"moment {moment.kind!r} needs nuisance {role!r}")
    if moment.needs_treatment and obs.w is None:
        raise MissingTreatment(f"moment {moment.kind!r} needs a treatment indicator")
    if moment.kind == "plugin_contrast":
        return -1.0, float(g.mu1 - g.mu0)
    mu_w = g.mu1 if obs.w == 1 else g.mu0
    m2 = (g.mu1 - g.mu0) + g.beta(obs.w) * (obs.y - mu_w)
    return -1.0, float(m2)


def compute_terms(moment: MomentSpec, data: Dataset, mu0=None, mu1=None, pi=None,
                  indices=None) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized (m1, m2) arrays over the dataset (or an index subset).

    Nuisance arrays must already be clipped and aligned with the requested
    indices.
    """
    idx = np.arange(data.n) if indices is None else np.asarray(indices)
    y = data.y[idx]
    m1 = np.full(idx.shape[0], -1.0)
    if moment.kind == "conditional_mean":
        return m1, y.copy()
    if moment.needs_treatment and data.w is None:
        raise MissingTreatment(f"moment {moment.kind!r} needs a treatment column")
    for role, arr in (("mu0", mu0), ("mu1", mu1), ("pi", pi)):
        if role in moment.required_nuisances and arr is None:
            raise MissingNuisance(f"moment {moment.kind!r} needs nuisance {role!r}")
    mu0 = np.asarray(mu0, dtype=np.float64)
    mu1 = np.asarray(mu1, dtype=np.float64)
    if moment.kind == "plugin_contrast":
        return m1, mu1 - mu0
    w = data.w[idx].astype(np.float64)
    pi = np.asarray(pi, dtype=np.float64)
    beta = w / pi - (1.0 - w) / (1.0 - pi)
    mu_w = np.where(w == 1.0, mu1, mu0)
    return m1, (mu1 - mu0) + beta * (y - mu_w)


def moment_residual(weights, m1, m2, theta: float) -> float:
    """sum_i K_i * (m1_i * theta + m2_i); zero at the solver's root."""
    w = np.asarray(weights, dtype=np.float64)
    if w.size == 0:
        return 0.0
    return float(np.dot(w, np.asarray(m1) * theta + np.asarray(m2)))


# ---------------------------------------------------------------------------
# finite causal laws and the orthogonality checker


@dataclass(frozen=True)
class CausalLaw:
    """Finite-support law over (Y(0), Y(1), W, Z).

    Atoms are rows; z may be multi-dimensional. Used to compute population
    moments by exact enumeration, which is what makes orthogonality and
    double-robustness machine-checkable.
    """

    y0: np.ndarray
    y1: np.ndarray
    w: np.ndarray
    z: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        z = np.atleast_2d(np.asarray(self.z, dtype=np.float64))
        if z.shape[0] != self.probs.shape[0]:
            z = z.T
        object.__setattr__(self, "z", z)
        p = np.asarray(self.probs, dtype=np.float64)
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise UnsupportedLaw("atom probabilities must be nonnegative and sum to 1")
        if not np.all((self.w == 0) | (self.w == 1)):
            raise UnsupportedLaw("treatment atoms must be binary")

    @property
    def n_atoms(self) -> int:
        return self.probs.shape[0]

    @property
    def y_obs(self) -> np.ndarray:
        return np.where(self.w == 1, self.y1, self.y0)

    def _mask_x(self, x_cell) -> np.ndarray:
        x_cell = np.atleast_1d(np.asarray(x_cell, dtype=np.float64))
        return np.all(self.z[:, :x_cell.shape[0]] == x_cell, axis=1)

    def true_nuisances(self):
        """g0 = (mu0, mu1, pi) per atom, computed from the law itself."""
        mu0 = np.empty(self.n_atoms)
        mu1 = np.empty(self.n_atoms)
        pi = np.empty(self.n_atoms)
        for i in range(self.n_atoms):
            same_z = np.all(self.z == self.z[i], axis=1)
            pz = self.probs * same_z
            pi[i] = (pz * self.w).sum() / pz.sum()
            for wv, out in ((0, mu0), (1, mu1)):
                sel = pz * (self.w == wv)
                tot = sel.sum()
                # empty cells fall back to the potential-outcome mean at z
                yv = self.y_obs
                out[i] = (sel * yv).sum() / tot if tot > 0 else \
                    float((pz * (self.y1 if wv else self.y0)).sum() / pz.sum())
        return mu0, mu1, pi

    def theta0(self, x_cell) -> float:
        """E[Y(1) - Y(0) | X = x_cell] by enumeration."""
        m = self._mask_x(x_cell)
        if not np.any(m):
            raise UnsupportedLaw(f"no atom matches x = {x_cell!r}")
        p = self.probs * m
        return float((p * (self.y1 - self.y0)).sum() / p.sum())


def make_bernoulli_causal_law(z_vals, pi_of_z, tau_of_z, base_of_z,
                              noise_vals=(-1.0, 1.0), noise_probs=(0.5, 0.5)):
    """Convenience constructor: Z uniform over z_vals, W|Z ~ Bern(pi(z)),
    Y(w) = base(z) + w*tau(z) + eps with discrete eps independent of (W, Z)."""
    atoms = []
    z_vals = list(z_vals)
    for z in z_vals:
        pz = 1.0 / len(z_vals)
        for w, pw in ((1, pi_of_z(z)), (0, 1.0 - pi_of_z(z))):
            for e, pe in zip(noise_vals, noise_probs):
                atoms.append((base_of_z(z) + e,
                              base_of_z(z) + tau_of_z(z) + e,
                              w, z, pz * pw * pe))
    y0, y1, w, z, p = zip(*atoms)
    return CausalLaw(y0=np.array(y0), y1=np.array(y1),
                     w=np.array(w, dtype=np.int64), z=np.array(z),
                     probs=np.array(p))


@dataclass(frozen=True)
class NuisancePerturbation:
    """Direction h for the orthogonality derivative: per-role shifts, each a
    constant or a callable of z."""

    mu0: object = 0.0
    mu1: object = 0.0
    pi: object = 0.0

    def shift(self, role: str, z: np.ndarray) -> np.ndarray:
        h = getattr(self, role)
        if callable(h):
            return np.array([float(h(zi)) for zi in z])
        return np.full(z.shape[0], float(h))


def conditional_moment(moment: MomentSpec, law: CausalLaw, x_cell, theta: float,
                       mu0, mu1, pi, pi_clip: float = PI_CLIP_DEFAULT) -> float:
    """M(x; theta, g) = E[m(D; theta, g) | X = x] by exact enumeration."""
    m = law._mask_x(x_cell)
    if not np.any(m):
        raise UnsupportedLaw(f"no atom matches x = {x_cell!r}")
    p = law.probs * m
    p = p / p.sum()
    y = law.y_obs
    if moment.kind == "conditional_mean":
        m2 = y
    elif moment.kind == "plugin_contrast":
        m2 = mu1 - mu0
    else:
        pic = clip_pi(pi, pi_clip)
        w = law.w.astype(np.float64)
        beta = w / pic - (1.0 - w) / (1.0 - pic)
        mu_w = np.where(law.w == 1, mu1, mu0)
        m2 = (mu1 - mu0) + beta * (y - mu_w)
    return float((p * (-theta + m2)).sum())


def orthogonality_check(moment: MomentSpec, law: CausalLaw, x_cell,
                        direction: NuisancePerturbation, t: float,
                        pi_clip: float = PI_CLIP_DEFAULT) -> float:
    """Finite-difference derivative D(t) = [M(theta0, g0 + t*h) - M(theta0, g0)] / t.

    For the orthogonal cate_aipw moment D(t) = O(t); for the plug-in contrast
    moment D(t) tends to a nonzero constant under a mu perturbation.
    """
    if not np.isfinite(law.probs).all():
        raise UnsupportedLaw("law must have finite support")
    mu0, mu1, pi = law.true_nuisances()
    theta0 = law.theta0(x_cell)
    base = conditional_moment(moment, law, x_cell, theta0, mu0, mu1, pi, pi_clip)
    mu0_t = mu0 + t * direction.shift("mu0", law.z)
    mu1_t = mu1 + t * direction.shift("mu1", law.z)
    pi_t = pi + t * direction.shift("pi", law.z)
    pert = conditional_moment(moment, law, x_cell, theta0, mu0_t, mu1_t, pi_t, pi_clip)
    return (pert - base) / t
