"""Signal priors and scalar Gaussian-channel quantities.

The scalar channel observes y = sqrt(mhat) x + z with z ~ N(0,1); its
posterior tilts the prior by exp(a x - b x^2 / 2). Everything here reduces
to the Bayes denoiser eta(a, b), evaluated in closed form for the gaussian
prior and by log-sum-exp over atoms otherwise.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

# 61 nodes resolve smooth-prior integrands but alias the sharp posterior
# transition of the 1/eps-atom priors; 301 holds the Nishimori identity
# below 1e-8 for every supported prior.
GH_ORDER = 301

_gh_nodes, _gh_weights = np.polynomial.hermite_e.hermegauss(GH_ORDER)
_gh_weights = _gh_weights / _gh_weights.sum()


class PriorError(ValueError):
    """Invalid prior construction or channel argument."""


@dataclass(frozen=True)
class Prior:
    """Signal law with unit second moment; atomic unless gaussian."""

    kind: str
    atoms: np.ndarray = field(default_factory=lambda: np.empty(0))
    probs: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def is_gaussian(self) -> bool:
        return self.kind == "gaussian"

    @property
    def mean(self) -> float:
        if self.is_gaussian:
            return 0.0
        return float(np.dot(self.probs, self.atoms))

    @property
    def second_moment(self) -> float:
        if self.is_gaussian:
            return 1.0
        return float(np.dot(self.probs, self.atoms**2))

    @property
    def fourth_moment(self) -> float:
        if self.is_gaussian:
            return 3.0
        return float(np.dot(self.probs, self.atoms**4))

    @property
    def sign_symmetric(self) -> bool:
        if self.is_gaussian:
            return True
        pos = sorted(zip(self.atoms, self.probs))
        neg = sorted(zip(-self.atoms, self.probs))
        return all(abs(a - b) < 1e-12 and abs(p - q) < 1e-12
                   for (a, p), (b, q) in zip(pos, neg))


def _atomic(kind: str, atoms, probs) -> Prior:
    atoms = np.asarray(atoms, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if np.any(probs < 0):
        raise PriorError("atom probabilities must be nonnegative")
    if abs(probs.sum() - 1.0) > 1e-12:
        raise PriorError(f"atom probabilities sum to {probs.sum()!r}, not 1")
    m2 = float(np.dot(probs, atoms**2))
    if abs(m2 - 1.0) > 1e-12:
        raise PriorError(f"prior second moment {m2!r} differs from 1")
    return Prior(kind=kind, atoms=atoms, probs=probs)


def gaussian_prior() -> Prior:
    return Prior(kind="gaussian")


def rademacher_prior() -> Prior:
    return _atomic("rademacher", [-1.0, 1.0], [0.5, 0.5])


def two_point_prior(eps: float = 0.125) -> Prior:
    # mass eps^2 at 1/eps, rest at 0; mean eps is nonzero by construction
    if not 0 < eps < 1:
        raise PriorError("two_point eps must be in (0,1)")
    return _atomic("two_point", [1.0 / eps, 0.0], [eps**2, 1.0 - eps**2])


def sparse_rademacher_prior(eps: float = math.sqrt(0.3)) -> Prior:
    if not 0 < eps <= 1:
        raise PriorError("sparse_rademacher eps must be in (0,1]")
    return _atomic("sparse_rademacher",
                   [-1.0 / eps, 0.0, 1.0 / eps],
                   [eps**2 / 2, 1.0 - eps**2, eps**2 / 2])


def custom_atoms_prior(pairs) -> Prior:
    pairs = list(pairs)
    if not pairs:
        raise PriorError("custom prior needs at least one atom")
    atoms = [v for v, _ in pairs]
    probs = [p for _, p in pairs]
    return _atomic("custom_atoms", atoms, probs)


def load_atoms_csv(path) -> Prior:
    """Custom prior from CSV with header value,prob."""
    pairs = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#") or row[0].strip() == "value":
                continue
            pairs.append((float(row[0]), float(row[1])))
    return custom_atoms_prior(pairs)


_BUILDERS = {
    "gaussian": lambda params: gaussian_prior(),
    "rademacher": lambda params: rademacher_prior(),
    "two_point": lambda params: two_point_prior(float(params.get("eps", 0.125))),
    "sparse_rademacher": lambda params: sparse_rademacher_prior(
        float(params.get("eps", math.sqrt(0.3)))),
}


def build_prior(kind: str, params: dict | None = None) -> Prior:
    try:
        builder = _BUILDERS[kind]
    except KeyError:
        raise PriorError(f"unknown prior kind {kind!r}; expected one of {sorted(_BUILDERS)}") from None
    return builder(params or {})


# ---------------------------------------------------------------------------
# scalar-channel quantities

def denoiser(prior: Prior, a, b: float):
    """Posterior mean of x under tilt exp(a x - b x^2 / 2)."""
    if prior.is_gaussian:
        if 1.0 + b <= 0:
            raise PriorError(f"gaussian denoiser needs 1+b > 0, got b={b}")
        out = np.asarray(a, dtype=float) / (1.0 + b)
        return out if np.ndim(a) else float(out)
    a_arr = np.atleast_1d(np.asarray(a, dtype=float))
    ex = a_arr[:, None] * prior.atoms[None, :] - 0.5 * b * prior.atoms[None, :] ** 2
    ex -= ex.max(axis=1, keepdims=True)
    wexp = prior.probs[None, :] * np.exp(ex)
    out = (wexp @ prior.atoms) / wexp.sum(axis=1)
    return out if np.ndim(a) else float(out[0])


def _posterior_moments(prior: Prior, mhat: float) -> tuple[float, float]:
    """(E X<x>, E <x>^2) over the scalar channel, Gauss-Hermite in Z."""
    if prior.is_gaussian:
        m = mhat / (1.0 + mhat)
        return m, m
    overlap = 0.0
    second = 0.0
    root = math.sqrt(mhat)
    for x0, p0 in zip(prior.atoms, prior.probs):
        a = root * _gh_nodes + mhat * x0
        post = denoiser(prior, a, mhat)
        overlap += p0 * float(np.dot(_gh_weights, x0 * post))
        second += p0 * float(np.dot(_gh_weights, post**2))
    return overlap, second


def overlap_of_snr(prior: Prior, mhat: float) -> float:
    """m(mhat) = E_{Z,X}[X <x>], the overlap at effective SNR mhat."""
    if mhat < 0:
        raise PriorError(f"effective SNR must be nonnegative, got {mhat}")
    if mhat == 0:
        return 0.0
    return _posterior_moments(prior, mhat)[0]


def posterior_alignment(prior: Prior, mhat: float) -> tuple[float, float]:
    """Both Nishimori sides (E X<x>, E <x>^2) for property checks."""
    if mhat == 0:
        return 0.0, 0.0
    return _posterior_moments(prior, mhat)


def scalar_mmse(prior: Prior, mhat: float) -> float:
    """E (X - <x>)^2 = 1 - m(mhat) by the Nishimori identity."""
    return 1.0 - overlap_of_snr(prior, mhat)


def dmmse(prior: Prior, omega: float) -> float:
    """Divergence-free MMSE: 1/dmmse = 1/mmse(omega) - omega/(1-omega)."""
    if not 0 <= omega < 1:
        raise PriorError(f"omega must be in [0,1), got {omega}")
    mm = scalar_mmse(prior, omega / (1.0 - omega))
    inv = 1.0 / max(mm, 1e-300) - omega / (1.0 - omega)
    if inv <= 0:
        return math.inf
    return 1.0 / inv


def log_partition(prior: Prior, mhat: float) -> float:
    """E_{Z,X} log int dP_X(x) exp(sqrt(mhat) Z x - mhat x^2/2 + mhat X x)."""
    if mhat < 0:
        raise PriorError(f"effective SNR must be nonnegative, got {mhat}")
    if mhat == 0:
        return 0.0
    if prior.is_gaussian:
        return 0.5 * mhat - 0.5 * math.log1p(mhat)
    root = math.sqrt(mhat)
    total = 0.0
    for x0, p0 in zip(prior.atoms, prior.probs):
        a = root * _gh_nodes + mhat * x0
        ex = a[:, None] * prior.atoms[None, :] - 0.5 * mhat * prior.atoms[None, :] ** 2
        mx = ex.max(axis=1)
        lse = mx + np.log(np.exp(ex - mx[:, None]) @ prior.probs)
        total += p0 * float(np.dot(_gh_weights, lse))
    return total


@dataclass(frozen=True)
class ScalarChannel:
    """Scalar Gaussian channel at effective SNR mhat for a given prior."""

    prior: Prior
    mhat: float

    def __post_init__(self):
        if self.mhat < 0:
            raise PriorError(f"mhat must be nonnegative, got {self.mhat}")

    def overlap(self) -> float:
        return overlap_of_snr(self.prior, self.mhat)

    def mmse(self) -> float:
        return scalar_mmse(self.prior, self.mhat)
