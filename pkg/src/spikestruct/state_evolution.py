"""State evolution of the orthogonal iteration and its replica cross-check.

The scalar recursion tracks (theta, omega) through
    theta = 1/dmmse(omega) - 1,
    omega = 1 - E[1/(phi(D)+theta)] / E[phi(D)/(phi(D)+theta)],
with phi(x) = (1 - lam * PV(x))^2 + pi^2 lam^2 rho(x)^2 built from the
Hilbert transform of the noise law. Its fixed point maps onto the replica
saddle point through m = 1 - mmse(omega), mhat = omega/(1-omega), and
1 - phi coincides with the pre-processing function J.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .priors import Prior, dmmse, overlap_of_snr
from .replica import solve_fixed_point
from .spectra import (
    Potential,
    SpectralDensity,
    _pv_batch,
    effective_coupling,
    hilbert_pv,
)

THETA_CAP = 1e14


class StateEvolutionError(ValueError):
    """Invalid state-evolution arguments."""


@dataclass
class StateEvolutionPoint:
    theta: float
    omega: float
    phi_values: np.ndarray
    converged: bool
    degenerate: bool
    iterations: int


def phi(rho: SpectralDensity, lam: float, x: float) -> float:
    """phi(x) = (1 - lam*PV(x))^2 + pi^2 lam^2 rho(x)^2 at an interior point."""
    pv = hilbert_pv(rho, x)
    dens = float(rho.pdf(np.asarray([x]))[0])
    return (1.0 - lam * pv) ** 2 + (math.pi * lam * dens) ** 2


def phi_on_nodes(rho: SpectralDensity, lam: float) -> np.ndarray:
    pvs = _pv_batch(rho, rho.nodes)
    return (1.0 - lam * pvs) ** 2 + (math.pi * lam * rho.pdf_at_nodes) ** 2


def se_fixed_point(
    rho: SpectralDensity,
    prior: Prior,
    lam: float,
    init_omega: float = 0.999,
    damping: float = 0.5,
    tol: float = 1e-10,
    max_iter: int = 5000,
    phi_values: np.ndarray | None = None,
) -> StateEvolutionPoint:
    """Damped alternation on (theta, omega) from init_omega."""
    if not 0 <= init_omega < 1:
        raise StateEvolutionError(f"init_omega must lie in [0,1), got {init_omega}")
    phv = phi_on_nodes(rho, lam) if phi_values is None else np.asarray(phi_values, float)
    if np.any(phv < -1e-12):
        raise StateEvolutionError("phi must be nonnegative (it is a sum of squares)")
    w = rho.weights

    def theta_of(om: float) -> float:
        d = dmmse(prior, om)
        if math.isinf(d):
            return 0.0
        return min(max(1.0 / d - 1.0, 0.0), THETA_CAP)

    # divergence-free denoisers carry no gaussian information: dmmse == 1
    degenerate = prior.is_gaussian
    om = init_omega
    theta = theta_of(om)
    converged = False
    iterations = max_iter
    for it in range(max_iter):
        theta = theta_of(om)
        if np.any(phv + theta <= 0):
            raise StateEvolutionError("phi + theta nonpositive at a quadrature node")
        e_inv = float(np.dot(w, 1.0 / (phv + theta)))
        e_phi = float(np.dot(w, phv / (phv + theta)))
        om_new = damping * om + (1.0 - damping) * (1.0 - e_inv / e_phi)
        om_new = min(max(om_new, 0.0), 1.0 - 1e-14)
        delta, om = abs(om_new - om), om_new
        if delta <= tol:
            converged = True
            iterations = it + 1
            break
    theta = theta_of(om)
    if degenerate:
        converged = False
    return StateEvolutionPoint(theta=float(theta), omega=float(om), phi_values=phv,
                               converged=converged, degenerate=degenerate,
                               iterations=iterations)


def replica_equivalence_check(
    rho: SpectralDensity,
    pot: Potential,
    prior: Prior,
    lam: float,
    interior_fraction: float = 0.9,
) -> dict:
    """Compare the mapped SE fixed point with the replica solution.

    Both sides start in the informative basin. Also reports the sup gap of
    the function identity 1 - phi = J over the central interior of the
    support, where the smoothed-edge error of phi is excluded.
    """
    sp = solve_fixed_point(rho, pot, prior, lam, init="informative")
    phv = phi_on_nodes(rho, lam)
    se = se_fixed_point(rho, prior, lam, init_omega=0.999, phi_values=phv)
    m_se = overlap_of_snr(prior, se.omega / (1.0 - se.omega))
    mhat_se = se.omega / (1.0 - se.omega)
    jvals = np.asarray(effective_coupling(rho, pot, lam).j(rho.nodes), dtype=float)
    lo, hi = rho.support
    center, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    interior = np.abs(rho.nodes - center) <= interior_fraction * half
    sup_gap_phi = float(np.max(np.abs(1.0 - phv - jvals)[interior]))
    replica_basin = "informative" if sp.m_star > 0.5 else "uninformative"
    se_basin = "informative" if m_se > 0.5 else "uninformative"
    return {
        "lambda": float(lam),
        "theta": se.theta,
        "omega": se.omega,
        "m_se": float(m_se),
        "mhat_se": float(mhat_se),
        "m_replica": sp.m_star,
        "mhat_replica": sp.mhat_star,
        "gap_m": abs(float(m_se) - sp.m_star),
        "gap_mhat": abs(float(mhat_se) - sp.mhat_star),
        "sup_gap_phi": sup_gap_phi,
        "se_converged": se.converged,
        "replica_converged": sp.converged,
        "degenerate": se.degenerate,
        "basin_match": replica_basin == se_basin,
    }
