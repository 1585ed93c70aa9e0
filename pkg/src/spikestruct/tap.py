"""TAP iterations with optimal pre-processing, initializations, and metrics.

The update is
    m^{t+1} = tau m^t + (1-tau) eta(J(Y) m^t + gamma^t m^{t-1}, gamma^t),
with Onsager coefficient gamma^t = -R_{J(Z)}(1 - q^t), q^t = |m^t|^2 / N,
either tracked adaptively or frozen at the replica fixed-point value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .priors import Prior, denoiser
from .spectra import (
    PushforwardLaw,
    SpectralDensity,
    r_transform,
    r_transform_clamped,
)


class TapError(ValueError):
    """Invalid TAP configuration or inputs."""


@dataclass(frozen=True)
class TapConfig:
    tau: float = 0.9
    max_iter: int = 2000
    tol: float = 1e-7
    onsager_mode: str = "adaptive"          # "adaptive" | "fixed_from_replica"
    init_mode: str = "pca"                  # "pca" | "informative"
    informative_corr: float = math.sqrt(0.5)
    clamp_policy: str = "clamp_to_range"    # "clamp_to_range" | "error"

    def __post_init__(self):
        if not 0 <= self.tau < 1:
            raise TapError(f"damping tau must lie in [0,1), got {self.tau}")
        if self.tol <= 0:
            raise TapError("tol must be positive")
        if self.onsager_mode not in ("adaptive", "fixed_from_replica"):
            raise TapError(f"unknown onsager_mode {self.onsager_mode!r}")
        if self.init_mode not in ("pca", "informative"):
            raise TapError(f"unknown init_mode {self.init_mode!r}")
        if self.clamp_policy not in ("clamp_to_range", "error"):
            raise TapError(f"unknown clamp_policy {self.clamp_policy!r}")


@dataclass
class TapRun:
    m_final: np.ndarray
    q_tilde_history: np.ndarray
    gamma_history: np.ndarray
    iterations: int
    converged: bool
    diverged: bool
    clamp_warnings: int
    mse_spike: float = float("nan")
    mse_vector: float = float("nan")
    overlap: float = float("nan")
    mse_history: np.ndarray = field(default_factory=lambda: np.empty(0))


@dataclass
class PcaInit:
    vector: np.ndarray
    converged: bool
    degenerate: bool
    rayleigh: float
    iterations: int


def pca_init(y: np.ndarray, power_iters: int = 500, seed: int = 0) -> PcaInit:
    """sqrt(N) times the top eigenvector of Y by shifted power iteration."""
    if power_iters < 1:
        raise TapError("power_iters must be at least 1")
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    # stage 1: rough spectral radius so the shift makes the top eigenvalue dominant
    radius = 1.0
    for _ in range(30):
        w = y @ v
        radius = np.linalg.norm(w)
        if radius == 0:
            break
        v = w / radius
    shift = 1.05 * radius + 1e-12
    theta_old = np.inf
    converged = False
    iters = power_iters
    for it in range(power_iters):
        w = y @ v + shift * v
        nw = np.linalg.norm(w)
        if nw == 0:
            break
        v = w / nw
        theta = float(v @ (y @ v))
        if abs(theta - theta_old) <= 1e-10 * max(1.0, abs(theta)):
            converged = True
            iters = it + 1
            break
        theta_old = theta
    theta = float(v @ (y @ v))
    # secondary Rayleigh estimate orthogonal to v flags a degenerate top space
    u = rng.standard_normal(n)
    u -= (u @ v) * v
    norm_u = np.linalg.norm(u)
    degenerate = False
    if norm_u > 0:
        u /= norm_u
        for _ in range(40):
            w = y @ u + shift * u
            w -= (w @ v) * v
            nw = np.linalg.norm(w)
            if nw == 0:
                break
            u = w / nw
        theta2 = float(u @ (y @ u))
        degenerate = abs(theta - theta2) <= 1e-8 * max(1.0, abs(theta))
    return PcaInit(vector=math.sqrt(n) * v, converged=converged,
                   degenerate=degenerate, rayleigh=theta, iterations=iters)


def informative_init(x_star: np.ndarray, c: float, seed: int = 0) -> np.ndarray:
    """sqrt(N) times a unit vector with correlation exactly c to x_star."""
    if not 0 < c <= 1:
        raise TapError(f"correlation c must lie in (0,1], got {c}")
    x_star = np.asarray(x_star, dtype=float)
    norm = np.linalg.norm(x_star)
    if norm == 0:
        raise TapError("x_star must be nonzero")
    n = x_star.size
    xhat = x_star / norm
    if c == 1.0:
        return math.sqrt(n) * xhat
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(n)
    w -= (w @ xhat) * xhat
    w /= np.linalg.norm(w)
    return math.sqrt(n) * (c * xhat + math.sqrt(1.0 - c**2) * w)


def run_tap(
    jy: np.ndarray,
    prior: Prior,
    law: PushforwardLaw,
    m0: np.ndarray,
    config: TapConfig | None = None,
    replica_gamma: float | None = None,
    x_star: np.ndarray | None = None,
    record_mse: bool = False,
    m_prev_init: np.ndarray | None = None,
) -> TapRun:
    """Iterate the damped TAP update from m0 until the step norm drops below tol.

    The Onsager memory starts at zero; pass m_prev_init to seed a stationary
    state (fixed-point stability probes need the memory term warm).
    """
    config = config or TapConfig()
    jy = np.asarray(jy, dtype=float)
    m = np.asarray(m0, dtype=float).copy()
    n = m.size
    if m @ m / n > 1.0 + 1e-6:
        raise TapError("initialization norm exceeds the unit second-moment scale")
    if config.onsager_mode == "fixed_from_replica" and replica_gamma is None:
        raise TapError("fixed_from_replica mode needs replica_gamma")

    def gamma_of(q: float) -> tuple[float, bool]:
        if config.onsager_mode == "fixed_from_replica":
            return float(replica_gamma), False
        s = 1.0 - q
        if config.clamp_policy == "error":
            return -r_transform(law, s), False
        val, clamped = r_transform_clamped(law, s)
        return -val, clamped

    tau = config.tau
    m_prev = np.zeros(n) if m_prev_init is None else np.asarray(m_prev_init, float).copy()
    q_hist, g_hist, mse_hist = [], [], []
    clamps = 0
    converged = diverged = False
    iterations = 0
    # Nishimori-consistent trajectories keep q near or below 1, but the
    # finite-N fluctuation of |m|^2/N scales with the prior's fourth moment
    # (heavy 1/eps atoms swing q by sqrt((Ex^4 - 1)/N) at full recovery)
    q_limit = 1.0 + max(0.1, 3.0 * math.sqrt(max(prior.fourth_moment - 1.0, 0.0) / n))
    for _ in range(config.max_iter):
        q = float(m @ m) / n
        q_hist.append(q)
        if record_mse and x_star is not None:
            mse_hist.append(metrics(m, x_star, align_sign=prior.sign_symmetric)[0])
        if q < -1e-12 or q > q_limit:
            diverged = True
            g_hist.append(float("nan"))
            iterations += 1
            break
        gamma, clamped = gamma_of(q)
        clamps += clamped
        g_hist.append(gamma)
        m_new = tau * m + (1.0 - tau) * np.asarray(
            denoiser(prior, jy @ m + gamma * m_prev, gamma), dtype=float)
        step = float(np.linalg.norm(m_new - m)) / math.sqrt(n)
        m_prev, m = m, m_new
        iterations += 1
        if step <= config.tol:
            converged = True
            break
    run = TapRun(
        m_final=m, q_tilde_history=np.asarray(q_hist), gamma_history=np.asarray(g_hist),
        iterations=iterations, converged=converged, diverged=diverged,
        clamp_warnings=clamps, mse_history=np.asarray(mse_hist),
    )
    if x_star is not None:
        run.mse_spike, run.mse_vector, run.overlap = metrics(
            m, x_star, align_sign=prior.sign_symmetric)
    return run


def metrics(m: np.ndarray, x_star: np.ndarray, align_sign: bool = True
            ) -> tuple[float, float, float]:
    """(mse_spike, mse_vector, overlap) against the planted signal."""
    m = np.asarray(m, dtype=float)
    x_star = np.asarray(x_star, dtype=float)
    if m.shape != x_star.shape:
        raise TapError(f"length mismatch: {m.shape} vs {x_star.shape}")
    n = m.size
    dot = float(m @ x_star)
    overlap = dot / n
    nx2 = float(x_star @ x_star)
    nm2 = float(m @ m)
    mse_spike = (nx2**2 + nm2**2 - 2.0 * dot**2) / n**2
    sign = math.copysign(1.0, overlap) if align_sign else 1.0
    mse_vector = float(np.sum((x_star - sign * m) ** 2)) / n
    return mse_spike, mse_vector, overlap


def pca_overlap_theory(rho: SpectralDensity, lam: float) -> float:
    """Asymptotic squared overlap of the top eigenvector with the spike."""
    if lam <= 0:
        raise TapError("lambda must be positive")
    hi = rho.support[1]
    guard = 1e-7 * max(1.0, abs(hi))
    z_lo = hi + guard
    g_sup = float(np.sum(rho.weights / (z_lo - rho.nodes)))
    if 1.0 / lam >= g_sup:
        return 0.0  # spike below the detachment threshold
    z_hi = hi + max(1e6, 2.0 * lam)
    z_star = brentq(lambda z: float(np.sum(rho.weights / (z - rho.nodes))) - 1.0 / lam,
                    z_lo, z_hi, xtol=1e-13, rtol=8.9e-16)
    g_prime = -float(np.sum(rho.weights / (z_star - rho.nodes) ** 2))
    return -1.0 / (lam**2 * g_prime)


def spike_location_theory(rho: SpectralDensity, lam: float) -> float:
    """Asymptotic top eigenvalue zeta_Z(1/lam) above the detachment threshold."""
    if lam <= 0:
        raise TapError("lambda must be positive")
    hi = rho.support[1]
    z_lo = hi + 1e-7 * max(1.0, abs(hi))
    g_sup = float(np.sum(rho.weights / (z_lo - rho.nodes)))
    if 1.0 / lam >= g_sup:
        return hi
    return float(brentq(lambda z: float(np.sum(rho.weights / (z - rho.nodes))) - 1.0 / lam,
                        z_lo, hi + max(1e6, 2.0 * lam), xtol=1e-13, rtol=8.9e-16))
