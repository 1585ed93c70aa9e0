"""Replica fixed-point system, free entropy, and phase curves.

The two-variable fixed point is
    mhat = -R_{J(Z)}(1 - m),    m = E_{Z,X} X <x>_mhat,
solved by damped alternation from an uninformative or informative start.
The replica-symmetric free entropy selects among converged solutions; the
spike MMSE is 1 - m*^2 and the per-component mutual information is the
free-entropy drop from lambda = 0.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .priors import Prior, log_partition, overlap_of_snr
from .spectra import (
    Potential,
    PushforwardLaw,
    RTransformRangeError,
    SpectralDensity,
    effective_coupling,
    pushforward_law,
    r_transform,
    r_transform_clamped,
)


class ReplicaError(ValueError):
    """Solver misuse or ill-posed free-entropy evaluation."""


@dataclass(frozen=True)
class SaddlePoint:
    """One solution of the fixed-point system with its free entropy."""

    lam: float
    m_star: float
    mhat_star: float
    f_rs: float
    init_label: str
    converged: bool
    iterations: int
    residual_m: float
    residual_mhat: float
    clamp_events: int = 0


@dataclass
class PhaseCurve:
    lambdas: np.ndarray
    m_star: np.ndarray
    mmse_spike: np.ndarray
    mmse_vector: np.ndarray
    mi_per_component: np.ndarray
    surrogate_snr: np.ndarray

    def write_csv(self, path, header_lines: list[str] | None = None) -> None:
        with open(path, "w", newline="") as fh:
            for line in header_lines or []:
                fh.write(line if line.endswith("\n") else line + "\n")
            writer = csv.writer(fh)
            writer.writerow(["lambda", "m_star", "mmse_spike", "mmse_vector", "mi", "surrogate_snr"])
            for row in zip(self.lambdas, self.m_star, self.mmse_spike,
                           self.mmse_vector, self.mi_per_component, self.surrogate_snr):
                writer.writerow([repr(float(v)) for v in row])


INIT_VALUES = {"uninformative": 1e-4, "informative": 1.0 - 1e-4}


def solve_fixed_point(
    rho: SpectralDensity,
    pot: Potential,
    prior: Prior,
    lam: float,
    init: str = "informative",
    damping: float = 0.5,
    tol: float = 1e-12,
    max_iter: int = 5000,
    clamp_policy: str = "clamp_to_range",
    q_constant: str = "derivation",
    law: PushforwardLaw | None = None,
) -> SaddlePoint:
    """Damped alternation on (m, mhat) from the given initialization."""
    if lam < 0:
        raise ReplicaError("lambda must be nonnegative")
    if not 0 <= damping < 1:
        raise ReplicaError("damping must lie in [0,1)")
    if init not in INIT_VALUES:
        raise ReplicaError(f"unknown init {init!r}")
    if law is None:
        law = pushforward_law(rho, effective_coupling(rho, pot, lam))

    def onsager(m: float) -> tuple[float, bool]:
        s = 1.0 - m
        if clamp_policy == "error":
            try:
                return max(0.0, -r_transform(law, s)), False
            except RTransformRangeError as err:
                raise RTransformRangeError(s, err.attainable_sup) from err
        val, clamped = r_transform_clamped(law, s)
        return max(0.0, -val), clamped

    m = INIT_VALUES[init]
    clamps = 0
    iterations = max_iter
    mhat_last = 0.0
    for it in range(max_iter):
        mhat_last, clamped = onsager(m)
        clamps += clamped
        m_new = damping * m + (1.0 - damping) * overlap_of_snr(prior, mhat_last)
        delta, m = abs(m_new - m), m_new
        if delta <= tol:
            iterations = it + 1
            break
    mhat, clamped_at_exit = onsager(m)
    res_m = abs(m - overlap_of_snr(prior, mhat))
    res_mhat = abs(mhat - mhat_last)
    converged = iterations < max_iter and res_m <= 1e-9 and res_mhat <= 1e-9 and not clamped_at_exit
    f_rs = float("nan")
    try:
        f_rs = free_entropy_rs(rho, pot, prior, lam, m, mhat, q_constant)
    except ReplicaError:
        pass
    return SaddlePoint(
        lam=float(lam), m_star=float(m), mhat_star=float(mhat), f_rs=f_rs,
        init_label=init, converged=converged, iterations=iterations,
        residual_m=res_m, residual_mhat=res_mhat, clamp_events=clamps,
    )


def _divided_difference_matrix(rho: SpectralDensity, pot: Potential) -> np.ndarray:
    nodes = rho.nodes
    dv = np.asarray(pot.dv(nodes), dtype=float)
    denom = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(denom, 1.0)
    dd = (dv[:, None] - dv[None, :]) / denom
    np.fill_diagonal(dd, pot.second_derivative(nodes))
    return dd


def solve_q(
    rho: SpectralDensity,
    pot: Potential,
    lam: float,
    m: float,
    mhat: float,
    h_vals: np.ndarray,
    q_constant: str = "derivation",
    method: str = "direct",
    picard_iters: int = 200,
) -> np.ndarray:
    """Q(x) at the nodes from the linear integral equation."""
    if q_constant == "derivation":
        c = mhat - m / (1.0 - m)
    elif q_constant == "literal":
        c = mhat - 1.0 / (1.0 - m)
    else:
        raise ReplicaError(f"unknown q_constant {q_constant!r}")
    dd = _divided_difference_matrix(rho, pot)
    kernel = lam**2 * dd * (rho.weights * h_vals)[None, :]
    rhs = np.full(rho.nodes.size, c)
    if method == "direct":
        mat = np.eye(rho.nodes.size) - kernel
        try:
            return np.linalg.solve(mat, rhs)
        except np.linalg.LinAlgError as err:
            raise ReplicaError("singular (I - K) system for Q") from err
    if method == "picard":
        q = rhs.copy()
        for _ in range(picard_iters):
            q = rhs + kernel @ q
        return q
    raise ReplicaError(f"unknown Q method {method!r}")


def free_entropy_rs(
    rho: SpectralDensity,
    pot: Potential,
    prior: Prior,
    lam: float,
    m: float,
    mhat: float,
    q_constant: str = "derivation",
) -> float:
    """Replica-symmetric free entropy at (m, mhat)."""
    if not 0 <= m < 1:
        raise ReplicaError(f"m must lie in [0,1), got {m}")
    if mhat < 0:
        raise ReplicaError(f"mhat must be nonnegative, got {mhat}")
    jc = effective_coupling(rho, pot, lam)
    jvals = np.asarray(jc.j(rho.nodes), dtype=float)
    denom = 1.0 / (1.0 - m) - mhat - jvals
    if np.any(denom <= 0):
        raise ReplicaError("nonpositive H denominator at a quadrature node")
    h_vals = 1.0 / denom
    q_vals = solve_q(rho, pot, lam, m, mhat, h_vals, q_constant=q_constant)
    dd = _divided_difference_matrix(rho, pot)
    qh = rho.weights * q_vals * h_vals
    c = (mhat - m / (1.0 - m)) if q_constant == "derivation" else (mhat - 1.0 / (1.0 - m))
    double_term = -0.5 * lam**2 * float(qh @ dd @ qh)
    scalar_term = -(m**2) / (2.0 * (1.0 - m)) - 0.5 * math.log1p(-m) - 0.5 * m
    channel_term = log_partition(prior, mhat)
    log_h_term = 0.5 * rho.expect(np.log(h_vals))
    linear_term = -0.5 * rho.expect((c - q_vals**2) * h_vals)
    return double_term + scalar_term + channel_term + log_h_term + linear_term


def free_entropy(
    rho: SpectralDensity,
    pot: Potential,
    prior: Prior,
    lam: float,
    m: float,
    mhat: float,
    q_constant: str = "derivation",
) -> float:
    """Full free entropy f = f^RS - (lam/2) E_D V'(D)."""
    dv_mean = rho.expect(np.asarray(pot.dv(rho.nodes), dtype=float))
    return free_entropy_rs(rho, pot, prior, lam, m, mhat, q_constant) - 0.5 * lam * dv_mean


def select_solution(candidates: list[SaddlePoint]) -> SaddlePoint:
    """Largest f_rs wins; near-ties break toward larger m_star."""
    if not candidates:
        raise ReplicaError("no candidate saddle points to select from")
    best = candidates[0]
    for cand in candidates[1:]:
        if math.isnan(best.f_rs) and not math.isnan(cand.f_rs):
            best = cand
        elif math.isnan(cand.f_rs):
            continue
        elif cand.f_rs > best.f_rs + 1e-12:
            best = cand
        elif abs(cand.f_rs - best.f_rs) <= 1e-12 and cand.m_star > best.m_star:
            best = cand
    return best


def gaussian_surrogate_snr(law: PushforwardLaw, m_star: float) -> float:
    """SNR of the Gaussian model sharing the structured fixed point."""
    if not 0 < m_star < 1:
        raise ReplicaError(f"m_star must lie in (0,1), got {m_star}")
    val = -r_transform(law, 1.0 - m_star)
    if val < 0:
        raise ReplicaError(f"negative surrogate radicand -R(1-m*) = {val:.3e}")
    return math.sqrt(val / m_star)


def solve_both_inits(
    rho: SpectralDensity,
    pot: Potential,
    prior: Prior,
    lam: float,
    damping: float = 0.5,
    tol: float = 1e-12,
    clamp_policy: str = "clamp_to_range",
    q_constant: str = "derivation",
    law: PushforwardLaw | None = None,
) -> SaddlePoint:
    """Run both initializations and select by free entropy."""
    if law is None:
        law = pushforward_law(rho, effective_coupling(rho, pot, lam))
    candidates = []
    for init in ("uninformative", "informative"):
        sp = solve_fixed_point(rho, pot, prior, lam, init=init, damping=damping,
                               tol=tol, clamp_policy=clamp_policy,
                               q_constant=q_constant, law=law)
        candidates.append(sp)
    converged = [sp for sp in candidates if sp.converged]
    return select_solution(converged or candidates)


def phase_curve(
    rho: SpectralDensity,
    pot: Potential,
    prior: Prior,
    lambda_grid,
    damping: float = 0.5,
    tol: float = 1e-12,
    clamp_policy: str = "clamp_to_range",
    q_constant: str = "derivation",
) -> PhaseCurve:
    """MMSE / mutual-information curve over a sorted nonnegative grid."""
    grid = np.asarray(lambda_grid, dtype=float)
    if grid.size == 0:
        raise ReplicaError("empty lambda grid")
    if np.any(np.diff(grid) < 0) or np.any(grid < 0):
        raise ReplicaError("lambda grid must be sorted and nonnegative")
    m_out = np.empty_like(grid)
    mi_out = np.empty_like(grid)
    surr = np.empty_like(grid)
    for i, lam in enumerate(grid):
        if lam == 0.0:
            m_out[i], mi_out[i], surr[i] = 0.0, 0.0, float("nan")
            continue
        law = pushforward_law(rho, effective_coupling(rho, pot, lam))
        best = solve_both_inits(rho, pot, prior, lam, damping=damping, tol=tol,
                                clamp_policy=clamp_policy, q_constant=q_constant, law=law)
        m_out[i] = best.m_star
        # f(0) = 0 exactly under the derivation-consistent constant; keep the
        # explicit difference so the literal switch stays calibrated too
        f0 = free_entropy(rho, pot, prior, 0.0, 0.0, 0.0, q_constant)
        try:
            f_lam = free_entropy(rho, pot, prior, lam, min(best.m_star, 1 - 1e-12),
                                 best.mhat_star, q_constant)
            mi_out[i] = f0 - f_lam
        except ReplicaError:
            mi_out[i] = float("nan")
        if 1e-9 < best.m_star < 1:
            try:
                surr[i] = gaussian_surrogate_snr(law, best.m_star)
            except (ReplicaError, RTransformRangeError):
                surr[i] = float("nan")
        else:
            surr[i] = float("nan")
    return PhaseCurve(
        lambdas=grid, m_star=m_out,
        mmse_spike=1.0 - m_out**2, mmse_vector=1.0 - m_out,
        mi_per_component=mi_out, surrogate_snr=surr,
    )
