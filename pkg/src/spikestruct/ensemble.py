"""Teacher-student instances: Haar-rotated noise plus a rank-1 spike."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .priors import Prior
from .spectra import SpectralDensity, sample_eigenvalues


class EnsembleError(ValueError):
    """Invalid sampling request or ingestion input."""


@dataclass
class Observation:
    """One sampled instance Y = (lam/N) X* X*^T + Z."""

    y: np.ndarray
    x_star: np.ndarray
    z: np.ndarray | None
    lam: float
    n: int
    seed: int


@dataclass
class EmpiricalSpectrum:
    """Centered and scaled eigenvalue sample with outlier bookkeeping."""

    eigenvalues: np.ndarray
    removed_outliers: int
    shift: float
    scale: float


def _child_seeds(seed: int, count: int) -> list[int]:
    ss = np.random.SeedSequence(seed)
    return [int(s.generate_state(1)[0]) for s in ss.spawn(count)]


def sample_haar_orthogonal(n: int, seed: int) -> np.ndarray:
    """Haar matrix via QR with the triangular sign absorbed."""
    if n < 1:
        raise EnsembleError("matrix size must be at least 1")
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, n))
    q, r = np.linalg.qr(a)
    sign = np.sign(np.diag(r))
    sign[sign == 0] = 1.0
    return q * sign[None, :]


def sample_noise(rho: SpectralDensity, n: int, seed: int) -> np.ndarray:
    """Z = O^T diag(d) O with d i.i.d. from rho and O Haar."""
    eig_seed, basis_seed = _child_seeds(seed, 2)
    d = sample_eigenvalues(rho, n, eig_seed)
    o = sample_haar_orthogonal(n, basis_seed)
    return (o.T * d[None, :]) @ o


def sample_prior_vector(prior: Prior, n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    if prior.is_gaussian:
        return rng.standard_normal(n)
    return rng.choice(prior.atoms, size=n, p=prior.probs)


def make_observation(prior: Prior, rho: SpectralDensity, lam: float, n: int,
                     seed: int, keep_noise: bool = True) -> Observation:
    """Sample (Y, X*, Z); the seed splits into signal/eigenvalue/basis streams."""
    if lam < 0:
        raise EnsembleError("lambda must be nonnegative")
    signal_seed, eig_seed, basis_seed = _child_seeds(seed, 3)
    x_star = sample_prior_vector(prior, n, signal_seed)
    d = sample_eigenvalues(rho, n, eig_seed)
    o = sample_haar_orthogonal(n, basis_seed)
    z = (o.T * d[None, :]) @ o
    y = (lam / n) * np.outer(x_star, x_star) + z
    y = 0.5 * (y + y.T)
    return Observation(y=y, x_star=x_star, z=z if keep_noise else None,
                       lam=float(lam), n=int(n), seed=int(seed))


def matrix_function_apply(m: np.ndarray, f) -> np.ndarray:
    """Apply f to the eigenvalues of a symmetric matrix."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise EnsembleError("matrix_function_apply expects a square matrix")
    if not np.allclose(m, m.T, atol=1e-10):
        raise EnsembleError("matrix_function_apply expects a symmetric matrix")
    evals, evecs = np.linalg.eigh(m)
    fe = np.asarray(f(evals), dtype=float)
    return (evecs * fe[None, :]) @ evecs.T


def ingest_empirical_spectrum(values, outliers_to_remove: int = 0
                              ) -> tuple[EmpiricalSpectrum, SpectralDensity]:
    """Strip outliers, standardize, and kernel-smooth an eigenvalue sample."""
    vals = np.asarray(values, dtype=float).ravel()
    if vals.size == 0:
        raise EnsembleError("empty eigenvalue list")
    if outliers_to_remove < 0 or outliers_to_remove >= vals.size:
        raise EnsembleError(
            f"cannot remove {outliers_to_remove} outliers from {vals.size} eigenvalues")
    if outliers_to_remove:
        keep = np.argsort(np.abs(vals))[: vals.size - outliers_to_remove]
        vals = vals[np.sort(keep)]
    mu = float(vals.mean())
    sd = float(vals.std())
    if sd == 0:
        raise EnsembleError("zero variance after outlier removal")
    std_vals = (vals - mu) / sd
    record = EmpiricalSpectrum(eigenvalues=std_vals, removed_outliers=int(outliers_to_remove),
                               shift=mu, scale=sd)

    # Gaussian KDE with Silverman bandwidth, truncated to the observed range
    n = std_vals.size
    q75, q25 = np.percentile(std_vals, [75, 25])
    spread = min(std_vals.std(), (q75 - q25) / 1.34) or std_vals.std()
    bw = 0.9 * spread * n ** (-0.2)
    lo, hi = float(std_vals.min()), float(std_vals.max())

    def pdf(x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        z = (x[:, None] - std_vals[None, :]) / bw
        out = np.exp(-0.5 * z**2).sum(axis=1) / (n * bw * math.sqrt(2 * math.pi))
        return out

    rho = SpectralDensity.from_pdf(pdf, lo, hi, sqrt_edges=False, renormalize=True)
    return record, rho


def load_eigenvalues_csv(path) -> np.ndarray:
    """One-column CSV of eigenvalues; comment lines and a header are skipped."""
    vals = []
    with open(path) as fh:
        for line in fh:
            token = line.strip().split(",")[0]
            if not token or token.startswith("#"):
                continue
            try:
                vals.append(float(token))
            except ValueError:
                continue  # header row
    if not vals:
        raise EnsembleError(f"no eigenvalues parsed from {path}")
    return np.asarray(vals, dtype=float)


def dump_observation(obs: Observation, stem) -> None:
    """Row-major float64 matrix dump plus a JSON sidecar."""
    stem = Path(stem)
    obs.y.astype(np.float64).tofile(stem.with_suffix(".bin"))
    sidecar = {"n": obs.n, "lambda": obs.lam, "seed": obs.seed}
    stem.with_suffix(".json").write_text(json.dumps(sidecar, sort_keys=True))


def load_observation(stem) -> Observation:
    stem = Path(stem)
    meta = json.loads(stem.with_suffix(".json").read_text())
    n = int(meta["n"])
    y = np.fromfile(stem.with_suffix(".bin"), dtype=np.float64).reshape(n, n)
    return Observation(y=y, x_star=np.empty(0), z=None,
                       lam=float(meta["lambda"]), n=n, seed=int(meta["seed"]))
