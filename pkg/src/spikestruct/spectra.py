"""Noise spectral densities and their free-probability transforms.

A noise eigenvalue law is carried as a fixed-size quadrature: nodes inside
the support, bare quadrature weights, and the product weights (= bare weight
times pdf value) that represent expectations E_D[f(D)] = sum_i w_i f(d_i).
Densities with square-root edges (all analytic built-ins) are discretized
with Gauss-Legendre in an arcsine-transformed variable so every integrand
handled here is smooth on the quadrature grid; densities that are smooth up
to hard edges (truncated normal, kernel-smoothed empirical laws) use plain
Gauss-Legendre.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import brentq

QUAD_NODES = 400

# |x - d| below this switches the divided difference (V'(x)-V'(d))/(x-d)
# to a finite-difference estimate of V''(x).
DIVDIFF_EPS = 1e-8


class SpectraError(ValueError):
    """Invalid density construction or transform argument."""


class RTransformRangeError(SpectraError):
    """R-transform argument outside the invertible range of the Stieltjes map.

    Carries the attainable supremum so callers can clamp if they choose to.
    """

    def __init__(self, argument: float, attainable_sup: float):
        self.argument = float(argument)
        self.attainable_sup = float(attainable_sup)
        super().__init__(
            f"R-transform argument {argument:.6g} outside invertible range "
            f"(attainable supremum {attainable_sup:.6g})"
        )


def _gauss_legendre(lo: float, hi: float, n: int):
    t, wt = np.polynomial.legendre.leggauss(n)
    c, r = 0.5 * (hi + lo), 0.5 * (hi - lo)
    return c + r * t, r * wt


def _gauss_legendre_arcsine(lo: float, hi: float, n: int):
    # x = c + r sin(theta): sqrt edges become smooth cos factors.
    t, wt = np.polynomial.legendre.leggauss(n)
    c, r = 0.5 * (hi + lo), 0.5 * (hi - lo)
    theta = 0.5 * np.pi * t
    return c + r * np.sin(theta), 0.5 * np.pi * r * np.cos(theta) * wt


@dataclass(frozen=True)
class SpectralDensity:
    """Quadrature representation of a noise eigenvalue law."""

    support: tuple[float, float]
    nodes: np.ndarray
    weights: np.ndarray          # quad_weights * pdf(nodes), sum to 1
    quad_weights: np.ndarray     # bare quadrature weights
    pdf: Callable[[np.ndarray], np.ndarray]
    mean: float
    variance: float
    # pdf(nodes) cached: kernel-smoothed pdfs are costly to re-evaluate
    pdf_at_nodes: np.ndarray | None = None
    # affine record: standardized coordinate x satisfies x = (raw - shift)/scale
    shift: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if self.pdf_at_nodes is None:
            object.__setattr__(self, "pdf_at_nodes",
                               np.asarray(self.pdf(self.nodes), dtype=float))

    @classmethod
    def from_pdf(cls, pdf, lo: float, hi: float, *, sqrt_edges: bool = True,
                 n: int = QUAD_NODES, renormalize: bool = False) -> "SpectralDensity":
        if not hi > lo:
            raise SpectraError(f"empty support [{lo}, {hi}]")
        grid = _gauss_legendre_arcsine if sqrt_edges else _gauss_legendre
        nodes, qw = grid(lo, hi, n)
        vals = np.asarray(pdf(nodes), dtype=float)
        if np.any(vals < 0):
            raise SpectraError("pdf negative on quadrature nodes")
        w = qw * vals
        mass = w.sum()
        if renormalize:
            w = w / mass
            vals = vals / mass
            base = pdf
            pdf = lambda x, _b=base, _m=mass: np.asarray(_b(x), dtype=float) / _m
        elif abs(mass - 1.0) > 1e-8:
            raise SpectraError(f"density mass {mass:.3e} differs from 1 beyond 1e-8")
        mean = float(np.dot(w, nodes))
        var = float(np.dot(w, (nodes - mean) ** 2))
        return cls((float(lo), float(hi)), nodes, w, qw, pdf, mean, var,
                   pdf_at_nodes=vals)

    def expect(self, values: np.ndarray) -> float:
        """Quadrature expectation of values given at the nodes."""
        return float(np.dot(self.weights, values))


@dataclass(frozen=True)
class Potential:
    """Derivative V' of the matrix potential matching a spectral density."""

    dv: Callable[[np.ndarray], np.ndarray]
    provenance: str  # "analytic" | "pv-reconstructed"
    d2v: Callable[[np.ndarray], np.ndarray] | None = None
    fd_step: float = 1e-6

    def second_derivative(self, x: np.ndarray) -> np.ndarray:
        """V''(x), analytic if available, else centered difference of V'."""
        x = np.asarray(x, dtype=float)
        if self.d2v is not None:
            return np.asarray(self.d2v(x), dtype=float)
        h = self.fd_step
        return (np.asarray(self.dv(x + h), float) - np.asarray(self.dv(x - h), float)) / (2 * h)


@dataclass(frozen=True)
class EffectiveCoupling:
    """Optimal spectral pre-processing J(x) at a given signal-to-noise ratio."""

    j: Callable[[np.ndarray], np.ndarray]
    lam: float
    density: SpectralDensity
    potential: Potential


@dataclass(frozen=True)
class PushforwardLaw:
    """Law of J(D) for D drawn from the source density."""

    values: np.ndarray
    weights: np.ndarray
    edge_min: float
    edge_max: float

    def mean(self) -> float:
        return float(np.dot(self.weights, self.values))


# ---------------------------------------------------------------------------
# built-in densities

QUARTIC_GAMMA = 16.0 / 27.0
SESTIC_XI = 27.0 / 80.0
MP_ALPHA = 0.2
TRUNC_HALF_WIDTH = 5.0


def _quartic(params: dict) -> tuple[SpectralDensity, Potential]:
    g = float(params.get("gamma", QUARTIC_GAMMA))
    if g <= 0:
        raise SpectraError("quartic gamma must be positive")
    # one-cut normalization 3*g*a^4 = 1 fixes the edge for the pure quartic
    a2 = 1.0 / math.sqrt(3.0 * g)
    edge = 2.0 * math.sqrt(a2)

    def pdf(x):
        x = np.asarray(x, dtype=float)
        return (2 * a2 * g + g * x**2) * np.sqrt(np.maximum(4 * a2 - x**2, 0.0)) / (2 * np.pi)

    rho = SpectralDensity.from_pdf(pdf, -edge, edge)
    pot = Potential(dv=lambda x: g * np.asarray(x, float) ** 3,
                    provenance="analytic",
                    d2v=lambda x: 3 * g * np.asarray(x, float) ** 2)
    return rho, pot


def _sestic(params: dict) -> tuple[SpectralDensity, Potential]:
    xi = float(params.get("xi", SESTIC_XI))
    if xi <= 0:
        raise SpectraError("sestic xi must be positive")
    # normalization 10*xi*a^6 = 1
    a2 = (1.0 / (10.0 * xi)) ** (1.0 / 3.0)
    edge = 2.0 * math.sqrt(a2)

    def pdf(x):
        x = np.asarray(x, dtype=float)
        poly = 6 * a2**2 * xi + 2 * a2 * xi * x**2 + xi * x**4
        return poly * np.sqrt(np.maximum(4 * a2 - x**2, 0.0)) / (2 * np.pi)

    rho = SpectralDensity.from_pdf(pdf, -edge, edge)
    pot = Potential(dv=lambda x: xi * np.asarray(x, float) ** 5,
                    provenance="analytic",
                    d2v=lambda x: 5 * xi * np.asarray(x, float) ** 4)
    return rho, pot


def _marchenko_pastur(params: dict) -> tuple[SpectralDensity, Potential]:
    alpha = float(params.get("alpha", MP_ALPHA))
    if not 0 < alpha < 1:
        raise SpectraError("marchenko_pastur alpha must be in (0,1)")
    # variance alpha*sigma^4 = 1 unless sigma overridden
    sigma2 = float(params.get("sigma2", 1.0 / math.sqrt(alpha)))
    if sigma2 <= 0:
        raise SpectraError("marchenko_pastur sigma2 must be positive")
    lo = sigma2 * (1 - math.sqrt(alpha)) ** 2
    hi = sigma2 * (1 + math.sqrt(alpha)) ** 2

    def pdf(x):
        x = np.asarray(x, dtype=float)
        num = np.sqrt(np.maximum((hi - x) * (x - lo), 0.0))
        return num / (2 * np.pi * sigma2 * alpha * np.where(x != 0, x, 1.0))

    rho = SpectralDensity.from_pdf(pdf, lo, hi)
    pot = Potential(
        dv=lambda x: 1.0 / (alpha * sigma2) - (1.0 / alpha - 1.0) / np.asarray(x, float),
        provenance="analytic",
        d2v=lambda x: (1.0 / alpha - 1.0) / np.asarray(x, float) ** 2,
    )
    return rho, pot


def _truncated_normal(params: dict) -> tuple[SpectralDensity, Potential]:
    half = float(params.get("half_width", TRUNC_HALF_WIDTH))
    if half <= 0:
        raise SpectraError("truncated_normal half_width must be positive")
    mass = math.erf(half / math.sqrt(2.0))
    # truncation shrinks the variance; rescale so the law has unit variance
    raw_var = 1.0 - 2 * half * math.exp(-half**2 / 2) / (math.sqrt(2 * np.pi) * mass)
    s = math.sqrt(raw_var)
    edge = half / s

    def pdf(x):
        x = np.asarray(x, dtype=float)
        return s * np.exp(-((s * x) ** 2) / 2) / (math.sqrt(2 * np.pi) * mass)

    rho = SpectralDensity.from_pdf(pdf, -edge, edge, sqrt_edges=False)
    pot = potential_derivative_from_density(rho)
    return rho, pot


def _semicircle(params: dict) -> tuple[SpectralDensity, Potential]:
    radius = float(params.get("radius", 2.0))
    if radius <= 0:
        raise SpectraError("semicircle radius must be positive")

    def pdf(x):
        x = np.asarray(x, dtype=float)
        return 2.0 * np.sqrt(np.maximum(radius**2 - x**2, 0.0)) / (np.pi * radius**2)

    rho = SpectralDensity.from_pdf(pdf, -radius, radius)
    scale = 4.0 / radius**2
    pot = Potential(dv=lambda x: scale * np.asarray(x, float),
                    provenance="analytic",
                    d2v=lambda x: scale * np.ones_like(np.asarray(x, float)))
    return rho, pot


_BUILTINS = {
    "quartic": _quartic,
    "sestic": _sestic,
    "marchenko_pastur": _marchenko_pastur,
    "truncated_normal": _truncated_normal,
    "semicircle": _semicircle,
}


def build_builtin_density(kind: str, params: dict | None = None) -> SpectralDensity:
    """Built-in noise eigenvalue law with paper constants as defaults."""
    return build_builtin(kind, params)[0]


def build_builtin(kind: str, params: dict | None = None) -> tuple[SpectralDensity, Potential]:
    """Built-in density together with its matching potential derivative."""
    try:
        builder = _BUILTINS[kind]
    except KeyError:
        raise SpectraError(f"unknown density kind {kind!r}; expected one of {sorted(_BUILTINS)}") from None
    return builder(params or {})


# ---------------------------------------------------------------------------
# transforms

def standardize(rho: SpectralDensity) -> SpectralDensity:
    """Affine map of the law to mean 0, variance 1; the map is recorded."""
    if rho.variance <= 1e-14:
        raise SpectraError("cannot standardize a degenerate (zero-variance) density")
    mu, s = rho.mean, math.sqrt(rho.variance)
    lo = (rho.support[0] - mu) / s
    hi = (rho.support[1] - mu) / s
    base_pdf = rho.pdf

    def pdf(x):
        return s * np.asarray(base_pdf(s * np.asarray(x, float) + mu), dtype=float)

    nodes = (rho.nodes - mu) / s
    qw = rho.quad_weights / s
    return SpectralDensity(
        support=(lo, hi), nodes=nodes, weights=rho.weights.copy(), quad_weights=qw,
        pdf=pdf, mean=0.0, variance=1.0,
        pdf_at_nodes=s * rho.pdf_at_nodes,
        shift=rho.shift + rho.scale * mu, scale=rho.scale * s,
    )


def transform_potential(pot: Potential, rho_std: SpectralDensity) -> Potential:
    """Potential derivative in the standardized coordinates recorded on rho_std.

    For D_std = (D - shift)/scale the equilibrium relation V' = 2 PV
    transforms as V'_std(x) = scale * V'(scale*x + shift).
    """
    mu, s = rho_std.shift, rho_std.scale
    if mu == 0.0 and s == 1.0:
        return pot
    dv = pot.dv
    d2v = pot.d2v
    new_d2v = None
    if d2v is not None:
        new_d2v = lambda x: s**2 * np.asarray(d2v(s * np.asarray(x, float) + mu), float)
    return Potential(
        dv=lambda x: s * np.asarray(dv(s * np.asarray(x, float) + mu), float),
        provenance=pot.provenance,
        d2v=new_d2v,
        fd_step=pot.fd_step,
    )


def stieltjes_transform(rho: SpectralDensity, z: float) -> float:
    """g(z) = E_D[1/(z-D)] for real z outside the support."""
    lo, hi = rho.support
    if lo <= z <= hi:
        raise SpectraError(f"Stieltjes transform evaluated inside support: z={z}")
    return float(np.sum(rho.weights / (z - rho.nodes)))


def _pv_batch(rho: SpectralDensity, xs: np.ndarray) -> np.ndarray:
    """Singularity-subtracted PV integral at interior points, vectorized."""
    lo, hi = rho.support
    px = np.asarray(rho.pdf(xs), dtype=float)
    d = xs[:, None] - rho.nodes[None, :]
    near = np.abs(d) < 1e-12
    vals = (rho.pdf_at_nodes[None, :] - px[:, None]) / np.where(near, 1.0, d)
    if near.any():
        # removable singularity: the limit of the subtracted kernel is -rho'(x)
        h = 1e-7 * (hi - lo)
        xl, xr = np.maximum(xs - h, lo), np.minimum(xs + h, hi)
        dp = (np.asarray(rho.pdf(xr), float) - np.asarray(rho.pdf(xl), float)) / (xr - xl)
        vals = np.where(near, -dp[:, None], vals)
    return vals @ rho.quad_weights + px * np.log((xs - lo) / (hi - xs))


def hilbert_pv(rho: SpectralDensity, x: float) -> float:
    """PV integral of rho(l)/(x-l) via singularity subtraction."""
    lo, hi = rho.support
    if not lo < x < hi:
        raise SpectraError(f"principal value requires x strictly inside support, got {x}")
    return float(_pv_batch(rho, np.asarray([float(x)]))[0])


def potential_derivative_from_density(rho: SpectralDensity) -> Potential:
    """V'(x) = 2 PV E_D[1/(x-D)] inside the support, plain quadrature outside."""
    lo, hi = rho.support
    pad = 1e-9 * (hi - lo)

    def dv(x):
        arr = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.empty_like(arr)
        inside = (arr > lo + pad) & (arr < hi - pad)
        if inside.any():
            out[inside] = 2.0 * _pv_batch(rho, arr[inside])
        if (~inside).any():
            ext = arr[~inside, None] - rho.nodes[None, :]
            out[~inside] = 2.0 * (1.0 / ext) @ rho.weights
        return out if np.ndim(x) else float(out[0])

    return Potential(dv=dv, provenance="pv-reconstructed", fd_step=1e-5 * (hi - lo))


def effective_coupling(rho: SpectralDensity, pot: Potential, lam: float) -> EffectiveCoupling:
    """J(x) = lam V'(x) - lam^2 E_D[(V'(x)-V'(D))/(x-D)]."""
    if lam < 0:
        raise SpectraError("signal-to-noise ratio must be nonnegative")
    nodes = rho.nodes
    weights = rho.weights
    dv_nodes = np.asarray(pot.dv(nodes), dtype=float)

    def j(x):
        arr = np.atleast_1d(np.asarray(x, dtype=float))
        vx = np.asarray(pot.dv(arr), dtype=float)
        d = arr[:, None] - nodes[None, :]
        near = np.abs(d) < DIVDIFF_EPS
        dd = np.where(near, 1.0, d)
        div = (vx[:, None] - dv_nodes[None, :]) / dd
        if near.any():
            d2 = pot.second_derivative(arr)
            div = np.where(near, d2[:, None], div)
        out = lam * vx - lam**2 * div @ weights
        return out if np.ndim(x) else float(out[0])

    return EffectiveCoupling(j=j, lam=float(lam), density=rho, potential=pot)


def pushforward_law(rho: SpectralDensity, jc: EffectiveCoupling) -> PushforwardLaw:
    values = np.asarray(jc.j(rho.nodes), dtype=float)
    return PushforwardLaw(
        values=values, weights=rho.weights.copy(),
        edge_min=float(values.min()), edge_max=float(values.max()),
    )


def _law_stieltjes(law: PushforwardLaw, z: float) -> float:
    return float(np.sum(law.weights / (z - law.values)))


def r_transform_sup(law: PushforwardLaw) -> float:
    """Attainable supremum of the Stieltjes transform just above the edge."""
    guard = 1e-7 * max(1.0, abs(law.edge_max))
    return _law_stieltjes(law, law.edge_max + guard)


def r_transform(law: PushforwardLaw, s: float) -> float:
    """R(s) = zeta(s) - 1/s with zeta the inverse Stieltjes transform."""
    if s <= 0:
        raise SpectraError(f"R-transform argument must be positive, got {s}")
    guard = 1e-7 * max(1.0, abs(law.edge_max))
    zeta_lo = law.edge_max + guard
    s_sup = _law_stieltjes(law, zeta_lo)
    if s > s_sup:
        raise RTransformRangeError(s, s_sup)
    zeta_hi = law.edge_max + max(1e6, 2.0 / s)
    zeta = brentq(lambda z: _law_stieltjes(law, z) - s, zeta_lo, zeta_hi,
                  xtol=1e-12, rtol=8.9e-16)
    return float(zeta) - 1.0 / s


def r_transform_clamped(law: PushforwardLaw, s: float) -> tuple[float, bool]:
    """R(s) with the argument clamped into (0, sup); returns (value, clamped)."""
    s_sup = r_transform_sup(law)
    s_eff = min(max(s, 1e-12), s_sup - 1e-9) if s_sup > 2e-9 else 1e-12
    clamped = s_eff != s
    return r_transform(law, s_eff), clamped


def sample_eigenvalues(rho: SpectralDensity, n: int, seed: int) -> np.ndarray:
    """n i.i.d. draws by inverse-CDF on the quadrature grid."""
    if n <= 0:
        raise SpectraError("sample size must be positive")
    cdf = np.concatenate([[0.0], np.cumsum(rho.weights)])
    cdf /= cdf[-1]
    grid = np.concatenate([[rho.support[0]], rho.nodes])
    u = np.random.default_rng(seed).uniform(size=n)
    return np.interp(u, cdf, grid)


# ---------------------------------------------------------------------------
# CSV round trip

def export_density_csv(rho: SpectralDensity, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# support={rho.support[0]!r},{rho.support[1]!r}\n")
        writer = csv.writer(fh)
        writer.writerow(["node", "weight", "pdf"])
        pdf_vals = np.asarray(rho.pdf(rho.nodes), dtype=float)
        for n_, w_, p_ in zip(rho.nodes, rho.weights, pdf_vals):
            writer.writerow([repr(float(n_)), repr(float(w_)), repr(float(p_))])


def import_density_csv(path) -> SpectralDensity:
    support = None
    nodes, weights, pdf_vals = [], [], []
    with open(path, newline="") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if line.startswith("# support="):
                    a, b = line.split("=", 1)[1].split(",")
                    support = (float(a), float(b))
                continue
            if line.startswith("node"):
                continue
            a, b, c = line.split(",")
            nodes.append(float(a)); weights.append(float(b)); pdf_vals.append(float(c))
    nodes = np.asarray(nodes); weights = np.asarray(weights); pdf_vals = np.asarray(pdf_vals)
    if nodes.size == 0:
        raise SpectraError(f"no density rows in {path}")
    if support is None:
        support = (float(nodes.min()), float(nodes.max()))
    order = np.argsort(nodes)
    nodes, weights, pdf_vals = nodes[order], weights[order], pdf_vals[order]
    qw = np.where(pdf_vals > 0, weights / np.where(pdf_vals > 0, pdf_vals, 1.0), 0.0)

    def pdf(x):
        return np.interp(np.asarray(x, dtype=float), nodes, pdf_vals, left=0.0, right=0.0)

    mean = float(np.dot(weights, nodes) / weights.sum())
    var = float(np.dot(weights, (nodes - mean) ** 2) / weights.sum())
    return SpectralDensity(support=support, nodes=nodes, weights=weights / weights.sum(),
                           quad_weights=qw, pdf=pdf, mean=mean, variance=var)
