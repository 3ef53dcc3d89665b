"""Hermite-polynomial machinery: basis evaluation, activation coefficients,
likelihood-ratio coefficients and the truncated population loss.

Conventions. The canonical basis is the orthonormal one, h_k = He_k / sqrt(k!),
with E[h_i h_j] = delta_ij under the standard Gaussian. Probabilists'
polynomials He_k are available for conversion and for Rademacher identities
like He_4(+-1) = -2.

The population loss of a spherical perceptron on the two-spike model with
orthogonal directions and a centred planted class is

    loss(a_u, a_v) = 1 + c_sigma[0]/2
                     - 1/2 sum_ij sqrt(C(i+j, i)) cL[i,j] c_sigma[i+j] a_u^i a_v^j

where cL[i,j] = E_planted[h_i(u.x) h_j(v.x)]. The sqrt-binomial weight is the
multinomial normalisation of the two-direction Hermite tensor; dropping it
leaves the pure-direction terms untouched but visibly breaks the mixed terms
against Monte Carlo once the latents are coupled (checked in the tests).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
import numpy.polynomial.hermite_e as hermite_e
import numpy.polynomial.legendre as legendre

from .errors import AssumptionViolationError, NumericalAccuracyError
from .mcm import McmParams
from .ode import SearchOdeCoeffs
from .sampling import RngHandle, sample_latent_pairs

MAX_DEGREE = 30
_SQRT_FACT = np.array([math.sqrt(math.factorial(k)) for k in range(MAX_DEGREE + 1)])


# ---------------------------------------------------------------------------
# basis evaluation

def hermite_table(max_degree: int, z: np.ndarray, convention: str = "normalized") -> np.ndarray:
    """All degrees 0..max_degree at once, shape (max_degree+1, len(z))."""
    if max_degree > MAX_DEGREE:
        raise ValueError(f"degree {max_degree} above the supported cap {MAX_DEGREE}")
    z = np.atleast_1d(np.asarray(z, dtype=float))
    out = np.empty((max_degree + 1, z.size))
    out[0] = 1.0
    if max_degree >= 1:
        out[1] = z
    for k in range(2, max_degree + 1):
        out[k] = z * out[k - 1] - (k - 1) * out[k - 2]
    if convention == "normalized":
        out /= _SQRT_FACT[: max_degree + 1, None]
    elif convention != "probabilists":
        raise ValueError(f"unknown convention {convention!r}")
    return out


def hermite_eval(k: int, z, convention: str = "normalized"):
    """h_k(z) or He_k(z) by three-term recurrence."""
    if k < 0:
        raise ValueError("degree must be non-negative")
    if k > MAX_DEGREE:
        raise ValueError(f"degree {k} above the supported cap {MAX_DEGREE}")
    scalar = np.isscalar(z)
    vals = hermite_table(k, np.atleast_1d(z), convention)[k]
    return float(vals[0]) if scalar else vals


def convert_coefficients(coeffs: np.ndarray, from_convention: str, to_convention: str) -> np.ndarray:
    """Exact rescaling between normalized and probabilists' coefficient vectors."""
    coeffs = np.asarray(coeffs, dtype=float)
    if from_convention == to_convention:
        return coeffs.copy()
    scale = _SQRT_FACT[: coeffs.shape[0]]
    if (from_convention, to_convention) == ("probabilists", "normalized"):
        return coeffs * scale
    if (from_convention, to_convention) == ("normalized", "probabilists"):
        return coeffs / scale
    raise ValueError(f"unknown conventions {from_convention!r} -> {to_convention!r}")


def he_at_zero(k: int) -> float:
    """He_k(0); vanishes for odd k, (-1)^m (2m-1)!! for k = 2m."""
    if k % 2:
        return 0.0
    m = k // 2
    return float((-1) ** m * math.prod(range(k - 1, 0, -2))) if k else 1.0


# ---------------------------------------------------------------------------
# activations

class Activation:
    """Student activation: callable, with derivative when available."""

    name = "activation"
    has_derivative = True

    def __call__(self, z):  # pragma: no cover - interface
        raise NotImplementedError

    def deriv(self, z):  # pragma: no cover - interface
        raise NotImplementedError


@dataclass(frozen=True)
class Relu(Activation):
    name: str = "relu"

    def __call__(self, z):
        return np.maximum(z, 0.0)

    def deriv(self, z):
        return (np.asarray(z) > 0.0).astype(float)


@dataclass(frozen=True)
class SmoothedRelu(Activation):
    """Softplus-style ReLU with sharpness tau; C^infty for strict-assumption runs."""

    tau: float = 0.1
    name: str = "smoothed_relu"

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")

    def __call__(self, z):
        return self.tau * np.logaddexp(0.0, np.asarray(z, dtype=float) / self.tau)

    def deriv(self, z):
        out = np.asarray(z, dtype=float) / self.tau
        return 0.5 * (1.0 + np.tanh(out / 2.0))


@dataclass(frozen=True)
class PolynomialActivation(Activation):
    """sigma(z) = sum_k coeffs[k] z^k in the power basis."""

    coeffs: tuple[float, ...]
    name: str = "polynomial"

    def __call__(self, z):
        return np.polynomial.polynomial.polyval(np.asarray(z, dtype=float), self.coeffs)

    def deriv(self, z):
        dcoef = tuple(k * c for k, c in enumerate(self.coeffs))[1:] or (0.0,)
        return np.polynomial.polynomial.polyval(np.asarray(z, dtype=float), dcoef)


class CustomActivation(Activation):
    def __init__(self, fn, dfn=None, name: str = "custom"):
        self.fn = fn
        self.dfn = dfn
        self.name = name
        self.has_derivative = dfn is not None

    def __call__(self, z):
        return self.fn(z)

    def deriv(self, z):
        if self.dfn is None:
            raise ValueError("activation has no derivative registered")
        return self.dfn(z)


def identity_activation() -> PolynomialActivation:
    return PolynomialActivation((0.0, 1.0), name="identity")


# ---------------------------------------------------------------------------
# activation coefficients by quadrature

def _gauss_hermite_expectation(fn, n_nodes: int) -> float:
    nodes, weights = hermite_e.hermegauss(n_nodes)
    return float(weights @ fn(nodes)) / math.sqrt(2.0 * math.pi)


_GL_PANELS = ((-40.0, -12.0), (-12.0, 0.0), (0.0, 12.0), (12.0, 40.0))


def _split_legendre_expectation(fn, n_nodes: int) -> float:
    """Gaussian-weighted integral on panels split at the origin.

    Handles activations with a kink at 0 (ReLU), where plain Gauss-Hermite
    stalls around 1e-4.
    """
    nodes, weights = legendre.leggauss(n_nodes)
    total = 0.0
    for a, b in _GL_PANELS:
        x = 0.5 * (b - a) * nodes + 0.5 * (b + a)
        w = 0.5 * (b - a) * weights
        total += float(w @ (fn(x) * np.exp(-0.5 * x * x)))
    return total / math.sqrt(2.0 * math.pi)


@lru_cache(maxsize=4096)
def activation_coeff(sigma: Activation, k: int, convention: str = "normalized") -> float:
    """c_sigma_k = E[sigma(z) h_k(z)] for z ~ N(0,1).

    Gauss-Hermite with a successive-node-count check; falls back to
    origin-split Gauss-Legendre panels when the integrand has a kink.
    """
    if k > MAX_DEGREE:
        raise ValueError(f"degree {k} above the supported cap {MAX_DEGREE}")

    def integrand(z):
        return np.asarray(sigma(z)) * hermite_table(k, z, "probabilists")[k]

    lo = _gauss_hermite_expectation(integrand, 240)
    hi = _gauss_hermite_expectation(integrand, 300)
    if abs(hi - lo) > 1e-8:
        lo = _split_legendre_expectation(integrand, 360)
        hi = _split_legendre_expectation(integrand, 440)
        if abs(hi - lo) > 1e-8:
            raise NumericalAccuracyError(
                f"quadrature for c_sigma[{k}] of {sigma.name} did not converge "
                f"(node-count discrepancy {abs(hi - lo):.2e})")
    value = hi
    if convention == "normalized":
        value /= _SQRT_FACT[k]
    elif convention != "probabilists":
        raise ValueError(f"unknown convention {convention!r}")
    return value


def activation_coeffs(sigma: Activation, max_degree: int) -> np.ndarray:
    return np.array([activation_coeff(sigma, k) for k in range(max_degree + 1)])


def mcm_assumption_holds(sigma: Activation) -> tuple[bool, float, float]:
    """Sign conditions for the search-phase analysis: c2 > 0 and c4 < 0.

    A margin at quadrature precision keeps exact zeros (identity, pure h4)
    on the failing side."""
    c2 = activation_coeff(sigma, 2)
    c4 = activation_coeff(sigma, 4)
    return (c2 > 1e-10 and c4 < -1e-10), c2, c4


def require_mcm_assumption(sigma: Activation):
    ok, c2, c4 = mcm_assumption_holds(sigma)
    if not ok:
        raise AssumptionViolationError(
            f"activation {sigma.name} has c2={c2:.4g}, c4={c4:.4g}; "
            "the analysis needs c2 > 0 and c4 < 0")


# ---------------------------------------------------------------------------
# likelihood-ratio coefficients

def sample_planted_projections(params: McmParams, n: int, rng: RngHandle):
    """(u.x, v.x) under the planted class, for orthogonal spikes and beta_m = 0.

    Exact low-dimensional reduction: u.x = sqrt(beta_u) lam + g1 and
    v.x = (sqrt(beta_v) nu + g2) / sqrt(1 + beta_v) with g1, g2 iid N(0,1).
    """
    if params.beta_m != 0.0:
        raise ValueError("likelihood coefficients assume beta_m = 0")
    lam, nu = sample_latent_pairs(params.coupling, n, rng)
    g1 = rng.normal(n)
    g2 = rng.normal(n)
    yu = math.sqrt(params.beta_u) * lam + g1
    yv = (math.sqrt(params.beta_v) * nu + g2) / math.sqrt(1.0 + params.beta_v)
    return yu, yv


def likelihood_coeff_exact(params: McmParams, i: int, j: int) -> Optional[float]:
    """Closed form for cL[i,j] where available, else None.

    Pure rows are exact at every order (Gaussian moments along u, the
    contraction identity E[He_j(rho nu + sqrt(1-rho^2) g)] = rho^j He_j(1)
    along v). Mixed entries are exact for i+j <= 4 for every coupling, and
    factorise exactly at all orders for independent latents.
    """
    if params.beta_m != 0.0:
        raise ValueError("likelihood coefficients assume beta_m = 0")
    bu, bv = params.beta_u, params.beta_v
    rho2 = bv / (1.0 + bv)
    corr = params.coupling.correlation
    third = params.coupling.third_cross_moment

    def pure_u(i):
        if i % 2:
            return 0.0
        dfact = math.prod(range(i - 1, 0, -2)) if i else 1
        return dfact * bu ** (i / 2) / _SQRT_FACT[i]

    def pure_v(j):
        if j % 2:
            return 0.0
        he1 = float(hermite_table(max(j, 1), np.array([1.0]), "probabilists")[j, 0])
        return rho2 ** (j / 2) * he1 / _SQRT_FACT[j]

    if i == 0 and j == 0:
        return 1.0
    if j == 0:
        return pure_u(i)
    if i == 0:
        return pure_v(j)
    if params.coupling.is_independent:
        return pure_u(i) * pure_v(j)
    if (i, j) == (1, 1):
        return math.sqrt(bu * rho2) * corr
    if (i, j) in ((2, 1), (1, 2), (2, 2)):
        return 0.0
    if (i, j) == (3, 1):
        return bu ** 1.5 * math.sqrt(rho2) * third / math.sqrt(6.0)
    if (i, j) == (1, 3):
        return -2.0 * math.sqrt(bu) * rho2 ** 1.5 * corr / math.sqrt(6.0)
    return None


def likelihood_series_mc(params: McmParams, max_degree: int, n_mc: int,
                         rng: RngHandle, chunk: int = 250_000):
    """Monte-Carlo estimate of the full cL matrix with standard errors."""
    K = max_degree
    sums = np.zeros((K + 1, K + 1))
    sums_sq = np.zeros((K + 1, K + 1))
    done = 0
    while done < n_mc:
        b = min(chunk, n_mc - done)
        yu, yv = sample_planted_projections(params, b, rng)
        hu = hermite_table(K, yu)
        hv = hermite_table(K, yv)
        sums += hu @ hv.T
        sums_sq += (hu * hu) @ (hv * hv).T
        done += b
    mean = sums / done
    var = np.maximum(sums_sq / done - mean ** 2, 0.0)
    se = np.sqrt(var / done)
    return mean, se


def likelihood_coeff(params: McmParams, i: int, j: int, n_mc: int, rng: RngHandle,
                     tol: Optional[float] = None):
    """Monte-Carlo estimate of cL[i,j] = E_planted[h_i(u.x) h_j(v.x)] with its
    standard error. Warns (without failing) when the error exceeds ``tol``."""
    if max(i, j) > MAX_DEGREE:
        raise ValueError("degree above the supported cap")
    est_sum = 0.0
    sq_sum = 0.0
    done = 0
    while done < n_mc:
        b = min(250_000, n_mc - done)
        yu, yv = sample_planted_projections(params, b, rng)
        vals = hermite_table(i, yu)[i] * hermite_table(j, yv)[j]
        est_sum += vals.sum()
        sq_sum += (vals * vals).sum()
        done += b
    est = est_sum / done
    se = math.sqrt(max(sq_sum / done - est * est, 0.0) / done)
    if tol is not None and se > tol:
        import warnings

        warnings.warn(f"cL[{i},{j}] standard error {se:.3g} above requested {tol:.3g}")
    return est, se


# ---------------------------------------------------------------------------
# the truncated population-loss series

@dataclass(frozen=True)
class HermiteSeries:
    """Truncated coefficients of the population loss.

    ``c_l_se`` holds standard errors: zero for closed-form entries, the
    Monte-Carlo error for estimated ones, NaN for entries left unfilleded by
    a closed-form-only build (those entries are treated as zero).
    """

    c_sigma: np.ndarray
    c_l: np.ndarray
    c_l_se: np.ndarray
    truncation: int
    convention: str = "normalized"
    _weighted: np.ndarray = field(init=False, repr=False)
    _weighted_se: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        K = self.truncation
        if self.c_sigma.shape != (K + 1,) or self.c_l.shape != (K + 1, K + 1):
            raise ValueError("coefficient arrays do not match the truncation")
        if abs(self.c_l[0, 0] - 1.0) > 1e-12:
            raise ValueError("cL[0,0] must equal 1 (likelihood ratio normalisation)")
        idx = np.arange(K + 1)
        tri = idx[:, None] + idx[None, :] <= K
        weight = np.zeros((K + 1, K + 1))
        csig = np.zeros((K + 1, K + 1))
        for i in range(K + 1):
            for j in range(K + 1 - i):
                weight[i, j] = math.sqrt(math.comb(i + j, i))
                csig[i, j] = self.c_sigma[i + j]
        cl = np.where(np.isnan(self.c_l), 0.0, self.c_l)
        se = np.where(np.isnan(self.c_l_se), 0.0, self.c_l_se)
        object.__setattr__(self, "_weighted", np.where(tri, weight * cl * csig, 0.0))
        object.__setattr__(self, "_weighted_se", np.where(tri, weight * se * np.abs(csig), 0.0))

    @property
    def complete(self) -> bool:
        K = self.truncation
        idx = np.arange(K + 1)
        tri = idx[:, None] + idx[None, :] <= K
        return not np.isnan(self.c_l[tri]).any()

    def _check_domain(self, alpha_u: float, alpha_v: float):
        if not (abs(alpha_u) < 0.5 and abs(alpha_v) < 0.5):
            raise ValueError(
                f"overlaps ({alpha_u}, {alpha_v}) outside the series validity region |a| < 1/2")

    def _powers(self, alpha_u: float, alpha_v: float):
        k = np.arange(self.truncation + 1)
        return alpha_u ** k, alpha_v ** k


def build_series(params: McmParams, sigma: Activation, truncation: int = 8,
                 rng: Optional[RngHandle] = None, n_mc: int = 2_000_000) -> HermiteSeries:
    """Series for the given data parameters and activation.

    Closed forms fill every entry they cover; remaining mixed entries (only
    present for coupled latents above total degree 4) are Monte-Carlo
    estimated when an RNG is supplied, else left as NaN and treated as zero.
    """
    K = truncation
    c_sigma = activation_coeffs(sigma, K)
    c_l = np.full((K + 1, K + 1), np.nan)
    c_se = np.full((K + 1, K + 1), np.nan)
    need_mc = False
    for i in range(K + 1):
        for j in range(K + 1 - i):
            exact = likelihood_coeff_exact(params, i, j)
            if exact is None:
                need_mc = True
            else:
                c_l[i, j] = exact
                c_se[i, j] = 0.0
    if need_mc and rng is not None:
        mc, mc_se = likelihood_series_mc(params, K, n_mc, rng)
        for i in range(K + 1):
            for j in range(K + 1 - i):
                if np.isnan(c_l[i, j]):
                    c_l[i, j] = mc[i, j]
                    c_se[i, j] = mc_se[i, j]
    return HermiteSeries(c_sigma, c_l, c_se, K)


def population_loss(series: HermiteSeries, alpha_u: float, alpha_v: float) -> float:
    """Truncated population loss at the given overlaps."""
    series._check_domain(alpha_u, alpha_v)
    pu, pv = series._powers(alpha_u, alpha_v)
    return float(1.0 + 0.5 * series.c_sigma[0] - 0.5 * pu @ series._weighted @ pv)


def excess_population_loss(series: HermiteSeries, alpha_u: float, alpha_v: float) -> float:
    """loss(a) - loss(0, 0), summed without the cancelling constant term."""
    series._check_domain(alpha_u, alpha_v)
    pu, pv = series._powers(alpha_u, alpha_v)
    w = series._weighted
    return float(-0.5 * (pu @ w @ pv - w[0, 0]))


def population_loss_se(series: HermiteSeries, alpha_u: float, alpha_v: float) -> float:
    """Standard error of the series value from its Monte-Carlo coefficients."""
    pu, pv = series._powers(alpha_u, alpha_v)
    terms = series._weighted_se * np.outer(pu, pv)
    return float(0.5 * np.sqrt((terms ** 2).sum()))


def population_gradient(series: HermiteSeries, alpha_u: float, alpha_v: float):
    """(d loss / d alpha_u, d loss / d alpha_v), term-wise on the truncation."""
    series._check_domain(alpha_u, alpha_v)
    K = series.truncation
    pu, pv = series._powers(alpha_u, alpha_v)
    w = series._weighted
    i = np.arange(1, K + 1)
    du = -0.5 * float(pu[: K] @ (i[:, None] * w[1:, :]) @ pv)
    dv = -0.5 * float(pu @ (w[:, 1:] * i[None, :]) @ pv[: K])
    return du, dv


def effective_search_coeffs(series: HermiteSeries) -> SearchOdeCoeffs:
    """Normal-form coefficients of the search phase:

        loss ~ const - (c20 a_u^2 + c11 a_u a_v + c04 a_v^4).

    Under the sign assumptions on the activation, c20 > 0 & c04 > 0 whenever
    the corresponding spike is present, and c11 > 0 iff E[lambda nu] > 0.
    """
    if series.truncation < 4:
        raise ValueError("search coefficients need truncation >= 4")
    if series.c_sigma[2] <= 1e-10 or series.c_sigma[4] >= -1e-10:
        raise AssumptionViolationError(
            f"activation fails the sign conditions: c2={series.c_sigma[2]:.4g}, "
            f"c4={series.c_sigma[4]:.4g}")
    w = series._weighted
    return SearchOdeCoeffs(c20=0.5 * w[2, 0], c11=0.5 * w[1, 1], c04=0.5 * w[0, 4])
