"""The mixed-cumulant data model and its censored / single-spike variants.

Labels are balanced: y = -1 samples are exactly standard Gaussian, y = +1
samples carry a mean spike (beta_m, direction m), a covariance spike
(beta_u, direction u, Gaussian latent lambda) and a higher-order-cumulant
spike (beta_v, direction v, Rademacher latent nu). A rank-one whitening
matrix removes v from the planted covariance, so with independent latents
the direction v is invisible at second order.

Everything is O(d) per sample: covariances are kept in factored
identity-plus-low-rank form and never materialised as d x d matrices.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Optional

import numpy as np

from .sampling import LatentCoupling, RngHandle, sample_latent_pairs

DEFAULT_CHUNK = 4096


def _unit(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x)


@dataclass(frozen=True)
class SpikeSet:
    """The three hidden unit directions m, u, v."""

    m: np.ndarray
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        for name, vec in (("m", self.m), ("u", self.u), ("v", self.v)):
            if abs(np.linalg.norm(vec) - 1.0) > 1e-10:
                raise ValueError(f"spike {name} is not unit norm")
            vec.setflags(write=False)
        if not (self.m.shape == self.u.shape == self.v.shape):
            raise ValueError("spikes must share one dimension")

    @property
    def d(self) -> int:
        return self.m.shape[0]

    @property
    def overlap_uv(self) -> float:
        return float(self.u @ self.v)

    @classmethod
    def orthogonal(cls, d: int, rng: RngHandle) -> "SpikeSet":
        """Three mutually orthogonal uniform directions (Gram-Schmidt)."""
        if d < 3:
            raise ValueError("orthogonal spikes need d >= 3")
        m = _unit(rng.normal(d))
        u = rng.normal(d)
        u = _unit(u - (u @ m) * m)
        v = rng.normal(d)
        v -= (v @ m) * m + (v @ u) * u
        return cls(m, u, _unit(v))

    @classmethod
    def with_overlap(cls, d: int, rho: float, rng: RngHandle) -> "SpikeSet":
        """u . v = rho; m orthogonal to both."""
        if not (-1.0 < rho < 1.0):
            raise ValueError("overlap rho must lie in (-1, 1)")
        base = cls.orthogonal(d, rng)
        v = rho * base.u + np.sqrt(1.0 - rho * rho) * base.v
        return cls(base.m, base.u, _unit(v))

    @classmethod
    def canonical(cls, d: int) -> "SpikeSet":
        """Axis-aligned spikes e1, e2, e3 (deterministic, for tests)."""
        if d < 3:
            raise ValueError("canonical spikes need d >= 3")
        e = np.eye(d)
        return cls(e[0].copy(), e[1].copy(), e[2].copy())

    def require_orthogonal(self, tol: float = 1e-8):
        if max(abs(self.m @ self.u), abs(self.m @ self.v), abs(self.u @ self.v)) > tol:
            raise ValueError("operation requires orthogonal spikes")


@dataclass(frozen=True)
class McmParams:
    """Signal-to-noise ratios and latent coupling; fully determines the data law."""

    d: int
    beta_m: float = 0.0
    beta_u: float = 0.0
    beta_v: float = 0.0
    coupling: LatentCoupling = field(default_factory=LatentCoupling.independent)

    def __post_init__(self):
        if self.d < 2:
            raise ValueError(f"dimension must be >= 2, got {self.d}")
        for name in ("beta_m", "beta_u", "beta_v"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def replace(self, **kw) -> "McmParams":
        from dataclasses import replace

        return replace(self, **kw)


class CensorMode(Enum):
    FULL = "full"
    MEAN_ONLY = "mean_only"
    MEAN_COV = "mean_cov"
    GAUSSIAN_EQUIVALENT = "gauss_equiv"


@dataclass
class LabeledSample:
    x: np.ndarray
    y: int
    latents: Optional[tuple[float, float]] = None


def whitening_coefficient(beta_v: float) -> float:
    """c such that S = 1 - c v v^T removes the cumulant spike from the covariance."""
    if beta_v < 0:
        raise ValueError("beta_v must be non-negative")
    return beta_v / (1.0 + beta_v + np.sqrt(1.0 + beta_v))


def whitening_apply(beta_v: float, v: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Apply S = 1 - c v v^T to a vector or to rows of a matrix, in O(d)."""
    if abs(np.linalg.norm(v) - 1.0) > 1e-8:
        raise ValueError("v must be unit norm")
    c = whitening_coefficient(beta_v)
    if x.ndim == 1:
        return x - c * (x @ v) * v
    return x - c * np.outer(x @ v, v)


def _planted_batch(params: McmParams, spikes: SpikeSet, n: int, rng: RngHandle,
                   return_latents: bool = False):
    """n samples from the planted class. Draw order: z, latents."""
    z = rng.normal((n, params.d))
    lam, nu = sample_latent_pairs(params.coupling, n, rng)
    x = z
    if params.beta_v > 0:
        x = x + np.sqrt(params.beta_v) * nu[:, None] * spikes.v
        c = whitening_coefficient(params.beta_v)
        x -= c * np.outer(x @ spikes.v, spikes.v)
    if params.beta_u > 0:
        x = x + np.sqrt(params.beta_u) * lam[:, None] * spikes.u
    if params.beta_m > 0:
        x = x + params.beta_m * spikes.m
    if return_latents:
        return x, lam, nu
    return x


def sample_mcm_batch(params: McmParams, spikes: SpikeSet, n: int, rng: RngHandle,
                     keep_latents: bool = False):
    """Batch of n labeled samples.

    Returns (y, X) or (y, X, latents) where latents is an (n, 2) array of
    (lambda, nu) rows, NaN on noise-class rows. Draw order per batch is
    fixed: labels, base Gaussians, latent pairs.
    """
    if spikes.d != params.d:
        raise ValueError(f"spike dimension {spikes.d} != params.d {params.d}")
    y = rng.rademacher(n)
    z = rng.normal((n, params.d))
    lam, nu = sample_latent_pairs(params.coupling, n, rng)
    x = z
    planted = y > 0
    xp = z[planted]
    if params.beta_v > 0:
        xp = xp + np.sqrt(params.beta_v) * nu[planted, None] * spikes.v
        c = whitening_coefficient(params.beta_v)
        xp -= c * np.outer(xp @ spikes.v, spikes.v)
    if params.beta_u > 0:
        xp = xp + np.sqrt(params.beta_u) * lam[planted, None] * spikes.u
    if params.beta_m > 0:
        xp = xp + params.beta_m * spikes.m
    x[planted] = xp
    if keep_latents:
        lat = np.full((n, 2), np.nan)
        lat[planted, 0] = lam[planted]
        lat[planted, 1] = nu[planted]
        return y, x, lat
    return y, x


def sample_mcm(params: McmParams, spikes: SpikeSet, rng: RngHandle,
               keep_latents: bool = False) -> LabeledSample:
    """One labeled sample from the mixed-cumulant model."""
    out = sample_mcm_batch(params, spikes, 1, rng, keep_latents)
    if keep_latents:
        y, x, lat = out
        latents = None if np.isnan(lat[0, 0]) else (float(lat[0, 0]), float(lat[0, 1]))
        return LabeledSample(x[0], int(y[0]), latents)
    y, x = out
    return LabeledSample(x[0], int(y[0]))


def mcm_stream(params: McmParams, spikes: SpikeSet, rng: RngHandle,
               chunk: int = DEFAULT_CHUNK) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Endless stream of (y, X) batches; online SGD never reuses a sample."""
    while True:
        yield sample_mcm_batch(params, spikes, chunk, rng)


def censored_params(params: McmParams, mode: CensorMode) -> McmParams:
    if mode in (CensorMode.FULL, CensorMode.GAUSSIAN_EQUIVALENT):
        return params
    if mode is CensorMode.MEAN_ONLY:
        return params.replace(beta_u=0.0, beta_v=0.0)
    if mode is CensorMode.MEAN_COV:
        return params.replace(beta_v=0.0)
    raise ValueError(f"unknown censor mode {mode}")


def sample_censored_batch(params: McmParams, spikes: SpikeSet, mode: CensorMode,
                          n: int, rng: RngHandle):
    """Batch from a censored variant of the model; returns (y, X)."""
    if mode is CensorMode.GAUSSIAN_EQUIVALENT:
        cov = planted_covariance(params, spikes)
        y = rng.rademacher(n)
        x = rng.normal((n, params.d))
        planted = y > 0
        x[planted] = cov.correct_standard_normals(x[planted])
        if params.beta_m > 0:
            x[planted] += params.beta_m * spikes.m
        return y, x
    return sample_mcm_batch(censored_params(params, mode), spikes, n, rng)


def sample_censored(params: McmParams, spikes: SpikeSet, mode: CensorMode,
                    rng: RngHandle) -> LabeledSample:
    y, x = sample_censored_batch(params, spikes, mode, 1, rng)
    return LabeledSample(x[0], int(y[0]))


@dataclass(frozen=True)
class PlantedCovariance:
    """Covariance of planted inputs: 1 + beta_u u u^T + cross (u v^T + v u^T).

    Stored in factored form; all operations are O(d). ``cross`` equals
    sqrt(beta_u beta_v / (1 + beta_v)) E[lambda nu].
    """

    u: np.ndarray
    v: np.ndarray
    beta_u: float
    cross: float

    @property
    def d(self) -> int:
        return self.u.shape[0]

    def in_span_matrix(self) -> np.ndarray:
        """Restriction to span(u, v) in the (u, v) basis."""
        return np.array([[1.0 + self.beta_u, self.cross], [self.cross, 1.0]])

    def matvec(self, x: np.ndarray) -> np.ndarray:
        xu, xv = x @ self.u, x @ self.v
        return x + (self.beta_u * xu + self.cross * xv) * self.u + self.cross * xu * self.v

    def quad_form(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(a @ self.matvec(b))

    def dense(self) -> np.ndarray:
        out = np.eye(self.d) + self.beta_u * np.outer(self.u, self.u)
        out += self.cross * (np.outer(self.u, self.v) + np.outer(self.v, self.u))
        return out

    def leading_eigvec(self) -> tuple[float, np.ndarray]:
        """Top eigenpair, solved exactly in the 2d invariant subspace."""
        vals, vecs = np.linalg.eigh(self.in_span_matrix())
        lam, coef = vals[-1], vecs[:, -1]
        if lam < 1.0:  # bulk eigenvalue 1 dominates the low-rank part
            raise RuntimeError("leading eigenvector not in span(u, v)")
        vec = coef[0] * self.u + coef[1] * self.v
        return float(lam), vec / np.linalg.norm(vec)

    def _span_cholesky(self) -> np.ndarray:
        return np.linalg.cholesky(self.in_span_matrix())

    def correct_standard_normals(self, z: np.ndarray) -> np.ndarray:
        """Turn standard Gaussian rows into N(0, C) rows in O(d) each.

        Reuses the in-span components of z as the 2x2 Gaussian seed, so no
        extra randomness is consumed.
        """
        L = self._span_cholesky()
        g = np.stack([z @ self.u, z @ self.v], axis=1)
        ab = g @ L.T
        return z + np.outer(ab[:, 0] - g[:, 0], self.u) + np.outer(ab[:, 1] - g[:, 1], self.v)

    def sample(self, n: int, rng: RngHandle) -> np.ndarray:
        return self.correct_standard_normals(rng.normal((n, self.d)))


def planted_covariance(params: McmParams, spikes: SpikeSet) -> PlantedCovariance:
    """Factored covariance of the planted class (orthogonal spikes)."""
    spikes.require_orthogonal()
    cross = np.sqrt(params.beta_u * params.beta_v / (1.0 + params.beta_v)) \
        * params.coupling.correlation if params.beta_u > 0 and params.beta_v > 0 else 0.0
    return PlantedCovariance(spikes.u, spikes.v, params.beta_u, float(cross))


class SpikeKind(Enum):
    COVARIANCE_ONLY = "covariance_only"
    CUMULANT_ONLY = "cumulant_only"


def single_spike_params(kind: SpikeKind, beta: float, d: int,
                        coupling: LatentCoupling | None = None) -> McmParams:
    """McmParams for the one-spike baselines."""
    if beta <= 0:
        raise ValueError("single-spike beta must be positive")
    coupling = coupling or LatentCoupling.independent()
    if kind is SpikeKind.COVARIANCE_ONLY:
        return McmParams(d=d, beta_u=beta, coupling=coupling)
    if kind is SpikeKind.CUMULANT_ONLY:
        return McmParams(d=d, beta_v=beta, coupling=coupling)
    raise ValueError(f"unknown single-spike kind {kind}")


def single_spike_stream(kind: SpikeKind, beta: float, spikes: SpikeSet,
                        rng: RngHandle, chunk: int = DEFAULT_CHUNK):
    """Labeled-sample stream for the covariance-only / cumulant-only models."""
    params = single_spike_params(kind, beta, spikes.d)
    return mcm_stream(params, spikes, rng, chunk)
