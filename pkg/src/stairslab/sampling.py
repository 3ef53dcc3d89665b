"""Seedable random primitives: split-able RNG handles, unit-sphere vectors,
and coupled latent-variable pairs.

All randomness in the package flows through :class:`RngHandle`, a thin
wrapper around numpy's PCG64 generator seeded via ``SeedSequence``.
Sub-streams derived with :meth:`RngHandle.derive` are statistically
independent and reproducible across runs and platforms.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

SQRT_2_OVER_PI = float(np.sqrt(2.0 / np.pi))


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError(f"derive keys must be non-negative, got {key}")
        return int(key)
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    raise TypeError(f"derive keys must be int or str, got {type(key).__name__}")


@dataclass
class RngHandle:
    """Deterministic random stream with hierarchical splitting.

    ``RngHandle(seed).derive(*keys)`` always yields the same stream for the
    same ``(seed, keys)`` path, independent of whatever was drawn before.
    Handles are single-owner: share seeds, not handles, across workers.
    """

    seed: int
    spawn_path: tuple[int, ...] = ()
    _gen: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if not (0 <= int(self.seed) < 2**64):
            raise ValueError("seed must be a 64-bit unsigned integer")
        ss = np.random.SeedSequence(int(self.seed), spawn_key=self.spawn_path)
        self._gen = np.random.Generator(np.random.PCG64(ss))

    @property
    def gen(self) -> np.random.Generator:
        return self._gen

    def derive(self, *keys) -> "RngHandle":
        """Child handle for (run-id, purpose, ...). Keys are ints or strings."""
        path = self.spawn_path + tuple(_key_to_int(k) for k in keys)
        return RngHandle(self.seed, path)

    # convenience passthroughs used throughout the package
    def normal(self, size=None) -> np.ndarray:
        return self._gen.standard_normal(size)

    def uniform(self, size=None) -> np.ndarray:
        return self._gen.random(size)

    def rademacher(self, size=None) -> np.ndarray:
        return np.where(self._gen.random(size) < 0.5, -1.0, 1.0)


@dataclass(frozen=True)
class LatentCoupling:
    """Joint law of the latent pair (lambda, nu).

    ``sign_prob`` is the probability that nu copies sign(lambda); the rest
    of the time nu is an independent Rademacher variable. The marginals are
    always lambda ~ N(0,1) and nu ~ Rademacher(1/2); the correlation is
    E[lambda nu] = sign_prob * sqrt(2/pi).
    """

    sign_prob: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.sign_prob <= 1.0):
            raise ValueError(f"sign_prob must lie in [0, 1], got {self.sign_prob}")

    @classmethod
    def independent(cls) -> "LatentCoupling":
        return cls(0.0)

    @classmethod
    def sign_matched(cls) -> "LatentCoupling":
        return cls(1.0)

    @classmethod
    def partial_sign(cls, q: float) -> "LatentCoupling":
        return cls(q)

    @property
    def correlation(self) -> float:
        """E[lambda nu]."""
        return self.sign_prob * SQRT_2_OVER_PI

    @property
    def third_cross_moment(self) -> float:
        """E[lambda^3 nu] = sign_prob * E|lambda|^3."""
        return self.sign_prob * 2.0 * SQRT_2_OVER_PI

    @property
    def is_independent(self) -> bool:
        return self.sign_prob == 0.0

    def label(self) -> str:
        if self.sign_prob == 0.0:
            return "independent"
        if self.sign_prob == 1.0:
            return "sign_matched"
        return f"partial_sign({self.sign_prob:g})"


def sample_unit_sphere(d: int, rng: RngHandle) -> np.ndarray:
    """Uniform draw from the unit sphere in R^d."""
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    while True:
        w = rng.normal(d)
        nrm = np.linalg.norm(w)
        if nrm > 1e-100:
            return w / nrm


def sample_latent_pairs(coupling: LatentCoupling, n: int, rng: RngHandle):
    """Batch of n latent pairs; returns (lam, nu) arrays.

    Stream layout is fixed per coupling mode: lam normals first, then the
    independent Rademacher draws, then (for partial coupling) the mixing
    uniforms. Identical seeds therefore give identical batches.
    """
    lam = rng.normal(n)
    q = coupling.sign_prob
    if q >= 1.0:
        nu = np.where(lam >= 0.0, 1.0, -1.0)
    elif q <= 0.0:
        nu = rng.rademacher(n)
    else:
        indep = rng.rademacher(n)
        copy_sign = rng.uniform(n) < q
        nu = np.where(copy_sign, np.where(lam >= 0.0, 1.0, -1.0), indep)
    return lam, nu


def sample_latent_pair(coupling: LatentCoupling, rng: RngHandle):
    """Single latent pair (lambda, nu) with nu in {-1, +1}."""
    lam, nu = sample_latent_pairs(coupling, 1, rng)
    return float(lam[0]), float(nu[0])
