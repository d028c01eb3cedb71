# Rejection kernel in the style of happy-simulator's RejectionSampler:
# propose from an easy law, accept with a bounded likelihood ratio, cap the iterations.

import logging
import math
from typing import Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.special import erf

from planted_reductions.errors import ParameterError
from planted_reductions.settings import settings

logger = logging.getLogger(__name__)

SQRT2 = math.sqrt(2.0)


class GaussianizeParams(BaseModel):  # type: ignore
    delta: float = Field(description="Input sign bias, in (n^-O(1), 1/2)")
    n: int = Field(description="Dimension, sets the TV budget", ge=2)
    C: float = Field(default_factory=lambda: settings.GAUSSIANIZE_C, gt=0, le=1)
    K: int = Field(default_factory=lambda: settings.GAUSSIANIZE_TV_EXPONENT, ge=3)

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def _check(self) -> "GaussianizeParams":
        floor = float(self.n) ** (-settings.BIAS_FLOOR_EXPONENT)
        if not floor < self.delta < 0.5:
            raise ParameterError(f"Gaussianize needs bias in ({floor:.3g}, 1/2), got {self.delta}")
        return self

    @property
    def radius(self) -> float:
        return math.sqrt(2 * self.K * math.log(self.n) + 2 * math.log(1 / (2 * self.delta)))

    @property
    def mu(self) -> float:
        return self.C * self.delta / (2 * self.radius)

    @property
    def iterations(self) -> int:
        return math.ceil(2 * self.K * math.log(self.n))


def gaussianize_many(
    signs: np.ndarray, params: GaussianizeParams, rng: np.random.Generator
) -> Tuple[np.ndarray, int]:
    """Map signs to reals; Rad(delta) inputs come out as N(mu, 1), Rad(0) as the +-mu mixture.

    Returns the outputs and the number of entries that exhausted the iteration budget.
    """
    signs = np.asarray(signs, dtype=np.float64)
    out = np.empty(signs.shape[0], dtype=np.float64)
    pending = np.arange(signs.shape[0])
    mu, radius, delta = params.mu, params.radius, params.delta
    for _ in range(params.iterations):
        if pending.size == 0:
            break
        proposal = mu * (1 - 2 * rng.integers(0, 2, size=pending.size)) + rng.standard_normal(pending.size)
        accept = (1 + signs[pending] * np.tanh(mu * proposal) / delta) / 2
        accepted = (np.abs(proposal) <= radius) & (rng.random(pending.size) < accept)
        out[pending[accepted]] = proposal[accepted]
        pending = pending[~accepted]
    if pending.size:
        logger.warning(f"Gaussianize fell back to N(b*mu, 1) for {pending.size} entries")
        out[pending] = signs[pending] * mu + rng.standard_normal(pending.size)
    return out, int(pending.size)


def gaussianize_entry(b: int, params: GaussianizeParams, rng: np.random.Generator) -> float:
    if b not in (-1, 1):
        raise ParameterError(f"Expected a sign, got {b}")
    values, _ = gaussianize_many(np.array([b]), params, rng)
    return float(values[0])


def discretize_many(values: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    signs = np.sign(values).astype(np.int64)
    zeros = signs == 0
    if zeros.any():
        signs[zeros] = 1 - 2 * rng.integers(0, 2, size=int(zeros.sum()))
    return signs


def discretize_entry(y: float, rng: np.random.Generator) -> int:
    return int(discretize_many(np.array([y]), rng)[0])


def discretize_bias(mu: float) -> float:
    """Bias 2*Phi(mu) - 1 of sign(N(mu, 1))."""
    return float(erf(mu / SQRT2))


def gauss_clone(
    y: float, rng: np.random.Generator, z: Optional[float] = None
) -> Tuple[float, float]:
    if z is None:
        z = float(rng.standard_normal())
    return (y - z) / SQRT2, (y + z) / SQRT2


def clone_depth(copies: int) -> int:
    return max(0, math.ceil(math.log2(copies))) if copies >= 1 else 0


def clone_values(values: np.ndarray, copies: int, rng: np.random.Generator) -> np.ndarray:
    """Binary-tree cloning of every entry; returns an array of shape (copies, len(values))."""
    assert copies >= 1, "Need at least one copy"
    level = np.asarray(values, dtype=np.float64)[None, :]
    for _ in range(clone_depth(copies)):
        z = rng.standard_normal(level.shape)
        level = np.concatenate([(level - z) / SQRT2, (level + z) / SQRT2], axis=0)
    return level[:copies]


def gauss_clone_many(y: float, copies: int, rng: np.random.Generator) -> np.ndarray:
    if copies < 2:
        raise ParameterError(f"Cloning needs at least 2 copies, got {copies}")
    return clone_values(np.array([y]), copies, rng)[:, 0]


def clone_scale(copies: int) -> float:
    return 2 ** (-clone_depth(copies) / 2)


def attenuate_gauss(
    values: Union[np.ndarray, float], rho: float, rng: np.random.Generator
) -> np.ndarray:
    """N(mu, 1) -> N(rho * mu, 1)."""
    assert 0 <= rho <= 1
    values = np.asarray(values, dtype=np.float64)
    return rho * values + math.sqrt(1 - rho * rho) * rng.standard_normal(values.shape)


def attenuate_sign(signs: Union[np.ndarray, int], rho: float, rng: np.random.Generator) -> np.ndarray:
    """Rad(delta) -> Rad(rho * delta)."""
    assert 0 <= rho <= 1
    signs = np.asarray(signs, dtype=np.int64)
    flips = np.where(rng.random(signs.shape) < (1 + rho) / 2, 1, -1)
    return signs * flips
