import math
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from smoothloc.errors import ConfigurationError, DomainError, EstimatorError, TailUnderflowError
from smoothloc.model import Density1d
from smoothloc.rng import NOISE, RngSeed
from smoothloc.smoothing import Quadrature, smoothed_1d
from smoothloc.util import order_statistic


class Config1d(BaseModel):
    """Tuning of the two-stage 1-d estimator.

    r* = r_star_multiplier * (log(2/delta)/n)^(1/8) * IQR, the initialization stage
    takes the first (log(2/delta)/n)^init_fraction_exponent share of the samples, and
    the quantile half-width is q = q_multiplier * (log(2/delta)/n)^(2/5).
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    delta: float = Field(gt=0, le=0.5)
    r_star_multiplier: float = Field(default=0.5, gt=0)
    init_fraction_exponent: float = Field(default=0.1, gt=0)
    q_multiplier: float = Field(default=math.sqrt(2.0), gt=0)
    alpha_grid_step: float = Field(default=1e-3, gt=0, lt=0.5)
    r_override: Optional[float] = Field(default=None, gt=0)
    min_samples_factor: float = Field(default=100.0, gt=0)

    @property
    def log_term(self) -> float:
        return math.log(2.0 / self.delta)


class EstimateReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    lambda_hat: float
    lambda_initial: float
    r_used: float = Field(gt=0)
    fisher_at_r: float = Field(gt=0)
    theoretical_radius: float = Field(gt=0)
    n_used_local: int = Field(ge=1)
    n_used_init: int = Field(ge=1)
    alpha: float
    q: float
    radius_factor: float
    inflated_radius: float


def perturb_samples(samples: Sequence[float] | np.ndarray, r: float, seed: RngSeed) -> np.ndarray:
    """x'_i = x_i + N(0, r^2), drawn from the seed's noise stream."""
    x = np.asarray(samples, dtype=float)
    return x + seed.generator(NOISE).normal(0.0, r, x.shape)


def local_mle_1d(
    base: Density1d,
    r: float,
    samples: Sequence[float] | np.ndarray,
    lambda1: float,
    seed: RngSeed,
    quadrature: Quadrature = Quadrature(),
) -> float:
    """One Newton step on the empirical smoothed score, started at lambda1."""
    if not r > 0:
        raise DomainError(f"smoothing radius must be positive, got {r}")
    if len(samples) == 0:
        raise ConfigurationError("local stage needs at least one sample")
    m = smoothed_1d(base, r, quadrature)
    perturbed = perturb_samples(samples, r, seed)
    try:
        score = np.asarray(m.score(perturbed - lambda1))
    except TailUnderflowError as e:
        raise EstimatorError(e.point + lambda1) from e
    return lambda1 - float(score.mean()) / m.fisher


@lru_cache(maxsize=128)
def _alpha_grid_argmin(base: Density1d, q: float, step: float) -> float:
    lo = math.ceil(q / step - 1e-9)
    hi = math.floor((1.0 - q) / step + 1e-9)
    alphas = np.round(np.arange(lo, hi + 1) * step, 12)
    alphas = alphas[(alphas - q > 0) & (alphas + q < 1)]
    if alphas.size == 0:
        return 0.5
    widths = np.asarray(base.quantile(alphas + q)) - np.asarray(base.quantile(alphas - q))
    best = widths.min()
    ties = alphas[widths <= best + 1e-12 * (1.0 + abs(best))]
    return float(ties[np.argmin(np.abs(ties - 0.5))])


def choose_alpha(base: Density1d, q: float, step: float = 1e-3) -> float:
    """Centre alpha of the narrowest 2q-mass quantile interval on the alpha grid."""
    if not 0 < q < 0.5:
        raise DomainError(f"q must lie in (0, 1/2), got {q}")
    return _alpha_grid_argmin(base.with_shift(0.0), q, step)


def quantile_initial_estimate(
    base: Density1d, samples_init: Sequence[float] | np.ndarray, alpha: float
) -> float:
    if len(samples_init) < 2:
        raise ConfigurationError("initialization stage needs at least 2 samples")
    model_q = float(base.with_shift(0.0).quantile(alpha))
    return order_statistic(np.asarray(samples_init, dtype=float), alpha) - model_q


def minimal_sample_size(cfg: Config1d) -> int:
    by_factor = math.ceil(cfg.min_samples_factor * cfg.log_term)
    # q < 1/2 iff n > log(2/delta) * (2 q_multiplier)^(5/2)
    by_q = math.floor(cfg.log_term * (2.0 * cfg.q_multiplier) ** 2.5) + 1
    return max(by_factor, by_q)


def global_mle_1d(
    base: Density1d,
    samples: Sequence[float] | np.ndarray,
    cfg: Config1d,
    seed: RngSeed,
    quadrature: Quadrature = Quadrature(),
) -> EstimateReport:
    """Quantile initialization on a first split, then one smoothed Newton step on the rest."""
    x = np.asarray(samples, dtype=float)
    n = x.size
    need = minimal_sample_size(cfg)
    if n < need:
        raise ConfigurationError(f"{n} samples are too few for delta={cfg.delta}; need at least {need}")
    ratio = cfg.log_term / n
    q = cfg.q_multiplier * ratio**0.4
    if q >= 0.5:
        raise ConfigurationError(f"quantile width q={q:.4g} is not below 1/2; need at least {need} samples")
    shape = base.with_shift(0.0)
    alpha = choose_alpha(shape, q, cfg.alpha_grid_step)
    n_init = math.ceil(ratio**cfg.init_fraction_exponent * n)
    if n_init < 2 or n_init >= n:
        raise ConfigurationError(
            f"sample split leaves {n_init} initialization and {n - n_init} local samples; "
            f"need at least {need} samples"
        )
    lambda1 = quantile_initial_estimate(shape, x[:n_init], alpha)
    if cfg.r_override is not None:
        r = cfg.r_override
    else:
        r = cfg.r_star_multiplier * ratio**0.125 * shape.iqr()
    lambda_hat = local_mle_1d(shape, r, x[n_init:], lambda1, seed, quadrature)
    fisher = smoothed_1d(shape, r, quadrature).fisher
    n_local = n - n_init
    radius = math.sqrt(2.0 * cfg.log_term / (n_local * fisher))
    factor = 1.0 + ratio**0.1
    return EstimateReport(
        lambda_hat=lambda_hat,
        lambda_initial=lambda1,
        r_used=r,
        fisher_at_r=fisher,
        theoretical_radius=radius,
        n_used_local=n_local,
        n_used_init=n_init,
        alpha=alpha,
        q=q,
        radius_factor=factor,
        inflated_radius=factor * radius,
    )
