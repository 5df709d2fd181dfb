import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from smoothloc.concentration import SubgammaSpec, norm_bound
from smoothloc.errors import ConfigurationError, DomainError, EstimatorError, TailUnderflowError
from smoothloc.model import DensityHd
from smoothloc.rng import BUCKETS, NOISE, RngSeed
from smoothloc.smoothing import FisherMatrix, Quadrature, SmoothedModelHd
from smoothloc.util import operator_norm, psd_sqrt

PSD_TOL = 1e-10
WEISZFELD_TOL = 1e-10
WEISZFELD_MAX_ITER = 200
WEISZFELD_FLOOR = 1e-12
INITIAL_ESTIMATOR = "geometric-median-of-means"


class ConfigHd(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    delta: float = Field(gt=0, le=0.5)
    r: float = Field(gt=0)
    eta: float = Field(default=0.25, gt=0, lt=1)
    init_fraction: Optional[float] = Field(default=None, gt=0, lt=0.5)
    M: Optional[list[list[float]]] = None
    mom_buckets_multiplier: float = Field(default=3.5, gt=0)

    @field_validator("M")
    @classmethod
    def _check_psd(cls, value: Optional[list[list[float]]]) -> Optional[list[list[float]]]:
        if value is not None:
            check_psd(np.asarray(value, dtype=float))
        return value

    @property
    def split_fraction(self) -> float:
        return self.eta / 10.0 if self.init_fraction is None else self.init_fraction

    def norm_matrix(self, d: int) -> np.ndarray:
        if self.M is None:
            return np.eye(d)
        m = np.asarray(self.M, dtype=float)
        if m.shape != (d, d):
            raise ConfigurationError(f"M must be {d}x{d}, got {m.shape}")
        return m


@dataclass(frozen=True, eq=False)
class ReportHd:
    lambda_hat: np.ndarray
    lambda_initial: np.ndarray
    m_norm_error_bound: float
    deviation_bound: float
    fisher: FisherMatrix
    d_eff_T: float
    d_eff_sigma: float
    n_used_local: int
    n_used_init: int
    initial_estimator: str = INITIAL_ESTIMATOR


def check_psd(M: np.ndarray) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1] or not np.allclose(M, M.T, atol=PSD_TOL, rtol=0.0):
        raise DomainError("M must be a symmetric matrix")
    if np.linalg.eigvalsh(0.5 * (M + M.T)).min() < -PSD_TOL:
        raise DomainError("M must be positive semidefinite")
    return M


def m_norm(x: np.ndarray, M: np.ndarray) -> float:
    """||x||_M = sqrt(x^T M x)."""
    M = check_psd(M)
    x = np.asarray(x, dtype=float)
    return math.sqrt(max(float(x @ M @ x), 0.0))


def d_eff(a: np.ndarray) -> float:
    """Effective dimension Tr(A)/||A||; 0 for the zero matrix."""
    norm = operator_norm(a)
    return float(np.trace(a)) / norm if norm > 0 else 0.0


def transformed_inverse(fisher: FisherMatrix, M: np.ndarray) -> np.ndarray:
    """T = M^{1/2} I_R^{-1} M^{1/2}."""
    root = psd_sqrt(check_psd(M))
    return root @ fisher.inverse() @ root


def theoretical_bound_hd(
    fisher: FisherMatrix, M: np.ndarray, n: int, delta: float, eta: float
) -> float:
    """(1+eta) sqrt(Tr T/n) + 5 sqrt(||T|| log(4/delta)/n)."""
    if n < 1:
        raise DomainError(f"n must be at least 1, got {n}")
    t = transformed_inverse(fisher, M)
    tr = max(float(np.trace(t)), 0.0)
    return (1.0 + eta) * math.sqrt(tr / n) + 5.0 * math.sqrt(operator_norm(t) * math.log(4.0 / delta) / n)


def mahalanobis_bound(d: int, n: int, delta: float, eta: float) -> float:
    return (1.0 + eta) * math.sqrt(d / n) + 5.0 * math.sqrt(math.log(4.0 / delta) / n)


def score_deviation_bound(
    fisher: FisherMatrix, r: float, M: np.ndarray, n: int, delta: float
) -> float:
    """1-delta radius of ||M^{1/2} I_R^{-1} (empirical score mean)|| from the subgamma norm bound."""
    root = psd_sqrt(check_psd(M))
    inv = fisher.inverse()
    spec = SubgammaSpec(root @ inv @ root / n, root @ inv / (r * n))
    if spec.trace <= 0:
        # M = 0 projects the score away entirely.
        return 0.0
    return norm_bound(spec, delta)


def bucket_count(delta: float, multiplier: float = 3.5) -> int:
    return math.ceil(multiplier * math.log(2.0 / delta))


def geometric_median(points: np.ndarray) -> np.ndarray:
    """Weiszfeld iteration started at the mean of the points."""
    points = np.asarray(points, dtype=float)
    first = points[0]
    if np.all(points == first):
        return first.copy()
    y = points.mean(axis=0)
    for _ in range(WEISZFELD_MAX_ITER):
        dist = np.maximum(np.linalg.norm(points - y, axis=1), WEISZFELD_FLOOR)
        w = 1.0 / dist
        nxt = (w[:, None] * points).sum(axis=0) / w.sum()
        step = float(np.linalg.norm(nxt - y))
        y = nxt
        if step <= WEISZFELD_TOL * max(1.0, float(np.linalg.norm(y))):
            break
    return y


def geometric_median_of_means(
    samples: Sequence[Sequence[float]] | np.ndarray,
    delta: float,
    seed: Optional[RngSeed] = None,
    multiplier: float = 3.5,
    buckets: Optional[int] = None,
) -> np.ndarray:
    """Geometric median of k contiguous bucket means, remainder dropped.

    k = ceil(multiplier * log(2/delta)) unless `buckets` overrides it. With a seed
    the rows are permuted before bucketing.
    """
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    k = buckets if buckets is not None else bucket_count(delta, multiplier)
    if x.shape[0] < 2 * k:
        raise ConfigurationError(
            f"median of means with {k} buckets needs at least {2 * k} samples, got {x.shape[0]}"
        )
    if seed is not None:
        x = x[seed.generator(BUCKETS).permutation(x.shape[0])]
    size = x.shape[0] // k
    means = x[: size * k].reshape(k, size, -1).mean(axis=1)
    return geometric_median(means)


def local_mle_hd(
    base: DensityHd,
    r: float,
    samples: Sequence[Sequence[float]] | np.ndarray,
    lambda1: np.ndarray,
    seed: RngSeed,
    quadrature: Quadrature = Quadrature(),
) -> np.ndarray:
    """lambda1 minus the inverse-Fisher-weighted mean score of the perturbed samples."""
    if not r > 0:
        raise DomainError(f"smoothing radius must be positive, got {r}")
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    if x.shape[0] == 0:
        raise ConfigurationError("local stage needs at least one sample")
    lambda1 = np.asarray(lambda1, dtype=float)
    m = SmoothedModelHd(base, r, quadrature)
    perturbed = x + seed.generator(NOISE).normal(0.0, r, x.shape)
    try:
        score = m.score(perturbed - lambda1)
    except TailUnderflowError as e:
        assert e.coordinate is not None
        raise EstimatorError(e.point + float(lambda1[e.coordinate]), e.coordinate) from e
    eps_hat = m.fisher().inverse() @ score.mean(axis=0)
    return lambda1 - eps_hat


def global_mle_hd(
    base: DensityHd,
    samples: Sequence[Sequence[float]] | np.ndarray,
    cfg: ConfigHd,
    seed: RngSeed,
    quadrature: Quadrature = Quadrature(),
) -> ReportHd:
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    n, d = x.shape
    if d != base.dim:
        raise ConfigurationError(f"samples have dimension {d}, model has {base.dim}")
    shape = base.with_shift(np.zeros(d))
    sigma_norm = operator_norm(shape.covariance())
    if cfg.r**2 > sigma_norm:
        raise ConfigurationError(f"r^2 = {cfg.r**2:.4g} exceeds ||Sigma|| = {sigma_norm:.4g}")
    M = cfg.norm_matrix(d)
    # Each stage gets half of the failure budget.
    k = bucket_count(cfg.delta / 2.0, cfg.mom_buckets_multiplier)
    n_init = max(math.ceil(cfg.split_fraction * n), 2 * k)
    if n_init >= n:
        raise ConfigurationError(
            f"{n} samples leave nothing for the local stage; need more than {n_init}"
        )
    lambda1 = geometric_median_of_means(
        x[:n_init], cfg.delta / 2.0, seed, multiplier=cfg.mom_buckets_multiplier
    ) - shape.mean()
    lambda_hat = local_mle_hd(shape, cfg.r, x[n_init:], lambda1, seed, quadrature)
    fisher = SmoothedModelHd(shape, cfg.r, quadrature).fisher()
    t = transformed_inverse(fisher, M)
    n_local = n - n_init
    return ReportHd(
        lambda_hat=lambda_hat,
        lambda_initial=lambda1,
        m_norm_error_bound=theoretical_bound_hd(fisher, M, n, cfg.delta, cfg.eta),
        deviation_bound=score_deviation_bound(fisher, cfg.r, M, n_local, cfg.delta),
        fisher=fisher,
        d_eff_T=d_eff(t),
        d_eff_sigma=d_eff(shape.covariance()),
        n_used_local=n_local,
        n_used_init=n_init,
    )
