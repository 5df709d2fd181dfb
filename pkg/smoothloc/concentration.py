"""Norm concentration for subgamma random vectors.

A mean-zero vector x is (Sigma, C)-subgamma when, for every direction v,
E[exp(lam <x, v>)] <= exp(lam^2 v^T Sigma v / 2) for all |lam| <= 1/||C v||.
C = 0 encodes the subgaussian case, where every lam is admissible.
"""

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional, Sequence, TypedDict

import numpy as np

from smoothloc.errors import ConfigurationError, DomainError, PreconditionError
from smoothloc.rng import MONTE_CARLO, RngSeed
from smoothloc.util import operator_norm, order_statistic, psd_sqrt

if TYPE_CHECKING:
    from smoothloc.smoothing import SmoothedModelHd

PSD_TOL = 1e-10
MIN_MGF_SAMPLES = 100_000


@dataclass(frozen=True, eq=False)
class SubgammaSpec:
    sigma: np.ndarray
    c: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        sigma = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        if sigma.shape[0] != sigma.shape[1]:
            raise DomainError(f"Sigma must be square, got shape {sigma.shape}")
        if not np.allclose(sigma, sigma.T, atol=PSD_TOL, rtol=0.0):
            raise DomainError("Sigma must be symmetric")
        sigma = 0.5 * (sigma + sigma.T)
        if np.linalg.eigvalsh(sigma).min() < -PSD_TOL:
            raise DomainError("Sigma must be positive semidefinite")
        object.__setattr__(self, "sigma", sigma)
        if self.c is not None:
            c = np.atleast_2d(np.asarray(self.c, dtype=float))
            if c.shape != sigma.shape:
                raise DomainError(f"C must have shape {sigma.shape}, got {c.shape}")
            object.__setattr__(self, "c", c if np.any(c) else None)

    @property
    def dim(self) -> int:
        return self.sigma.shape[0]

    @property
    def is_subgaussian(self) -> bool:
        return self.c is None

    @property
    def trace(self) -> float:
        return float(np.trace(self.sigma))

    @property
    def sigma_norm(self) -> float:
        return operator_norm(self.sigma)

    @property
    def c_norm(self) -> float:
        return 0.0 if self.c is None else operator_norm(self.c)

    @property
    def c_frobenius(self) -> float:
        return 0.0 if self.c is None else float(np.linalg.norm(self.c, "fro"))


def tail_bound(spec: SubgammaSpec, t: float) -> float:
    """Upper bound on Pr[||x|| >= sqrt(Tr Sigma) + t], capped at 1."""
    if t < 0:
        raise DomainError(f"t must be nonnegative, got {t}")
    if spec.trace <= 0:
        raise DomainError("Tr(Sigma) must be positive")
    terms = [t * t / spec.sigma_norm]
    if not spec.is_subgaussian:
        terms.append(t / spec.c_norm)
        terms.append((2.0 * t * math.sqrt(spec.trace) + t * t) / spec.c_frobenius**2)
    return min(1.0, 2.0 * math.exp(-min(terms) / 16.0))


def norm_bound(spec: SubgammaSpec, delta: float) -> float:
    """Radius that ||x|| stays below with probability at least 1 - delta."""
    if not 0 < delta < 1:
        raise DomainError(f"delta must lie in (0, 1), got {delta}")
    if spec.trace <= 0:
        raise DomainError("Tr(Sigma) must be positive")
    log_term = math.log(2.0 / delta)
    root_tr = math.sqrt(spec.trace)
    bound = root_tr + 4.0 * math.sqrt(spec.sigma_norm * log_term)
    if not spec.is_subgaussian:
        fro = spec.c_frobenius
        bound += 16.0 * spec.c_norm * log_term
        bound += min(4.0 * fro * math.sqrt(log_term), 8.0 * fro**2 * log_term / root_tr)
    return bound


def gaussian_tail(sigma: np.ndarray, delta: float) -> float:
    """sqrt(Tr Sigma) + sqrt(2 ||Sigma|| log(1/delta)), the Gaussian norm quantile envelope."""
    if not 0 < delta <= 1:
        raise DomainError(f"delta must lie in (0, 1], got {delta}")
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    return math.sqrt(float(np.trace(sigma))) + math.sqrt(
        2.0 * operator_norm(sigma) * math.log(1.0 / delta)
    )


def tail_exponent_inverse(spec: SubgammaSpec, delta: float) -> float:
    """Smallest t whose tail_bound exponent reaches log(2/delta)."""
    target = 16.0 * math.log(2.0 / delta)
    candidates = [math.sqrt(target * spec.sigma_norm)]
    if not spec.is_subgaussian:
        root_tr = math.sqrt(spec.trace)
        candidates.append(target * spec.c_norm)
        fro2 = spec.c_frobenius**2
        candidates.append(-root_tr + math.sqrt(spec.trace + target * fro2))
    # The exponent is a min of increasing terms, so every term must reach the target.
    return max(candidates)


class VectorGenerator(ABC):
    family: str

    @property
    @abstractmethod
    def dim(self) -> int: ...

    @property
    @abstractmethod
    def claimed(self) -> SubgammaSpec: ...

    @abstractmethod
    def covariance(self) -> np.ndarray: ...

    @abstractmethod
    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Return n mean-zero draws as an (n, dim) array."""


@dataclass(frozen=True, eq=False)
class GaussianVectors(VectorGenerator):
    sigma: np.ndarray
    family: str = field(default="gaussian", init=False)

    @property
    def dim(self) -> int:
        return np.shape(self.sigma)[0]

    @property
    def claimed(self) -> SubgammaSpec:
        return SubgammaSpec(self.sigma)

    def covariance(self) -> np.ndarray:
        return np.asarray(self.sigma, dtype=float)

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.standard_normal((n, self.dim)) @ psd_sqrt(self.sigma)


@dataclass(frozen=True, eq=False)
class CenteredExponentialVectors(VectorGenerator):
    """Independent coordinates s_i (E_i - 1) with E_i ~ Exp(1).

    The per-coordinate MGF is exp(-u)/(1 - u) with u = lam s_i, which stays below
    exp(u^2) for |u| <= 1/2; hence the claim Sigma = 2 diag(s^2), C = 2 diag(s).
    """

    scales: tuple[float, ...]
    family: str = field(default="exponential", init=False)

    @property
    def dim(self) -> int:
        return len(self.scales)

    @property
    def claimed(self) -> SubgammaSpec:
        s = np.asarray(self.scales, dtype=float)
        return SubgammaSpec(2.0 * np.diag(s**2), 2.0 * np.diag(s))

    def covariance(self) -> np.ndarray:
        return np.diag(np.asarray(self.scales, dtype=float) ** 2)

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return (rng.standard_exponential((n, self.dim)) - 1.0) * np.asarray(self.scales)


@dataclass(frozen=True, eq=False)
class ScaledRademacherVectors(VectorGenerator):
    bounds: tuple[float, ...]
    family: str = field(default="rademacher", init=False)

    @property
    def dim(self) -> int:
        return len(self.bounds)

    @property
    def claimed(self) -> SubgammaSpec:
        # cosh(u) <= exp(u^2 / 2)
        return SubgammaSpec(np.diag(np.asarray(self.bounds, dtype=float) ** 2))

    def covariance(self) -> np.ndarray:
        return self.claimed.sigma

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        signs = rng.integers(0, 2, size=(n, self.dim)) * 2.0 - 1.0
        return signs * np.asarray(self.bounds, dtype=float)


class ScoreVectors(VectorGenerator):
    """Centered, transformed smoothed scores root I_R^{-1} s_R(x + eps) with x ~ f_R."""

    family = "score"
    model: "SmoothedModelHd"
    eps: np.ndarray
    _transform: np.ndarray
    _center: np.ndarray
    _claimed: SubgammaSpec

    def __init__(
        self,
        model: "SmoothedModelHd",
        claimed: SubgammaSpec,
        eps: Optional[np.ndarray] = None,
        root: Optional[np.ndarray] = None,
    ):
        d = model.dim
        self.model = model
        self.eps = np.zeros(d) if eps is None else np.asarray(eps, dtype=float)
        root = np.eye(d) if root is None else np.asarray(root, dtype=float)
        self._transform = root @ model.fisher().inverse()
        expected = np.array(
            [c.expected_shifted_score(float(e)) for c, e in zip(model.coords, self.eps)]
        )
        self._center = self._transform @ expected
        self._claimed = claimed

    @property
    def dim(self) -> int:
        return self.model.dim

    @property
    def claimed(self) -> SubgammaSpec:
        return self._claimed

    def covariance(self) -> np.ndarray:
        if not self.eps.any():
            return self._transform @ self.model.fisher().matrix @ self._transform.T
        return self._claimed.sigma

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        s = self.model.score(self.model.draw(rng, n) + self.eps)
        return s @ self._transform.T - self._center


def empirical_norm_quantile(
    gen: VectorGenerator, n_trials: int, delta: float, seed: RngSeed
) -> float:
    return tail_report(gen, [delta], n_trials, seed).empirical[0]


@dataclass(frozen=True, eq=False)
class TailReport:
    family: str
    dim: int
    deltas: tuple[float, ...]
    empirical: tuple[float, ...]
    subgamma: tuple[float, ...]
    gaussian: tuple[float, ...]
    trials: int
    seed: int


def tail_report(
    gen: VectorGenerator, deltas: Sequence[float], n_trials: int, seed: RngSeed
) -> TailReport:
    """One batch of draws, then the 1 - delta norm quantile and both bounds per delta."""
    for delta in deltas:
        if not 0 < delta < 1:
            raise DomainError(f"delta must lie in (0, 1), got {delta}")
        need = math.ceil(10.0 / delta)
        if n_trials < need:
            raise ConfigurationError(
                f"{n_trials} trials cannot resolve delta={delta}; need at least {need}"
            )
    norms = np.linalg.norm(gen.draw(seed.generator(MONTE_CARLO), n_trials), axis=1)
    claimed = gen.claimed
    cov = gen.covariance()
    has_trace = claimed.trace > 0
    return TailReport(
        family=gen.family,
        dim=gen.dim,
        deltas=tuple(deltas),
        empirical=tuple(order_statistic(norms, 1.0 - d) for d in deltas),
        subgamma=tuple(norm_bound(claimed, d) if has_trace else 0.0 for d in deltas),
        gaussian=tuple(gaussian_tail(cov, d) for d in deltas),
        trials=n_trials,
        seed=seed.seed,
    )


class MgfPoint(TypedDict):
    lam: float
    empirical: float
    stderr: float
    bound: float


class MgfCheck(TypedDict):
    passed: bool
    margin: float
    points: list[MgfPoint]


def admissible_lambda(spec: SubgammaSpec, v: np.ndarray) -> float:
    if spec.c is None:
        var = float(v @ spec.sigma @ v)
        return math.inf if var == 0 else 3.0 / math.sqrt(var)
    cv = float(np.linalg.norm(spec.c @ v))
    return math.inf if cv == 0 else 1.0 / cv


def mgf_check(
    gen: VectorGenerator,
    v: np.ndarray,
    lambda_grid: Sequence[float],
    n_mc: int,
    seed: RngSeed,
) -> MgfCheck:
    """Monte Carlo check of the claimed MGF envelope along v, with 3-standard-error slack."""
    v = np.asarray(v, dtype=float)
    if n_mc < MIN_MGF_SAMPLES:
        raise ConfigurationError(f"MGF check needs at least {MIN_MGF_SAMPLES} samples, got {n_mc}")
    spec = gen.claimed
    limit = admissible_lambda(spec, v)
    for lam in lambda_grid:
        if abs(lam) > limit * (1 + 1e-12):
            raise PreconditionError(f"lambda={lam} outside the admissible range |lambda| <= {limit:.6g}")
    proj = gen.draw(seed.generator(MONTE_CARLO), n_mc) @ v
    var = float(v @ spec.sigma @ v)
    points: list[MgfPoint] = []
    margin = math.inf
    for lam in lambda_grid:
        vals = np.exp(lam * proj)
        mean = float(vals.mean())
        stderr = float(vals.std(ddof=1) / math.sqrt(n_mc))
        bound = math.exp(lam * lam * var / 2.0)
        points.append({"lam": float(lam), "empirical": mean, "stderr": stderr, "bound": bound})
        margin = min(margin, bound - (mean - 3.0 * stderr))
    return {"passed": margin >= 0, "margin": margin, "points": points}


class ClaimCertificate(TypedDict):
    passed: bool
    violations: list[float]


def certify_exponential_claim(
    sigma_scale: float, c_scale: float, lambda_grid: Sequence[float]
) -> ClaimCertificate:
    """Exact-MGF check of a (sigma_scale, c_scale) claim for the unit centered exponential.

    Compares log E[exp(lam (E - 1))] = -lam - log(1 - lam) against lam^2 sigma_scale / 2
    on every grid point; lam must satisfy |lam| <= 1/c_scale and lam < 1.
    """
    violations = []
    for lam in lambda_grid:
        if abs(lam) * c_scale > 1 + 1e-12 or lam >= 1:
            raise PreconditionError(f"lambda={lam} outside the admissible range for C={c_scale}")
        exact = -lam - math.log1p(-lam)
        if exact > lam * lam * sigma_scale / 2.0:
            violations.append(float(lam))
    return {"passed": not violations, "violations": violations}
