"""Translation families f^λ(x) = f(x - λ) with a known shape f.

Every `Density1d` is described by its shape at shift zero (the `_..0`
methods) plus a location `shift`. Public methods apply the shift, so
translation equivariance holds by construction.
"""

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Optional

import numpy as np
from scipy import integrate, stats

from smoothloc.errors import DomainError
from smoothloc.rng import SAMPLES, RngSeed

QUANTILE_TOL = 1e-10
WINDOW_SDS = 12.0
SAWTOOTH_MAX_AMPLITUDE = 0.2

GaussianComponents = tuple[tuple[float, float, float], ...]


def _fmt(x: float) -> str:
    return repr(float(x))


def _as_output(x: object, out: np.ndarray) -> float | np.ndarray:
    if np.ndim(x) == 0:
        return float(out)
    return out


def bisect_quantiles(
    cdf: Callable[[np.ndarray], np.ndarray],
    p: np.ndarray,
    lo: float,
    hi: float,
    tol: float = QUANTILE_TOL,
) -> np.ndarray:
    """Vectorized bisection for the smallest x with cdf(x) >= p."""
    p = np.atleast_1d(np.asarray(p, dtype=float))
    width = hi - lo
    a = np.full_like(p, lo)
    b = np.full_like(p, hi)
    for _ in range(64):
        low = cdf(a) >= p
        high = cdf(b) < p
        if not (low.any() or high.any()):
            break
        a = np.where(low, a - width, a)
        b = np.where(high, b + width, b)
    while np.max(b - a) > tol:
        mid = 0.5 * (a + b)
        below = cdf(mid) < p
        a = np.where(below, mid, a)
        b = np.where(below, b, mid)
    return b


@dataclass(frozen=True)
class Density1d(ABC):
    shift: float = field(default=0.0, kw_only=True)

    @abstractmethod
    def _pdf0(self, u: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def _cdf0(self, u: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def _draw0(self, rng: np.random.Generator, n: int) -> np.ndarray: ...

    @abstractmethod
    def _mean0(self) -> float: ...

    @abstractmethod
    def variance(self) -> float: ...

    @abstractmethod
    def _window0(self) -> tuple[float, float]:
        """Interval holding the shape at WINDOW_SDS standard deviations of its widest part."""

    @property
    @abstractmethod
    def max_sd(self) -> float: ...

    @abstractmethod
    def to_spec(self) -> str: ...

    def _quantile0(self, p: np.ndarray) -> np.ndarray:
        lo, hi = self._window0()
        return bisect_quantiles(self._cdf0, p, lo, hi)

    def _breakpoints0(self) -> np.ndarray:
        return np.empty(0)

    def gaussian_components(self) -> Optional[GaussianComponents]:
        """(weight, mean, sd) triples when the density is a Gaussian mixture."""
        return None

    def pdf(self, x: float | np.ndarray) -> float | np.ndarray:
        u = np.asarray(x, dtype=float) - self.shift
        return _as_output(x, self._pdf0(u))

    def cdf(self, x: float | np.ndarray) -> float | np.ndarray:
        u = np.asarray(x, dtype=float) - self.shift
        return _as_output(x, self._cdf0(u))

    def quantile(self, p: float | np.ndarray) -> float | np.ndarray:
        arr = np.asarray(p, dtype=float)
        if not np.all((arr > 0.0) & (arr < 1.0)):
            raise DomainError(f"quantile level must lie in (0, 1), got {p!r}")
        q = self._quantile0(np.atleast_1d(arr)).reshape(arr.shape)
        return _as_output(p, q + self.shift)

    def iqr(self) -> float:
        return float(self.quantile(0.75)) - float(self.quantile(0.25))

    def mean(self) -> float:
        return self.shift + self._mean0()

    def window(self) -> tuple[float, float]:
        lo, hi = self._window0()
        return lo + self.shift, hi + self.shift

    def breakpoints(self) -> np.ndarray:
        return self._breakpoints0() + self.shift

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self._draw0(rng, n) + self.shift

    def sample(self, n: int, seed: RngSeed) -> np.ndarray:
        if n < 1:
            raise DomainError(f"sample count must be at least 1, got {n}")
        return self.draw(seed.generator(SAMPLES), n)

    def shifted(self, by: float) -> "Density1d":
        return replace(self, shift=self.shift + by)

    def with_shift(self, shift: float) -> "Density1d":
        return replace(self, shift=shift)


@dataclass(frozen=True)
class Gaussian(Density1d):
    mu: float
    sigma: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.mu) and self.sigma > 0 and math.isfinite(self.sigma)):
            raise DomainError(f"gaussian needs finite mu and sigma > 0, got {self.mu}, {self.sigma}")

    def _pdf0(self, u: np.ndarray) -> np.ndarray:
        return stats.norm.pdf(u, self.mu, self.sigma)

    def _cdf0(self, u: np.ndarray) -> np.ndarray:
        return stats.norm.cdf(u, self.mu, self.sigma)

    def _quantile0(self, p: np.ndarray) -> np.ndarray:
        return stats.norm.ppf(p, self.mu, self.sigma)

    def _draw0(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.normal(self.mu, self.sigma, n)

    def _mean0(self) -> float:
        return self.mu

    def variance(self) -> float:
        return self.sigma**2

    def _window0(self) -> tuple[float, float]:
        return self.mu - WINDOW_SDS * self.sigma, self.mu + WINDOW_SDS * self.sigma

    @property
    def max_sd(self) -> float:
        return self.sigma

    def gaussian_components(self) -> Optional[GaussianComponents]:
        return ((1.0, self.mu + self.shift, self.sigma),)

    def to_spec(self) -> str:
        return f"gaussian({_fmt(self.mu + self.shift)},{_fmt(self.sigma)})"


@dataclass(frozen=True)
class Laplace(Density1d):
    mu: float
    b: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.mu) and self.b > 0 and math.isfinite(self.b)):
            raise DomainError(f"laplace needs finite mu and b > 0, got {self.mu}, {self.b}")

    def _pdf0(self, u: np.ndarray) -> np.ndarray:
        return stats.laplace.pdf(u, self.mu, self.b)

    def _cdf0(self, u: np.ndarray) -> np.ndarray:
        return stats.laplace.cdf(u, self.mu, self.b)

    def _quantile0(self, p: np.ndarray) -> np.ndarray:
        return stats.laplace.ppf(p, self.mu, self.b)

    def _draw0(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.laplace(self.mu, self.b, n)

    def _mean0(self) -> float:
        return self.mu

    def variance(self) -> float:
        return 2.0 * self.b**2

    def _window0(self) -> tuple[float, float]:
        half = WINDOW_SDS * math.sqrt(2.0) * self.b
        return self.mu - half, self.mu + half

    @property
    def max_sd(self) -> float:
        return math.sqrt(2.0) * self.b

    def _breakpoints0(self) -> np.ndarray:
        return np.array([self.mu])

    def to_spec(self) -> str:
        return f"laplace({_fmt(self.mu + self.shift)},{_fmt(self.b)})"


@dataclass(frozen=True)
class GaussianMixture(Density1d):
    # (weight, mean, sd) per component
    components: GaussianComponents

    def __post_init__(self) -> None:
        if not self.components:
            raise DomainError("mixture needs at least one component")
        for w, mu, sigma in self.components:
            if not (w > 0 and math.isfinite(mu) and sigma > 0 and math.isfinite(sigma)):
                raise DomainError(f"invalid mixture component ({w}, {mu}, {sigma})")
        total = sum(w for w, _, _ in self.components)
        if abs(total - 1.0) > 1e-9:
            raise DomainError(f"mixture weights must sum to 1, got {total}")

    @cached_property
    def _arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        arr = np.array(self.components, dtype=float)
        return arr[:, 0], arr[:, 1], arr[:, 2]

    def _pdf0(self, u: np.ndarray) -> np.ndarray:
        w, mu, sigma = self._arrays
        return np.sum(w * stats.norm.pdf(u[..., None], mu, sigma), axis=-1)

    def _cdf0(self, u: np.ndarray) -> np.ndarray:
        w, mu, sigma = self._arrays
        return np.sum(w * stats.norm.cdf(u[..., None], mu, sigma), axis=-1)

    def _draw0(self, rng: np.random.Generator, n: int) -> np.ndarray:
        w, mu, sigma = self._arrays
        idx = rng.choice(len(w), size=n, p=w / w.sum())
        return rng.normal(mu[idx], sigma[idx])

    def _mean0(self) -> float:
        w, mu, _ = self._arrays
        return float(np.dot(w, mu))

    def variance(self) -> float:
        w, mu, sigma = self._arrays
        m = float(np.dot(w, mu))
        return float(np.dot(w, sigma**2 + mu**2)) - m**2

    def _window0(self) -> tuple[float, float]:
        _, mu, sigma = self._arrays
        pad = WINDOW_SDS * float(sigma.max())
        return float(mu.min()) - pad, float(mu.max()) + pad

    @property
    def max_sd(self) -> float:
        return float(self._arrays[2].max())

    def gaussian_components(self) -> Optional[GaussianComponents]:
        return tuple((w, mu + self.shift, sigma) for w, mu, sigma in self.components)

    def to_spec(self) -> str:
        terms = "+".join(
            f"{_fmt(w)}*gaussian({_fmt(mu + self.shift)},{_fmt(sigma)})"
            for w, mu, sigma in self.components
        )
        return f"mixture({terms})"


@dataclass(frozen=True)
class GaussianSawtooth(Density1d):
    """Standard Gaussian plus a zero-mean triangular wave on its central section.

    The wave has period 2·width, slope ±slope and peak amplitude
    width·slope/2. It starts at zero at the origin, is mirrored to be even,
    and stops after the last whole period inside [-1, 1], so each tooth
    integrates to zero and normalization is exact.
    """

    width: float
    slope: float

    def __post_init__(self) -> None:
        if not (0 < self.width <= 0.5):
            raise DomainError(f"sawtooth width must lie in (0, 0.5], got {self.width}")
        if not (self.slope >= 0 and math.isfinite(self.slope)):
            raise DomainError(f"sawtooth slope must be finite and >= 0, got {self.slope}")
        if self.amplitude > SAWTOOTH_MAX_AMPLITUDE + 1e-12:
            raise DomainError(
                f"sawtooth amplitude width*slope/2 = {self.amplitude:.4g} exceeds {SAWTOOTH_MAX_AMPLITUDE}"
            )

    @property
    def amplitude(self) -> float:
        return self.width * self.slope / 2.0

    @cached_property
    def half_support(self) -> float:
        period = 2.0 * self.width
        return period * math.floor(1.0 / period + 1e-9)

    def _wave(self, v: np.ndarray) -> np.ndarray:
        # v >= 0; one period is up Δ over w/2, down over w, up over w/2.
        w = self.width
        tau = np.mod(v, 2.0 * w)
        h = np.where(tau <= w / 2, tau, np.where(tau <= 1.5 * w, w - tau, tau - 2.0 * w))
        return np.where(v <= self.half_support, self.slope * h, 0.0)

    def _wave_integral(self, v: np.ndarray) -> np.ndarray:
        # Antiderivative of the wave from 0; periodic because each period integrates to 0.
        w = self.width
        tau = np.mod(v, 2.0 * w)
        h = np.where(
            tau <= w / 2,
            tau**2 / 2,
            np.where(tau <= 1.5 * w, w**2 / 4 - (tau - w) ** 2 / 2, (tau - 2.0 * w) ** 2 / 2),
        )
        return np.where(v <= self.half_support, self.slope * h, 0.0)

    def _pdf0(self, u: np.ndarray) -> np.ndarray:
        return stats.norm.pdf(u) + self._wave(np.abs(u))

    def _cdf0(self, u: np.ndarray) -> np.ndarray:
        return stats.norm.cdf(u) + np.sign(u) * self._wave_integral(np.abs(u))

    def _draw0(self, rng: np.random.Generator, n: int) -> np.ndarray:
        envelope = 1.0 + self.amplitude / stats.norm.pdf(1.0)
        out = np.empty(0)
        while out.size < n:
            batch = max(1024, int(1.2 * envelope * (n - out.size)))
            u = rng.standard_normal(batch)
            accept = rng.random(batch) * envelope * stats.norm.pdf(u) <= self._pdf0(u)
            out = np.concatenate([out, u[accept]])
        return out[:n]

    def _mean0(self) -> float:
        return 0.0

    def variance(self) -> float:
        return 1.0 + 2.0 * self._wave_second_moment

    @cached_property
    def _wave_second_moment(self) -> float:
        # v^2·wave(v) is cubic between corners at multiples of w/2, so
        # Simpson on a corner-aligned grid is exact.
        pieces = int(round(2.0 * self.half_support / self.width))
        if pieces == 0 or self.slope == 0.0:
            return 0.0
        v = np.linspace(0.0, self.half_support, 2 * pieces + 1)
        return float(integrate.simpson(v**2 * self._wave(v), x=v))

    def _window0(self) -> tuple[float, float]:
        return -WINDOW_SDS, WINDOW_SDS

    @property
    def max_sd(self) -> float:
        return 1.0

    def _breakpoints0(self) -> np.ndarray:
        if self.slope == 0.0:
            return np.empty(0)
        pieces = int(round(2.0 * self.half_support / self.width))
        return np.linspace(-self.half_support, self.half_support, 2 * pieces + 1)

    def to_spec(self) -> str:
        return f"sawtooth({_fmt(self.width)},{_fmt(self.slope)})"


@dataclass(frozen=True)
class DensityHd:
    """Product density of independent coordinates, shifted by a location vector."""

    components: tuple[Density1d, ...]
    shift: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if len(self.components) == 0:
            raise DomainError("product density needs at least one component")
        if self.shift == ():
            object.__setattr__(self, "shift", (0.0,) * len(self.components))
        if len(self.shift) != len(self.components):
            raise DomainError(
                f"shift has {len(self.shift)} entries for {len(self.components)} components"
            )
        object.__setattr__(self, "shift", tuple(float(s) for s in self.shift))

    @property
    def dim(self) -> int:
        return len(self.components)

    def marginal(self, i: int) -> Density1d:
        return self.components[i].shifted(self.shift[i])

    def marginals(self) -> list[Density1d]:
        return [self.marginal(i) for i in range(self.dim)]

    def pdf(self, x: np.ndarray) -> float | np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise DomainError(f"expected points of dimension {self.dim}, got {x.shape}")
        out = np.ones(x.shape[:-1])
        for i, comp in enumerate(self.marginals()):
            out = out * np.asarray(comp.pdf(x[..., i]))
        return float(out) if out.ndim == 0 else out

    def mean(self) -> np.ndarray:
        return np.array([m.mean() for m in self.marginals()])

    def covariance(self) -> np.ndarray:
        return np.diag([c.variance() for c in self.components])

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return np.column_stack([m.draw(rng, n) for m in self.marginals()])

    def sample(self, n: int, seed: RngSeed) -> np.ndarray:
        if n < 1:
            raise DomainError(f"sample count must be at least 1, got {n}")
        return self.draw(seed.generator(SAMPLES), n)

    def shifted(self, by: np.ndarray | list[float] | tuple[float, ...]) -> "DensityHd":
        by = np.broadcast_to(np.asarray(by, dtype=float), (self.dim,))
        return DensityHd(self.components, tuple(np.asarray(self.shift) + by))

    def with_shift(self, shift: np.ndarray | list[float] | tuple[float, ...]) -> "DensityHd":
        return DensityHd(self.components, tuple(np.broadcast_to(shift, (self.dim,))))

    def to_spec(self) -> str:
        specs = [m.to_spec() for m in self.marginals()]
        if all(s == specs[0] for s in specs):
            return f"product({specs[0]}^{self.dim})"
        return f"product({','.join(specs)})"
