"""Smoothed densities f_r = f * N(0, r^2), their scores and Fisher information.

The score uses the conditional-noise identity s_r(x) = -E[Z | x] / r^2, where
x = y + Z with y ~ f and Z ~ N(0, r^2). Numerator and denominator are the
same kernel sum over one quadrature grid in y:

    f_r(x)      = sum_j W_j f(y_j) phi_r(x - y_j)
    E[Z | x]    = sum_j W_j f(y_j) phi_r(x - y_j) (x - y_j) / f_r(x)

The grid is composite Gauss-Legendre with panel edges at the base density's
breakpoints, so kinked shapes (Laplace, sawtooth) integrate to near machine
precision. It reaches out to where the base density falls below
GRID_PDF_FLOOR, so every point whose smoothed density clears UNDERFLOW_FLOOR
is covered. Gaussian and Gaussian-mixture bases bypass the grid and use the
exact convolution.
"""

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Literal, Optional, TypedDict

import numpy as np
from scipy import integrate, special

from smoothloc.concentration import ScoreVectors, SubgammaSpec
from smoothloc.errors import ConfigurationError, DomainError, PreconditionError, TailUnderflowError
from smoothloc.model import Density1d, DensityHd
from smoothloc.rng import MONTE_CARLO, RngSeed
from smoothloc.util import psd_sqrt

UNDERFLOW_FLOOR = 1e-300
LOG_UNDERFLOW_FLOOR = math.log(UNDERFLOW_FLOOR)
NODE_AGREEMENT_TOL = 1e-9
GRID_PDF_FLOOR = 1e-320
GRID_MAX_STEPS = 100_000
CHUNK_ELEMENTS = 2**21
MIN_MC_SAMPLES = 1000
_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class Quadrature:
    """Grid settings; `nodes` counts Gauss-Legendre nodes per window of width 2 * truncation_sds * r."""

    nodes: int = 128
    truncation_sds: float = 10.0
    panel_order: int = 8
    max_nodes: int = 1024
    fisher_panels: int = 2**14
    fisher_pad_sds: float = 12.0

    def __post_init__(self) -> None:
        if self.nodes < 16:
            raise ConfigurationError(f"quadrature needs at least 16 nodes, got {self.nodes}")
        if self.truncation_sds <= 0 or self.panel_order < 2:
            raise ConfigurationError("truncation radius and panel order must be positive")
        if self.fisher_panels < 2 or self.fisher_panels % 2:
            raise ConfigurationError("fisher_panels must be a positive even number")


class SmoothedModel1d:
    """The r-smoothed version of a 1-d base density."""

    base: Density1d
    r: float
    quadrature: Quadrature
    nodes: int
    converged: bool
    _mixture: Optional[tuple[np.ndarray, np.ndarray, np.ndarray]]
    _y: np.ndarray
    _wf: np.ndarray

    def __init__(self, base: Density1d, r: float, quadrature: Quadrature = Quadrature()):
        if not (r > 0 and math.isfinite(r)):
            raise DomainError(f"smoothing radius must be positive, got {r}")
        self.base = base
        self.r = float(r)
        self.quadrature = quadrature
        self._mixture = None
        self.nodes = quadrature.nodes
        self.converged = True
        comps = base.gaussian_components()
        if comps is not None:
            arr = np.array(comps, dtype=float)
            self._mixture = (arr[:, 0], arr[:, 1], arr[:, 2] ** 2 + self.r**2)
            self._y = np.empty(0)
            self._wf = np.empty(0)
        else:
            self._resolve_nodes()

    @property
    def is_analytic(self) -> bool:
        return self._mixture is not None

    def _build_grid(self, nodes: int) -> tuple[np.ndarray, np.ndarray]:
        q = self.quadrature
        lo, hi = _support_edges(self.base)
        lo, hi = lo - q.truncation_sds * self.r, hi + q.truncation_sds * self.r
        panels_per_window = max(1, nodes // q.panel_order)
        h = 2.0 * q.truncation_sds * self.r / panels_per_window
        edges = np.arange(lo, hi + h, h)
        kinks = self.base.breakpoints()
        edges = np.unique(np.concatenate([edges, kinks[(kinks > lo) & (kinks < edges[-1])]]))
        edges = edges[np.concatenate([[True], np.diff(edges) > 1e-9 * h])]
        t, wt = np.polynomial.legendre.leggauss(q.panel_order)
        mid = 0.5 * (edges[1:] + edges[:-1])
        half = 0.5 * (edges[1:] - edges[:-1])
        y = (mid[:, None] + half[:, None] * t).ravel()
        wf = (half[:, None] * wt).ravel() * np.asarray(self.base.pdf(y))
        keep = wf > 0
        return y[keep], wf[keep]

    def _resolve_nodes(self) -> None:
        lo, hi = self.base.window()
        center, half = 0.5 * (lo + hi), (hi - lo) / 6.0
        checkpoints = np.linspace(center - half, center + half, 33)
        kinks = self.base.breakpoints()
        if kinks.size:
            step = max(1, kinks.size // 16)
            near = kinks[::step]
            checkpoints = np.concatenate([checkpoints, near, near + self.r / 3.0])
        nodes = self.quadrature.nodes
        self._y, self._wf = self._build_grid(nodes)
        current = self.score(checkpoints)
        while nodes < self.quadrature.max_nodes:
            y, wf = self._build_grid(2 * nodes)
            finer = _score_from_sums(*_kernel_sums(y, wf, self.r, self.quadrature.truncation_sds, checkpoints), self.r)
            tol = NODE_AGREEMENT_TOL * np.maximum(1.0, np.abs(finer))
            if np.all(np.abs(finer - current) <= tol):
                break
            nodes *= 2
            self._y, self._wf, current = y, wf, finer
        else:
            self.converged = False
        self.nodes = nodes

    def _mixture_terms(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        assert self._mixture is not None
        w, mu, var = self._mixture
        z = x[:, None] - mu
        logt = np.log(w) - 0.5 * np.log(2.0 * math.pi * var) - z**2 / (2.0 * var)
        score = (special.softmax(logt, axis=1) * (-z / var)).sum(axis=1)
        return special.logsumexp(logt, axis=1), score

    def kernel_sums(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return (f_r(x), -f_r(x)·E[Z|x]) on the quadrature grid; the score is their ratio over r^2."""
        return _kernel_sums(self._y, self._wf, self.r, self.quadrature.truncation_sds, x)

    def pdf(self, x: float | np.ndarray) -> float | np.ndarray:
        arr = np.atleast_1d(np.asarray(x, dtype=float))
        flat = arr.ravel()
        if self._mixture is not None:
            out = np.exp(self._mixture_terms(flat)[0])
        else:
            out = self.kernel_sums(flat)[0]
        return float(out[0]) if np.ndim(x) == 0 else out.reshape(arr.shape)

    def score(self, x: float | np.ndarray) -> float | np.ndarray:
        arr = np.atleast_1d(np.asarray(x, dtype=float))
        flat = arr.ravel()
        if self._mixture is not None:
            log_pdf, out = self._mixture_terms(flat)
            bad = ~(log_pdf >= LOG_UNDERFLOW_FLOOR)
            if bad.any():
                raise TailUnderflowError(float(flat[np.argmax(bad)]))
        else:
            den, num = self.kernel_sums(flat)
            bad = ~(den >= UNDERFLOW_FLOOR)
            if bad.any():
                raise TailUnderflowError(float(flat[np.argmax(bad)]))
            out = _score_from_sums(den, num, self.r)
        return float(out[0]) if np.ndim(x) == 0 else out.reshape(arr.shape)

    def _safe_density_and_score(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        # Far-tail points contribute zero weight instead of raising.
        if self._mixture is not None:
            log_pdf, score = self._mixture_terms(x)
            return np.exp(log_pdf), score
        den, num = self.kernel_sums(x)
        ok = den >= UNDERFLOW_FLOOR
        score = np.zeros_like(den)
        score[ok] = num[ok] / (den[ok] * self.r**2)
        return np.where(ok, den, 0.0), score

    @cached_property
    def fisher_grid(self) -> np.ndarray:
        q = self.quadrature
        lo, hi = self.base.window()
        pad = q.fisher_pad_sds * self.r
        return np.linspace(lo - pad, hi + pad, q.fisher_panels + 1)

    @cached_property
    def _fisher_grid_values(self) -> tuple[np.ndarray, np.ndarray]:
        return self._safe_density_and_score(self.fisher_grid)

    def integrate(self, values: np.ndarray) -> float:
        """Composite Simpson over the Fisher grid."""
        return float(integrate.simpson(values, x=self.fisher_grid))

    @cached_property
    def fisher(self) -> float:
        comps = self.base.gaussian_components()
        if comps is not None and len(comps) == 1:
            return 1.0 / (comps[0][2] ** 2 + self.r**2)
        density, score = self._fisher_grid_values
        value = self.integrate(density * score**2)
        assert value > 0, "smoothed Fisher information must be positive"
        return value

    def score_mean(self) -> float:
        density, score = self._fisher_grid_values
        return self.integrate(density * score)

    def total_mass(self) -> float:
        return self.integrate(self._fisher_grid_values[0])

    def expected_shifted_score(self, eps: float) -> float:
        """E_{x ~ f_r}[s_r(x + eps)] by quadrature."""
        if eps == 0.0:
            return self.score_mean()
        density, _ = self._fisher_grid_values
        _, shifted = self._safe_density_and_score(self.fisher_grid + eps)
        return self.integrate(density * shifted)

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.base.draw(rng, n) + rng.normal(0.0, self.r, n)

    def fisher_monte_carlo(self, n: int, seed: RngSeed) -> tuple[float, float]:
        if n < MIN_MC_SAMPLES:
            raise ConfigurationError(f"Monte Carlo Fisher needs at least {MIN_MC_SAMPLES} samples, got {n}")
        s2 = np.asarray(self.score(self.draw(seed.generator(MONTE_CARLO), n))) ** 2
        return float(s2.mean()), float(s2.std(ddof=1) / math.sqrt(n))


def _support_edges(base: Density1d) -> tuple[float, float]:
    """First points left and right of the window where the base pdf drops below GRID_PDF_FLOOR."""
    lo, hi = base.window()
    step = base.max_sd
    for _ in range(GRID_MAX_STEPS):
        if float(base.pdf(lo)) < GRID_PDF_FLOOR:
            break
        lo -= step
    for _ in range(GRID_MAX_STEPS):
        if float(base.pdf(hi)) < GRID_PDF_FLOOR:
            break
        hi += step
    return lo, hi


def _kernel_sums(
    y: np.ndarray, wf: np.ndarray, r: float, truncation_sds: float, x: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float).ravel()
    den = np.zeros(x.size)
    num = np.zeros(x.size)
    if y.size == 0 or x.size == 0:
        return den, num
    reach = truncation_sds * r
    start = np.searchsorted(y, x - reach, side="left")
    stop = np.searchsorted(y, x + reach, side="right")
    width = int((stop - start).max())
    if width == 0:
        return den, num
    offsets = np.arange(width)
    step = max(1, CHUNK_ELEMENTS // width)
    for s in range(0, x.size, step):
        sl = slice(s, s + step)
        idx = start[sl, None] + offsets
        valid = idx < stop[sl, None]
        idx = np.minimum(idx, y.size - 1)
        z = x[sl, None] - y[idx]
        k = np.where(valid, wf[idx] * np.exp(-0.5 * (z / r) ** 2), 0.0)
        den[sl] = k.sum(axis=1)
        num[sl] = -(k * z).sum(axis=1)
    norm = 1.0 / (r * _SQRT_2PI)
    return den * norm, num * norm


def _score_from_sums(den: np.ndarray, num: np.ndarray, r: float) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return num / (den * r**2)


@lru_cache(maxsize=256)
def smoothed_1d(base: Density1d, r: float, quadrature: Quadrature = Quadrature()) -> SmoothedModel1d:
    """Shared, immutable smoothed model; safe to reuse across threads."""
    return SmoothedModel1d(base, r, quadrature)


@dataclass(frozen=True)
class FisherMatrix:
    matrix: np.ndarray
    stderr: np.ndarray
    method: Literal["quadrature", "monte_carlo"]
    # Smallest eigenvalue any Fisher matrix of this model can have, 1/||Sigma + R||.
    eigen_floor: float = 0.0

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix, dtype=float)
        object.__setattr__(self, "matrix", 0.5 * (m + m.T))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def relative_stderr(self) -> float:
        return float(np.max(self.stderr) / np.linalg.norm(self.matrix, 2))

    def is_diagonal(self) -> bool:
        return bool(np.all(self.matrix == np.diag(np.diag(self.matrix))))

    def inverse(self) -> np.ndarray:
        if self.is_diagonal():
            return np.diag(1.0 / np.diag(self.matrix))
        vals, vecs = np.linalg.eigh(self.matrix)
        vals = np.maximum(vals, self.eigen_floor) if self.eigen_floor > 0 else vals
        return (vecs / vals) @ vecs.T


class SmoothedModelHd:
    """R-smoothed product density with R = r^2 I; coordinates smooth independently."""

    base: DensityHd
    r: float
    mc_samples: int
    coords: tuple[SmoothedModel1d, ...]

    def __init__(
        self,
        base: DensityHd,
        r: float,
        quadrature: Quadrature = Quadrature(),
        mc_samples: int = 200_000,
    ):
        if not (r > 0 and math.isfinite(r)):
            raise DomainError(f"smoothing radius must be positive, got {r}")
        self.base = base
        self.r = float(r)
        self.mc_samples = mc_samples
        self.coords = tuple(smoothed_1d(m, self.r, quadrature) for m in base.marginals())

    @property
    def dim(self) -> int:
        return self.base.dim

    @property
    def smoothing_matrix(self) -> np.ndarray:
        return self.r**2 * np.eye(self.dim)

    def covariance(self) -> np.ndarray:
        return self.base.covariance() + self.smoothing_matrix

    def pdf(self, x: np.ndarray) -> float | np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.ones(x.shape[:-1])
        for i, c in enumerate(self.coords):
            out = out * np.asarray(c.pdf(x[..., i]))
        return float(out) if out.ndim == 0 else out

    def score(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise DomainError(f"expected points of dimension {self.dim}, got {x.shape}")
        out = np.empty_like(x)
        for i, c in enumerate(self.coords):
            try:
                out[..., i] = c.score(x[..., i])
            except TailUnderflowError as e:
                raise TailUnderflowError(e.point, coordinate=i) from e
        return out

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.base.draw(rng, n) + rng.normal(0.0, self.r, (n, self.dim))

    @cached_property
    def _fisher_quadrature(self) -> FisherMatrix:
        diag = np.array([c.fisher for c in self.coords])
        return FisherMatrix(np.diag(diag), np.zeros((self.dim, self.dim)), "quadrature", self.eigen_floor)

    @property
    def eigen_floor(self) -> float:
        return 1.0 / float(np.linalg.eigvalsh(self.covariance()).max())

    def fisher(
        self,
        method: Literal["quadrature", "monte_carlo"] = "quadrature",
        seed: Optional[RngSeed] = None,
        n: Optional[int] = None,
    ) -> FisherMatrix:
        if method == "quadrature":
            return self._fisher_quadrature
        n = self.mc_samples if n is None else n
        if n < MIN_MC_SAMPLES:
            raise ConfigurationError(f"Monte Carlo Fisher needs at least {MIN_MC_SAMPLES} samples, got {n}")
        seed = RngSeed(0) if seed is None else seed
        s = self.score(self.draw(seed.generator(MONTE_CARLO), n))
        mean = s.T @ s / n
        second = (s**2).T @ (s**2) / n
        stderr = np.sqrt(np.maximum(second - mean**2, 0.0) / n)
        return FisherMatrix(mean, stderr, "monte_carlo", self.eigen_floor)


class FisherBoundCheck(TypedDict):
    min_eigenvalue: float
    tolerance: float
    passed: bool


def fisher_lower_bound_check(m: SmoothedModelHd, fisher: FisherMatrix) -> FisherBoundCheck:
    """Smallest eigenvalue of I_R - (Sigma + R)^{-1}; the covariance floor on Fisher information."""
    gap = fisher.matrix - np.linalg.inv(m.covariance())
    low = float(np.linalg.eigvalsh(0.5 * (gap + gap.T)).min())
    tol = 3.0 * float(np.max(fisher.stderr))
    return {"min_eigenvalue": low, "tolerance": tol, "passed": low >= -tol - 1e-12}


class InversionBias(TypedDict):
    bias: list[float]
    bias_norm: float
    ceiling: float


def check_score_inversion_bias(m: SmoothedModelHd, eps: np.ndarray) -> InversionBias:
    """Bias of one inverted-score step, ||E[-I_R^{-1} s_R(x + eps)] - eps||, x ~ f_R."""
    eps = np.asarray(eps, dtype=float)
    if eps.shape != (m.dim,):
        raise DomainError(f"eps must have shape ({m.dim},), got {eps.shape}")
    q = float(eps @ eps) / m.r**2
    if q > 0.25 + 1e-12:
        raise PreconditionError(f"eps^T R^-1 eps = {q:.4g} exceeds 1/4")
    fisher = m.fisher()
    ceiling = math.sqrt(float(np.linalg.norm(fisher.inverse(), 2))) * q
    if not eps.any():
        return {"bias": [0.0] * m.dim, "bias_norm": 0.0, "ceiling": ceiling}
    expected = np.array([c.expected_shifted_score(float(e)) for c, e in zip(m.coords, eps)])
    bias = -fisher.inverse() @ expected - eps
    return {"bias": bias.tolist(), "bias_norm": float(np.linalg.norm(bias)), "ceiling": ceiling}


class TaylorCheck(TypedDict):
    lhs: float
    linear: float
    residual: float
    ratio: float


def expected_score_taylor_check(m: SmoothedModel1d, eps: float) -> TaylorCheck:
    """Compare E[s_r(x - eps)] with its linearization I_r·eps."""
    if abs(eps) > m.r / 2 + 1e-15:
        raise PreconditionError(f"|eps| = {abs(eps):.4g} exceeds r/2 = {m.r / 2:.4g}")
    lhs = m.expected_shifted_score(-eps)
    linear = m.fisher * eps
    residual = lhs - linear
    scale = math.sqrt(m.fisher) * eps**2 / m.r**2
    return {
        "lhs": lhs,
        "linear": linear,
        "residual": residual,
        "ratio": residual / scale if scale > 0 else 0.0,
    }


class MomentCheck(TypedDict):
    moment: float
    stderr: float
    signed_moment: float
    signed_stderr: float
    ceiling: float
    within: bool


def score_moment_check(
    m: SmoothedModelHd, v: np.ndarray, k: int, n_mc: int, seed: RngSeed
) -> MomentCheck:
    """k-th absolute moment of v^T R^{1/2} s_R(x) against its subgamma ceiling."""
    v = np.asarray(v, dtype=float)
    if v.shape != (m.dim,) or abs(float(np.linalg.norm(v)) - 1.0) > 1e-12:
        raise PreconditionError("v must be a unit vector of the model's dimension")
    if not 3 <= k <= 8:
        raise PreconditionError(f"moment order must lie in 3..8, got {k}")
    if n_mc < 10_000:
        raise PreconditionError(f"need at least 10^4 Monte Carlo samples, got {n_mc}")
    proj = m.r * (m.score(m.draw(seed.generator(MONTE_CARLO), n_mc)) @ v)
    absk = np.abs(proj) ** k
    signed = proj**k
    fisher = m.fisher().matrix
    ceiling = 1.6 ** (k - 2) * k ** (k / 2) * m.r**2 * float(v @ fisher @ v)
    moment = float(absk.mean())
    stderr = float(absk.std(ddof=1) / math.sqrt(n_mc))
    return {
        "moment": moment,
        "stderr": stderr,
        "signed_moment": float(signed.mean()),
        "signed_stderr": float(signed.std(ddof=1) / math.sqrt(n_mc)),
        "ceiling": ceiling,
        "within": moment - 3.0 * stderr <= ceiling,
    }


def fisher_sandwich(m: SmoothedModel1d) -> tuple[float, float]:
    """Lower and upper bounds 1/(Var f + r^2) <= I_r <= 1/r^2."""
    return 1.0 / (m.base.variance() + m.r**2), 1.0 / m.r**2


def smoothed_pdf_1d(m: SmoothedModel1d, x: float | np.ndarray) -> float | np.ndarray:
    return m.pdf(x)


def smoothed_score_1d(m: SmoothedModel1d, x: float | np.ndarray) -> float | np.ndarray:
    return m.score(x)


def fisher_1d(m: SmoothedModel1d) -> float:
    return m.fisher


def expected_shifted_score_1d(m: SmoothedModel1d, eps: float) -> float:
    return m.expected_shifted_score(eps)


def smoothed_score_hd(m: SmoothedModelHd, x: np.ndarray) -> np.ndarray:
    return m.score(x)


def fisher_hd(m: SmoothedModelHd) -> FisherMatrix:
    return m.fisher()


# Scale constant of the score's subgamma parameter C, exact scores vs shifted ones.
SCORE_SCALE_AT_ZERO = 1.6
SCORE_SCALE_SHIFTED = 15.0


def score_subgamma_spec(
    m: SmoothedModelHd,
    M: Optional[np.ndarray] = None,
    eps: Optional[np.ndarray] = None,
    inflation: float = 1.0,
) -> SubgammaSpec:
    """Subgamma parameters claimed for M^{1/2} I_R^{-1} s_R(x + eps), x ~ f_R."""
    d = m.dim
    root = np.eye(d) if M is None else psd_sqrt(np.asarray(M, dtype=float))
    inv = m.fisher().inverse()
    shifted = eps is not None and bool(np.any(np.asarray(eps) != 0))
    scale = SCORE_SCALE_SHIFTED if shifted else SCORE_SCALE_AT_ZERO
    sigma = inflation * root @ inv @ root
    c = scale * root @ inv / m.r
    return SubgammaSpec(sigma=sigma, c=c)


def score_vector_generator(
    m: SmoothedModelHd,
    M: Optional[np.ndarray] = None,
    eps: Optional[np.ndarray] = None,
    inflation: float = 1.0,
) -> ScoreVectors:
    spec = score_subgamma_spec(m, M, eps, inflation)
    root = None if M is None else psd_sqrt(np.asarray(M, dtype=float))
    return ScoreVectors(m, spec, eps=eps, root=root)
