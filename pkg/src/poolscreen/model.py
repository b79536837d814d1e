"""Signal generation and the multiplicative measurement noise model.

Quantitative pooled tests report a non-negative reading per pool.  A reading
is the underlying pooled quantity times a log-normal factor, so zero readings
are exact: noise never turns a zero into a positive or vice versa.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

# Readings below this are indistinguishable from zero in double precision.
MEASUREMENT_FLOOR = 1e-300


class BelowDetection(ValueError):
    """Raised when a cycle count exceeds the detection limit (negative test)."""


# ---------------------------------------------------------------------------
# viral-load laws


@dataclass(frozen=True)
class UniformLoad:
    """Loads drawn uniformly from [lo, hi], 0 < lo < hi."""

    lo: float = 1.0
    hi: float = 1000.0

    def __post_init__(self):
        if not (0.0 < self.lo < self.hi):
            raise ValueError(f"need 0 < lo < hi, got [{self.lo}, {self.hi}]")

    @property
    def is_atomic(self) -> bool:
        return False

    @property
    def log_density_inside(self) -> float:
        # constant log-density of one load inside the box
        return -math.log(self.hi - self.lo)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size=size)

    def sum_density(self, k: int, y) -> np.ndarray:
        """Density of the sum of k independent loads, evaluated at y.

        Exact piecewise polynomial (Irwin-Hall rescaled from [0,1]^k) for
        k <= 12; a matched-moment normal approximation beyond, where the
        alternating-sum form loses too many digits to cancellation.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        y = np.asarray(y, dtype=float)
        width = self.hi - self.lo
        if k <= 12:
            u = (y - k * self.lo) / width
            return _irwin_hall_pdf(u, k) / width
        mean = k * 0.5 * (self.lo + self.hi)
        var = k * width * width / 12.0
        return np.exp(-0.5 * (y - mean) ** 2 / var) / math.sqrt(2.0 * math.pi * var)


@dataclass(frozen=True)
class PointLoad:
    """Every infected sample carries the same known load."""

    value: float = 1.0

    def __post_init__(self):
        if self.value <= 0:
            raise ValueError("load must be positive")

    @property
    def is_atomic(self) -> bool:
        return True

    @property
    def lo(self) -> float:
        return self.value

    @property
    def hi(self) -> float:
        return self.value

    @property
    def log_density_inside(self) -> float:
        # an atom carries probability one; log-mass zero
        return 0.0

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return np.full(size, self.value)


LoadLaw = UniformLoad | PointLoad


def _irwin_hall_pdf(x, k: int) -> np.ndarray:
    """Standard Irwin-Hall density (sum of k uniforms on [0,1]) at x.

    f(x) = 1/(k-1)! * sum_j (-1)^j C(k,j) max(x-j, 0)^(k-1); terms with
    j > floor(x) vanish through the max, so no explicit floor is needed.
    """
    x = np.asarray(x, dtype=float)
    if k == 1:
        return ((x >= 0.0) & (x <= 1.0)).astype(float)
    total = np.zeros_like(x)
    for j in range(k + 1):
        total += (-1.0) ** j * math.comb(k, j) * np.clip(x - j, 0.0, None) ** (k - 1)
    out = total / math.gamma(k)
    # cancellation can leave tiny negative dust near the support edges
    return np.clip(out, 0.0, None)


# ---------------------------------------------------------------------------
# noise


@dataclass(frozen=True)
class NoiseModel:
    """Multiplicative log-normal noise: z = y * eps, ln eps ~ N(mu, sigma^2).

    The default scale matches an amplification-efficiency spread of about
    5 percent per cycle on a base-1.95 reaction (sigma_eps = 0.1 * ln 1.95).
    """

    sigma_eps: float = 0.1 * math.log(1.95)
    mu_eps: float = 0.0

    def __post_init__(self):
        if self.sigma_eps <= 0:
            raise ValueError("sigma_eps must be positive")

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        g = rng.standard_normal(size)
        return np.exp(self.mu_eps + self.sigma_eps * g)

    def logpdf(self, eps) -> np.ndarray:
        eps = np.asarray(eps, dtype=float)
        le = np.log(eps)
        return (
            -le
            - math.log(self.sigma_eps * math.sqrt(2.0 * math.pi))
            - (le - self.mu_eps) ** 2 / (2.0 * self.sigma_eps**2)
        )

    def pdf(self, eps) -> np.ndarray:
        return np.exp(self.logpdf(eps))


def apply_noise(y: float, noise: NoiseModel, rng: np.random.Generator) -> float:
    """Noisy reading for one pooled quantity y >= 0.  Zero stays exactly zero."""
    if y < 0:
        raise ValueError("pooled quantity must be non-negative")
    if y == 0.0:
        return 0.0
    z = y * float(noise.sample(rng))
    if z < MEASUREMENT_FLOOR:
        logger.warning("reading %.3e underflowed the measurement floor; clamped to 0", z)
        return 0.0
    return z


def apply_noise_vec(y: np.ndarray, noise: NoiseModel, rng: np.random.Generator) -> np.ndarray:
    """Vector version of apply_noise.

    Draws exactly len(y) noise factors (one physical measurement per entry,
    whatever its value), then zeroes the entries where y == 0.
    """
    y = np.asarray(y, dtype=float)
    if np.any(y < 0):
        raise ValueError("pooled quantities must be non-negative")
    z = y * noise.sample(rng, y.shape[0])
    tiny = (z > 0.0) & (z < MEASUREMENT_FLOOR)
    if np.any(tiny):
        logger.warning("%d readings underflowed the measurement floor; clamped to 0", int(tiny.sum()))
        z[tiny] = 0.0
    z[y == 0.0] = 0.0
    return z


# ---------------------------------------------------------------------------
# signals


@dataclass(frozen=True)
class Signal:
    """A length-n non-negative vector plus its support (indices of positives)."""

    values: np.ndarray
    support: tuple[int, ...] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if np.any(values < 0):
            raise ValueError("signal values must be non-negative")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        support = tuple(int(j) for j in np.flatnonzero(values > 0))
        if self.support is not None and tuple(self.support) != support:
            raise ValueError("declared support does not match the positive entries")
        object.__setattr__(self, "support", support)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def k(self) -> int:
        return len(self.support)


@dataclass(frozen=True)
class SignalDistribution:
    """Independent infection with probability p; positive loads follow `law`."""

    n: int
    p: float
    law: LoadLaw = UniformLoad()

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not (0.0 <= self.p <= 1.0):
            raise ValueError("p must lie in [0, 1]")


def generate_signal(dist: SignalDistribution, rng: np.random.Generator) -> Signal:
    """Draw one signal: Bernoulli(p) support, then iid loads on the support."""
    mask = rng.random(dist.n) < dist.p
    values = np.zeros(dist.n)
    k = int(mask.sum())
    if k:
        values[mask] = dist.law.sample(rng, k)
    return Signal(values)


def generate_signal_fixed_k(
    n: int, k: int, law: LoadLaw, rng: np.random.Generator
) -> Signal:
    """Draw a signal with exactly k positives at uniformly random positions."""
    if not (0 <= k <= n):
        raise ValueError(f"need 0 <= k <= n, got k={k}, n={n}")
    values = np.zeros(n)
    if k:
        support = rng.choice(n, size=k, replace=False)
        values[support] = law.sample(rng, k)
    return Signal(values)


# ---------------------------------------------------------------------------
# cycle-count conversions


@dataclass(frozen=True)
class QpcrParams:
    """Amplification model: a load x crosses threshold after C(x) cycles.

    One cycle multiplies the quantity by b, so C(x) = log_b(d_min / x) with
    d_min the detectable quantity, and a +/- delta cycle read-off error maps
    to a multiplicative b**delta on the reconstructed quantity.
    """

    b: float = 1.95
    d_min: float = 1.0
    c_max: int = 50
    sigma_delta: float = 0.1

    def __post_init__(self):
        if self.b <= 1.0:
            raise ValueError("amplification base b must exceed 1")
        if self.d_min <= 0:
            raise ValueError("d_min must be positive")
        if self.c_max < 1:
            raise ValueError("c_max must be a positive cycle count")
        if self.sigma_delta < 0:
            raise ValueError("sigma_delta must be non-negative")

    def noise_model(self, mu_eps: float = 0.0) -> NoiseModel:
        """Log-normal noise equivalent to a N(0, sigma_delta^2) cycle error."""
        return NoiseModel(sigma_eps=self.sigma_delta * math.log(self.b), mu_eps=mu_eps)


def cycle_to_measurement(c: float, params: QpcrParams) -> float:
    """Reconstructed quantity for a threshold cycle c, 0 < c <= c_max."""
    if c <= 0:
        raise ValueError("cycle count must be positive")
    if c > params.c_max:
        raise BelowDetection(f"cycle {c} exceeds c_max={params.c_max}; report the test negative")
    return params.d_min * params.b ** (-c)


def measurement_to_cycle(z: float, params: QpcrParams) -> float:
    """Threshold cycle that reconstructs to quantity z > 0."""
    if z <= 0:
        raise ValueError("measurement must be positive to have a cycle count")
    return math.log(params.d_min / z) / math.log(params.b)
