"""Offspring and motion distributions.

Construction and sampling of critical offspring laws (finite tables and the
heavy-tail family with generating function s + (1-s)^(1+beta)/2), their
size-biased companions, and the three motion laws used by the simulator:
standard Gaussian increments, finite-range symmetric lattice kernels, and
isotropic alpha-stable jumps.  Exact small-n oracles for ball probabilities
of the corresponding random walks live here too, since every estimator
validates against them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, signal, special, stats


class LawError(ValueError):
    """A distribution parameter or invariant is violated."""


class NoOracleError(Exception):
    """No exact oracle exists for the requested (motion, n) combination.

    Distinct from a computation failure: the caller may fall back to Monte
    Carlo.
    """


_NORM_TOL = 1e-12


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Ball:
    """Closed euclidean ball."""

    center: tuple[float, ...]
    radius: float

    def __post_init__(self):
        if self.radius < 0:
            raise LawError("ball radius must be nonnegative")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def center_array(self) -> np.ndarray:
        return np.asarray(self.center, dtype=float)

    def volume(self) -> float:
        d = self.dim
        return math.pi ** (d / 2) / math.gamma(d / 2 + 1) * self.radius ** d

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Vectorized closed-ball membership for an (m, d) array."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        dist2 = np.einsum("ij,ij->i", pts - self.center_array, pts - self.center_array)
        return dist2 <= self.radius * self.radius

    def lattice_points(self) -> np.ndarray:
        """All points of Z^d inside the ball, as an (m, d) int array."""
        c = self.center_array
        lo = np.floor(c - self.radius).astype(int)
        hi = np.ceil(c + self.radius).astype(int)
        axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dim)
        return grid[self.contains(grid)]

    def shifted(self, x) -> "Ball":
        return Ball(tuple(self.center_array - np.asarray(x, dtype=float)), self.radius)


# ---------------------------------------------------------------------------
# offspring laws
# ---------------------------------------------------------------------------

_DRAW_CLAMP = 2 ** 62


class _SeriesTail:
    """Exact tail sampler for binomial-series offspring laws.

    For the family with generating function s + (1-s)^(1+beta)/2 the
    survival function has a closed form in gamma functions,
        P(X > m) = Gamma(m - beta) / (2 Gamma(m+1) |Gamma(-beta)|),
    and for its size-biased companion
        P(X > m) = (1+beta) Gamma(m - beta) / (2 Gamma(m) Gamma(1-beta)),
    both exact for every m >= 1.  Tail draws are inverse-CDF by bisection
    on the closed form conditioned on exceeding the tabled range: no
    truncation, no materialized arrays.  Draws are clamped at 2**62 to stay
    within int64; the clamp event has probability below 1e-9 per tail draw
    and every consumer caps work far earlier.
    """

    def __init__(self, k_end: int, beta: float, biased: bool):
        self.k_end = k_end
        self.beta = beta
        self.biased = biased
        # math.lgamma returns log |Gamma|, so negative arguments are fine
        if biased:
            self._log_c = (math.log((1.0 + beta) / 2.0)
                           - math.lgamma(1.0 - beta))
        else:
            self._log_c = -math.log(2.0) - math.lgamma(-beta)
        self._log_s_end = self.log_survival(k_end)

    def log_survival(self, m: int) -> float:
        if self.biased:
            return self._log_c + math.lgamma(m - self.beta) - math.lgamma(m)
        return self._log_c + math.lgamma(m - self.beta) - math.lgamma(m + 1)

    def sample(self, v: float) -> int:
        """Smallest m > table end with P(X > m)/P(X > end) <= v."""
        target = self._log_s_end + math.log(max(v, 1e-300))
        lo, hi = self.k_end, 2 * self.k_end
        while self.log_survival(hi) > target:
            lo, hi = hi, hi * 2
            if hi >= _DRAW_CLAMP:
                return _DRAW_CLAMP
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if self.log_survival(mid) > target:
                lo = mid
            else:
                hi = mid
        return hi


@dataclass
class OffspringLaw:
    """Critical reproduction distribution mu, tabled with an optional exact tail.

    ``probs[k]`` is mu(k) for tabled k; ``tail_mass`` is the analytic
    P(N > table end) and is sampled exactly through ``tail_sampler``.
    """

    probs: np.ndarray
    tail_mass: float = 0.0
    variance: float = 1.0
    name: str = "table"
    beta: float | None = None
    moment_gamma: tuple[tuple[float, float], ...] = ()
    tail_sampler: _SeriesTail | None = field(default=None, repr=False)
    _cdf: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if np.any(p < -_NORM_TOL):
            raise LawError("offspring probabilities must be nonnegative")
        total = p.sum() + self.tail_mass
        if abs(total - 1.0) > _NORM_TOL:
            raise LawError(f"offspring pmf sums to {total}, not 1")
        self.probs = np.clip(p, 0.0, None)
        self._cdf = np.cumsum(self.probs)

    def pgf(self, s: float) -> float:
        """Probability generating function E[s^N].

        Closed form for the beta family (the table is only its head); plain
        polynomial evaluation for finite tables.
        """
        if self.beta is not None:
            return float(s + 0.5 * (1.0 - s) ** (1.0 + self.beta))
        return float(np.polyval(self.probs[::-1], s))

    @property
    def mean(self) -> float:
        k = np.arange(len(self.probs))
        return float(k @ self.probs) + self._tail_first_moment()

    def _tail_first_moment(self) -> float:
        # for the beta family the full first moment is exactly 1 (criticality),
        # so the tail's share is 1 minus the tabled part
        if self.tail_mass == 0.0:
            return 0.0
        k = np.arange(len(self.probs))
        return 1.0 - float(k @ self.probs)

    def require_critical(self):
        if abs(self.mean - 1.0) > 1e-9:
            raise LawError(f"law is not critical: mean = {self.mean}")

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Vectorized inverse-CDF draw of `size` offspring counts."""
        u = rng.random(size)
        out = np.searchsorted(self._cdf, u, side="right").astype(np.int64)
        if self.tail_mass > 0.0:
            overflow = np.nonzero(out >= len(self.probs))[0]
            for i in overflow:
                v = 1.0 - (u[i] - self._cdf[-1]) / self.tail_mass
                out[i] = self.tail_sampler.sample(v)
        return out


@dataclass
class SizeBiasedLaw(OffspringLaw):
    """nu(k) = k mu(k); the reproduction law along the spine."""

    name: str = "size-biased"

    def require_critical(self):  # size-biased law has mean 1 + sigma^2, not 1
        raise LawError("size-biased laws are not critical by construction")

    def pgf(self, s: float) -> float:
        raise LawError("size-biased laws do not expose a generating function")


def _beta_series_coeffs(beta: float, k_max: int) -> np.ndarray:
    """Coefficients a_k of (1-s)^(1+beta) = sum a_k (-s)^k... expanded with signs.

    Returns a_k such that (1-s)^(1+beta) = sum_k a_k s^k; a_k >= 0 for k >= 2.
    """
    gamma = 1.0 + beta
    ks = np.arange(1, k_max + 1, dtype=float)
    factors = (ks - 1.0 - gamma) / ks
    a = np.empty(k_max + 1)
    a[0] = 1.0
    a[1:] = np.cumprod(factors)
    return a


def make_beta_offspring(beta: float, k_max: int = 10 ** 6) -> OffspringLaw:
    """Critical offspring law with generating function s + (1-s)^(1+beta)/2.

    beta = 1 gives the binary critical law mu(0) = mu(2) = 1/2.  For
    beta < 1 the pmf has a k^(-2-beta) tail: the table holds the first
    ``k_max`` entries exactly (binomial-series recursion) and the remaining
    mass is carried by an exact block-extended tail sampler, so sampling is
    free of truncation bias.
    """
    if not 0.0 < beta <= 1.0:
        raise LawError(f"beta must lie in (0, 1], got {beta}")
    gamma = 1.0 + beta

    if beta == 1.0:
        probs = np.array([0.5, 0.0, 0.5])
        law = OffspringLaw(probs=probs, variance=1.0, name="binary-critical",
                           beta=1.0)
        law.require_critical()
        return law

    a = _beta_series_coeffs(beta, k_max)
    probs = 0.5 * a
    probs[1] = 1.0 - gamma / 2.0
    tail_mass = max(0.0, 1.0 - float(probs.sum()))
    tail = _SeriesTail(k_end=k_max, beta=beta, biased=False)

    # E[N^(1+g)] for g = beta/2, used by truncation heuristics under heavy tails:
    # tabled part plus the integral remainder of the k^(-2-beta) asymptote.
    g = beta / 2.0
    ks = np.arange(len(probs), dtype=float)
    c_asym = 1.0 / (2.0 * abs(special.gamma(-gamma)))
    tail_moment = c_asym * k_max ** (g - beta) / (beta - g)
    m_g = float(np.sum(ks[1:] ** (1.0 + g) * probs[1:])) + tail_moment

    law = OffspringLaw(
        probs=probs, tail_mass=tail_mass, variance=math.inf,
        name=f"beta-{beta:g}", beta=beta, moment_gamma=((g, m_g),),
        tail_sampler=tail,
    )
    law.require_critical()
    return law


def finite_offspring(probs, name: str = "table") -> OffspringLaw:
    """Offspring law from an explicit finite pmf table (index = count).

    Not required to be critical; callers that need criticality check it.
    Used for deterministic stubs and the supercritical negative control.
    """
    p = np.asarray(probs, dtype=float)
    k = np.arange(len(p))
    mean = float(k @ p)
    var = float(k ** 2 @ p) - mean ** 2
    return OffspringLaw(probs=p, variance=var, name=name)


def size_biased(law: OffspringLaw) -> SizeBiasedLaw:
    """The size-biased companion nu(k) = k mu(k) of a critical law."""
    law.require_critical()
    k = np.arange(len(law.probs), dtype=float)
    nu = k * law.probs
    tail_mass = max(0.0, 1.0 - float(nu.sum()))
    tail = None
    if law.tail_mass > 0.0:
        if law.beta is None:
            raise LawError("heavy-tail size-biasing needs the beta family")
        tail = _SeriesTail(k_end=len(law.probs) - 1, beta=law.beta, biased=True)
    else:
        tail_mass = 0.0
    variance = math.inf
    if math.isfinite(law.variance):
        mean_nu = float(k ** 2 @ law.probs)  # = 1 + sigma^2
        variance = float(k ** 3 @ law.probs) - mean_nu ** 2
    return SizeBiasedLaw(probs=nu, tail_mass=tail_mass, variance=variance,
                         name=f"size-biased({law.name})",
                         beta=law.beta, tail_sampler=tail)


def gw_extinction_iterate(law: OffspringLaw, n: int) -> float:
    """q_n with q_0 = 0 and q_{m+1} = f(q_m); P(Z_n > 0) = 1 - q_n exactly."""
    if n < 0:
        raise LawError("n must be nonnegative")
    q = 0.0
    for _ in range(n):
        q = law.pgf(q)
    return q


def sample_offspring(law: OffspringLaw, rng: np.random.Generator, size: int | None = None):
    out = law.sample(rng, 1 if size is None else size)
    return int(out[0]) if size is None else out


def sample_size_biased(law: SizeBiasedLaw, rng: np.random.Generator, size: int | None = None):
    return sample_offspring(law, rng, size)


# ---------------------------------------------------------------------------
# motion laws
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MotionLaw:
    """One-step displacement law of the particles.

    variant: "gaussian" (standard normal, identity covariance),
    "lattice" (finite-range symmetric kernel on Z^d),
    "stable" (isotropic alpha-stable, characteristic function exp(-|y|^alpha)).
    """

    variant: str
    dim: int
    alpha: float | None = None
    support: np.ndarray | None = None      # lattice only, (m, d) int
    step_probs: np.ndarray | None = None   # lattice only
    covariance: np.ndarray | None = None
    max_jump: float = 0.0                  # lattice reach per step (euclidean)
    name: str = ""

    @property
    def is_lattice(self) -> bool:
        return self.variant == "lattice"

    def spread_scale(self, n: int) -> float:
        """Typical displacement scale after n steps (sqrt(n) or n^(1/alpha))."""
        if self.variant == "stable":
            return float(n) ** (1.0 / self.alpha) if n > 0 else 0.0
        return math.sqrt(max(n, 0))


def gaussian_motion(dim: int) -> MotionLaw:
    if dim < 3:
        raise LawError("Gaussian motion requires dimension >= 3")
    return MotionLaw(variant="gaussian", dim=dim,
                     covariance=np.eye(dim), name=f"gaussian-d{dim}")


def lattice_kernel(support, probs, validate: bool = True) -> MotionLaw:
    """Finite-range lattice kernel from explicit support/probabilities.

    Validation enforces symmetry p(-x) = p(x), normalization, positive
    definite covariance and a verifiable aperiodicity certificate
    (p(0) > 0).  ``validate=False`` exists solely for negative controls.
    """
    sup = np.asarray(support, dtype=np.int64)
    p = np.asarray(probs, dtype=float)
    if sup.ndim != 2 or len(sup) != len(p):
        raise LawError("support must be (m, d) with matching probabilities")
    d = sup.shape[1]
    if validate:
        if abs(p.sum() - 1.0) > _NORM_TOL or np.any(p < 0):
            raise LawError("kernel probabilities must be a pmf")
        table = {tuple(x): w for x, w in zip(sup, p)}
        for x, w in table.items():
            neg = tuple(-c for c in x)
            if neg not in table or abs(table[neg] - w) > _NORM_TOL:
                raise LawError(f"kernel not symmetric at {x}")
        if table.get(tuple([0] * d), 0.0) <= 0.0:
            raise LawError("aperiodicity check requires p(0) > 0 "
                           "(pass validate=False to bypass, e.g. for controls)")
    cov = np.einsum("i,ij,ik->jk", p, sup.astype(float), sup.astype(float))
    if validate:
        eig = np.linalg.eigvalsh(cov)
        if eig.min() <= 0:
            raise LawError("kernel covariance must be positive definite")
    return MotionLaw(variant="lattice", dim=d, support=sup, step_probs=p,
                     covariance=cov, max_jump=float(np.sqrt((sup ** 2).sum(axis=1).max())),
                     name=f"lattice-d{d}")


def lazy_srw(dim: int) -> MotionLaw:
    """Lazy simple random walk: hold with probability 1/2, else uniform neighbor.

    The laziness gives p(0) > 0, hence aperiodicity, which plain SRW lacks.
    """
    if dim < 3:
        raise LawError("lattice motion requires dimension >= 3")
    support = [[0] * dim]
    probs = [0.5]
    for i in range(dim):
        for sgn in (1, -1):
            e = [0] * dim
            e[i] = sgn
            support.append(e)
            probs.append(0.5 / (2 * dim))
    law = lattice_kernel(support, probs)
    return MotionLaw(variant="lattice", dim=dim, support=law.support,
                     step_probs=law.step_probs, covariance=law.covariance,
                     max_jump=1.0, name=f"lazy-srw-d{dim}")


def stable_motion(alpha: float, dim: int) -> MotionLaw:
    if not 0.0 < alpha < 2.0:
        raise LawError(f"alpha must lie in (0, 2), got {alpha}")
    return MotionLaw(variant="stable", dim=dim, alpha=alpha,
                     name=f"stable-a{alpha:g}-d{dim}")


def _positive_stable(a: float, rng: np.random.Generator, size: int) -> np.ndarray:
    """One-sided positive a-stable variates with E[exp(-s W)] = exp(-s^a).

    Kanter's representation, a special case of the Chambers-Mallows-Stuck
    transform for totally skewed stable laws with 0 < a < 1:
        W = A(theta) / E^((1-a)/a),  theta ~ U(0, pi),  E ~ Exp(1),
        A(t) = [sin(a t)^a sin((1-a) t)^(1-a) / sin(t)]^(1/a).
    At a = 1/2 this reduces to the Levy law 1 / (4 cos(t/2)^2 E), matching
    the classical 1/(2 Z^2) with Z standard normal.
    """
    theta = rng.random(size) * math.pi
    e = rng.exponential(size=size)
    log_a = (a * np.log(np.sin(a * theta))
             + (1.0 - a) * np.log(np.sin((1.0 - a) * theta))
             - np.log(np.sin(theta))) / a
    return np.exp(log_a - (1.0 - a) / a * np.log(e))


def sample_step(motion: MotionLaw, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Draw `size` i.i.d. one-step displacements, shape (size, d)."""
    m = 1 if size is None else size
    if motion.variant == "gaussian":
        out = rng.standard_normal((m, motion.dim))
    elif motion.variant == "lattice":
        cdf = np.cumsum(motion.step_probs)
        idx = np.searchsorted(cdf, rng.random(m), side="right")
        out = motion.support[np.minimum(idx, len(cdf) - 1)].astype(float)
    elif motion.variant == "stable":
        # subordination: X = sqrt(2 W) G with W positive (alpha/2)-stable
        # gives E exp(i<y, X>) = E exp(-W |y|^2) = exp(-|y|^alpha).
        w = _positive_stable(motion.alpha / 2.0, rng, m)
        out = np.sqrt(2.0 * w)[:, None] * rng.standard_normal((m, motion.dim))
    else:
        raise LawError(f"unknown motion variant {motion.variant!r}")
    return out[0] if size is None else out


# ---------------------------------------------------------------------------
# exact walk oracles
# ---------------------------------------------------------------------------

N_CONV_MAX = 64


def lattice_pmf(motion: MotionLaw, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact pmf of the n-step lattice walk.

    Returns (array, origin_index): array[idx] = P(S_n = idx - origin_index).
    Computed by FFT convolution with binary doubling; tiny negative FFT
    residues (|.| ~ 1e-16) are clipped and the table renormalized.
    """
    if not motion.is_lattice:
        raise NoOracleError("lattice pmf requires a lattice motion law")
    if n > N_CONV_MAX:
        raise NoOracleError(f"exact convolution supported up to n = {N_CONV_MAX}")
    d = motion.dim
    reach1 = int(np.abs(motion.support).max())
    base = np.zeros((2 * reach1 + 1,) * d)
    origin1 = np.full(d, reach1)
    for x, p in zip(motion.support, motion.step_probs):
        base[tuple(origin1 + x)] += p
    if n == 0:
        out = np.zeros((1,) * d)
        out[(0,) * d] = 1.0
        return out, np.zeros(d, dtype=int)

    def conv(a, b):
        c = signal.fftconvolve(a, b)
        c = np.clip(c, 0.0, None)
        return c / c.sum()

    result = None
    power = base
    k = n
    while k:
        if k & 1:
            result = power if result is None else conv(result, power)
        k >>= 1
        if k:
            power = conv(power, power)
    origin = (np.array(result.shape) - 1) // 2
    return result, origin


def _cauchy_density(dim: int, rho: np.ndarray) -> np.ndarray:
    """Radial profile of the isotropic Cauchy law on R^d (char. fn exp(-|y|))."""
    c = math.gamma((dim + 1) / 2.0) / math.pi ** ((dim + 1) / 2.0)
    return c * (1.0 + rho ** 2) ** (-(dim + 1) / 2.0)


def cauchy_radial_cdf(dim: int, t: float) -> float:
    """P(|X| <= t) for the standard isotropic Cauchy on R^d (closed form d=3)."""
    if dim == 3:
        return (2.0 / math.pi) * (math.atan(t) - t / (1.0 + t * t))
    area = 2.0 * math.pi ** (dim / 2.0) / math.gamma(dim / 2.0)
    val, _ = integrate.quad(lambda r: area * r ** (dim - 1) * _cauchy_density(dim, np.array(r)), 0, t)
    return val


def motion_ball_prob_oracle(motion: MotionLaw, n: int, A: Ball, x) -> float:
    """Exact/numerical P(S_n in A - x) for the n-step walk started at 0.

    Gaussian: noncentral chi-square in closed form.  Lattice: exact
    convolution for n <= N_CONV_MAX.  Stable: alpha = 1 only, quadrature of
    the closed-form Cauchy density (reported accuracy ~1e-9).
    """
    x = np.asarray(x, dtype=float)
    shifted_center = A.center_array - x
    if n == 0:
        return float(np.linalg.norm(-shifted_center) <= A.radius)

    if motion.variant == "gaussian":
        lam = float(shifted_center @ shifted_center) / n
        return float(stats.ncx2.cdf(A.radius ** 2 / n, motion.dim, lam))

    if motion.variant == "lattice":
        pmf, origin = lattice_pmf(motion, n)
        pts = Ball(tuple(shifted_center), A.radius).lattice_points()
        total = 0.0
        for p in pts:
            idx = origin + p
            if np.all(idx >= 0) and np.all(idx < pmf.shape):
                total += pmf[tuple(idx)]
        return float(total)

    if motion.variant == "stable":
        if motion.alpha != 1.0:
            raise NoOracleError("stable oracle available only for alpha = 1")
        # S_n / n is standard Cauchy by stability
        a = float(np.linalg.norm(shifted_center)) / n
        rho = A.radius / n
        if a == 0.0:
            return cauchy_radial_cdf(motion.dim, rho)
        if motion.dim != 3:
            raise NoOracleError("stable oracle implemented for d = 3 only")
        # spherical reduction: integrate the isotropic density over the ball
        val, _ = integrate.dblquad(
            lambda t, s: 2.0 * math.pi * s * s
            * _cauchy_density(3, np.sqrt(a * a + s * s + 2.0 * a * s * t)),
            0.0, rho, -1.0, 1.0)
        return float(val)

    raise NoOracleError(f"no oracle for motion variant {motion.variant!r}")


def walk_tail_prob(motion: MotionLaw, n: int, t: float) -> float:
    """Upper estimate of P(|S_n| > t), used to bound window-truncation bias."""
    if t <= 0:
        return 1.0
    if motion.variant == "gaussian":
        return float(stats.chi2.sf(t * t / max(n, 1), motion.dim))
    if motion.variant == "lattice":
        return 0.0 if t >= motion.max_jump * n else 1.0
    if motion.variant == "stable":
        scaled = t / motion.spread_scale(max(n, 1))
        if motion.alpha == 1.0:
            return 1.0 - cauchy_radial_cdf(motion.dim, scaled)
        # one-jump-dominance estimate c t^-alpha capped at 1
        return min(1.0, scaled ** (-motion.alpha))
    raise LawError(f"unknown motion variant {motion.variant!r}")


# ---------------------------------------------------------------------------
# hypothesis pairing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HypothesisTag:
    """Which of the three standing hypotheses a (offspring, motion) pair targets.

    H1: Gaussian motion, d >= 3, finite offspring variance.
    H2: symmetric aperiodic finite-range lattice motion, d >= 3, finite variance.
    H3: isotropic alpha-stable motion, heavy-tail offspring with finite
        (1+gamma)-moments for all gamma < beta, and d > alpha/beta.
    """

    name: str
    beta: float | None = None

    def validate(self, offspring: OffspringLaw, motion: MotionLaw):
        if self.name == "H1":
            if motion.variant != "gaussian":
                raise LawError("H1 requires Gaussian motion")
            if motion.dim < 3:
                raise LawError("H1 requires d >= 3")
            if not math.isfinite(offspring.variance):
                raise LawError("H1 requires finite offspring variance")
        elif self.name == "H2":
            if motion.variant != "lattice":
                raise LawError("H2 requires a lattice motion law")
            if motion.dim < 3:
                raise LawError("H2 requires d >= 3")
            if not math.isfinite(offspring.variance):
                raise LawError("H2 requires finite offspring variance")
        elif self.name == "H3":
            if motion.variant != "stable":
                raise LawError("H3 requires stable motion")
            beta = self.beta if self.beta is not None else offspring.beta
            if beta is None:
                raise LawError("H3 requires a beta-family offspring law")
            if motion.dim <= motion.alpha / beta:
                raise LawError(
                    f"H3 requires d > alpha/beta: d={motion.dim}, "
                    f"alpha/beta={motion.alpha / beta:g}")
        else:
            raise LawError(f"unknown hypothesis {self.name!r}")


@dataclass(frozen=True)
class LawBundle:
    """The (offspring, size-biased, motion) triple every simulation consumes."""

    offspring: OffspringLaw
    motion: MotionLaw
    hypothesis: HypothesisTag

    def __post_init__(self):
        self.hypothesis.validate(self.offspring, self.motion)

    @property
    def size_biased(self) -> SizeBiasedLaw:
        cached = getattr(self, "_sb_cache", None)
        if cached is None:
            cached = size_biased(self.offspring)
            object.__setattr__(self, "_sb_cache", cached)
        return cached

    @property
    def dim(self) -> int:
        return self.motion.dim


def offspring_from_spec(spec: dict) -> OffspringLaw:
    """Build an offspring law from config keys {family, beta | pmf}."""
    family = spec.get("family", "beta")
    if family == "beta":
        return make_beta_offspring(float(spec.get("beta", 1.0)),
                                   k_max=int(spec.get("k_max_table", 10 ** 6)))
    if family == "table":
        law = finite_offspring(spec["pmf"], name="config-table")
        law.require_critical()
        return law
    raise LawError(f"unknown offspring family {family!r}")


def motion_from_spec(spec: dict) -> MotionLaw:
    kind = spec.get("motion", "gaussian")
    d = int(spec.get("dimension", 3))
    if kind == "gaussian":
        return gaussian_motion(d)
    if kind == "lazy_srw":
        return lazy_srw(d)
    if kind == "lattice":
        return lattice_kernel(spec["support"], spec["probs"])
    if kind == "stable":
        return stable_motion(float(spec.get("alpha", 1.0)), d)
    raise LawError(f"unknown motion {kind!r}")
