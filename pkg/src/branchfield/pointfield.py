"""Point configurations, Poisson fields, and field-level branching.

A configuration is a finite multiset of points together with the window on
which it faithfully represents the (conceptually infinite) field.  Fields
are branched forward by running an independent critical tree from every
point and overlaying the generation-n populations; the window precondition
guarantees nothing outside the window could have reached the observation
ball, so the truncation bias is either zero (lattice, finite range) or a
quantified tail bound carried in the output metadata.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from ._results import EstimatorResult, from_samples
from .branching import Generations, step_generation
from .laws import Ball, LawBundle, MotionLaw, walk_tail_prob


class WindowError(ValueError):
    """The configuration window cannot support the requested operation."""


@dataclass(frozen=True)
class Window:
    """Region on which a configuration is faithful: box [-L, L]^d or ball.

    ``lattice`` restricts points to Z^d.  ``center`` shifts the region;
    stock fields are built at the origin, but restricting a branched field
    to an observation ball yields an off-center ball window.
    """

    shape: str
    half_width: float
    dim: int
    lattice: bool = False
    center: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.shape not in ("box", "ball"):
            raise WindowError(f"unknown window shape {self.shape!r}")
        if self.half_width <= 0:
            raise WindowError("window size must be positive")

    @property
    def center_array(self) -> np.ndarray:
        if self.center is None:
            return np.zeros(self.dim)
        return np.asarray(self.center, dtype=float)

    def volume(self) -> float:
        if self.shape == "box":
            return (2.0 * self.half_width) ** self.dim
        return Ball(tuple(self.center_array), self.half_width).volume()

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points) - self.center_array
        if self.shape == "box":
            return np.all(np.abs(pts) <= self.half_width, axis=1)
        return np.einsum("ij,ij->i", pts, pts) <= self.half_width ** 2

    def lattice_sites(self) -> np.ndarray:
        if not self.lattice:
            raise WindowError("continuum window has no lattice sites")
        c = self.center_array
        lo = np.floor(c - self.half_width).astype(int)
        hi = np.ceil(c + self.half_width).astype(int)
        axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        grid = grid.reshape(-1, self.dim)
        return grid[self.contains(grid)]

    def covers_radius(self, radius: float) -> bool:
        """Does the window contain the origin-centered ball of this radius."""
        if self.center is not None and np.any(self.center_array != 0.0):
            return False
        return self.half_width >= radius


@dataclass
class PointConfiguration:
    """Finite multiset of points in R^d with its validity window.

    Multiplicity is encoded by repeated rows, so every functional below is
    automatically multiplicity-aware.
    """

    points: np.ndarray
    window: Window
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2:
            pts = pts.reshape(-1, self.window.dim)
        self.points = pts

    def __len__(self) -> int:
        return len(self.points)

    def count_in(self, A: Ball) -> int:
        if not len(self.points):
            return 0
        return int(A.contains(self.points).sum())

    def restrict(self, A: Ball) -> "PointConfiguration":
        keep = A.contains(self.points) if len(self.points) else np.zeros(0, bool)
        win = Window(shape="ball", half_width=max(A.radius, 1e-12),
                     dim=self.window.dim, lattice=self.window.lattice,
                     center=A.center)
        return PointConfiguration(points=self.points[keep], window=win,
                                  meta=dict(self.meta))

    def overlay(self, other: "PointConfiguration") -> "PointConfiguration":
        if self.window != other.window:
            raise WindowError("can only overlay configurations on equal windows")
        return PointConfiguration(
            points=np.vstack([self.points, other.points]),
            window=self.window, meta={**other.meta, **self.meta})

    def to_csv(self, path: str):
        """One row per point (repeated rows carry multiplicity)."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"x_{i + 1}" for i in range(self.window.dim)])
            writer.writerows(self.points.tolist())


@dataclass(frozen=True)
class PoissonFieldSpec:
    """Initial Poisson field: constant intensity or mixed by a random level.

    ``intensity`` is the constant theta; ``level_sampler``, when given,
    draws the random level X once per realization and the field is Poisson
    with intensity X conditionally (theta is ignored in that case).
    ``lattice`` selects per-site Poisson counts on Z^d instead of a
    continuum Poisson process.
    """

    intensity: float = 1.0
    level_sampler: Callable[[np.random.Generator], float] | None = None
    lattice: bool = False

    def __post_init__(self):
        if self.intensity < 0:
            raise ValueError("intensity must be nonnegative")

    def draw_level(self, rng: np.random.Generator) -> float:
        if self.level_sampler is None:
            return self.intensity
        x = float(self.level_sampler(rng))
        if x < 0 or not math.isfinite(x):
            raise ValueError(f"level sampler produced {x}")
        return x


def _uniform_in_window(window: Window, rng: np.random.Generator, m: int) -> np.ndarray:
    if window.shape == "box":
        pts = rng.uniform(-window.half_width, window.half_width,
                          size=(m, window.dim))
    else:
        g = rng.standard_normal((m, window.dim))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        radii = window.half_width * rng.random(m) ** (1.0 / window.dim)
        pts = g * radii[:, None]
    return pts + window.center_array


def sample_poisson_field(spec: PoissonFieldSpec, window: Window,
                         rng: np.random.Generator) -> PointConfiguration:
    """Draw one Poisson field realization on the window.

    Continuum: Poisson(theta * volume) points placed uniformly.  Lattice:
    i.i.d. Poisson(theta) counts per site of Z^d in the window.  Mixed: the
    level X is drawn once, then the conditional field.
    """
    if spec.lattice != window.lattice:
        raise WindowError("field spec and window disagree about the lattice")
    theta = spec.draw_level(rng)
    meta = {"intensity_level": theta}
    if theta == 0.0:
        return PointConfiguration(points=np.empty((0, window.dim)),
                                  window=window, meta=meta)
    if spec.lattice:
        sites = window.lattice_sites()
        counts = rng.poisson(theta, size=len(sites))
        pts = np.repeat(sites, counts, axis=0).astype(float)
    else:
        m = rng.poisson(theta * window.volume())
        pts = _uniform_in_window(window, rng, m)
    return PointConfiguration(points=pts, window=window, meta=meta)


# ---------------------------------------------------------------------------
# branching a field forward
# ---------------------------------------------------------------------------

DEFAULT_WINDOW_FACTOR = 6.0


def required_window_radius(motion: MotionLaw, n: int, A: Ball,
                           factor: float = DEFAULT_WINDOW_FACTOR) -> tuple[float, float]:
    """Window radius needed to branch toward observation ball A at horizon n.

    Returns (radius, tail_factor): points beyond the radius contribute
    expected count at most ``intensity * |A| * tail_factor`` to A, which is
    exactly zero for finite-range lattice motion and a quantified Gaussian
    or stable tail otherwise.
    """
    offset = float(np.linalg.norm(A.center_array))
    if motion.is_lattice:
        return offset + A.radius + motion.max_jump * n, 0.0
    reach = factor * motion.spread_scale(n)
    radius = offset + A.radius + reach
    tail = walk_tail_prob(motion, n, reach)
    return radius, tail


def branch_field(config: PointConfiguration, n: int, bundle: LawBundle,
                 rng: np.random.Generator,
                 observation: Ball | None = None,
                 window_factor: float = DEFAULT_WINDOW_FACTOR,
                 particle_cap: int = 10 ** 7) -> PointConfiguration:
    """Branch an entire field forward n generations.

    Every input point founds an independent critical tree; the output
    overlays the generation-n populations.  When an observation ball is
    given, the window must be large enough that particles outside it could
    not land in the ball (exact reach for lattice motion, a logged tail
    bound otherwise), and the output is restricted to the ball.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    if observation is not None:
        radius, tail = required_window_radius(bundle.motion, n, observation,
                                              window_factor)
        if not config.window.covers_radius(radius):
            raise WindowError(
                f"window half-width {config.window.half_width} too small for "
                f"horizon {n} toward the observation ball; need >= {radius:.3f}")
    if n == 0:
        out = config if observation is None else config.restrict(observation)
        return out
    state = Generations(positions=config.points,
                        trial=np.zeros(len(config.points), dtype=np.int64),
                        n_trials=1)
    for _ in range(n):
        if state.size == 0:
            break
        state = step_generation(state, bundle.offspring, bundle.motion, rng,
                                particle_cap=particle_cap)
    out = PointConfiguration(points=state.positions, window=config.window,
                             meta=dict(config.meta))
    out.meta["generations"] = config.meta.get("generations", 0) + n
    if observation is not None:
        out = out.restrict(observation)
        if not bundle.motion.is_lattice:
            level = config.meta.get("intensity_level", 1.0)
            out.meta["window_truncation_bias"] = level * observation.volume() * tail
    return out


# ---------------------------------------------------------------------------
# functionals
# ---------------------------------------------------------------------------

def integrate(f: Callable[[np.ndarray], np.ndarray],
              config: PointConfiguration) -> float:
    """Sum of f over the configuration points, multiplicities included."""
    if not len(config.points):
        return 0.0
    return float(f(config.points).sum())


def laplace_point(f: Callable[[np.ndarray], np.ndarray],
                  config: PointConfiguration) -> float:
    return math.exp(-integrate(f, config))


def laplace_functional_mc(sampler: Callable[[np.random.Generator], PointConfiguration],
                          f: Callable[[np.ndarray], np.ndarray],
                          trials: int, rng: np.random.Generator,
                          ci_level: float = 0.999) -> EstimatorResult:
    """Monte Carlo estimate of E[exp(-integral of f against the field)]."""
    if trials < 2:
        raise ValueError("need at least two trials")
    vals = np.empty(trials)
    bias = 0.0
    for i in range(trials):
        config = sampler(rng)
        vals[i] = laplace_point(f, config)
        bias = max(bias, config.meta.get("window_truncation_bias", 0.0))
    res = from_samples(vals, ci_level=ci_level)
    if bias:
        res.metadata["window_truncation_bias"] = bias
    return res


def count_statistics(config: PointConfiguration, balls: list[Ball]) -> list[int]:
    return [config.count_in(A) for A in balls]
