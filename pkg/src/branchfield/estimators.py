"""Monte Carlo estimators for survival probabilities and intensity integrals.

Three independent routes lead to the intensity integral of the limit
process on a ball: the backward spine representation (estimate_I), the
rescaled survival probability (estimate_survival at large horizon), and
the spatial sum of survival indicators (lattice_intensity_sum and its
continuum twin).  The verification layer leans on their agreement, so the
estimators here are written to be honest about every truncation: spine
depth, work budgets, window sizes, and quadrature grids all surface as
bias entries in the result metadata instead of disappearing into defaults.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
from scipy import special, stats

from ._parallel import map_chunks
from ._results import EstimatorResult
from .branching import TestFunction, run_to_horizon, sample_spine
from .laws import (Ball, LawBundle, MotionLaw, NoOracleError,
                   gw_extinction_iterate, motion_ball_prob_oracle, sample_step)
from .pointfield import PointConfiguration, Window, required_window_radius


class DomainError(ValueError):
    """An estimator was asked for a point or regime outside its contract."""


class ConfigError(ValueError):
    """The requested configuration cannot be satisfied."""


class ResourceError(RuntimeError):
    """An effort bound was exhausted before the estimator could finish."""

    def __init__(self, message: str, acceptance_rate: float | None = None):
        super().__init__(message)
        self.acceptance_rate = acceptance_rate


# ---------------------------------------------------------------------------
# analytic constants
# ---------------------------------------------------------------------------

def _sphere_surface(d: int) -> float:
    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)


def ball_prob_constant(motion: MotionLaw, A: Ball) -> float:
    """Constant c with P(S_n in A - x) <= c |A| / n^{d/2} (or n^{d/alpha}).

    Gaussian and stable motions admit exact density bounds: the n-step
    density is bounded by its value at zero, giving (2 pi)^{-d/2} and the
    closed-form stable peak respectively.  Lattice kernels have no such
    closed form, so the constant is fitted as the supremum of the exact
    rescaled ball probabilities over a horizon grid, then merged with the
    local limit asymptote and inflated by 5 percent.
    """
    d = motion.dim
    if motion.variant == "gaussian":
        return (2.0 * math.pi) ** (-d / 2.0)
    if motion.variant == "stable":
        # peak of the isotropic alpha-stable density via its Fourier integral
        return ((2.0 * math.pi) ** (-d) * _sphere_surface(d)
                * math.gamma(d / motion.alpha) / motion.alpha)
    if motion.variant == "lattice":
        from .laws import lattice_pmf

        sites = A.lattice_points()
        n_sites = max(len(sites), 1)
        best = 0.0
        for n in (1, 2, 3, 4, 6, 8, 12, 16, 24, 32, 48, 64):
            pmf, origin = lattice_pmf(motion, n)
            # the sup over x of P(S_n in A - x) is attained with the ball
            # aligned on the mode at the origin; scan a small neighborhood
            for shift in sites[np.einsum("ij,ij->i", sites, sites) <= 4]:
                total = 0.0
                for p in sites:
                    idx = origin + p - shift
                    if np.all(idx >= 0) and np.all(idx < pmf.shape):
                        total += pmf[tuple(idx)]
                best = max(best, n ** (d / 2.0) * total / n_sites)
        cov_per_axis = float(np.trace(motion.covariance)) / d
        asymptote = (2.0 * math.pi * cov_per_axis) ** (-d / 2.0)
        return 1.05 * max(best, asymptote)
    raise DomainError(f"no ball-probability constant for {motion.variant!r}")


def region_measure(motion: MotionLaw, A: Ball) -> float:
    """|A| in the sense matching the motion: volume, or lattice site count."""
    if motion.is_lattice:
        return float(len(A.lattice_points()))
    return A.volume()


def spine_tail_bound(bundle: LawBundle, A: Ball, K: int) -> float:
    """Bias bound for truncating the backward sums at spine depth K.

    Finite-variance motions: sigma^2 |A| c Sum_{k>K} (2k)^{-d/2}, with the
    Hurwitz zeta giving the exact tail.  Heavy-tail offspring (stable
    regime) additionally exploit that a level contributes only when a
    sibling subtree survives k-1 generations, whose probability the
    extinction iteration yields exactly; without that factor the bound
    diverges whenever d <= 2 alpha / beta.
    """
    motion = bundle.motion
    d = motion.dim
    measure = region_measure(motion, A)
    c = ball_prob_constant(motion, A)
    if math.isfinite(bundle.offspring.variance):
        s = d / 2.0
        tail = float(special.zeta(s, K + 1))
        return bundle.offspring.variance * measure * c * 2.0 ** (-s) * tail
    if not bundle.offspring.moment_gamma:
        raise DomainError("heavy-tail law without a stored fractional moment")
    gamma_exp, m_gamma = bundle.offspring.moment_gamma[0]
    alpha = motion.alpha
    walk_exp = d * gamma_exp / alpha
    total = 0.0
    q = gw_extinction_iterate(bundle.offspring, K)  # q_{k-1} at first term
    k = K + 1
    while True:
        term = (m_gamma * (c * measure) ** gamma_exp
                * (2.0 * k) ** (-walk_exp)
                * (1.0 - q) ** (1.0 - gamma_exp))
        total += term
        if term < 1e-12 * max(total, 1e-12) or k > 10 ** 6:
            break
        q = bundle.offspring.pgf(q)
        k += 1
    return total


def default_depth_cap(bundle: LawBundle) -> int:
    """Affordability cap on the spine depth.

    Spine cost grows like K^2, and for finite-variance offspring in d = 3
    the tail bound only decays like K^{-1/2}, so chasing a small relative
    bias is futile; the cap keeps runs cheap and the residual bound is
    always reported alongside the estimate.  Heavy-tail offspring have a
    faster-decaying depth tail, but each extra level multiplies the chance
    of busting the per-level work budget (brood sizes have infinite mean,
    and level k costs about brood * k steps), so depth is capped harder:
    past ~32 levels the work-truncation bias grows faster than the depth
    tail shrinks.
    """
    return 64 if math.isfinite(bundle.offspring.variance) else 32


def choose_spine_depth(bundle: LawBundle, A: Ball, reference: float,
                       rel_tol: float = 0.01,
                       k_cap: int | None = None) -> int:
    """Smallest K whose truncation bias bound is below rel_tol * reference.

    When no depth up to the cap achieves the tolerance the cap itself is
    returned; callers see the actual bound in the estimate metadata.
    """
    if reference <= 0:
        raise DomainError("reference scale for the depth rule must be positive")
    if k_cap is None:
        k_cap = default_depth_cap(bundle)
    if spine_tail_bound(bundle, A, k_cap) >= rel_tol * reference:
        return k_cap
    K = 4
    while K < k_cap and spine_tail_bound(bundle, A, K) >= rel_tol * reference:
        K *= 2
    K = min(K, k_cap)
    lo, hi = K // 2, K
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if spine_tail_bound(bundle, A, mid) < rel_tol * reference:
            hi = mid
        else:
            lo = mid
    return hi


def sandwich_constant(bundle: LawBundle, A: Ball) -> float:
    """C with P(survival into A) >= (spine ball probability) / C."""
    if not math.isfinite(bundle.offspring.variance):
        raise DomainError("the sandwich constant needs finite offspring variance")
    d = bundle.motion.dim
    c = ball_prob_constant(bundle.motion, A)
    measure = region_measure(bundle.motion, A)
    return 1.0 + bundle.offspring.variance * measure * c * float(special.zeta(d / 2.0))


# ---------------------------------------------------------------------------
# survival estimation
# ---------------------------------------------------------------------------

def _wilson(successes: int, trials: int, ci_level: float) -> tuple[float, float, float]:
    z = float(stats.norm.ppf(0.5 + ci_level / 2.0))
    p = successes / trials
    denom = 1.0 + z * z / trials
    center = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    # the exact interval lies inside [0, 1]; round-off at the boundary
    # cases (0 or all successes) can poke a few ulp outside, so trim
    half = min(half, center, 1.0 - center)
    return center, half, z


def _binomial_result(successes: int, trials: int, ci_level: float,
                     metadata: dict) -> EstimatorResult:
    center, half, z = _wilson(successes, trials, ci_level)
    metadata = dict(metadata)
    metadata.update(successes=successes,
                    wilson_interval=[center - half, center + half])
    return EstimatorResult(estimate=successes / trials, std_error=half / z,
                           n_samples=trials, ci_level=ci_level,
                           metadata=metadata)


def _survival_chunk(rng, size, bundle, A, x, n, particle_cap):
    target = A.shifted(x)
    snaps = run_to_horizon(bundle, n, size, rng, particle_cap=particle_cap)
    return int((snaps[n].counts_in_ball(target) >= 1).sum())


def estimate_survival(bundle: LawBundle, A: Ball, x, n: int, trials: int,
                      seed_or_rng, chunk: int = 200_000,
                      ci_level: float = 0.999,
                      particle_cap: int = 10 ** 7,
                      workers: int | None = None) -> EstimatorResult:
    """P(the tree rooted at the origin has a generation-n particle in A - x).

    Bernoulli Monte Carlo with a Wilson interval; the reported std_error is
    the Wilson half-width divided by z so the default CI reproduces the
    Wilson bounds.
    """
    if n < 0 or trials < 1:
        raise DomainError("need n >= 0 and at least one trial")
    x = np.asarray(x, dtype=float)
    meta = {"n": n, "x": x.tolist()}
    if n == 0:
        hit = float(bool(A.shifted(x).contains(np.zeros((1, bundle.dim)))[0]))
        return EstimatorResult(estimate=hit, std_error=0.0, n_samples=trials,
                               ci_level=ci_level, metadata=meta)
    parts = map_chunks(_survival_chunk, trials, chunk, seed_or_rng,
                       "survival", extra=(bundle, A, x, n, particle_cap),
                       workers=workers)
    return _binomial_result(int(sum(parts)), trials, ci_level, meta)


def _profile_chunk(rng, size, bundle, A, xs, ns, particle_cap):
    snaps = run_to_horizon(bundle, max(ns), size, rng, snapshots=ns,
                           particle_cap=particle_cap)
    out = np.zeros((len(ns), len(xs)), dtype=np.int64)
    for i, n in enumerate(ns):
        for j, x in enumerate(xs):
            out[i, j] = int((snaps[n].counts_in_ball(A.shifted(x)) >= 1).sum())
    return out


def survival_profile(bundle: LawBundle, A: Ball, xs, ns, trials: int,
                     seed_or_rng, chunk: int = 200_000,
                     ci_level: float = 0.999,
                     particle_cap: int = 10 ** 7,
                     workers: int | None = None) -> dict[tuple[int, tuple], EstimatorResult]:
    """Survival estimates for a grid of horizons and shifts from one stream.

    All cells share the same simulated trees, so each marginal estimate is
    valid but cells are correlated; ratio tests should use two independent
    profiles.  The sharing is recorded in every cell's metadata.
    """
    ns = sorted(set(int(n) for n in ns))
    xs = [np.asarray(x, dtype=float) for x in xs]
    parts = map_chunks(_profile_chunk, trials, chunk, seed_or_rng,
                       "survival_profile",
                       extra=(bundle, A, xs, ns, particle_cap),
                       workers=workers)
    successes = np.sum(parts, axis=0)
    out = {}
    for i, n in enumerate(ns):
        for j, x in enumerate(xs):
            meta = {"n": n, "x": x.tolist(), "shared_stream": True}
            out[(n, tuple(x.tolist()))] = _binomial_result(
                int(successes[i, j]), trials, ci_level, meta)
    return out


# ---------------------------------------------------------------------------
# backward-tree estimators
# ---------------------------------------------------------------------------

@dataclass
class BackwardTreeParams:
    """Knobs of the spine-based estimators.

    ``K`` is the backward truncation depth; None selects the smallest depth
    whose analytic tail bound is below one percent of a pilot estimate.
    ``h`` is the midpoint-quadrature spacing for continuum intensity
    integrals (default: ball radius / 16).  ``work_budget`` caps the
    particle-steps spent on any single backward level, which keeps the
    heavy-tail regime affordable; overruns zero out that spine and are
    reported, never silently absorbed.
    """

    K: int | None = None
    trials: int = 4000
    h: float | None = None
    work_budget: int = 1_000_000
    chunk: int = 1000

    def __post_init__(self):
        if self.K is not None and self.K < 1:
            raise DomainError("spine depth must be at least 1")
        if self.trials < 2:
            raise DomainError("need at least two spine trials")


@dataclass
class SpinePool:
    """Flattened spine realizations shared across quadrature points."""

    clouds: list[np.ndarray]
    truncated: np.ndarray
    K: int

    @property
    def trials(self) -> int:
        return len(self.clouds)

    @property
    def truncation_rate(self) -> float:
        return float(self.truncated.mean()) if len(self.truncated) else 0.0


def _spine_chunk(rng, size, bundle, K, work_budget, keep_radius):
    clouds = []
    flags = np.zeros(size, dtype=bool)
    for i in range(size):
        real = sample_spine(bundle, K, rng, work_budget_per_level=work_budget,
                            keep_radius=keep_radius)
        flags[i] = bool(real.truncated.any())
        if flags[i]:
            clouds.append(np.empty((0, bundle.dim)))
        else:
            nonempty = [c for c in real.brother_clouds if len(c)]
            clouds.append(np.vstack(nonempty) if nonempty
                          else np.empty((0, bundle.dim)))
    return clouds, flags


def build_spine_pool(bundle: LawBundle, A: Ball, K: int, trials: int,
                     seed_or_rng, work_budget: int = 1_000_000,
                     chunk: int = 1000, workers: int | None = None,
                     op_name: str = "spine_pool") -> SpinePool:
    keep = 2.0 * A.radius + 1e-9
    parts = map_chunks(_spine_chunk, trials, chunk, seed_or_rng, op_name,
                       extra=(bundle, K, work_budget, keep), workers=workers)
    clouds: list[np.ndarray] = []
    flags = []
    for cl, fl in parts:
        clouds.extend(cl)
        flags.append(fl)
    return SpinePool(clouds=clouds, truncated=np.concatenate(flags), K=K)


def _pool_integrand(pool: SpinePool, A: Ball,
                    f: Callable[[np.ndarray], np.ndarray] | None,
                    y: np.ndarray, sign: complex) -> np.ndarray:
    """Per-spine integrand values at a single anchor point y."""
    c = A.center_array
    r2 = A.radius * A.radius
    base_f = float(f(y[None, :])[0]) if f is not None else 0.0
    out = np.zeros(pool.trials, dtype=complex if isinstance(sign, complex)
                   and sign.imag else float)
    for s, cloud in enumerate(pool.clouds):
        if pool.truncated[s]:
            out[s] = 0.0
            continue
        if len(cloud):
            pts = y + cloud
            diff = pts - c
            inside = np.einsum("ij,ij->i", diff, diff) <= r2
            sum_y = float(inside.sum())
            sum_yf = base_f + (float(f(pts[inside]).sum())
                               if f is not None and sum_y else 0.0)
        else:
            sum_y, sum_yf = 0.0, base_f
        out[s] = np.exp(sign * sum_yf) / (1.0 + sum_y)
    return out


def estimate_G(bundle: LawBundle, A: Ball, f: TestFunction | None, y,
               params: BackwardTreeParams, seed_or_rng,
               workers: int | None = None) -> EstimatorResult:
    """Backward-tree weight at anchor y: E[ exp(sign sumYf) / (1 + sumY) ].

    The sign convention follows the function's mode: laplace mode damps
    (weight exp(-sumYf), modulus at most 1), characteristic mode rotates
    (weight exp(i sumYf), complex estimate).
    """
    y = np.asarray(y, dtype=float)
    if not bool(A.contains(y[None, :])[0]):
        raise DomainError(f"anchor {y.tolist()} lies outside the ball")
    K = params.K or choose_spine_depth(bundle, A,
                                       reference=region_measure(bundle.motion, A) / 2.0)
    pool = build_spine_pool(bundle, A, K, params.trials, seed_or_rng,
                            work_budget=params.work_budget,
                            chunk=params.chunk, workers=workers)
    sign: complex = 1j if (f is not None and f.mode == "characteristic") else -1.0
    vals = _pool_integrand(pool, A, f, y, sign)
    n = len(vals)
    est = vals.mean()
    if np.iscomplexobj(vals):
        se = math.sqrt(vals.real.var(ddof=1) + vals.imag.var(ddof=1)) / math.sqrt(n)
        est = complex(est)
    else:
        se = float(vals.std(ddof=1) / math.sqrt(n))
        est = float(est)
    return EstimatorResult(
        estimate=est, std_error=se, n_samples=n,
        metadata={"K": K, "tail_bias_bound": spine_tail_bound(bundle, A, K),
                  "truncation_rate": pool.truncation_rate,
                  "truncation_bias_bound": pool.truncation_rate,
                  "y": y.tolist()})


def _midpoint_grid(A: Ball, h: float) -> np.ndarray:
    g = max(2, int(round(2.0 * A.radius / h)))
    axes = [A.center_array[i] - A.radius + (np.arange(g) + 0.5) * (2 * A.radius / g)
            for i in range(A.dim)]
    nodes = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, A.dim)
    return nodes[A.contains(nodes)]


def _grid_sums(pool: SpinePool, A: Ball, f, nodes: np.ndarray,
               sign: complex) -> np.ndarray:
    """Per-spine sums of the integrand over quadrature nodes (CRN across y)."""
    c = A.center_array
    r2 = A.radius * A.radius
    m = len(nodes)
    f_nodes = f(nodes) if f is not None else np.zeros(m)
    complex_mode = isinstance(sign, complex) and bool(sign.imag)
    out = np.zeros(pool.trials, dtype=complex if complex_mode else float)
    sum_y = np.zeros(m)
    sum_yf = np.zeros(m)
    for s, cloud in enumerate(pool.clouds):
        if pool.truncated[s]:
            out[s] = 0.0
            continue
        if len(cloud):
            sum_y[:] = 0.0
            sum_yf[:] = 0.0
            for d in cloud:
                shifted = nodes + d
                diff = shifted - c
                hit = np.einsum("ij,ij->i", diff, diff) <= r2
                if hit.any():
                    sum_y[hit] += 1.0
                    if f is not None:
                        sum_yf[hit] += f(shifted[hit])
            vals = np.exp(sign * (sum_yf + f_nodes)) / (1.0 + sum_y)
        else:
            vals = np.exp(sign * f_nodes)
        out[s] = vals.sum()
    return out


def estimate_I(bundle: LawBundle, A: Ball, f: TestFunction | None,
               params: BackwardTreeParams, seed_or_rng,
               workers: int | None = None) -> EstimatorResult:
    """Intensity integral of the backward weight over the ball.

    Lattice motion sums the anchor over the exact lattice points of A;
    continuum motions use midpoint quadrature at spacing h with a
    half-resolution pass on the same spine pool, whose difference is the
    reported quadrature error proxy.  One spine pool serves every anchor
    (common random numbers), so per-spine totals are i.i.d. and the SE is
    honest despite the spatial coupling.
    """
    K = params.K
    pilot_meta = {}
    if K is None:
        pilot_params = BackwardTreeParams(K=16, trials=min(params.trials, 800),
                                          work_budget=params.work_budget,
                                          chunk=params.chunk)
        pilot = _estimate_I_fixed(bundle, A, f, pilot_params, seed_or_rng,
                                  workers, op_name="spine_pool_pilot")
        ref = max(abs(pilot.estimate), 0.05 * region_measure(bundle.motion, A))
        K = choose_spine_depth(bundle, A, reference=float(ref))
        pilot_meta = {"pilot_estimate": pilot.estimate, "pilot_K": 16}
    final_params = BackwardTreeParams(K=K, trials=params.trials, h=params.h,
                                      work_budget=params.work_budget,
                                      chunk=params.chunk)
    res = _estimate_I_fixed(bundle, A, f, final_params, seed_or_rng, workers)
    res.metadata.update(pilot_meta)
    return res


def _estimate_I_fixed(bundle, A, f, params, seed_or_rng, workers,
                      op_name: str = "spine_pool") -> EstimatorResult:
    pool = build_spine_pool(bundle, A, params.K, params.trials, seed_or_rng,
                            work_budget=params.work_budget,
                            chunk=params.chunk, workers=workers,
                            op_name=op_name)
    sign: complex = 1j if (f is not None and f.mode == "characteristic") else -1.0
    measure = region_measure(bundle.motion, A)
    meta: dict[str, Any] = {
        "K": params.K,
        "tail_bias_bound": spine_tail_bound(bundle, A, params.K) * measure,
        "truncation_rate": pool.truncation_rate,
    }
    if bundle.motion.is_lattice:
        sites = A.lattice_points().astype(float)
        if not len(sites):
            return EstimatorResult(0.0, 0.0, pool.trials, metadata=meta)
        totals = _grid_sums(pool, A, f, sites, sign)
        meta["lattice_sites"] = len(sites)
        meta["truncation_bias_bound"] = pool.truncation_rate * len(sites)
        weight = 1.0
    else:
        h = params.h or A.radius / 16.0
        nodes = _midpoint_grid(A, h)
        coarse = _midpoint_grid(A, 2.0 * h)
        totals = _grid_sums(pool, A, f, nodes, sign) * (
            A.volume() / len(nodes))
        totals_coarse = _grid_sums(pool, A, f, coarse, sign) * (
            A.volume() / len(coarse))
        meta["h"] = h
        meta["grid_nodes"] = len(nodes)
        meta["quadrature_delta"] = float(abs(totals.mean() - totals_coarse.mean()))
        meta["truncation_bias_bound"] = pool.truncation_rate * A.volume()
        weight = 1.0
    n = len(totals)
    est = totals.mean() * weight
    if np.iscomplexobj(totals):
        se = math.sqrt(totals.real.var(ddof=1)
                       + totals.imag.var(ddof=1)) / math.sqrt(n)
        est = complex(est)
    else:
        se = float(totals.std(ddof=1) / math.sqrt(n))
        est = float(est)
    return EstimatorResult(estimate=est, std_error=se, n_samples=n, metadata=meta)


def estimate_I_difference(bundle: LawBundle, A: Ball, f: TestFunction,
                          params: BackwardTreeParams, seed_or_rng,
                          workers: int | None = None) -> EstimatorResult:
    """I_{A,-f} - I_A from one spine pool (common random numbers).

    The limit-field Laplace identity needs exp(theta * (I_{A,-f} - I_A));
    estimating the difference per spine cancels most of the shared
    variance, and the truncated backward mass largely cancels too (the
    stated bound keeps the full single-route tail, conservatively).
    """
    if f is None:
        raise DomainError("the difference estimator needs a test function")
    K = params.K or choose_spine_depth(
        bundle, A, reference=region_measure(bundle.motion, A) / 2.0)
    pool = build_spine_pool(bundle, A, K, params.trials, seed_or_rng,
                            work_budget=params.work_budget,
                            chunk=params.chunk, workers=workers)
    measure = region_measure(bundle.motion, A)
    if bundle.motion.is_lattice:
        nodes = A.lattice_points().astype(float)
        weight = 1.0
    else:
        h = params.h or A.radius / 16.0
        nodes = _midpoint_grid(A, h)
        weight = A.volume() / len(nodes)
    damped = _grid_sums(pool, A, f, nodes, -1.0) * weight
    plain = _grid_sums(pool, A, None, nodes, -1.0) * weight
    diff = damped - plain
    n = len(diff)
    return EstimatorResult(
        estimate=float(diff.mean()),
        std_error=float(diff.std(ddof=1) / math.sqrt(n)),
        n_samples=n,
        metadata={"K": K,
                  "tail_bias_bound": spine_tail_bound(bundle, A, K) * measure,
                  "truncation_rate": pool.truncation_rate,
                  "truncation_bias_bound": pool.truncation_rate * measure,
                  "i_plain": float(plain.mean()),
                  "i_damped": float(damped.mean())})


# ---------------------------------------------------------------------------
# spatial survival sums
# ---------------------------------------------------------------------------

def _lattice_sum_chunk(rng, size, bundle, A, n, half_width, particle_cap):
    site_offsets = A.lattice_points()
    snaps = run_to_horizon(bundle, n, size, rng, particle_cap=particle_cap)
    state = snaps[n]
    vals = np.zeros(size)
    if state.size:
        order = np.argsort(state.trial, kind="stable")
        trial_sorted = state.trial[order]
        pos_sorted = state.positions[order].astype(np.int64)
        bounds = np.searchsorted(trial_sorted, np.arange(size))
        bounds = np.append(bounds, len(trial_sorted))
        for t in np.unique(trial_sorted):
            rows = pos_sorted[bounds[t]:bounds[t + 1]]
            cands = (site_offsets[None, :, :] - rows[:, None, :]).reshape(-1, A.dim)
            if half_width is not None:
                keep = np.all(np.abs(cands) <= half_width, axis=1)
                cands = cands[keep]
            if len(cands):
                vals[t] = len(np.unique(cands, axis=0))
    return vals.sum(), (vals ** 2).sum(), size


def lattice_intensity_sum(bundle: LawBundle, A: Ball, n: int, trials: int,
                          seed_or_rng, window: Window | None = None,
                          chunk: int = 100_000,
                          particle_cap: int = 10 ** 7,
                          workers: int | None = None) -> EstimatorResult:
    """Sum over lattice sites x of P(Z_n(A - x) >= 1), one tree per sample.

    A single tree decides the survival indicator for every x at once: x
    contributes exactly when some particle lands in A - x, i.e. when x lies
    in the union of the reflected balls around the particles.  Counting
    lattice points of that union per tree gives an unbiased one-shot
    estimate of the whole sum, with no intensity parameter anywhere.
    """
    if not bundle.motion.is_lattice:
        raise DomainError("lattice_intensity_sum needs lattice motion; "
                          "use continuum_intensity_integral instead")
    if n < 0 or trials < 1:
        raise DomainError("need n >= 0 and at least one trial")
    half_width = None
    if window is not None:
        need, _ = required_window_radius(bundle.motion, n, A)
        if not window.covers_radius(need):
            raise ConfigError(
                f"window half-width {window.half_width} truncates the "
                f"intensity sum; need >= {need:.3f}")
        half_width = window.half_width
    if n == 0:
        sites = A.lattice_points()
        if half_width is not None:
            sites = sites[np.all(np.abs(sites) <= half_width, axis=1)]
        return EstimatorResult(float(len(sites)), 0.0, trials,
                               metadata={"n": 0, "exact": True})
    parts = map_chunks(_lattice_sum_chunk, trials, chunk, seed_or_rng,
                       "lattice_intensity_sum",
                       extra=(bundle, A, n, half_width, particle_cap),
                       workers=workers)
    total = sum(p[0] for p in parts)
    total_sq = sum(p[1] for p in parts)
    m = sum(p[2] for p in parts)
    mean = total / m
    var = max(total_sq / m - mean * mean, 0.0) * m / max(m - 1, 1)
    return EstimatorResult(estimate=float(mean),
                           std_error=float(math.sqrt(var / m)),
                           n_samples=m, metadata={"n": n})


def _continuum_chunk(rng, size, bundle, A, n, half_width, particle_cap):
    snaps = run_to_horizon(bundle, n, size, rng, particle_cap=particle_cap)
    state = snaps[n]
    vals = np.zeros(size)
    ball_vol = A.volume()
    c = A.center_array
    r = A.radius
    if state.size:
        order = np.argsort(state.trial, kind="stable")
        trial_sorted = state.trial[order]
        pos_sorted = state.positions[order]
        bounds = np.searchsorted(trial_sorted, np.arange(size))
        bounds = np.append(bounds, len(trial_sorted))
        for t in np.unique(trial_sorted):
            rows = pos_sorted[bounds[t]:bounds[t + 1]]
            centers = c - rows
            probes = centers + sample_step_ball(rng, len(centers), A.dim) * r
            diff = probes[:, None, :] - centers[None, :, :]
            mult = (np.einsum("ijk,ijk->ij", diff, diff) <= r * r).sum(axis=1)
            inv = 1.0 / np.maximum(mult, 1)
            if half_width is not None:
                inv *= np.all(np.abs(probes) <= half_width, axis=1)
            vals[t] = ball_vol * inv.sum()
    return vals.sum(), (vals ** 2).sum(), size


def sample_step_ball(rng: np.random.Generator, m: int, d: int) -> np.ndarray:
    """m uniform points in the unit ball of R^d."""
    g = rng.standard_normal((m, d))
    g /= np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-300)
    return g * rng.random(m)[:, None] ** (1.0 / d)


def continuum_intensity_integral(bundle: LawBundle, A: Ball, n: int,
                                 trials: int, seed_or_rng,
                                 window: Window | None = None,
                                 chunk: int = 100_000,
                                 particle_cap: int = 10 ** 7,
                                 workers: int | None = None) -> EstimatorResult:
    """Integral over x of P(Z_n(A - x) >= 1), continuum motion.

    Per tree, the integral's indicator is the union of congruent balls
    around the particles; its volume is estimated without bias by drawing
    one uniform probe in each ball and weighting by the reciprocal of its
    covering multiplicity.
    """
    if bundle.motion.is_lattice:
        raise DomainError("use lattice_intensity_sum for lattice motion")
    if n < 0 or trials < 1:
        raise DomainError("need n >= 0 and at least one trial")
    half_width = None
    tail_note = {}
    if window is not None:
        if window.shape != "box":
            raise ConfigError("continuum intensity windows must be boxes")
        need, tail = required_window_radius(bundle.motion, n, A)
        if not window.covers_radius(need):
            raise ConfigError(
                f"window half-width {window.half_width} truncates the "
                f"intensity integral; need >= {need:.3f}")
        half_width = window.half_width
        tail_note = {"window_tail_factor": tail}
    if n == 0:
        return EstimatorResult(A.volume(), 0.0, trials,
                               metadata={"n": 0, "exact": True})
    parts = map_chunks(_continuum_chunk, trials, chunk, seed_or_rng,
                       "continuum_intensity",
                       extra=(bundle, A, n, half_width, particle_cap),
                       workers=workers)
    total = sum(p[0] for p in parts)
    total_sq = sum(p[1] for p in parts)
    m = sum(p[2] for p in parts)
    mean = total / m
    var = max(total_sq / m - mean * mean, 0.0) * m / max(m - 1, 1)
    return EstimatorResult(estimate=float(mean),
                           std_error=float(math.sqrt(var / m)),
                           n_samples=m, metadata={"n": n, **tail_note})


# ---------------------------------------------------------------------------
# heavy-tail scaling ratio
# ---------------------------------------------------------------------------

def stable_region_prob(motion: MotionLaw, n: int, region: Ball,
                       rng: np.random.Generator | None = None,
                       mc_draws: int = 10 ** 6) -> tuple[float, float]:
    """P(S_n lands in the region) for stable motion, with its SE (0 if exact).

    Stability collapses the n-step walk to a single rescaled jump, so for
    alpha = 1 the closed-form isotropic Cauchy law applies at every n; other
    alpha fall back to Monte Carlo on a single draw.
    """
    try:
        return motion_ball_prob_oracle(motion, n, region, np.zeros(motion.dim)), 0.0
    except NoOracleError:
        if rng is None:
            rng = np.random.default_rng(0)
        scale = motion.spread_scale(n)
        x = sample_step(motion, rng, mc_draws)
        inside = Ball(tuple(region.center_array / scale),
                      region.radius / scale).contains(x)
        p = float(inside.mean())
        return p, math.sqrt(max(p * (1 - p), 1e-300) / mc_draws)


def _stable_ratio_chunk(rng, size, bundle, A, n, region, probes, particle_cap):
    snaps = run_to_horizon(bundle, n, size, rng, particle_cap=particle_cap)
    state = snaps[n]
    vals = np.zeros(size)
    r2 = A.radius ** 2
    c = A.center_array
    vol_r = region.volume()
    if state.size:
        order = np.argsort(state.trial, kind="stable")
        trial_sorted = state.trial[order]
        pos_sorted = state.positions[order]
        bounds = np.searchsorted(trial_sorted, np.arange(size))
        bounds = np.append(bounds, len(trial_sorted))
        for t in np.unique(trial_sorted):
            rows = pos_sorted[bounds[t]:bounds[t + 1]]
            z = (region.center_array
                 + sample_step_ball(rng, probes, A.dim) * region.radius)
            diff = z[:, None, :] + rows[None, :, :] - c
            covered = (np.einsum("ijk,ijk->ij", diff, diff) <= r2).any(axis=1)
            vals[t] = vol_r * covered.mean()
    return vals.sum(), (vals ** 2).sum(), size


def stable_intensity_ratio(bundle: LawBundle, A: Ball, n: int, x, trials: int,
                           seed_or_rng, region_factor: float = 0.15,
                           probes: int = 32, chunk: int = 100_000,
                           particle_cap: int = 10 ** 7,
                           workers: int | None = None) -> EstimatorResult:
    """Region-averaged rescaled survival around x for heavy-tail motion.

    Pointwise survival probabilities at interesting horizons sit around
    n^{-d/alpha} and are hopeless targets for direct Bernoulli sampling, so
    this estimator integrates the survival probability over a ball R around
    x of radius region_factor * n^{1/alpha} (a scale on which the limit
    profile is flat) and divides by P(S_n in R).  The ratio converges to
    the same intensity integral as the pointwise version, with usable
    variance at desk scale.
    """
    if bundle.motion.variant != "stable":
        raise DomainError("stable_intensity_ratio requires stable motion")
    x = np.asarray(x, dtype=float)
    region = Ball(tuple(x), region_factor * bundle.motion.spread_scale(n))
    denom, denom_se = stable_region_prob(bundle.motion, n, region)
    parts = map_chunks(_stable_ratio_chunk, trials, chunk, seed_or_rng,
                       "stable_ratio",
                       extra=(bundle, A, n, region, probes, particle_cap),
                       workers=workers)
    total = sum(p[0] for p in parts)
    total_sq = sum(p[1] for p in parts)
    m = sum(p[2] for p in parts)
    mean = total / m
    var = max(total_sq / m - mean * mean, 0.0) * m / max(m - 1, 1)
    se_num = math.sqrt(var / m)
    est = mean / denom
    rel = math.sqrt((se_num / mean) ** 2 + (denom_se / denom) ** 2) if mean > 0 else 0.0
    return EstimatorResult(
        estimate=float(est), std_error=float(abs(est) * rel), n_samples=m,
        metadata={"n": n, "x": x.tolist(), "region_radius": region.radius,
                  "region_prob": denom, "region_prob_se": denom_se,
                  "numerator": mean, "numerator_se": se_num})


# ---------------------------------------------------------------------------
# deterministic lower bound
# ---------------------------------------------------------------------------

def quadrature_lower_bound_I(r: float, sigma2: float, d: int,
                             k_max: int = 2000, grid: int = 128) -> float:
    """Deterministic lower bound for the intensity integral on B(0, r).

    Integrates (1 + H(rho))^{-1} over the ball, where H(rho) sums the
    Gaussian ball-overlap masses over backward depths; the series tail
    beyond k_max is replaced by an upper bound and added into the
    denominator, which can only lower the result, so the lower-bound
    property is preserved.  Gaussian motion with identity covariance only.
    """
    if d < 3:
        raise DomainError("the depth series diverges below dimension 3")
    if r <= 0:
        raise DomainError("radius must be positive")
    vol = math.pi ** (d / 2.0) / math.gamma(d / 2.0 + 1.0) * r ** d
    if sigma2 == 0.0:
        return vol
    if sigma2 < 0:
        raise DomainError("offspring variance cannot be negative")
    ks = np.arange(1, k_max + 1, dtype=float)
    tail = vol * (4.0 * math.pi) ** (-d / 2.0) * k_max ** (1.0 - d / 2.0) / (d / 2.0 - 1.0)
    drho = r / grid
    rho = (np.arange(grid) + 0.5) * drho
    # overlap mass at depth k from a point at distance rho:
    # P(N(y, 2k I) in B(0, r)) with |y| = rho
    series = stats.ncx2.cdf(r * r / (2.0 * ks)[None, :], d,
                            (rho * rho)[:, None] / (2.0 * ks)[None, :]).sum(axis=1)
    H = sigma2 * (series + tail)
    integrand = rho ** (d - 1) / (1.0 + H)
    return float(_sphere_surface(d) * (integrand * drho).sum())


# ---------------------------------------------------------------------------
# conditioned cluster and the limit field
# ---------------------------------------------------------------------------

DEFAULT_N_MIN = 64


def sample_N_A_many(bundle: LawBundle, A: Ball, n: int, count: int,
                    seed_or_rng, max_attempts: int = 4_000_000,
                    n_min: int = DEFAULT_N_MIN, batch: int = 8192,
                    particle_cap: int = 10 ** 7) -> list[PointConfiguration]:
    """Rejection-sample ``count`` independent conditioned clusters on A.

    Each sample is the generation-n population of a tree from the origin,
    conditioned on putting at least one particle in A, restricted to A.
    Every accepted trial of a batch is used, so the cost per sample is the
    batch overhead divided by the acceptance rate.
    """
    if n < n_min:
        raise DomainError(f"horizon {n} below n_min = {n_min}; the limit "
                          "object is only trustworthy at deep horizons")
    if isinstance(seed_or_rng, (int, np.integer)):
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence([int(seed_or_rng), 7])))
    else:
        rng = seed_or_rng
    out: list[PointConfiguration] = []
    attempts = 0
    accepted = 0
    win = Window(shape="ball", half_width=max(A.radius, 1e-12), dim=bundle.dim,
                 lattice=bundle.motion.is_lattice, center=A.center)
    while len(out) < count:
        if attempts >= max_attempts:
            rate = accepted / attempts if attempts else 0.0
            raise ResourceError(
                f"exhausted {attempts} attempts with {accepted} acceptances "
                f"(rate {rate:.2e}) before collecting {count} samples",
                acceptance_rate=rate)
        size = min(batch, max_attempts - attempts)
        snaps = run_to_horizon(bundle, n, size, rng, particle_cap=particle_cap)
        state = snaps[n]
        attempts += size
        counts = state.counts_in_ball(A)
        hits = np.nonzero(counts >= 1)[0]
        for t in hits:
            if len(out) >= count:
                break
            mask = (state.trial == t) & A.contains(state.positions)
            cfg = PointConfiguration(points=state.positions[mask], window=win,
                                     meta={"horizon": n})
            out.append(cfg)
            accepted += 1
    rate = accepted / attempts
    for cfg in out:
        cfg.meta["acceptance_rate"] = rate
        cfg.meta["attempts_total"] = attempts
    return out


def sample_N_A(bundle: LawBundle, A: Ball, n: int, seed_or_rng,
               max_attempts: int = 2_000_000, n_min: int = DEFAULT_N_MIN,
               batch: int = 8192,
               particle_cap: int = 10 ** 7) -> PointConfiguration:
    """One conditioned cluster; see sample_N_A_many."""
    return sample_N_A_many(bundle, A, n, 1, seed_or_rng,
                           max_attempts=max_attempts, n_min=n_min,
                           batch=batch, particle_cap=particle_cap)[0]


def build_lambda_infinity_on_ball(A: Ball,
                                  x_sampler: Callable[[np.random.Generator], float],
                                  i_a_est: float,
                                  n_a_sampler: Callable[[np.random.Generator], PointConfiguration],
                                  rng: np.random.Generator) -> PointConfiguration:
    """One realization of the limit field restricted to the ball.

    Draws the random level X, a Poisson(X * I_A) number of clusters, and
    overlays that many independent conditioned clusters.
    """
    if i_a_est <= 0:
        raise DomainError("intensity integral estimate must be positive")
    level = float(x_sampler(rng))
    if level < 0 or not math.isfinite(level):
        raise DomainError(f"level sampler produced {level}")
    p_a = int(rng.poisson(level * i_a_est))
    pieces = [n_a_sampler(rng) for _ in range(p_a)]
    dim = A.dim
    pts = (np.vstack([c.points for c in pieces])
           if pieces else np.empty((0, dim)))
    lattice = pieces[0].window.lattice if pieces else False
    win = Window(shape="ball", half_width=max(A.radius, 1e-12), dim=dim,
                 lattice=lattice, center=A.center)
    return PointConfiguration(points=pts, window=win,
                              meta={"level": level, "cluster_count": p_a,
                                    "i_a": i_a_est})


# ---------------------------------------------------------------------------
# sandwich bounds
# ---------------------------------------------------------------------------

@dataclass
class SandwichResult:
    lower: float
    survival: EstimatorResult
    upper: float
    passed: bool
    constant: float
    metadata: dict[str, Any] = field(default_factory=dict)


def sandwich_check(bundle: LawBundle, A: Ball, x, n: int, trials: int,
                   seed_or_rng, allow_mc_upper: bool = True,
                   mc_draws: int = 500_000, ci_level: float = 0.999,
                   workers: int | None = None) -> SandwichResult:
    """Exact two-sided envelope for the survival probability.

    The spine's position is a plain walk, so the upper bound is the walk's
    ball probability (oracle when available, Monte Carlo otherwise), and
    the lower bound divides it by the analytic sandwich constant.  The
    check passes when the estimated survival sits inside the envelope up to
    four standard errors.
    """
    x = np.asarray(x, dtype=float)
    C = sandwich_constant(bundle, A)
    meta: dict[str, Any] = {"constant": C}
    try:
        upper = motion_ball_prob_oracle(bundle.motion, n, A, x)
        meta["upper_source"] = "oracle"
        upper_se = 0.0
    except NoOracleError:
        if not allow_mc_upper:
            raise ConfigError(
                f"no exact walk oracle for {bundle.motion.name} at n = {n} "
                "and Monte Carlo fallback disabled")
        rng = (np.random.Generator(np.random.PCG64(
            np.random.SeedSequence([int(seed_or_rng), 99])))
            if isinstance(seed_or_rng, (int, np.integer)) else seed_or_rng)
        pos = np.zeros((mc_draws, bundle.dim))
        for _ in range(n):
            pos += sample_step(bundle.motion, rng, mc_draws)
        inside = A.shifted(x).contains(pos)
        upper = float(inside.mean())
        upper_se = math.sqrt(max(upper * (1 - upper), 1e-300) / mc_draws)
        meta["upper_source"] = "monte-carlo"
        meta["upper_se"] = upper_se
    lower = upper / C
    surv = estimate_survival(bundle, A, x, n, trials, seed_or_rng,
                             ci_level=ci_level, workers=workers)
    slack = 4.0 * surv.std_error + 4.0 * upper_se
    passed = (surv.estimate <= upper + slack) and (lower <= surv.estimate + slack)
    return SandwichResult(lower=lower, survival=surv, upper=upper,
                          passed=passed, constant=C, metadata=meta)
