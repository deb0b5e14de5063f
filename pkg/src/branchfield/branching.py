"""Forward population engine and the size-biased spine construction.

The forward engine evolves whole generations of many independent trees at
once: particle positions live in one flat (m, d) array tagged with a trial
index, and one generation step is a vectorized offspring draw, a
``np.repeat`` fan-out, and a fresh displacement per child.  The spine side
samples a single distinguished line of descent under the size-biased
measure together with the subtree clouds hanging off it, which is what the
backward representation of intensity integrals consumes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .laws import Ball, LawBundle, MotionLaw, OffspringLaw, sample_step


class PopulationBlowupError(RuntimeError):
    """The live population crossed the hard particle cap.

    Raised instead of silently thinning: a critical system hitting the cap
    means the caller asked for something the engine cannot answer honestly
    (for example a supercritical control run taken too far).
    """


DEFAULT_PARTICLE_CAP = 10 ** 7


@dataclass
class Generations:
    """State of many independent branching random walks at one generation.

    ``positions`` is (m, d); ``trial`` maps each particle to the tree it
    belongs to.  Extinct trials simply have no rows.
    """

    positions: np.ndarray
    trial: np.ndarray
    n_trials: int
    generation: int = 0

    @classmethod
    def initial(cls, n_trials: int, dim: int, start: np.ndarray | None = None) -> "Generations":
        pos = np.zeros((n_trials, dim))
        if start is not None:
            pos += np.asarray(start, dtype=float)
        return cls(positions=pos, trial=np.arange(n_trials, dtype=np.int64),
                   n_trials=n_trials)

    @property
    def size(self) -> int:
        return len(self.trial)

    def alive_mask(self) -> np.ndarray:
        """Boolean per trial: does the trial still have particles."""
        alive = np.zeros(self.n_trials, dtype=bool)
        alive[self.trial] = True
        return alive

    def counts_in_ball(self, A: Ball) -> np.ndarray:
        """Number of particles inside the closed ball, per trial."""
        out = np.zeros(self.n_trials, dtype=np.int64)
        if self.size:
            inside = A.contains(self.positions)
            np.add.at(out, self.trial[inside], 1)
        return out


def step_generation(state: Generations, offspring: OffspringLaw,
                    motion: MotionLaw, rng: np.random.Generator,
                    particle_cap: int = DEFAULT_PARTICLE_CAP) -> Generations:
    """Advance every live trial by one generation.

    Each particle draws an offspring count, children inherit the parent
    position and then take one independent motion step.
    """
    m = state.size
    if m == 0:
        return Generations(positions=state.positions[:0],
                           trial=state.trial[:0],
                           n_trials=state.n_trials,
                           generation=state.generation + 1)
    counts = offspring.sample(rng, m)
    total = int(counts.sum())
    if total > particle_cap:
        raise PopulationBlowupError(
            f"generation {state.generation + 1} would hold {total} particles "
            f"(cap {particle_cap}); critical runs this hot are misconfigured")
    parents = np.repeat(np.arange(m), counts)
    pos = state.positions[parents] + sample_step(motion, rng, total)
    return Generations(positions=pos, trial=state.trial[parents],
                       n_trials=state.n_trials,
                       generation=state.generation + 1)


def run_to_horizon(bundle: LawBundle, n: int, n_trials: int,
                   rng: np.random.Generator,
                   start: np.ndarray | None = None,
                   snapshots: Sequence[int] = (),
                   particle_cap: int = DEFAULT_PARTICLE_CAP) -> dict[int, Generations]:
    """Run ``n_trials`` independent trees to generation ``n``.

    Returns the requested snapshot generations (``n`` is always included).
    Trials that die out drop out of the arrays immediately, which is what
    makes deep horizons affordable: at criticality only ~2/(sigma^2 n) of
    trials are still alive at generation n.
    """
    want = sorted(set(snapshots) | {n})
    if want[0] < 0 or want[-1] > n:
        raise ValueError("snapshots must lie in [0, n]")
    state = Generations.initial(n_trials, bundle.dim, start)
    out: dict[int, Generations] = {}
    if 0 in want:
        out[0] = state
    for gen in range(1, n + 1):
        state = step_generation(state, bundle.offspring, bundle.motion, rng,
                                particle_cap=particle_cap)
        if gen in want:
            out[gen] = state
        if state.size == 0:
            for g in want:
                if g > gen:
                    out[g] = Generations(positions=state.positions[:0],
                                         trial=state.trial[:0],
                                         n_trials=n_trials, generation=g)
            break
    return out


def count_in_ball(state: Generations, A: Ball) -> np.ndarray:
    return state.counts_in_ball(A)


# ---------------------------------------------------------------------------
# spine construction
# ---------------------------------------------------------------------------

@dataclass
class SpineRealization:
    """One draw of the distinguished line of descent with its side clouds.

    ``spine`` holds the spine positions S_0 = 0, S_1, ..., S_K.  For each
    backward level k >= 1 (counted from the tip), ``brother_clouds[k-1]``
    collects displacements measured from the spine tip of all particles
    that descend from siblings born at that level and have run back up to
    the tip's generation.  Such a displacement is the sum of k spine steps
    (reversed), one birth step, and k - 1 subtree steps: 2k i.i.d.
    symmetric steps in total, which is the fact every downstream identity
    leans on.
    ``truncated`` marks levels whose sibling subtrees exceeded the work
    budget; their clouds are incomplete and the consumer must either drop
    the realization or account for the bias.
    """

    spine: np.ndarray
    brother_clouds: list[np.ndarray]
    truncated: np.ndarray
    work: int = 0


def _subtree_cloud(origins: np.ndarray, depth: int, offspring: OffspringLaw,
                   motion: MotionLaw, rng: np.random.Generator,
                   work_budget: int) -> tuple[np.ndarray | None, int]:
    """Population at ``depth`` of critical trees started from ``origins``.

    Returns (positions, work_spent); positions is None when the budget was
    exhausted mid-run, in which case the partial state is useless.
    """
    pos = origins
    work = 0
    for _ in range(depth):
        m = len(pos)
        if m == 0:
            break
        counts = offspring.sample(rng, m)
        total = int(counts.sum())
        work += total
        if work > work_budget:
            return None, work
        parents = np.repeat(np.arange(m), counts)
        pos = pos[parents] + sample_step(motion, rng, total)
    return pos, work


def sample_spine(bundle: LawBundle, K: int, rng: np.random.Generator,
                 work_budget_per_level: int = 200_000,
                 keep_radius: float | None = None) -> SpineRealization:
    """Draw the spine to depth K under the size-biased change of measure.

    The spine particle reproduces by the size-biased law, one child
    uniformly chosen continues the spine, and every sibling founds an
    ordinary critical tree.  The sibling trees born at level k are run for
    k - 1 further generations so their particles sit at the spine's
    generation, then stored as displacements from the level-k spine
    position.

    Heavy-tail offspring make sibling counts occasionally enormous, so each
    level carries a work budget (roughly particles stepped).  A level that
    exceeds it is flagged in ``truncated`` rather than silently clipped.
    """
    steps = sample_step(bundle.motion, rng, K)
    spine = np.vstack([np.zeros(bundle.dim), np.cumsum(steps, axis=0)])
    tip = spine[K]
    clouds: list[np.ndarray] = []
    truncated = np.zeros(K, dtype=bool)
    total_work = 0
    empty = np.empty((0, bundle.dim))
    for k in range(1, K + 1):
        n_children = int(bundle.size_biased.sample(rng, 1)[0])
        n_brothers = n_children - 1
        depth = k - 1
        if n_brothers == 0:
            clouds.append(empty)
            continue
        if n_brothers > work_budget_per_level:
            truncated[k - 1] = True
            clouds.append(empty)
            continue
        # siblings branch off k levels below the tip: their displacement
        # from the tip starts with the reversed spine segment plus one step
        segment = spine[K - k] - tip
        origins = segment + sample_step(bundle.motion, rng, n_brothers)
        if depth == 0:
            cloud = origins
            total_work += n_brothers
        else:
            cloud, work = _subtree_cloud(origins, depth, bundle.offspring,
                                         bundle.motion, rng,
                                         work_budget_per_level)
            total_work += work
            if cloud is None:
                truncated[k - 1] = True
                clouds.append(empty)
                continue
        if keep_radius is not None and len(cloud):
            keep = np.einsum("ij,ij->i", cloud, cloud) <= keep_radius ** 2
            cloud = cloud[keep]
        clouds.append(cloud)
    return SpineRealization(spine=spine, brother_clouds=clouds,
                            truncated=truncated, work=total_work)


def eval_backward_functionals(real: SpineRealization, A: Ball,
                              f: Callable[[np.ndarray], np.ndarray] | None,
                              y: np.ndarray) -> tuple[float, float]:
    """Evaluate the backward sums (sum_k Y_k, sum_k Y_{f,k}) at anchor y.

    Y_k counts the particles of the level-k sibling clouds that land in the
    ball A recentred at y; by construction a stored displacement d
    contributes when y + d lies in A.  The f-weighted variant sums f over
    those same landing points, with the k = 0 term being f(y) itself.
    """
    c = A.center_array
    r = A.radius
    sum_y = 0.0
    sum_yf = float(f(y[None, :])[0]) if f is not None else 0.0
    for cloud in real.brother_clouds:
        if not len(cloud):
            continue
        pts = y[None, :] + cloud
        diff = pts - c
        inside = np.einsum("ij,ij->i", diff, diff) <= r * r
        hits = int(inside.sum())
        if hits:
            sum_y += hits
            if f is not None:
                sum_yf += float(f(pts[inside]).sum())
    return sum_y, sum_yf


# ---------------------------------------------------------------------------
# test functions on the ball
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TestFunction:
    """Nonnegative bounded function supported on a ball, with a label.

    ``kind`` selects the profile: "zero", "indicator_smoothed" (plateau at
    ``height`` with a cosine rolloff in the outer 20% of the radius), or
    "cone_bump" (linear decay from the center).  ``mode`` chooses how the
    function enters a Laplace-type functional downstream; the profile
    itself is the same.
    """

    __test__ = False  # not a pytest case, despite the name

    kind: str
    ball: Ball
    height: float = 1.0
    mode: str = "laplace"

    def __post_init__(self):
        if self.kind not in ("zero", "indicator_smoothed", "cone_bump"):
            raise ValueError(f"unknown test function kind {self.kind!r}")
        if self.mode not in ("laplace", "characteristic"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.height < 0:
            raise ValueError("test functions must be nonnegative")

    def __call__(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        diff = pts - self.ball.center_array
        rho = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        r = self.ball.radius
        if self.kind == "zero":
            return np.zeros(len(pts))
        if self.kind == "indicator_smoothed":
            out = np.zeros(len(pts))
            inner = 0.8 * r
            out[rho <= inner] = self.height
            band = (rho > inner) & (rho <= r)
            out[band] = self.height * 0.5 * (
                1.0 + np.cos(math.pi * (rho[band] - inner) / (r - inner)))
            return out
        out = self.height * np.clip(1.0 - rho / r, 0.0, None)
        return out


def zero_function(A: Ball) -> TestFunction:
    return TestFunction(kind="zero", ball=A)
