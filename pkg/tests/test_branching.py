"""Forward engine, spine construction, and backward functional checks."""
import math

import numpy as np
import pytest

from branchfield import branching, laws


def h1_bundle(beta=1.0, k_max=10000):
    return laws.LawBundle(laws.make_beta_offspring(beta, k_max=k_max),
                          laws.gaussian_motion(3), laws.HypothesisTag("H1"))


class TestForwardEngine:
    def test_survival_matches_extinction_oracle(self):
        bundle = h1_bundle()
        rng = np.random.default_rng(101)
        trials = 60000
        snaps = branching.run_to_horizon(bundle, 25, trials, rng, snapshots=(1, 5))
        for n in (1, 5, 25):
            emp = snaps[n].alive_mask().mean()
            exact = 1.0 - laws.gw_extinction_iterate(bundle.offspring, n)
            se = math.sqrt(exact * (1.0 - exact) / trials)
            assert abs(emp - exact) < 4.0 * se

    def test_heavy_tail_survival_matches_oracle(self):
        bundle = laws.LawBundle(laws.make_beta_offspring(0.5, k_max=100000),
                                laws.stable_motion(1.0, 3),
                                laws.HypothesisTag("H3"))
        rng = np.random.default_rng(103)
        trials = 40000
        snaps = branching.run_to_horizon(bundle, 10, trials, rng, snapshots=(2,))
        for n in (2, 10):
            emp = snaps[n].alive_mask().mean()
            exact = 1.0 - laws.gw_extinction_iterate(bundle.offspring, n)
            se = math.sqrt(exact * (1.0 - exact) / trials)
            assert abs(emp - exact) < 4.0 * se

    def test_population_mean_is_one_at_criticality(self):
        bundle = h1_bundle()
        rng = np.random.default_rng(107)
        trials = 50000
        snaps = branching.run_to_horizon(bundle, 8, trials, rng)
        assert snaps[8].size / trials == pytest.approx(1.0, abs=0.06)

    def test_positions_spread_diffusively(self):
        bundle = h1_bundle()
        rng = np.random.default_rng(109)
        snaps = branching.run_to_horizon(bundle, 16, 40000, rng)
        pos = snaps[16].positions
        # each surviving particle is a 16-step standard Gaussian walk
        assert (pos ** 2).sum(axis=1).mean() == pytest.approx(48.0, rel=0.1)

    def test_counts_in_ball_handcrafted(self):
        state = branching.Generations(
            positions=np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0],
                                [0.5, 0.5, 0.0], [0.0, 0.0, 0.99]]),
            trial=np.array([0, 0, 2, 2]), n_trials=4)
        counts = state.counts_in_ball(laws.Ball((0.0, 0.0, 0.0), 1.0))
        assert counts.tolist() == [1, 0, 2, 0]

    def test_early_extinction_fills_snapshots(self):
        bundle = laws.LawBundle(
            laws.finite_offspring([1.0], name="immediate-death"),
            laws.gaussian_motion(3), laws.HypothesisTag("H1"))
        rng = np.random.default_rng(2)
        snaps = branching.run_to_horizon(bundle, 5, 100, rng, snapshots=(3,))
        assert snaps[3].size == 0 and snaps[5].size == 0
        assert snaps[5].generation == 5

    def test_blowup_raises(self):
        super_bundle = laws.LawBundle(
            laws.finite_offspring([0.0, 0.0, 0.0, 1.0], name="tripling"),
            laws.gaussian_motion(3), laws.HypothesisTag("H1"))
        rng = np.random.default_rng(3)
        with pytest.raises(branching.PopulationBlowupError):
            branching.run_to_horizon(super_bundle, 20, 100, rng,
                                     particle_cap=10000)

    def test_snapshot_validation(self):
        bundle = h1_bundle()
        rng = np.random.default_rng(4)
        with pytest.raises(ValueError):
            branching.run_to_horizon(bundle, 5, 10, rng, snapshots=(7,))

    def test_deterministic_given_seed(self):
        bundle = h1_bundle()
        a = branching.run_to_horizon(bundle, 10, 500, np.random.default_rng(77))
        b = branching.run_to_horizon(bundle, 10, 500, np.random.default_rng(77))
        assert np.array_equal(a[10].positions, b[10].positions)
        assert np.array_equal(a[10].trial, b[10].trial)


class TestSpine:
    def test_spine_positions_are_plain_walk(self):
        bundle = h1_bundle()
        rng = np.random.default_rng(11)
        K = 12
        finals = np.array([branching.sample_spine(bundle, K, rng).spine[-1]
                           for _ in range(4000)])
        assert (finals ** 2).sum(axis=1).mean() == pytest.approx(3 * K, rel=0.1)

    def test_binary_brother_counts(self):
        # binary size-biased is the point mass at 2: exactly one brother per level
        bundle = h1_bundle()
        rng = np.random.default_rng(13)
        real = branching.sample_spine(bundle, 5, rng)
        assert len(real.brother_clouds) == 5
        assert len(real.brother_clouds[0]) == 1  # depth-0 cloud is the brother itself
        assert not real.truncated.any()

    def test_cloud_mean_is_two_k_step_ball_probability(self):
        # E[level-k cloud count in A - y] = sigma^2 P(S_{2k} in A - y)
        bundle = h1_bundle()
        rng = np.random.default_rng(17)
        A = laws.Ball((0.0, 0.0, 0.0), 1.0)
        y = np.array([0.5, 0.0, 0.0])
        K, trials = 4, 25000
        sums = np.zeros(K)
        for _ in range(trials):
            real = branching.sample_spine(bundle, K, rng)
            for k in range(1, K + 1):
                cloud = real.brother_clouds[k - 1]
                if len(cloud):
                    pts = y + cloud
                    sums[k - 1] += int(A.contains(pts).sum())
        for k in range(1, K + 1):
            exact = laws.motion_ball_prob_oracle(bundle.motion, 2 * k, A, y)
            se = math.sqrt(exact / trials) * 3  # crude: counts are near-Bernoulli
            assert sums[k - 1] / trials == pytest.approx(exact, abs=4 * se + 0.002)

    def test_heavy_tail_truncation_flags(self):
        bundle = laws.LawBundle(laws.make_beta_offspring(0.5, k_max=100000),
                                laws.stable_motion(1.0, 3),
                                laws.HypothesisTag("H3"))
        rng = np.random.default_rng(19)
        n_trunc = 0
        for _ in range(300):
            real = branching.sample_spine(bundle, 8, rng,
                                          work_budget_per_level=50)
            n_trunc += int(real.truncated.any())
            for k, cloud in enumerate(real.brother_clouds):
                if real.truncated[k]:
                    assert len(cloud) == 0
        # with a budget this tiny, truncation must actually occur
        assert n_trunc > 0

    def test_keep_radius_prunes_far_points(self):
        bundle = h1_bundle()
        rng = np.random.default_rng(23)
        real = branching.sample_spine(bundle, 10, rng, keep_radius=2.0)
        for cloud in real.brother_clouds:
            if len(cloud):
                assert ((cloud ** 2).sum(axis=1) <= 4.0 + 1e-12).all()


class TestBackwardFunctionals:
    def test_handcrafted_sums(self):
        A = laws.Ball((0.0, 0.0, 0.0), 1.0)
        real = branching.SpineRealization(
            spine=np.zeros((3, 3)),
            brother_clouds=[
                np.array([[0.2, 0.0, 0.0], [5.0, 0.0, 0.0]]),
                np.array([[-0.3, 0.0, 0.0]]),
            ],
            truncated=np.zeros(2, dtype=bool))
        y = np.array([0.1, 0.0, 0.0])
        f = branching.TestFunction(kind="cone_bump", ball=A, height=2.0)
        sum_y, sum_yf = branching.eval_backward_functionals(real, A, f, y)
        # landing points: y itself (k=0 term), y + (0.2,0,0), y + (-0.3,0,0)
        assert sum_y == 2.0
        expect = float(f(y[None, :])[0] + f(np.array([[0.3, 0.0, 0.0]]))[0]
                       + f(np.array([[-0.2, 0.0, 0.0]]))[0])
        assert sum_yf == pytest.approx(expect)

    def test_zero_function_gives_plain_count(self):
        A = laws.Ball((0.0, 0.0, 0.0), 1.0)
        real = branching.SpineRealization(
            spine=np.zeros((2, 3)),
            brother_clouds=[np.array([[0.0, 0.5, 0.0]])],
            truncated=np.zeros(1, dtype=bool))
        sum_y, sum_yf = branching.eval_backward_functionals(
            real, A, None, np.zeros(3))
        assert (sum_y, sum_yf) == (1.0, 0.0)


class TestTestFunctions:
    def test_zero(self):
        A = laws.Ball((0.0, 0.0, 0.0), 1.0)
        f = branching.zero_function(A)
        pts = np.random.default_rng(0).normal(size=(50, 3))
        assert (f(pts) == 0).all()

    def test_smoothed_indicator_profile(self):
        A = laws.Ball((1.0, 0.0, 0.0), 2.0)
        f = branching.TestFunction(kind="indicator_smoothed", ball=A, height=3.0)
        assert f(np.array([[1.0, 0.0, 0.0]]))[0] == 3.0
        assert f(np.array([[1.0, 1.5, 0.0]]))[0] == 3.0       # inside plateau (rho=1.5 < 1.6)
        mid = f(np.array([[1.0, 1.8, 0.0]]))[0]               # in the rolloff band
        assert 0.0 < mid < 3.0
        assert f(np.array([[1.0, 2.5, 0.0]]))[0] == 0.0       # outside
        # continuity at the plateau edge
        assert f(np.array([[1.0, 1.6 + 1e-9, 0.0]]))[0] == pytest.approx(3.0, abs=1e-6)

    def test_cone_bump_profile(self):
        A = laws.Ball((0.0, 0.0, 0.0), 2.0)
        f = branching.TestFunction(kind="cone_bump", ball=A, height=1.0)
        assert f(np.zeros((1, 3)))[0] == 1.0
        assert f(np.array([[1.0, 0.0, 0.0]]))[0] == pytest.approx(0.5)
        assert f(np.array([[3.0, 0.0, 0.0]]))[0] == 0.0

    def test_validation(self):
        A = laws.Ball((0.0, 0.0, 0.0), 1.0)
        with pytest.raises(ValueError):
            branching.TestFunction(kind="gaussian", ball=A)
        with pytest.raises(ValueError):
            branching.TestFunction(kind="zero", ball=A, mode="fourier")
        with pytest.raises(ValueError):
            branching.TestFunction(kind="cone_bump", ball=A, height=-1.0)
