"""Tests for the statistical verification layer.

Covers the two-sample machinery on synthetic data with known answers, the
lattice analytic checks (including an asymmetric negative control), and the
three field-level identity tests at deliberately small scale.  Negative
controls matter as much as the passing runs here: a checker that cannot
fail is not checking anything.
"""

import json
import math
import os

import numpy as np
import pytest

from branchfield import verify
from branchfield.branching import TestFunction
from branchfield.estimators import BackwardTreeParams
from branchfield.laws import (
    Ball,
    HypothesisTag,
    LawBundle,
    finite_offspring,
    gaussian_motion,
    lattice_kernel,
    lazy_srw,
)

BINARY = finite_offspring([0.5, 0.0, 0.5], name="binary")
H1 = LawBundle(BINARY, gaussian_motion(3), HypothesisTag("H1"))
SUPER = LawBundle(finite_offspring([0.45, 0.0, 0.55], name="supercrit"),
                  gaussian_motion(3), HypothesisTag("H1"))
UNIT = Ball((0.0, 0.0, 0.0), 1.0)


# ---------------------------------------------------------------------------
# two-sample machinery
# ---------------------------------------------------------------------------

def test_pooled_bins_meet_min_expected():
    rng = np.random.default_rng(0)
    a = rng.poisson(3.0, size=400)
    b = rng.poisson(3.0, size=400)
    ca, cb = verify.pooled_histogram_bins(a, b, min_expected=5.0)
    assert len(ca) == len(cb)
    assert ca.sum() == 400 and cb.sum() == 400
    pooled = (ca + cb) * 0.5
    assert np.all(pooled >= 5.0) or len(ca) == 1


def test_pooled_bins_merge_sparse_tail():
    a = np.array([0] * 50 + [7])
    b = np.array([0] * 50)
    ca, cb = verify.pooled_histogram_bins(a, b)
    # the lone count at 7 cannot support its own bin
    assert len(ca) <= 2


def test_chi_square_identical_samples():
    a = np.array([0, 0, 1, 1, 2] * 40)
    stat, p, dof = verify.chi_square_two_sample(a, a.copy())
    assert stat == 0.0
    assert p == 1.0


def test_chi_square_degenerate_single_bin():
    a = np.zeros(30, dtype=int)
    b = np.zeros(25, dtype=int)
    stat, p, dof = verify.chi_square_two_sample(a, b)
    assert (stat, p, dof) == (0.0, 1.0, 0)


def test_chi_square_detects_mean_shift():
    rng = np.random.default_rng(1)
    a = rng.poisson(2.0, size=2000)
    b = rng.poisson(6.0, size=2000)
    _, p, _ = verify.chi_square_two_sample(a, b)
    assert p < 1e-6


def test_z_test_degenerate_ties():
    assert verify.z_test_means(1.0, 0.0, 1.0, 0.0) == (0.0, 1.0)
    assert verify.z_test_means(1.0, 0.0, 2.0, 0.0)[1] == 0.0


def test_z_test_equal_means_high_p():
    z, p = verify.z_test_means(0.5, 0.01, 0.5004, 0.01)
    assert p > 0.9


def test_stabilization_flat_sequence():
    ok, info = verify.stabilization_check([1.0, 1.001, 0.999], [0.05, 0.03, 0.02])
    assert ok
    assert len(info["drifts"]) == 2


def test_stabilization_rejects_drift():
    ok, _ = verify.stabilization_check([1.0, 2.0, 3.0], [0.05, 0.03, 0.02])
    assert not ok


def test_stabilization_needs_two_points():
    with pytest.raises(ValueError):
        verify.stabilization_check([1.0], [0.1])


# ---------------------------------------------------------------------------
# report plumbing
# ---------------------------------------------------------------------------

def test_report_write_is_deterministic(tmp_path):
    def make():
        return verify.TestReport("demo", 1.5, 0.2, True,
                                 details={"b": 2, "a": [1.0, 2.0]})

    p1 = make().write(str(tmp_path / "one"))
    p2 = make().write(str(tmp_path / "two"))
    assert open(p1, "rb").read() == open(p2, "rb").read()


def test_report_json_handles_numpy_and_complex(tmp_path):
    rep = verify.TestReport("demo2", 0.0, None, True,
                            details={"arr": np.arange(3),
                                     "z": 0.5 + 0.25j,
                                     "i": np.int64(7)})
    path = rep.write(str(tmp_path))
    blob = json.load(open(path))
    assert blob["details"]["arr"] == [0, 1, 2]
    assert blob["details"]["z"] == {"re": 0.5, "im": 0.25}
    assert blob["details"]["i"] == 7
    assert blob["artifacts"] == []
    # the report records its own basename after writing
    assert rep.artifacts == ["demo2.json"]


def test_convergence_table_roundtrip(tmp_path):
    rows = [(8, 0.125, 0.01, 0.1, 0.15), (16, 0.0625, 0.005, 0.05, 0.075)]
    path = verify.write_convergence_table(str(tmp_path), "demo", rows)
    lines = open(path).read().splitlines()
    assert lines[0] == "n,estimate,se,lower,upper"
    parsed = [line.split(",") for line in lines[1:]]
    assert float(parsed[0][1]) == 0.125
    assert int(parsed[1][0]) == 16


# ---------------------------------------------------------------------------
# lattice analytic checks
# ---------------------------------------------------------------------------

def test_llt_sup_errors_decrease():
    rep = verify.llt_check(lazy_srw(3), [8, 16, 32])
    assert rep.passed
    sups = rep.details["sup_errors"]
    assert sups[0] > sups[1] > sups[2] > 0


def test_llt_writes_artifacts(tmp_path):
    rep = verify.llt_check(lazy_srw(3), [4, 8], out_dir=str(tmp_path))
    assert (tmp_path / "llt_check.json").exists()
    assert (tmp_path / "llt_check_table.csv").exists()
    assert rep.artifacts == ["llt_check_table.csv", "llt_check.json"]


def test_llt_flags_asymmetric_kernel():
    sup = [[0, 0, 0], [1, 0, 0], [-1, 0, 0],
           [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]]
    probs = [0.4, 0.3, 0.05, 0.0625, 0.0625, 0.0625, 0.0625]
    drifting = lattice_kernel(sup, probs, validate=False)
    rep = verify.llt_check(drifting, [8, 16])
    assert not rep.passed
    assert rep.details.get("error") == "pmf asymmetry"


def test_llt_requires_lattice_motion():
    with pytest.raises(ValueError):
        verify.llt_check(gaussian_motion(3), [8])


def test_heat_kernel_envelope():
    rep = verify.heat_kernel_check(lazy_srw(3), [8, 16, 32])
    assert rep.passed
    c1 = rep.details["c1"]
    c2 = rep.details["c2"]
    assert all(u >= l > 0 for u, l in zip(c1, c2))
    target = 2 ** 1.5
    for ratio in rep.details["doubling_ratios"]:
        assert abs(ratio / target - 1.0) <= 0.2


# ---------------------------------------------------------------------------
# field-level identity tests (small but real)
# ---------------------------------------------------------------------------

def test_invariance_theta_zero_trivial():
    rep = verify.invariance_test(theta=0.0, A=UNIT, n=4, m=4, trials=40,
                                 bundle=H1, seed=22)
    assert rep.passed
    assert rep.p_value == 1.0
    assert rep.details["mean_count_n"] == 0.0


def test_invariance_small_run_passes():
    rep = verify.invariance_test(theta=0.5, A=UNIT, n=8, m=8, trials=120,
                                 bundle=H1, seed=11)
    assert rep.passed
    assert rep.p_value > verify.ALPHA
    assert rep.details["comparisons"] == 4


def test_invariance_supercritical_control_fails():
    # growth by factor ~1.1^8 between the two horizons must be detected
    rep = verify.invariance_test(theta=0.5, A=UNIT, n=8, m=8, trials=400,
                                 bundle=SUPER, seed=21)
    assert not rep.passed
    assert rep.p_value < 1e-20
    assert rep.details["mean_count_nm"] > 1.5 * rep.details["mean_count_n"]


def test_laplace_zero_function_trivial():
    f = TestFunction(kind="zero", ball=UNIT)
    params = BackwardTreeParams(K=8, trials=200)
    rep = verify.laplace_identity_test(theta=0.5, f=f, A=UNIT, n=8, trials=30,
                                       bundle=H1, seed=5, params=params)
    assert rep.passed
    assert rep.details["lhs"] == 1.0
    assert rep.details["rhs"] == 1.0


def test_laplace_small_run_passes():
    f = TestFunction(kind="cone_bump", ball=UNIT, height=1.0)
    params = BackwardTreeParams(K=24, trials=1500)
    rep = verify.laplace_identity_test(theta=0.5, f=f, A=UNIT, n=16,
                                       trials=120, bundle=H1, seed=12,
                                       params=params)
    assert rep.passed
    assert 0.0 < rep.details["lhs"] < 1.0
    assert 0.0 < rep.details["rhs"] < 1.0
    assert rep.details["window_bias"] > 0.0


def test_laplace_rejects_unsupported_function():
    wide = TestFunction(kind="cone_bump", ball=Ball((0.0, 0.0, 0.0), 2.0))
    with pytest.raises(ValueError):
        verify.laplace_identity_test(theta=0.5, f=wide, A=UNIT, n=8,
                                     trials=10, bundle=H1, seed=1)


def test_compat_identical_regions():
    params = BackwardTreeParams(K=16, trials=800)
    rep = verify.compatibility_test(UNIT, UNIT, n=64, trials=40, bundle=H1,
                                    seed=30, params=params)
    assert rep.passed
    # every conditioned configuration charges A1 = A2
    assert rep.details["p_hat"] == 1.0
    assert abs(rep.details["ratio"] - 1.0) <= (
        4 * rep.details["ratio_se"] + rep.details["ratio_bias"])


def test_compat_nested_balls():
    params = BackwardTreeParams(K=16, trials=1000)
    rep = verify.compatibility_test(UNIT, Ball((0.0, 0.0, 0.0), 2.0), n=64,
                                    trials=150, bundle=H1, seed=13,
                                    params=params)
    assert rep.passed
    assert 0.0 < rep.details["p_hat"] < 1.0
    assert rep.details["i_a1"] < rep.details["i_a2"]


def test_compat_rejects_non_nested_regions():
    with pytest.raises(ValueError):
        verify.compatibility_test(Ball((5.0, 0.0, 0.0), 1.0), UNIT, n=64,
                                  trials=10, bundle=H1, seed=1)


def test_default_probes_supported_on_region():
    probes = verify.default_probe_functions(UNIT)
    assert len(probes) == 2
    pts = np.array([[0.0, 0.0, 0.0], [0.5, 0.0, 0.0], [2.0, 0.0, 0.0]])
    for f in probes:
        vals = f(pts)
        assert np.all(vals >= 0)
        assert vals[-1] == 0.0


# ---------------------------------------------------------------------------
# stable motion checks
# ---------------------------------------------------------------------------

def test_stable_checks_cauchy():
    rep = verify.stable_checks(1.0, 3, trials=200_000, seed=5)
    assert rep.passed
    assert rep.details["gof_p"] > verify.ALPHA
    assert abs(rep.details["tail_slope"] + 1.0) <= 0.15
    for row in rep.details["char_grid"]:
        assert row["ok"]


def test_stable_checks_alpha_three_halves():
    rep = verify.stable_checks(1.5, 3, trials=200_000, seed=5)
    assert rep.passed
    assert rep.details["gof_p"] is None
    assert abs(rep.details["tail_slope"] + 1.5) <= 0.15
