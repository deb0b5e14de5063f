"""Config-driven experiment runner.

Every estimator and statistical check in the package is exposed as a
subcommand that reads one TOML config, runs deterministically under a
single master seed, and writes machine-readable artifacts (UTF-8 JSON
reports, RFC-4180 CSV tables).  Exit codes are part of the interface:

    0   run completed, all statistical checks passed
    2   run completed, at least one statistical check failed
    3   config or precondition error (nothing was run)
    4   resource exhaustion (rejection-sampling attempt cap, population cap)

Wall-clock timestamps never enter the JSON artifacts; they go to a
separate ``run_log.txt`` so that identical config + seed + worker count
reproduces byte-identical outputs.
"""
from __future__ import annotations

import argparse
import csv
import datetime
import json
import os
import sys
from typing import Any

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from . import estimators as est
from . import verify
from .branching import PopulationBlowupError, TestFunction
from .laws import (
    Ball,
    HypothesisTag,
    LawBundle,
    LawError,
    finite_offspring,
    make_beta_offspring,
)
from .pointfield import WindowError


SUBCOMMANDS = ["survival", "estimate-i", "intensity-sum", "lower-bound",
               "sample-na", "build-lambda", "invariance", "compat",
               "laplace-id", "llt", "heat-kernel", "stable", "suite"]

# section -> key -> (type tag, default).  The defaults double as the
# shipped configuration: `branchfield suite` with no --config must finish
# in a couple of minutes and exit 0.
SCHEMA: dict[str, dict[str, tuple[str, Any]]] = {
    "laws": {
        "hypothesis": ("str", "H1"),
        "dimension": ("int", 3),
        "offspring": ("str", "binary"),
        "beta": ("float", 0.5),
        "pmf": ("float_list", []),
        "alpha": ("float", 1.0),
    },
    "geometry": {
        "ball_center": ("float_list", [0.0, 0.0, 0.0]),
        "ball_radius": ("float", 1.0),
        "ball2_radius": ("float", 2.0),
        "radii": ("float_list", [1.0, 2.0]),
        "start": ("float_list", []),
        "window_factor": ("float", 6.0),
        "field_window_factor": ("float", 3.0),
    },
    "run": {
        "n": ("int", 64),
        "field_n": ("int", 8),
        "m": ("int", 8),
        "n_list": ("int_list", [8, 16, 32]),
        "trials": ("int", 20_000),
        "field_trials": ("int", 120),
        "stable_trials": ("int", 200_000),
        "count": ("int", 25),
        "theta": ("float", 0.5),
        "seed": ("int", 42),
        "workers": ("int", 0),
        "out": ("str", "out"),
    },
    "truncation": {
        "K": ("int", 0),
        "h": ("float", 0.0),
        "k_max": ("int", 2000),
        "tree_trials": ("int", 1500),
        "work_budget": ("int", 1_000_000),
    },
}

_TYPE_NAMES = {"int": "an integer", "float": "a number", "str": "a string",
               "float_list": "a list of numbers",
               "int_list": "a list of integers"}


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad flags; here 2 means a failed
    statistical test, so CLI usage errors are remapped to 3."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise est.ConfigError(f"{message} (fix the command line)")


def _coerce(section: str, key: str, tag: str, value):
    if tag == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise est.ConfigError(
                f"[{section}].{key} must be {_TYPE_NAMES[tag]}, "
                f"got {value!r} (edit that key in the config file)")
        return value
    if tag == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise est.ConfigError(
                f"[{section}].{key} must be {_TYPE_NAMES[tag]}, "
                f"got {value!r} (edit that key in the config file)")
        return float(value)
    if tag == "str":
        if not isinstance(value, str):
            raise est.ConfigError(
                f"[{section}].{key} must be {_TYPE_NAMES[tag]}, "
                f"got {value!r} (edit that key in the config file)")
        return value
    if not isinstance(value, list):
        raise est.ConfigError(
            f"[{section}].{key} must be {_TYPE_NAMES[tag]}, "
            f"got {value!r} (edit that key in the config file)")
    item = int if tag == "int_list" else float
    out = []
    for v in value:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or (
                tag == "int_list" and not isinstance(v, int)):
            raise est.ConfigError(
                f"[{section}].{key} must be {_TYPE_NAMES[tag]}, "
                f"got element {v!r} (edit that key in the config file)")
        out.append(item(v))
    return out


def load_config(path: str | None) -> dict[str, dict[str, Any]]:
    """Resolve a TOML config against the schema, defaults materialized.

    Unknown sections or keys are hard errors: a silently ignored typo in
    a stochastic experiment is unrecoverable after the fact.
    """
    resolved = {s: {k: d for k, (_, d) in keys.items()}
                for s, keys in SCHEMA.items()}
    if path is None:
        return resolved
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise est.ConfigError(
            f"config file {path!r} not found (fix --config)")
    except tomllib.TOMLDecodeError as e:
        raise est.ConfigError(f"config file {path!r} is not valid TOML: {e}")
    for section, body in raw.items():
        if section not in SCHEMA:
            raise est.ConfigError(
                f"unknown config section [{section}]; valid sections: "
                f"{', '.join(SCHEMA)} (remove or rename it)")
        if not isinstance(body, dict):
            raise est.ConfigError(
                f"[{section}] must be a table of keys, got {body!r}")
        for key, value in body.items():
            if key not in SCHEMA[section]:
                raise est.ConfigError(
                    f"unknown key {key!r} in [{section}]; valid keys: "
                    f"{', '.join(SCHEMA[section])} (remove or rename it)")
            tag = SCHEMA[section][key][0]
            resolved[section][key] = _coerce(section, key, tag, value)
    return resolved


def build_bundle(cfg: dict) -> LawBundle:
    """Laws + hypothesis pairing from the [laws] section.

    Pairing violations surface as ConfigError with the offending key
    named, so the caller can map them to exit code 3.
    """
    laws = cfg["laws"]
    hyp = laws["hypothesis"]
    d = laws["dimension"]
    if hyp not in ("H1", "H2", "H3"):
        raise est.ConfigError(
            f"[laws].hypothesis must be H1, H2 or H3, got {hyp!r}")
    kind = laws["offspring"]
    if kind == "binary":
        offspring = finite_offspring([0.5, 0.0, 0.5], name="binary")
    elif kind == "beta":
        offspring = make_beta_offspring(laws["beta"])
    elif kind == "table":
        if not laws["pmf"]:
            raise est.ConfigError(
                "[laws].offspring = \"table\" needs a nonempty [laws].pmf")
        offspring = finite_offspring(laws["pmf"], name="config-table")
        offspring.require_critical()
    else:
        raise est.ConfigError(
            f"[laws].offspring must be binary, beta or table, got {kind!r}")
    from .laws import gaussian_motion, lazy_srw, stable_motion
    try:
        if hyp == "H1":
            motion = gaussian_motion(d)
        elif hyp == "H2":
            motion = lazy_srw(d)
        else:
            motion = stable_motion(laws["alpha"], d)
        tag = HypothesisTag(hyp, beta=laws["beta"] if hyp == "H3" else None)
        return LawBundle(offspring, motion, tag)
    except LawError as e:
        raise est.ConfigError(
            f"{e} (adjust [laws].dimension, [laws].hypothesis, "
            f"[laws].alpha or [laws].beta)")


def _ball(cfg: dict, radius_key: str = "ball_radius") -> Ball:
    geo = cfg["geometry"]
    center = geo["ball_center"]
    d = cfg["laws"]["dimension"]
    if len(center) != d:
        raise est.ConfigError(
            f"[geometry].ball_center has {len(center)} coordinates but "
            f"[laws].dimension is {d} (make them agree)")
    return Ball(tuple(center), geo[radius_key])


def _start(cfg: dict) -> np.ndarray:
    geo = cfg["geometry"]
    d = cfg["laws"]["dimension"]
    start = geo["start"] or [0.0] * d
    if len(start) != d:
        raise est.ConfigError(
            f"[geometry].start has {len(start)} coordinates but "
            f"[laws].dimension is {d} (make them agree)")
    return np.asarray(start)


def _tree_params(cfg: dict) -> est.BackwardTreeParams:
    tr = cfg["truncation"]
    return est.BackwardTreeParams(
        K=tr["K"] or None,
        trials=tr["tree_trials"],
        h=tr["h"] or None,
        work_budget=tr["work_budget"])


def _workers(cfg: dict) -> int | None:
    w = cfg["run"]["workers"]
    if w > 0:
        return w
    env = os.environ.get("BRANCHFIELD_WORKERS", "")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise est.ConfigError(
                f"BRANCHFIELD_WORKERS must be an integer, got {env!r}")
    return None


def _write_json(out_dir: str, name: str, payload: dict) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"{name}.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1,
                  default=verify._json_default)
        fh.write("\n")
    return path


def _write_points_csv(out_dir: str, name: str, rows: list[tuple]) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"{name}.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        for row in rows:
            writer.writerow(row)
    return path


def _log(out_dir: str, message: str):
    os.makedirs(out_dir, exist_ok=True)
    stamp = datetime.datetime.now().isoformat(timespec="seconds")
    with open(os.path.join(out_dir, "run_log.txt"), "a") as fh:
        fh.write(f"{stamp} {message}\n")


# ---------------------------------------------------------------------------
# subcommand runners: each returns (payload, failed_reports)
# ---------------------------------------------------------------------------

def _run_survival(cfg, out_dir):
    bundle = build_bundle(cfg)
    A = _ball(cfg)
    x = _start(cfg)
    run = cfg["run"]
    workers = _workers(cfg)
    records, rows = [], []
    for n in run["n_list"]:
        res = est.estimate_survival(bundle, A, x, n, run["trials"],
                                    run["seed"], workers=workers)
        records.append(res.record(f"survival_n{n}", seed=run["seed"]))
        lo, hi = res.ci
        rows.append((n, res.estimate, res.std_error, lo, hi))
    verify.write_convergence_table(out_dir, "survival", rows)
    return {"results": records}, []


def _run_estimate_i(cfg, out_dir):
    bundle = build_bundle(cfg)
    A = _ball(cfg)
    run = cfg["run"]
    res = est.estimate_I(bundle, A, None, _tree_params(cfg), run["seed"],
                         workers=_workers(cfg))
    return {"result": res.record("intensity_integral", seed=run["seed"])}, []


def _run_intensity_sum(cfg, out_dir):
    bundle = build_bundle(cfg)
    A = _ball(cfg)
    run = cfg["run"]
    if bundle.motion.is_lattice:
        res = est.lattice_intensity_sum(bundle, A, run["n"], run["trials"],
                                        run["seed"], workers=_workers(cfg))
    else:
        res = est.continuum_intensity_integral(
            bundle, A, run["n"], run["trials"], run["seed"],
            workers=_workers(cfg))
    rec = res.record(f"intensity_sum_n{run['n']}", seed=run["seed"])
    rec["n"] = run["n"]
    return {"result": rec}, []


def _run_lower_bound(cfg, out_dir):
    bundle = build_bundle(cfg)
    d = bundle.dim
    if bundle.motion.covariance is None:
        raise est.DomainError(
            "the quadrature lower bound needs a finite-variance motion "
            "(use [laws].hypothesis H1 or H2)")
    sigma2 = float(np.trace(bundle.motion.covariance)) / d
    k_max = cfg["truncation"]["k_max"]
    rows, values = [], []
    for r in cfg["geometry"]["radii"]:
        v = est.quadrature_lower_bound_I(r, sigma2, d, k_max=k_max)
        values.append({"radius": r, "lower_bound": v})
        rows.append((r, v, 0.0, v, v))
    verify.write_convergence_table(out_dir, "lower_bound", rows)
    return {"results": values, "sigma2": sigma2, "k_max": k_max}, []


def _run_sample_na(cfg, out_dir):
    bundle = build_bundle(cfg)
    A = _ball(cfg)
    run = cfg["run"]
    configs = est.sample_N_A_many(bundle, A, run["n"], run["count"],
                                  run["seed"])
    rows = [("cluster", *(f"x{i}" for i in range(bundle.dim)))]
    counts = []
    for i, c in enumerate(configs):
        counts.append(len(c.points))
        for p in c.points:
            rows.append((i, *(repr(float(v)) for v in p)))
    _write_points_csv(out_dir, "sample_na_points", rows)
    meta = configs[0].meta if configs else {}
    return {"count": len(configs),
            "sizes": counts,
            "mean_size": float(np.mean(counts)) if counts else 0.0,
            "acceptance_rate": meta.get("acceptance_rate"),
            "horizon": run["n"]}, []


def _run_build_lambda(cfg, out_dir):
    bundle = build_bundle(cfg)
    A = _ball(cfg)
    run = cfg["run"]
    i_res = est.estimate_I(bundle, A, None, _tree_params(cfg), run["seed"],
                           workers=_workers(cfg))
    theta = run["theta"]
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence([run["seed"], 17])))
    sample = est.build_lambda_infinity_on_ball(
        A, lambda r: theta, i_res.estimate,
        lambda r: est.sample_N_A(bundle, A, run["n"], r), rng)
    rows = [("point", *(f"x{i}" for i in range(bundle.dim)))]
    for j, p in enumerate(sample.points):
        rows.append((j, *(repr(float(v)) for v in p)))
    _write_points_csv(out_dir, "lambda_points", rows)
    return {"i_a": i_res.record("intensity_integral", seed=run["seed"]),
            "theta": theta,
            "cluster_count": sample.meta.get("cluster_count"),
            "total_points": len(sample.points)}, []


def _run_invariance(cfg, out_dir):
    # field tests branch a whole Poisson field per trial, so they use the
    # short horizon [run].field_n; the window volume grows like n^(d/2)
    bundle = build_bundle(cfg)
    run = cfg["run"]
    rep = verify.invariance_test(
        run["theta"], _ball(cfg), run["field_n"], run["m"],
        run["field_trials"], bundle, run["seed"],
        window_factor=cfg["geometry"]["field_window_factor"],
        workers=_workers(cfg))
    return {"report": rep.to_dict()}, [] if rep.passed else [rep]


def _run_compat(cfg, out_dir):
    bundle = build_bundle(cfg)
    run = cfg["run"]
    rep = verify.compatibility_test(
        _ball(cfg), _ball(cfg, "ball2_radius"), run["n"],
        run["field_trials"], bundle, run["seed"], params=_tree_params(cfg),
        workers=_workers(cfg))
    return {"report": rep.to_dict()}, [] if rep.passed else [rep]


def _run_laplace_id(cfg, out_dir):
    bundle = build_bundle(cfg)
    A = _ball(cfg)
    run = cfg["run"]
    f = TestFunction(kind="cone_bump", ball=A, height=1.0)
    rep = verify.laplace_identity_test(
        run["theta"], f, A, run["field_n"], run["field_trials"], bundle,
        run["seed"], window_factor=cfg["geometry"]["field_window_factor"],
        params=_tree_params(cfg), workers=_workers(cfg))
    return {"report": rep.to_dict()}, [] if rep.passed else [rep]


def _require_lattice(bundle, command):
    if not bundle.motion.is_lattice:
        raise est.ConfigError(
            f"{command} needs a lattice motion law "
            f"(set [laws].hypothesis = \"H2\")")


def _run_llt(cfg, out_dir):
    bundle = build_bundle(cfg)
    _require_lattice(bundle, "llt")
    n_list = cfg["run"]["n_list"]
    rep = verify.llt_check(bundle.motion, n_list)
    if "sup_errors" in rep.details:
        rows = [(n, s, 0.0, s, s)
                for n, s in zip(n_list, rep.details["sup_errors"])]
        verify.write_convergence_table(out_dir, "llt", rows)
    return {"report": rep.to_dict()}, [] if rep.passed else [rep]


def _run_heat_kernel(cfg, out_dir):
    bundle = build_bundle(cfg)
    _require_lattice(bundle, "heat-kernel")
    n_list = cfg["run"]["n_list"]
    rep = verify.heat_kernel_check(bundle.motion, n_list)
    rows = [(n, c1, 0.0, c2, c1)
            for n, c1, c2 in zip(n_list, rep.details["c1"],
                                 rep.details["c2"])]
    verify.write_convergence_table(out_dir, "heat_kernel", rows)
    return {"report": rep.to_dict()}, [] if rep.passed else [rep]


def _run_stable(cfg, out_dir):
    # tail-exponent fitting reads the far quantiles, so this check keeps
    # its own trial budget instead of sharing [run].trials
    laws = cfg["laws"]
    run = cfg["run"]
    rep = verify.stable_checks(laws["alpha"], laws["dimension"],
                               run["stable_trials"], run["seed"])
    return {"report": rep.to_dict()}, [] if rep.passed else [rep]


def _suite_config(cfg: dict, **overrides) -> dict:
    out = {s: dict(body) for s, body in cfg.items()}
    for dotted, value in overrides.items():
        section, key = dotted.split("__")
        out[section][key] = value
    return out


def _run_suite(cfg, out_dir):
    """Reduced-scale pass over every check the configured laws support.

    The lattice analytic checks always run on the lazy simple random
    walk and the stable checks on the configured alpha, whatever the
    configured hypothesis is; the field-level tests use the configured
    bundle.  Artifact names are prefixed so one directory holds the
    whole bundle.
    """
    steps = [
        ("survival", _run_survival),
        ("estimate-i", _run_estimate_i),
        ("intensity-sum", _run_intensity_sum),
        ("sample-na", _run_sample_na),
        ("build-lambda", _run_build_lambda),
        ("invariance", _run_invariance),
        ("compat", _run_compat),
        ("laplace-id", _run_laplace_id),
        ("stable", _run_stable),
    ]
    bundle = build_bundle(cfg)
    if bundle.motion.covariance is not None:
        steps.insert(3, ("lower-bound", _run_lower_bound))
    failed = []
    summary = {}
    lattice_cfg = _suite_config(cfg, laws__hypothesis="H2")
    for name, runner in [("llt", _run_llt), ("heat-kernel", _run_heat_kernel)]:
        payload, bad = runner(lattice_cfg, out_dir)
        payload["command"] = name
        payload["config"] = lattice_cfg
        _write_json(out_dir, name.replace("-", "_"), payload)
        failed.extend(bad)
        summary[name] = not bad
    for name, runner in steps:
        payload, bad = runner(cfg, out_dir)
        payload["command"] = name
        payload["config"] = cfg
        _write_json(out_dir, name.replace("-", "_"), payload)
        failed.extend(bad)
        summary[name] = not bad
    return {"checks": summary, "passed": not failed}, failed


_RUNNERS = {
    "survival": _run_survival,
    "estimate-i": _run_estimate_i,
    "intensity-sum": _run_intensity_sum,
    "lower-bound": _run_lower_bound,
    "sample-na": _run_sample_na,
    "build-lambda": _run_build_lambda,
    "invariance": _run_invariance,
    "compat": _run_compat,
    "laplace-id": _run_laplace_id,
    "llt": _run_llt,
    "heat-kernel": _run_heat_kernel,
    "stable": _run_stable,
    "suite": _run_suite,
}


def main(argv=None) -> int:
    parser = _Parser(prog="branchfield",
                     description="critical branching random walk laboratory")
    parser.add_argument("command", choices=SUBCOMMANDS)
    parser.add_argument("--config", default=None,
                        help="TOML experiment config")
    parser.add_argument("--seed", type=int, default=None,
                        help="master seed (overrides [run].seed)")
    parser.add_argument("--out", default=None,
                        help="output directory (overrides [run].out)")
    parser.add_argument("--workers", type=int, default=None,
                        help="worker count (overrides [run].workers)")
    try:
        args = parser.parse_args(argv)
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["run"]["seed"] = args.seed
        if args.out is not None:
            cfg["run"]["out"] = args.out
        if args.workers is not None:
            cfg["run"]["workers"] = args.workers
        out_dir = cfg["run"]["out"]
        payload, failed = _RUNNERS[args.command](cfg, out_dir)
        payload["command"] = args.command
        payload["config"] = cfg
        path = _write_json(out_dir, args.command.replace("-", "_"), payload)
        status = "FAIL" if failed else "ok"
        _log(out_dir, f"{args.command} {status} -> {os.path.basename(path)}")
        if failed:
            for rep in failed:
                print(f"FAILED: {rep.name} (p={rep.p_value})",
                      file=sys.stderr)
            return 2
        print(path)
        return 0
    except (est.ConfigError, est.DomainError, LawError, WindowError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except (est.ResourceError, PopulationBlowupError) as e:
        print(f"resource limit: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
