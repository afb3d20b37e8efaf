"""Command-line front end: `fit`, `simulate`, and `diagnose` subcommands.

Configuration comes from a flat key = value file plus repeatable
``--set key=value`` overrides; every run is driven by a single seed. Exit
codes: 0 success, 2 configuration error, 3 data error, 4 numeric/fit
failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import report
from .data import load_dataset, assign_folds
from .diagnostics import (
    boundary_distances,
    boundary_mass,
    cluster_profiles,
    elbow_scan,
    pairwise_cates,
)
from .eif import minimize_semiparametric, unit_risk_scores
from .errors import ConfigError, DataError, FitError
from .kmeans import Codebook, plug_in_estimate, voronoi_labels
from .nuisance import FeatureSpec, cross_fit
from .simulation import (
    ESTIMATORS,
    PLUG_IN,
    SEMIPARAMETRIC,
    SimConfig,
    generate_sample,
    hexagon_centers,
    run_study,
)

_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}

# key -> (parser, default)
_SCHEMA: dict[str, tuple] = {
    "input": (str, None),
    "centers": (str, None),
    "p": (int, 2),
    "k": (int, 6),
    "estimator": (str, SEMIPARAMETRIC),
    "folds": (int, 5),
    "seed": (int, 1),
    "eps": (float, 0.01),
    "restarts": (int, 10),
    "method": (str, "generalized_lloyd"),
    "out": (str, "."),
    "workers": (int, 0),  # 0 = available parallelism
    "plots": (bool, False),
    "outcome.features": ("int_list", (1, 2)),
    "outcome.degree": (int, 1),
    "outcome.family": (str, "linear"),
    "propensity.features": ("int_list", (1, 2, 3)),
    "propensity.degree": (int, 1),
    "sim.delta": (float, 0.01),
    "sim.sigma": (float, 0.15),
    "sim.ns": ("int_list", (500, 1000, 2000, 4000)),
    "sim.reps": (int, 20),
    "sim.n": (int, 1200),
    "sim.estimators": ("str_list", ESTIMATORS),
    "sim.eval_draws": (int, 200_000),
    "elbow.kmin": (int, 1),
    "elbow.kmax": (int, 10),
    "boundary.tgrid": ("float_list", (0.1, 0.5, 1.0)),
}
_SIM_KEYS = tuple(k for k in _SCHEMA if k.startswith("sim."))


def _parse_value(key: str, raw: str):
    kind = _SCHEMA[key][0]
    raw = raw.strip()
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is bool:
            low = raw.lower()
            if low in _BOOL_TRUE:
                return True
            if low in _BOOL_FALSE:
                return False
            raise ValueError(raw)
        if kind == "int_list":
            return tuple(int(v.strip()) for v in raw.split(",") if v.strip())
        if kind == "float_list":
            return tuple(float(v.strip()) for v in raw.split(",") if v.strip())
        if kind == "str_list":
            return tuple(v.strip() for v in raw.split(",") if v.strip())
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def read_config_file(path: str) -> dict[str, str]:
    """Flat ``key = value`` lines; '#' starts a comment; blank lines ignored."""
    raw: dict[str, str] = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key = value")
                key, value = line.split("=", 1)
                raw[key.strip()] = value.strip()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return raw


@dataclass
class RunConfig:
    """Typed configuration for one CLI run."""

    values: dict = field(default_factory=dict)
    sim_block: bool = False

    def __getitem__(self, key: str):
        if key in self.values:
            return self.values[key]
        return _SCHEMA[key][1]

    @property
    def outcome_spec(self) -> FeatureSpec:
        return FeatureSpec(
            features=self["outcome.features"],
            degree=self["outcome.degree"],
            family=self["outcome.family"],
        )

    @property
    def propensity_spec(self) -> FeatureSpec:
        return FeatureSpec(features=self["propensity.features"], degree=self["propensity.degree"])

    def sim_config(self) -> SimConfig:
        return SimConfig(
            delta=self["sim.delta"],
            sigma=self["sim.sigma"],
            ns=self["sim.ns"],
            reps=self["sim.reps"],
            seed=self["seed"],
            K=self["folds"],
            estimators=self["sim.estimators"],
            k=self["k"],
            restarts=self["restarts"],
            eps=self["eps"],
            outcome_spec=self.outcome_spec,
            propensity_spec=self.propensity_spec,
            eval_draws=self["sim.eval_draws"],
            method=self["method"],
        )


def build_run_config(args) -> RunConfig:
    raw: dict[str, str] = {}
    if args.config:
        raw.update(read_config_file(args.config))
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        raw[key.strip()] = value.strip()

    values = {}
    for key, value in raw.items():
        if key not in _SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _parse_value(key, value)

    if args.out is not None:
        values["out"] = args.out
    if args.workers is not None:
        values["workers"] = args.workers
    if args.plots:
        values["plots"] = True

    rc = RunConfig(values=values, sim_block=any(k in values for k in _SIM_KEYS))
    if rc["k"] < 1:
        raise ConfigError("k must be >= 1")
    if rc["folds"] < 2:
        raise ConfigError("folds must be >= 2")
    if rc["estimator"] not in ESTIMATORS:
        raise ConfigError(f"estimator must be one of {ESTIMATORS}")
    return rc


def _out_dir(rc: RunConfig) -> str:
    out = rc["out"]
    os.makedirs(out, exist_ok=True)
    return out


def _load_centers(path: str) -> Codebook:
    if not path:
        raise DataError("no centers file configured")
    if not os.path.exists(path):
        raise DataError(f"centers file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if not header or header[0] != "center":
            raise DataError(f"{path}: expected header center,c1,...,cp")
        rows = []
        for line in fh:
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            try:
                rows.append([float(c) for c in cells[1:]])
            except ValueError as exc:
                raise DataError(f"{path}: non-numeric center coordinate") from exc
    if not rows:
        raise DataError(f"{path}: no centers")
    return Codebook(np.array(rows))


def cmd_fit(rc: RunConfig) -> int:
    if rc["input"] is None:
        raise ConfigError("fit requires an input path")
    if rc.sim_block:
        raise ConfigError("config must contain exactly one of input path or simulation block")
    out = _out_dir(rc)
    dataset = load_dataset(rc["input"], p=rc["p"])
    folds = assign_folds(dataset.n, rc["folds"], seed=rc["seed"])
    scores = cross_fit(dataset, folds, rc.outcome_spec, rc.propensity_spec, eps=rc["eps"])
    rng = np.random.default_rng(np.random.SeedSequence((rc["seed"], 101)))
    plug = plug_in_estimate(scores.mu_hat, rc["k"], restarts=rc["restarts"], rng=rng)
    if rc["estimator"] == PLUG_IN:
        fit = plug
        variance = None
    else:
        fit = minimize_semiparametric(scores, rc["k"], init=plug.codebook, method=rc["method"])
        variance = float(np.var(unit_risk_scores(scores, fit.codebook), ddof=1))
        report.write_risk_trace(os.path.join(out, "risk_trace.csv"), fit)
    report.write_centers(os.path.join(out, "centers.csv"), fit)
    report.write_assignments(os.path.join(out, "assignments.csv"), fit)
    report.write_fit_report(
        os.path.join(out, "fit_report.csv"), fit, rc["estimator"], dataset.n, variance
    )
    return 0


def cmd_simulate(rc: RunConfig) -> int:
    if rc["input"] is not None:
        raise ConfigError("simulate uses the simulation block, not an input path")
    out = _out_dir(rc)
    cfg = rc.sim_config()
    workers = rc["workers"] or (os.cpu_count() or 1)
    study = run_study(cfg, workers=workers)
    report.write_study(
        os.path.join(out, "study_raw.csv"), os.path.join(out, "study_summary.csv"), study
    )
    if rc["plots"]:
        report.plot_study(study, out)
    return 0


def cmd_diagnose(rc: RunConfig) -> int:
    data_mode = rc["input"] is not None
    if data_mode and rc.sim_block:
        raise ConfigError("config must contain exactly one of input path or simulation block")
    if not data_mode and not rc.sim_block:
        raise ConfigError("diagnose needs an input path or a simulation block")
    out = _out_dir(rc)
    rng = np.random.default_rng(np.random.SeedSequence((rc["seed"], 202)))

    if data_mode:
        dataset = load_dataset(rc["input"], p=rc["p"])
        folds = assign_folds(dataset.n, rc["folds"], seed=rc["seed"])
        scores = cross_fit(dataset, folds, rc.outcome_spec, rc.propensity_spec, eps=rc["eps"])
        points = scores.mu_hat
        centers = _load_centers(rc["centers"])
    else:
        cfg = rc.sim_config()
        sample = generate_sample(rc["sim.n"], np.random.default_rng(rc["seed"]), cfg)
        dataset = sample.dataset
        points = sample.mu
        centers = hexagon_centers()

    assignments = voronoi_labels(points, centers) + 1

    table = elbow_scan(points, rc["elbow.kmin"], rc["elbow.kmax"], restarts=rc["restarts"], rng=rng)
    report.write_elbow(os.path.join(out, "elbow.csv"), table)

    bisector, gap = boundary_distances(points, centers)
    t_grid = rc["boundary.tgrid"]
    masses = [boundary_mass(points, centers, t) for t in t_grid]
    bis_masses = [float(np.mean(bisector <= t)) for t in t_grid]
    report.write_boundary_mass(os.path.join(out, "boundary_mass.csv"), t_grid, masses, bis_masses)
    report.write_boundary_distances(os.path.join(out, "boundary_distances.csv"), bisector, gap)

    profile = cluster_profiles(dataset, points, assignments, k=centers.k)
    report.write_profiles(
        os.path.join(out, "cluster_covariates.csv"),
        os.path.join(out, "cluster_cates.csv"),
        profile,
    )
    pairs, values = pairwise_cates(points)
    report.write_cate_values(os.path.join(out, "cate_values.csv"), pairs, values, assignments)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="causalkmeans",
        description="Cluster estimated counterfactual mean vectors into treatment-effect subgroups.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("fit", "fit a codebook to a CSV dataset"),
        ("simulate", "run the seeded benchmark study"),
        ("diagnose", "elbow, boundary-mass, and cluster-profile reports"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="path to a key = value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--out", help="output directory")
        p.add_argument("--workers", type=int, help="parallel replication workers")
        p.add_argument("--plots", action="store_true", help="also render SVG figures")

    args = parser.parse_args(argv)
    commands = {"fit": cmd_fit, "simulate": cmd_simulate, "diagnose": cmd_diagnose}
    try:
        rc = build_run_config(args)
        return commands[args.command](rc)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (FitError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"fit error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
