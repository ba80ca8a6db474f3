"""Command-line driver: every experiment writes plot-ready CSV/JSON plus
a manifest.json echoing the configuration, seed and library versions so
the artifact can be reproduced byte-for-byte.

Configs are flat ``key=value`` text files ('#' starts a comment); any
key can be overridden on the command line with ``--set key=value``.
Exit codes: 0 ok, 2 configuration error, 3 numerical failure,
4 impractically low acceptance rate.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import conditioning, dual, genealogy, io, yaglom
from .errors import ConfigError, ImpracticalRate, NumericalFailure, UnsupportedRegime
from .model import ModelParams, simulate, simulate_with_genealogy
from .rng import derive

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IMPRACTICAL = 4

OUTPUT_DIR_ENV = "LOGIBRANCH_OUT"


def _floats(text):
    return [float(v) for v in str(text).split(",") if v.strip() != ""]


def _ints(text):
    return [int(v) for v in str(text).split(",") if v.strip() != ""]


def _bool(text):
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("true", "1", "yes"):
        return True
    if t in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (parser, default); REQUIRED means the key must be supplied
REQUIRED = object()

SCHEMAS = {
    "simulate": {
        "b": (float, REQUIRED), "c": (float, REQUIRED), "d": (float, REQUIRED),
        "z0": (int, REQUIRED), "horizon": (float, REQUIRED),
        "genealogy": (_bool, False), "seed": (int, 0),
    },
    "rates-T": {
        "b": (float, REQUIRED), "c": (float, REQUIRED), "d": (float, REQUIRED),
        "T": (float, REQUIRED), "t": (float, 0.0), "K": (int, 20),
        "paths": (int, 40000), "dt": (float, 0.0), "method": (str, "sde"),
        "seed": (int, 0),
    },
    "rates-Q": {
        "b": (float, REQUIRED), "c": (float, REQUIRED), "d": (float, REQUIRED),
        "K": (int, 200), "grid_size": (int, 4000),
        "weak_approx": (_bool, False), "alpha_convention": (str, "s(s-mu)/nu"),
        "seed": (int, 0),
    },
    "q-stationary": {
        "b": (float, REQUIRED), "c": (float, REQUIRED), "d": (float, REQUIRED),
        "K": (int, 200), "grid_size": (int, 4000), "seed": (int, 0),
    },
    "pi-star": {
        "s": (float, REQUIRED), "nu": (float, REQUIRED), "mu": (float, REQUIRED),
        "grid_size": (int, 2000), "seed": (int, 0),
    },
    "yaglom": {
        "b": (float, REQUIRED), "c": (float, REQUIRED), "d": (float, REQUIRED),
        "K": (int, 400), "tol": (float, 1e-10),
        "feynman_kac": (_bool, False), "theta_grid": (_floats, [0.2, 0.5, 0.8]),
        "paths": (int, 20000), "dt": (float, 1e-3),
        "empirical": (_bool, False), "T": (float, 50.0), "z0": (int, 3),
        "accepted": (int, 5000), "method": (str, "rejection"),
        "seed": (int, 0),
    },
    "gamma-scan": {
        "b": (float, REQUIRED), "c": (float, REQUIRED), "d": (float, REQUIRED),
        "lambda_grid": (_floats, REQUIRED), "sample_time": (float, REQUIRED),
        "replicates": (int, 200), "z0": (int, 0), "seed": (int, 0),
        "threads": (int, 0),
    },
    "mrca": {
        "b": (float, REQUIRED), "c": (float, REQUIRED), "d": (float, REQUIRED),
        "sample_time": (float, REQUIRED), "replicates": (int, 1000),
        "z0": (int, 0), "seed": (int, 0), "threads": (int, 0),
    },
    "dual-check": {
        "N": (int, 50), "s": (float, 0.5), "nu": (float, 1.0), "mu": (float, 0.3),
        "t": (float, 5.0), "replicates": (int, 10000), "max_sample": (int, 5),
        "seed": (int, 0),
    },
    "scaling-check": {
        "b": (float, REQUIRED), "c": (float, REQUIRED),
        "K_list": (_ints, REQUIRED), "horizon": (float, 2.0),
        "paths": (int, 2000), "dt": (float, 1e-3), "seed": (int, 0),
    },
}


def parse_config_file(path) -> dict:
    raw = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = body.split("=", 1)
        raw[key.strip()] = value.strip()
    return raw


def resolve_config(experiment: str, raw: dict) -> dict:
    if experiment not in SCHEMAS:
        raise ConfigError(f"unknown experiment {experiment!r}; choose from {sorted(SCHEMAS)}")
    schema = SCHEMAS[experiment]
    unknown = set(raw) - set(schema) - {"out"}
    if unknown:
        raise ConfigError(f"unknown keys for {experiment}: {sorted(unknown)}")
    config = {}
    for key, (parse, default) in schema.items():
        if key in raw:
            try:
                config[key] = parse(raw[key])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key}: {raw[key]!r} ({exc})") from exc
        elif default is REQUIRED:
            raise ConfigError(f"missing required key {key!r} for {experiment}")
        else:
            config[key] = default
    if "out" in raw:
        config["out"] = raw["out"]
    return config


def validate_config(experiment: str, raw: dict) -> list[str]:
    """Schema plus regime checks, without running anything."""
    violations = []
    try:
        config = resolve_config(experiment, raw)
    except ConfigError as exc:
        return [str(exc)]
    def model_ok():
        try:
            ModelParams(config["b"], config["c"], config["d"])
            return True
        except ValueError as exc:
            violations.append(str(exc))
            return False
    if experiment in ("simulate", "rates-T", "rates-Q", "q-stationary", "yaglom",
                      "gamma-scan", "mrca"):
        if not model_ok():
            return violations
    if experiment == "yaglom" and config["c"] == 0:
        violations.append("unsupported-regime: yaglom requires c > 0")
    if experiment in ("rates-Q", "q-stationary") and config["c"] == 0:
        violations.append(f"unsupported-regime: {experiment} requires c > 0")
    if experiment == "rates-Q" and config["weak_approx"]:
        if config["b"] <= config["d"]:
            violations.append(
                "unsupported-regime: weak-competition approximation needs b > d"
            )
        if config["alpha_convention"] not in conditioning.ALPHA_CONVENTIONS:
            violations.append(
                f"alpha_convention must be one of {conditioning.ALPHA_CONVENTIONS}"
            )
    if experiment == "pi-star" and (config["nu"] <= 0 or config["mu"] <= 0):
        violations.append("unsupported-regime: pi-star needs nu > 0 and mu > 0")
    if experiment == "rates-T" and not config["t"] < config["T"]:
        violations.append("need t < T")
    if experiment == "scaling-check":
        ks = config["K_list"]
        if any(k2 <= k1 for k1, k2 in zip(ks, ks[1:])):
            violations.append("K_list must be increasing")
        if ks and min(ks) <= 2 * config["b"]:
            violations.append("smallest K must exceed 2*b")
    return violations


# ---------------------------------------------------------------------------
# Runners
# ---------------------------------------------------------------------------

def _model(config):
    return ModelParams(config["b"], config["c"], config["d"])


def run_simulate(config, outdir):
    p = _model(config)
    if config["genealogy"]:
        traj, log = simulate_with_genealogy(p, config["z0"], config["horizon"], config["seed"])
        log.to_csv(outdir / "genealogy.csv")
    else:
        traj = simulate(p, config["z0"], config["horizon"], config["seed"])
    traj.to_csv(outdir / "trajectory.csv")


def run_rates_T(config, outdir):
    p = _model(config)
    dt = config["dt"] or None
    table = conditioning.rate_table_T(
        p, config["T"], config["t"], config["K"], M=config["paths"],
        dt=dt, seed=config["seed"], method=config["method"],
    )
    io.write_json(outdir / "rate_table_T.json", table.to_json_dict())


def run_rates_Q(config, outdir):
    p = _model(config)
    table = conditioning.rate_table_Q(p, config["K"], config["grid_size"])
    if config["weak_approx"]:
        ks = np.arange(1, min(config["K"], 50))
        approx = conditioning.r_star_weak(p, ks, config["alpha_convention"])
        table.diagnostics["weak_approx"] = {
            "alpha_convention": config["alpha_convention"],
            "k": ks.tolist(),
            "r_up_factor": approx.tolist(),
            "quadrature_r_up_factor": table.diagnostics["r_up"][: len(ks)].tolist(),
        }
    io.write_json(outdir / "rate_table_Q.json", table.to_json_dict())


def run_q_stationary(config, outdir):
    p = _model(config)
    table = conditioning.rate_table_Q(p, config["K"], config["grid_size"])
    pmf = conditioning.q_stationary(table)
    pmf.to_csv(outdir / "q_stationary.csv")


def run_pi_star(config, outdir):
    grid = dual.conditioned_stationary_density(
        config["s"], config["nu"], config["mu"], config["grid_size"]
    )
    grid.to_csv(outdir / "pi_star.csv")


def run_yaglom(config, outdir):
    p = _model(config)
    sol = yaglom.yaglom_recursion(p, K=config["K"], tol=config["tol"])
    io.write_json(outdir / "yaglom.json", sol.to_json_dict())
    if config["feynman_kac"]:
        fk = yaglom.yaglom_feynman_kac(
            p, sol.a, config["theta_grid"], M=config["paths"],
            dt=config["dt"], seed=config["seed"],
        )
        rows = [
            (th, r["estimate"], r["se"], sol.pgf(np.array([th]))[0], r["n_censored"])
            for th, r in sorted(fk.items())
        ]
        io.write_csv(outdir / "yaglom_fk.csv",
                     ["theta", "G_hat", "se", "G_recursion", "n_censored"], rows)
    if config["empirical"]:
        emp = yaglom.yaglom_empirical(
            p, config["T"], config["z0"], config["accepted"],
            seed=config["seed"], method=config["method"],
        )
        emp.to_csv(outdir / "yaglom_empirical.csv")


def run_gamma_scan(config, outdir):
    p = _model(config)
    rows = genealogy.gamma_scan(
        p, config["lambda_grid"], config["sample_time"], config["replicates"],
        seed=config["seed"], z0=config["z0"] or None,
        threads=config["threads"] or None,
    )
    genealogy.gamma_rows_to_csv(rows, outdir / "gamma_scan.csv")


def run_mrca(config, outdir):
    p = _model(config)
    samples = genealogy.mrca_experiment(
        p, config["sample_time"], config["replicates"],
        seed=config["seed"], z0=config["z0"] or None,
        threads=config["threads"] or None,
    )
    genealogy.mrca_samples_to_csv(samples, outdir / "mrca.csv")


def run_dual_check(config, outdir):
    N, s, nu, mu, t = (config[k] for k in ("N", "s", "nu", "mu", "t"))
    reps, kmax, seed = config["replicates"], config["max_sample"], config["seed"]
    violations = 0
    survived_count = np.zeros(kmax)
    moment_sum = np.zeros(kmax)
    per_size = np.zeros(kmax)
    for rep in range(reps):
        real = dual.moran_simulate(N, s, nu, mu, t, seed=derive(seed, rep))
        k0 = 1 + rep % kmax
        survived, _, _ = dual.asg_trace(real, range(k0))
        types = real.forward_types()
        if survived != bool(types[:k0].any()):
            violations += 1
        per_size[k0 - 1] += 1
        survived_count[k0 - 1] += survived
        frac = types.mean()
        moment_sum += 1.0 - (1.0 - frac) ** np.arange(1, kmax + 1)
    rows = []
    for k in range(1, kmax + 1):
        phat = survived_count[k - 1] / per_size[k - 1]
        mhat = moment_sum[k - 1] / reps
        rows.append((k, phat, mhat, per_size[k - 1]))
    io.write_csv(outdir / "dual_check.csv",
                 ["sample_size", "p_ancestry_survives", "type_a_moment", "n_reps"], rows)
    io.write_json(outdir / "dual_check.json", {
        "violations": violations, "replicates": reps,
        "N": N, "s": s, "nu": nu, "mu": mu, "t": t,
    })
    if violations:
        raise NumericalFailure(
            f"{violations} violations of the pathwise ancestry identity",
            diagnostics={"violations": violations},
        )


def run_scaling_check(config, outdir):
    report = conditioning.scaling_check(
        config["b"], config["c"], config["K_list"], config["horizon"],
        n_paths=config["paths"], dt=config["dt"], seed=config["seed"],
    )
    io.write_csv(outdir / "scaling_check.csv", ["K", "w1"],
                 zip(report["K"], report["w1"]))


RUNNERS = {
    "simulate": run_simulate,
    "rates-T": run_rates_T,
    "rates-Q": run_rates_Q,
    "q-stationary": run_q_stationary,
    "pi-star": run_pi_star,
    "yaglom": run_yaglom,
    "gamma-scan": run_gamma_scan,
    "mrca": run_mrca,
    "dual-check": run_dual_check,
    "scaling-check": run_scaling_check,
}


def _output_dir(experiment, config, flag_value):
    if flag_value:
        return Path(flag_value)
    env = os.environ.get(OUTPUT_DIR_ENV)
    if env:
        return Path(env)
    if "out" in config:
        return Path(config["out"])
    return Path(f"logibranch-{experiment}")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="logibranch",
        description="Experiments on the logistic branching process conditioned on non-extinction.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    names = sorted(RUNNERS) + ["validate"]
    for name in names:
        sp = sub.add_parser(name)
        if name == "validate":
            sp.add_argument("experiment", choices=sorted(RUNNERS))
        sp.add_argument("--config", help="flat key=value config file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key (repeatable)")
        if name != "validate":
            sp.add_argument("--out", help=f"output directory (or ${OUTPUT_DIR_ENV})")
            sp.add_argument("--threads", type=int, default=None,
                            help="cap on worker threads for replicate batches")
    return parser


def _raw_config(args):
    raw = parse_config_file(args.config) if args.config else {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        raw[key.strip()] = value.strip()
    return raw


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw = _raw_config(args)
        if args.command == "validate":
            violations = validate_config(args.experiment, raw)
            for v in violations:
                print(f"violation: {v}")
            if not violations:
                print("ok")
            return EXIT_CONFIG if violations else EXIT_OK
        experiment = args.command
        violations = validate_config(experiment, raw)
        if violations:
            for v in violations:
                print(f"config error: {v}", file=sys.stderr)
            return EXIT_CONFIG
        config = resolve_config(experiment, raw)
        if args.threads is not None and "threads" in SCHEMAS[experiment]:
            config["threads"] = args.threads
        outdir = _output_dir(experiment, config, args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        started = time.perf_counter()
        RUNNERS[experiment]({k: v for k, v in config.items() if k != "out"}, outdir)
        wall = time.perf_counter() - started
        io.write_json(
            outdir / "manifest.json",
            io.manifest({k: v for k, v in config.items() if k != "out"},
                        config.get("seed"), wall),
        )
        print(f"wrote {outdir}")
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except UnsupportedRegime as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ImpracticalRate as exc:
        print(f"impractical acceptance rate: {exc}", file=sys.stderr)
        return EXIT_IMPRACTICAL
    except NumericalFailure as exc:
        print(f"numerical failure: {exc} {exc.diagnostics}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
