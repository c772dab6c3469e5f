"""Command-line interface: simulate | weights | fit | contrast.

Every run writes ``manifest.json`` into the output directory echoing the
fully resolved configuration, so a manifest plus its seed reproduces every
output byte for byte.  Model artifacts are JSON; anything tabular or
plottable is CSV.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .data import read_cohort_csv, validate_cohort, write_cohort_csv
from .errors import IdmsmError
from .frailty import (
    EMControls,
    fit_general_markov,
    individual_contrasts,
)
from .propensity import fit_logistic, ip_weights, smd
from .resample import BootstrapPlan, bayesian_bootstrap, bootstrap
from .simulate import SimConfig, generate
from .usual import default_grid, default_t1, fit_usual_markov, risk_contrast


def _add_weight_options(p):
    p.add_argument("--preset", choices=["observational", "simulation"],
                   default="observational",
                   help="observational: stabilized weights trimmed to (0.1, 10); "
                        "simulation: plain unstabilized weights")
    p.add_argument("--stabilize", dest="stabilize", action="store_true", default=None)
    p.add_argument("--no-stabilize", dest="stabilize", action="store_false")
    p.add_argument("--trim", nargs=2, type=float, metavar=("LO", "HI"), default=None)
    p.add_argument("--no-trim", dest="no_trim", action="store_true")


def _resolve_weight_options(args):
    stabilize = args.preset == "observational"
    trim = (0.1, 10.0) if args.preset == "observational" else None
    if args.stabilize is not None:
        stabilize = args.stabilize
    if args.trim is not None:
        trim = tuple(args.trim)
    if getattr(args, "no_trim", False):
        trim = None
    return stabilize, trim


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="idmsm",
        description="Marginal structural illness-death models for "
                    "semi-competing risks data",
    )
    parser.add_argument("--config", type=Path, default=None,
                        help="JSON file whose keys mirror the long flags")
    parser.add_argument("--threads", type=int,
                        default=int(os.environ.get("IDMSM_THREADS", "1")))
    sub = parser.add_subparsers(dest="command", required=True)
    children = []

    p_sim = sub.add_parser("simulate", help="generate a synthetic cohort")
    p_sim.add_argument("--n", type=int, default=500)
    p_sim.add_argument("--sigma2", type=float, default=0.0)
    p_sim.add_argument("--beta", nargs=3, type=float, default=[1.0, 1.0, 0.5],
                       metavar=("B1", "B2", "B3"))
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--output-dir", type=Path, default=Path("."))

    p_w = sub.add_parser("weights", help="estimate IP weights and balance")
    p_w.add_argument("--input", type=Path, required=True)
    p_w.add_argument("--output-dir", type=Path, default=Path("."))
    _add_weight_options(p_w)

    p_fit = sub.add_parser("fit", help="fit a structural model")
    p_fit.add_argument("--input", type=Path, required=True)
    p_fit.add_argument("--model", choices=["usual", "general"], default="usual")
    p_fit.add_argument("--output-dir", type=Path, default=Path("."))
    p_fit.add_argument("--max-iter", type=int, default=500)
    p_fit.add_argument("--quad-nodes", type=int, default=20)
    p_fit.add_argument("--allow-nonconverged", action="store_true")
    _add_weight_options(p_fit)

    p_con = sub.add_parser("contrast", help="risk curves and contrasts")
    p_con.add_argument("--input", type=Path, required=True)
    p_con.add_argument("--model", choices=["usual", "general"], default="usual")
    p_con.add_argument("--kind", choices=["f1", "f2", "f12"], default="f1")
    p_con.add_argument("--t1", type=float, default=None,
                       help="illness time fixed in the f12 curve")
    p_con.add_argument("--grid", type=str, default=None,
                       help="START:STOP:COUNT; default = observed event times")
    p_con.add_argument("--boot", type=int, default=0,
                       help="standard bootstrap replicates for interval bounds")
    p_con.add_argument("--individual", action="store_true",
                       help="per-subject contrasts at --time (general model only)")
    p_con.add_argument("--time", type=float, default=None)
    p_con.add_argument("--bayes-boot", type=int, default=0,
                       help="Bayesian bootstrap replicates for per-subject intervals")
    p_con.add_argument("--seed", type=int, default=0)
    p_con.add_argument("--max-iter", type=int, default=500)
    p_con.add_argument("--quad-nodes", type=int, default=20)
    p_con.add_argument("--output-dir", type=Path, default=Path("."))
    _add_weight_options(p_con)
    children.extend([p_sim, p_w, p_fit, p_con])
    return parser, children


def _write_manifest(outdir: Path, args):
    resolved = {
        k: (str(v) if isinstance(v, Path) else v)
        for k, v in vars(args).items()
    }
    resolved["version"] = __version__
    with open(outdir / "manifest.json", "w") as fh:
        json.dump(resolved, fh, indent=2, sort_keys=True)


def _load_cohort(path):
    return validate_cohort(read_cohort_csv(path))


def _weights_for(cohort, args):
    stabilize, trim = _resolve_weight_options(args)
    model = fit_logistic(cohort)
    w = ip_weights(model, cohort, stabilized=stabilize, trim=trim)
    return model, w, {"source": "logistic", "stabilized": stabilize, "trim": trim}


def _write_weights(outdir, cohort, w):
    pd.DataFrame({"id": cohort.ids, "weight": w}).to_csv(outdir / "weights.csv", index=False)
    smd(cohort, w).to_csv(outdir / "smd.csv", index=False)


def cmd_simulate(args) -> int:
    outdir = args.output_dir
    outdir.mkdir(parents=True, exist_ok=True)
    config = SimConfig(n=args.n, beta=tuple(args.beta), sigma2=args.sigma2, seed=args.seed)
    records, truth = generate(config)
    write_cohort_csv(outdir / "cohort.csv", records)
    truth.to_csv(outdir / "truth.csv", index=False)
    _write_manifest(outdir, args)
    return 0


def cmd_weights(args) -> int:
    outdir = args.output_dir
    outdir.mkdir(parents=True, exist_ok=True)
    cohort = _load_cohort(args.input)
    _, w, _ = _weights_for(cohort, args)
    _write_weights(outdir, cohort, w)
    _write_manifest(outdir, args)
    return 0


def cmd_fit(args) -> int:
    outdir = args.output_dir
    outdir.mkdir(parents=True, exist_ok=True)
    cohort = _load_cohort(args.input)
    _, w, provenance = _weights_for(cohort, args)
    _write_weights(outdir, cohort, w)
    if args.model == "usual":
        fit = fit_usual_markov(cohort, w, provenance)
        artifact = fit.to_dict()
        converged = True
    else:
        controls = EMControls(max_iter=args.max_iter, quad_nodes=args.quad_nodes)
        fit = fit_general_markov(cohort, w, controls, provenance)
        artifact = fit.to_dict()
        converged = fit.converged
        pd.DataFrame({
            "id": cohort.ids,
            "b_mean": fit.posterior_moments.b,
            "b2_mean": fit.posterior_moments.b2,
            "exp_b_mean": fit.posterior_moments.exp_b,
        }).to_csv(outdir / "posterior_moments.csv", index=False)
    with open(outdir / "fit.json", "w") as fh:
        json.dump(artifact, fh, indent=2)
    _write_manifest(outdir, args)
    if not converged and not args.allow_nonconverged:
        print("fit did not converge (see fit.json); "
              "pass --allow-nonconverged to accept", file=sys.stderr)
        return 1
    return 0


def _parse_grid(spec, cohort):
    if spec is None:
        return default_grid(cohort)
    start, stop, count = spec.split(":")
    return np.linspace(float(start), float(stop), int(count))


def cmd_contrast(args) -> int:
    outdir = args.output_dir
    outdir.mkdir(parents=True, exist_ok=True)
    cohort = _load_cohort(args.input)
    _, w, provenance = _weights_for(cohort, args)
    if args.individual or args.bayes_boot:
        if args.model != "general":
            print("individual contrasts require --model general", file=sys.stderr)
            return 1
        if args.time is None:
            print("--individual requires --time", file=sys.stderr)
            return 1

    grid = _parse_grid(args.grid, cohort)
    t1 = args.t1
    if args.kind == "f12":
        if t1 is None:
            t1 = default_t1(cohort)
        if args.grid is None:
            # The default grid spans all event times; the f12 curve only
            # exists from t1 onward.
            grid = np.concatenate([[t1], grid[grid > t1]])
    controls = EMControls(max_iter=args.max_iter, quad_nodes=args.quad_nodes)

    def fit_model(c, weights):
        if args.model == "usual":
            return fit_usual_markov(c, weights, provenance)
        return fit_general_markov(c, weights, controls, provenance)

    fit = fit_model(cohort, w)
    series = risk_contrast(fit, args.kind, grid, t1)
    table = pd.DataFrame({
        "t": series.grid, "kind": args.kind,
        "a0": series.a0, "a1": series.a1,
        "rd": series.rd, "rr": series.rr,
    })

    stabilize, trim = _resolve_weight_options(args)

    def weight_fn(c):
        return ip_weights(fit_logistic(c), c, stabilized=stabilize, trim=trim)

    if args.boot:
        def estimator(c, weights):
            s = risk_contrast(fit_model(c, weights), args.kind, grid, t1)
            return np.concatenate([s.rd, s.rr])

        plan = BootstrapPlan(replicates=args.boot, seed=args.seed)
        result = bootstrap(cohort, plan, estimator, weight_fn, threads=args.threads)
        k = grid.size
        table["rd_lo"] = result.percentile_lo[:k]
        table["rd_hi"] = result.percentile_hi[:k]
        table["rr_lo"] = result.percentile_lo[k:]
        table["rr_hi"] = result.percentile_hi[k:]
    table.to_csv(outdir / f"contrast_{args.kind}.csv", index=False)

    if args.individual:
        per_subject = individual_contrasts(fit, cohort, args.time, args.kind, t1)
        if args.bayes_boot:
            def fit_and_contrast(c, weights):
                f = fit_model(c, weights)
                tab = individual_contrasts(f, c, args.time, args.kind, t1)
                return tab[["ird", "irr"]].to_numpy()

            plan = BootstrapPlan(replicates=args.bayes_boot, seed=args.seed, mode="bayesian")
            result = bayesian_bootstrap(cohort, plan, fit_and_contrast, weight_fn,
                                        threads=args.threads)
            per_subject["ird_lo"] = result.lo[:, 0]
            per_subject["ird_hi"] = result.hi[:, 0]
            per_subject["irr_lo"] = result.lo[:, 1]
            per_subject["irr_hi"] = result.hi[:, 1]
        per_subject.to_csv(outdir / "individual_contrasts.csv", index=False)

    _write_manifest(outdir, args)
    if args.model == "general" and not fit.converged and not getattr(args, "allow_nonconverged", False):
        print("fit did not converge", file=sys.stderr)
        return 1
    return 0


def main(argv=None) -> int:
    parser, children = _build_parser()
    # First pass picks up --config so its values become defaults; explicit
    # flags still override.  Defaults must be pushed into every subparser
    # because those re-apply their own defaults after the parent.
    known, _ = parser.parse_known_args(argv)
    if known.config is not None:
        with open(known.config) as fh:
            config = json.load(fh)
        for p in [parser, *children]:
            dests = {a.dest for a in p._actions}
            p.set_defaults(**{k: v for k, v in config.items() if k in dests})
    args = parser.parse_args(argv)
    try:
        if args.command == "simulate":
            return cmd_simulate(args)
        if args.command == "weights":
            return cmd_weights(args)
        if args.command == "fit":
            return cmd_fit(args)
        if args.command == "contrast":
            return cmd_contrast(args)
    except IdmsmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 1
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
