"""Command-line interface: ``gwp {simulate,fit,predict,evaluate,experiment}``.

Exit status is 0 on success, 1 on usage errors and 2 on runtime failures.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .bekk import BekkFitConfig, BekkParams, bekk_filter, bekk_forecast_next, fit_bekk
from .data import (CsvConfig, SyntheticSpec, generate_path, load_returns_csv,
                   realized_proxy, simulate_returns, write_returns_csv)
from .errors import GWPError
from .evaluation import forecast_loglik, load_config, mse_paths, run_experiment
from .inference import PosteriorSamples, SamplerConfig, run_gibbs
from .kernels import KernelFamily, KernelSpec
from .prediction import LatentMode, PredictiveRequest, predict_sigma, sample_quantiles
from .wishart import CovariancePath, vech, vech_labels

logger = logging.getLogger("gwp")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _global_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, help="random seed (default 0, or the config's seed)")
    p.add_argument("-o", "--output-dir", help="directory for outputs (default: current, "
                   "or the config's output_dir)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags()
    parser = _Parser(prog="gwp", description="Generalised Wishart process volatility models")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("simulate", parents=[common],
                       help="write a synthetic returns CSV and its true covariance path")
    p.add_argument("--kind", choices=["periodic2d", "equity"], default="periodic2d")
    p.add_argument("--n", type=int, default=291, help="number of time steps")
    p.add_argument("--periods", default="40,25,60")
    p.add_argument("--amplitude", type=float, default=0.5)
    p.add_argument("--source", help="returns CSV driving --kind equity")
    p.add_argument("--window", type=int, default=60)

    p = sub.add_parser("fit", parents=[common], help="fit a GWP or BEKK model to returns")
    p.add_argument("--model", choices=["gwp", "bekk"], default="gwp")
    p.add_argument("--returns", required=True, help="returns CSV")
    p.add_argument("--time-column")
    p.add_argument("--kernel", default="se", help="se, ou, periodic, periodic_standard")
    p.add_argument("--period", type=float, default=1.0)
    p.add_argument("--iterations", type=int, default=2000)
    p.add_argument("--burnin", type=int)
    p.add_argument("--thinning", type=int, default=10)
    p.add_argument("--nu", type=int)
    p.add_argument("--theta-prior-mean-log", type=float)
    p.add_argument("--theta-prior-sd-log", type=float, default=1.5)
    p.add_argument("--restarts", type=int, default=5)

    p = sub.add_parser("predict", parents=[common],
                       help="covariance path from a fitted model")
    p.add_argument("--state", required=True,
                   help="posterior directory (GWP) or params CSV (BEKK)")
    p.add_argument("--returns", help="returns CSV (required for BEKK)")
    p.add_argument("--time-column")
    p.add_argument("--inputs", help="comma-separated test inputs, or start:stop:step")
    p.add_argument("--mode", choices=["historical", "forecast"], default="historical")
    p.add_argument("--latent-mode", choices=[m.value for m in LatentMode], default="mean")
    p.add_argument("--quantiles", action="store_true",
                   help="also write 2.5/50/97.5 percentiles per entry (GWP)")
    p.add_argument("--out-name", default="predicted.csv")

    p = sub.add_parser("evaluate", parents=[common], help="score a predicted covariance path")
    p.add_argument("--predicted", required=True, help="covariance path CSV")
    p.add_argument("--reference", help="reference covariance path CSV")
    p.add_argument("--returns", help="returns CSV: proxy reference and forecast likelihood")
    p.add_argument("--time-column")

    p = sub.add_parser("experiment", parents=[common], help="run a full comparison")
    p.add_argument("--config", required=True, help="experiment INI file")
    p.add_argument("--dense-grid", action="store_true",
                   help="also score between observed inputs (synthetic data only)")
    return parser


def _parse_inputs(text: str) -> np.ndarray:
    if ":" in text:
        parts = [float(v) for v in text.split(":")]
        start, stop = parts[0], parts[1]
        step = parts[2] if len(parts) > 2 else 1.0
        return np.arange(start, stop, step)
    return np.array([float(v) for v in text.split(",") if v.strip()])


def _cmd_simulate(args) -> int:
    periods = tuple(float(v) for v in args.periods.split(","))
    spec = SyntheticSpec(kind=args.kind, n_points=args.n, seed=args.seed, periods=periods,
                         amplitude=args.amplitude, window=args.window)
    empirical = None
    if args.kind == "equity":
        if not args.source:
            raise UsageError("--kind equity needs --source RETURNS.csv")
        empirical = load_returns_csv(args.source)
    truth = generate_path(spec, empirical)
    obs = simulate_returns(truth, args.seed)
    os.makedirs(args.output_dir, exist_ok=True)
    write_returns_csv(obs, os.path.join(args.output_dir, "returns.csv"))
    truth.to_csv(os.path.join(args.output_dir, "truth.csv"))
    print(f"wrote {len(obs)} observations to {args.output_dir}")
    return 0


def _cmd_fit(args) -> int:
    obs = load_returns_csv(args.returns, CsvConfig(time_column=args.time_column))
    os.makedirs(args.output_dir, exist_ok=True)
    if args.model == "bekk":
        result = fit_bekk(obs, BekkFitConfig(n_restarts=args.restarts, seed=args.seed))
        result.params.to_csv(os.path.join(args.output_dir, "bekk_params.csv"))
        with open(os.path.join(args.output_dir, "bekk_report.json"), "w") as fh:
            json.dump({"loglik": result.loglik, **result.report}, fh, indent=2, default=str)
        print(f"BEKK loglik {result.loglik:.4f}; params in {args.output_dir}")
        return 0
    kernel = KernelSpec(KernelFamily.parse(args.kernel), 1.0, args.period)
    config = SamplerConfig(n_iterations=args.iterations, n_burnin=args.burnin,
                           thinning=args.thinning, seed=args.seed,
                           theta_prior_mean_log=args.theta_prior_mean_log,
                           theta_prior_sd_log=args.theta_prior_sd_log)
    samples = run_gibbs(obs, kernel, config, args.nu)
    target = os.path.join(args.output_dir, "posterior")
    samples.save(target)
    print(f"kept {len(samples)} posterior samples in {target}")
    return 0


def _cmd_predict(args) -> int:
    os.makedirs(args.output_dir, exist_ok=True)
    out_path = os.path.join(args.output_dir, args.out_name)
    if os.path.isdir(args.state):
        samples = PosteriorSamples.load(args.state)
        if args.inputs:
            test = _parse_inputs(args.inputs)
        elif args.mode == "forecast":
            t = samples.inputs
            test = np.array([t[-1] + (t[-1] - t[-2] if len(t) > 1 else 1.0)])
        else:
            test = samples.inputs
        req = PredictiveRequest(test, samples, mode=args.mode, latent_mode=args.latent_mode,
                                seed=args.seed)
        path, per_sample = predict_sigma(req)
        path.to_csv(out_path)
        if args.quantiles:
            _write_quantiles(os.path.join(args.output_dir, "quantiles.csv"), test,
                             sample_quantiles(per_sample))
    else:
        if not args.returns:
            raise UsageError("BEKK prediction needs --returns")
        params = BekkParams.from_csv(args.state)
        obs = load_returns_csv(args.returns, CsvConfig(time_column=args.time_column))
        if args.mode == "forecast":
            t = obs.inputs
            t_next = t[-1] + (t[-1] - t[-2] if len(t) > 1 else 1.0)
            path = CovariancePath([t_next], bekk_forecast_next(params, obs)[None])
        else:
            path = bekk_filter(params, obs)
        path.to_csv(out_path)
    print(f"wrote {out_path}")
    return 0


def _write_quantiles(path, inputs, q) -> None:
    import csv

    dim = q.shape[-1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "entry", "q2.5", "q50", "q97.5"])
        v = vech(q)  # (3, M, K)
        for m, t in enumerate(inputs):
            for e, lab in enumerate(vech_labels(dim)):
                w.writerow([repr(float(t)), lab] + [repr(float(v[k, m, e])) for k in range(3)])


def _cmd_evaluate(args) -> int:
    predicted = CovariancePath.from_csv(args.predicted)
    report = {}
    obs = None
    if args.returns:
        obs = load_returns_csv(args.returns, CsvConfig(time_column=args.time_column))
        keep = np.isin(obs.inputs, predicted.inputs)
        obs = obs.subset(keep)
    if args.reference:
        report["mse"] = mse_paths(predicted, CovariancePath.from_csv(args.reference))
    elif obs is not None:
        report["mse_proxy"] = mse_paths(predicted, realized_proxy(obs))
    else:
        raise UsageError("evaluate needs --reference or --returns")
    if obs is not None:
        report["loglik"] = forecast_loglik(predicted, obs)
    os.makedirs(args.output_dir, exist_ok=True)
    with open(os.path.join(args.output_dir, "metrics.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    for k, v in report.items():
        print(f"{k}: {v:.6g}")
    return 0


def _cmd_experiment(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config.reseed(args.seed)
    if args.output_dir is not None:
        config.output_dir = args.output_dir
    if args.dense_grid:
        config.dense_grid = True
    table = run_experiment(config)
    print(table.format())
    print(f"results in {config.output_dir}")
    return 0


COMMANDS = {"simulate": _cmd_simulate, "fit": _cmd_fit, "predict": _cmd_predict,
            "evaluate": _cmd_evaluate, "experiment": _cmd_experiment}


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("no command given")
    except UsageError as exc:
        print(f"gwp: error: {exc}\n", file=sys.stderr)
        parser.print_help(sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command != "experiment":
        args.seed = 0 if args.seed is None else args.seed
        args.output_dir = "." if args.output_dir is None else args.output_dir
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"gwp {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (GWPError, ValueError, OSError, np.linalg.LinAlgError) as exc:
        print(f"gwp {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
