"""Metrics and the GWP / WP / BEKK comparison harness.

Experiments are described by an INI file (see ``docs/config.md``).  For each
model the harness

1. fits on the first ``n_train + n_forecast`` observations and reconstructs
   the covariance path on the historical evaluation window,
2. fits on the first ``n_train`` observations and makes one-step-ahead
   forecasts for the following ``n_forecast`` inputs,

then scores against the true path (synthetic data) or the realised proxy
``x x^T`` (CSV data).
"""
from __future__ import annotations

import configparser
import csv
import logging
import math
import os
import time
import zlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .bekk import BekkFitConfig, bekk_filter, fit_bekk
from .data import (CsvConfig, SyntheticSpec, generate_path, load_returns_csv, periodic_sigma,
                   realized_proxy, simulate_returns, write_returns_csv)
from .errors import GWPError, ShapeError
from .inference import ObservationSet, SamplerConfig, gaussian_path_loglik, run_gibbs
from .kernels import DEFAULT_JITTER, KernelFamily, KernelSpec
from .prediction import LatentMode, PredictiveRequest, one_step_forecast, predict_sigma
from .wishart import CovariancePath, vech, vech_labels

logger = logging.getLogger(__name__)

RESULT_COLUMNS = ["dataset", "model", "mse_historical", "mse_forecast", "loglik_forecast",
                  "seconds", "status"]
METRICS = ("mse_historical", "mse_forecast", "loglik_forecast")
NOT_APPLICABLE = "na"
TRAINING_ERROR_CAVEAT = (
    "Historical scores against the proxy reuse the training data; treat them as a "
    "training error, not an out-of-sample measure.")


def _aligned(a_inputs, b_inputs, what):
    if len(a_inputs) != len(b_inputs):
        raise ShapeError(f"{what}: lengths {len(a_inputs)} and {len(b_inputs)} differ")
    if not np.allclose(a_inputs, b_inputs, rtol=0, atol=1e-9):
        raise ShapeError(f"{what}: inputs are not aligned")


def mse_paths(predicted: CovariancePath, reference: CovariancePath) -> float:
    """Mean squared error over time steps and the ``D(D+1)/2`` unique entries."""
    _aligned(predicted.inputs, reference.inputs, "mse_paths")
    if predicted.dim != reference.dim:
        raise ShapeError("paths have different dimensions")
    if len(predicted) == 0:
        raise ShapeError("empty paths")
    diff = vech(predicted.matrices) - vech(reference.matrices)
    return float(np.mean(diff * diff))


def forecast_loglik(predicted: CovariancePath, obs: ObservationSet) -> float:
    """Gaussian log-likelihood of the realised ``obs`` under the forecast path."""
    _aligned(predicted.inputs, obs.inputs, "forecast_loglik")
    return gaussian_path_loglik(predicted.matrices, obs.x)


# --------------------------------------------------------------------------- config


@dataclass
class ModelConfig:
    name: str
    type: str = "gwp"
    kernel: Optional[KernelSpec] = None
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    nu: Optional[int] = None
    latent_mode: LatentMode = LatentMode.EXPECTED
    condition_iterations: int = 10
    n_particles: int = 20
    refit_every: Optional[int] = None
    bekk: BekkFitConfig = field(default_factory=BekkFitConfig)


@dataclass
class ExperimentConfig:
    dataset: str = "periodic"
    data_kind: str = "periodic2d"
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    csv_path: Optional[str] = None
    csv: CsvConfig = field(default_factory=CsvConfig)
    models: list = field(default_factory=list)
    n_train: int = 200
    n_forecast: int = 91
    historical_window: str = "all"
    metrics: tuple = METRICS
    output_dir: str = "experiment-out"
    seed: int = 0
    timing: bool = True
    dense_grid: bool = False

    def validate(self, n_obs: Optional[int] = None) -> None:
        if not self.models:
            raise ValueError("at least one model is required")
        if not self.metrics:
            raise ValueError("at least one metric is required")
        bad = [m for m in self.metrics if m not in METRICS]
        if bad:
            raise ValueError(f"unknown metrics {bad}; choose from {list(METRICS)}")
        if self.n_train < 1 or self.n_forecast < 0:
            raise ValueError("need n_train >= 1 and n_forecast >= 0")
        if n_obs is not None and self.n_train + self.n_forecast > n_obs:
            raise ValueError(f"n_train + n_forecast = {self.n_train + self.n_forecast} "
                             f"exceeds the {n_obs} observations")
        if self.historical_window not in ("all", "forecast"):
            raise ValueError("historical_window must be 'all' or 'forecast'")
        names = [m.name for m in self.models]
        if len(set(names)) != len(names):
            raise ValueError("model names must be unique")

    def reseed(self, seed: int) -> None:
        """Replace the global seed and re-derive every data and model seed from it."""
        self.seed = int(seed)
        self.synthetic.seed = self.seed
        for m in self.models:
            if m.type == "gwp":
                m.sampler.seed = _model_seed(self.seed, m.name)
            else:
                m.bekk.seed = _model_seed(self.seed, m.name)


def _floats(text):
    return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())


def _model_seed(global_seed: int, name: str) -> int:
    return (int(global_seed) * 1_000_003 + zlib.crc32(name.encode())) % (2**31 - 1)


def _parse_model(name: str, sec, seed: int) -> ModelConfig:
    mtype = sec.get("type", "gwp").strip().lower()
    if mtype not in ("gwp", "bekk"):
        raise ValueError(f"model {name}: unknown type {mtype!r}")
    mseed = sec.getint("seed", _model_seed(seed, name))
    if mtype == "bekk":
        return ModelConfig(name=name, type="bekk", bekk=BekkFitConfig(
            n_restarts=sec.getint("restarts", 5), seed=mseed,
            method=sec.get("method", "L-BFGS-B"), maxiter=sec.getint("maxiter", 500),
            sigma0=sec.get("sigma0", "empirical")))
    kernel = KernelSpec(KernelFamily.parse(sec.get("kernel", "se")),
                        sec.getfloat("lengthscale", 1.0), sec.getfloat("period", 1.0))
    iters = sec.getint("iterations", 2000)
    mean_log = sec.get("theta_prior_mean_log", "").strip()
    theta_init = sec.get("theta_init", "").strip()
    sampler = SamplerConfig(
        n_iterations=iters,
        n_burnin=sec.getint("burnin", iters // 2),
        thinning=sec.getint("thinning", 10),
        theta_prior_mean_log=float(mean_log) if mean_log else None,
        theta_prior_sd_log=sec.getfloat("theta_prior_sd_log", 1.5),
        L_proposal_sd=sec.getfloat("L_proposal_sd", 0.05),
        L_prior_sd=sec.getfloat("L_prior_sd", 1.0),
        seed=mseed,
        adapt_L_proposal=sec.getboolean("adapt_L_proposal", True),
        per_dimension_theta=sec.getboolean("per_dimension_theta", False),
        theta_init=float(theta_init) if theta_init else None,
        ess_steps=sec.getint("ess_steps", 1),
        jitter=sec.getfloat("jitter", DEFAULT_JITTER),
    )
    nu = sec.get("nu", "").strip()
    refit = sec.get("refit_every", "").strip()
    return ModelConfig(name=name, type="gwp", kernel=kernel, sampler=sampler,
                       nu=int(nu) if nu else None,
                       latent_mode=LatentMode(sec.get("latent_mode", "expected")),
                       condition_iterations=sec.getint("condition_iterations", 10),
                       n_particles=sec.getint("particles", 20),
                       refit_every=int(refit) if refit else None)


def load_config(path) -> ExperimentConfig:
    """Read an experiment INI file.  Relative data paths resolve against the file."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    with open(path) as fh:
        parser.read_file(fh)
    return parse_config(parser, base_dir=os.path.dirname(os.path.abspath(path)))


def parse_config(parser: configparser.ConfigParser, base_dir: str = ".") -> ExperimentConfig:
    exp = parser["experiment"] if parser.has_section("experiment") else {}
    seed = int(exp.get("seed", 0))
    data = parser["data"] if parser.has_section("data") else parser["DEFAULT"]
    kind = data.get("kind", "periodic2d").strip().lower()

    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(base_dir, p)

    cfg = ExperimentConfig(
        dataset=exp.get("name", "periodic"),
        data_kind=kind,
        n_train=int(exp.get("n_train", 200)),
        n_forecast=int(exp.get("n_forecast", 91)),
        historical_window=exp.get("historical_window", "all").strip(),
        metrics=tuple(m.strip() for m in exp.get("metrics", ",".join(METRICS)).split(",")
                      if m.strip()),
        output_dir=resolve(exp.get("output_dir", "experiment-out")),
        seed=seed,
        timing=parser.getboolean("experiment", "timing", fallback=True),
        dense_grid=parser.getboolean("experiment", "dense_grid", fallback=False),
    )
    if kind in ("periodic2d", "equity"):
        cfg.synthetic = SyntheticSpec(
            kind=kind, n_points=int(data.get("n_points", 291)), seed=seed,
            periods=_floats(data.get("periods", "40, 25, 60")),
            amplitude=float(data.get("amplitude", 0.5)),
            max_angle=float(data.get("max_angle", math.pi / 4)),
            t0=float(data.get("t0", 1.0)), window=int(data.get("window", 60)))
    elif kind != "csv":
        raise ValueError(f"unknown data kind {kind!r}")
    if kind in ("csv", "equity"):
        if "path" not in data:
            raise ValueError(f"data kind {kind} needs a 'path'")
        cfg.csv_path = resolve(data["path"])
        cols = data.get("columns", "").strip()
        cfg.csv = CsvConfig(time_column=data.get("time_column", "").strip() or None,
                            columns=[c.strip() for c in cols.split(",")] if cols else None,
                            prices=parser.getboolean("data", "prices", fallback=False),
                            demean=parser.getboolean("data", "demean", fallback=False))
    for section in parser.sections():
        if section.startswith("model:"):
            name = section.split(":", 1)[1].strip()
            cfg.models.append(_parse_model(name, parser[section], seed))
    return cfg


# --------------------------------------------------------------------------- results


@dataclass
class ResultTable:
    rows: list = field(default_factory=list)

    def add(self, dataset, model, **cells) -> dict:
        row = {"dataset": dataset, "model": model}
        for col in RESULT_COLUMNS[2:]:
            row[col] = cells.get(col, NOT_APPLICABLE)
        self.rows.append(row)
        return row

    def get(self, model: str) -> dict:
        for row in self.rows:
            if row["model"] == model:
                return row
        raise KeyError(model)

    @staticmethod
    def _fmt(v):
        if isinstance(v, (float, np.floating)):
            return repr(float(v))
        return str(v)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(RESULT_COLUMNS)
            for row in self.rows:
                w.writerow([self._fmt(row[c]) for c in RESULT_COLUMNS])

    @classmethod
    def from_csv(cls, path) -> "ResultTable":
        table = cls()
        with open(path, newline="") as fh:
            for rec in csv.DictReader(fh):
                for c in RESULT_COLUMNS[2:6]:
                    try:
                        rec[c] = float(rec[c])
                    except ValueError:
                        pass
                table.rows.append(rec)
        return table

    def format(self) -> str:
        lines = [f"{'model':<12}{'MSE hist':>14}{'MSE fcst':>14}{'L fcst':>14}  status"]
        for r in self.rows:
            def cell(v):
                return f"{v:>14.4g}" if isinstance(v, float) else f"{str(v):>14}"
            lines.append(f"{r['model']:<12}{cell(r['mse_historical'])}{cell(r['mse_forecast'])}"
                         f"{cell(r['loglik_forecast'])}  {r['status']}")
        return "\n".join(lines)


@dataclass
class ModelOutput:
    historical: Optional[CovariancePath] = None
    forecast: Optional[CovariancePath] = None
    dense: Optional[CovariancePath] = None


def _is_regular(inputs) -> bool:
    gaps = np.diff(np.asarray(inputs, dtype=float))
    return gaps.size == 0 or np.allclose(gaps, gaps[0], rtol=1e-9, atol=1e-12)


def _run_gwp(model: ModelConfig, obs_hist, n_train, n_forecast, eval_idx, dense_inputs):
    out = ModelOutput()
    post = run_gibbs(obs_hist, model.kernel, model.sampler, model.nu)
    req = PredictiveRequest(obs_hist.inputs[eval_idx], post, latent_mode=model.latent_mode,
                            seed=model.sampler.seed)
    out.historical, _ = predict_sigma(req)
    if dense_inputs is not None:
        req = PredictiveRequest(dense_inputs, post, latent_mode=model.latent_mode,
                                seed=model.sampler.seed)
        out.dense, _ = predict_sigma(req)
    if n_forecast > 0:
        out.forecast = one_step_forecast(
            obs_hist, model.kernel, model.sampler, n_forecast, model.nu,
            latent_mode=model.latent_mode, condition_iterations=model.condition_iterations,
            n_particles=model.n_particles, refit_every=model.refit_every)
    return out


def _run_bekk(model: ModelConfig, obs_hist, n_train, n_forecast, eval_idx):
    if not _is_regular(obs_hist.inputs):
        raise GWPError("BEKK needs a contiguous, evenly spaced grid; data has gaps")
    out = ModelOutput()
    fit = fit_bekk(obs_hist, model.bekk)
    out.historical = bekk_filter(fit.params, obs_hist).subset(eval_idx)
    if n_forecast > 0:
        fit_train = fit_bekk(obs_hist.head(n_train), model.bekk)
        out.forecast = bekk_filter(fit_train.params, obs_hist).subset(
            slice(n_train, n_train + n_forecast))
    return out


def _write_plot_data(path, outputs: dict, truth: Optional[CovariancePath],
                     proxy: CovariancePath) -> None:
    """Long-format traces: one row per (model, kind, input, entry)."""
    dim = proxy.dim
    labels = vech_labels(dim)
    index = {float(t): i for i, t in enumerate(proxy.inputs)}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "kind", "t", "entry", "prediction", "truth", "proxy"])
        for name, out in outputs.items():
            for kind in ("historical", "forecast"):
                p = getattr(out, kind)
                if p is None:
                    continue
                pv = vech(p.matrices)
                for n, t in enumerate(p.inputs):
                    i = index[float(t)]
                    tv = vech(truth.matrices[i]) if truth is not None else None
                    sv = vech(proxy.matrices[i])
                    for e, lab in enumerate(labels):
                        w.writerow([name, kind, repr(float(t)), lab, repr(float(pv[n, e])),
                                    repr(float(tv[e])) if tv is not None else NOT_APPLICABLE,
                                    repr(float(sv[e]))])


def load_dataset(config: ExperimentConfig):
    """``(observations, truth path or None)`` for the configured data source."""
    if config.data_kind == "periodic2d":
        truth = generate_path(config.synthetic)
        return simulate_returns(truth, config.seed), truth
    if config.data_kind == "equity":
        empirical = load_returns_csv(config.csv_path, config.csv)
        truth = generate_path(config.synthetic, empirical)
        return simulate_returns(truth, config.seed), truth
    return load_returns_csv(config.csv_path, config.csv), None


def run_experiment(config: ExperimentConfig) -> ResultTable:
    """Fit every configured model, score it, and write all artefacts to ``output_dir``."""
    obs, truth = load_dataset(config)
    config.validate(len(obs))
    out_dir = config.output_dir
    os.makedirs(os.path.join(out_dir, "paths"), exist_ok=True)
    n_used = config.n_train + config.n_forecast
    obs_hist = obs.head(n_used)
    truth_used = truth.subset(slice(0, n_used)) if truth is not None else None
    proxy = realized_proxy(obs_hist)
    reference = truth_used if truth_used is not None else proxy
    if config.historical_window == "all":
        eval_idx = slice(0, n_used)
    else:
        eval_idx = slice(config.n_train, n_used)
    fc_idx = slice(config.n_train, n_used)
    dense_inputs = None
    if config.dense_grid and config.data_kind == "periodic2d":
        t = obs_hist.inputs[eval_idx]
        dense_inputs = 0.5 * (t[:-1] + t[1:])

    write_returns_csv(obs_hist, os.path.join(out_dir, "returns.csv"))
    if truth_used is not None:
        truth_used.to_csv(os.path.join(out_dir, "truth.csv"))

    table = ResultTable()
    proxy_rows, dense_rows = [], []
    outputs = {}
    for model in config.models:
        start = time.perf_counter()
        cells, status = {}, "ok"
        try:
            if model.type == "gwp":
                out = _run_gwp(model, obs_hist, config.n_train, config.n_forecast, eval_idx,
                               dense_inputs)
            else:
                out = _run_bekk(model, obs_hist, config.n_train, config.n_forecast, eval_idx)
        except (GWPError, ValueError, np.linalg.LinAlgError) as exc:
            logger.error("model %s failed: %s", model.name, exc)
            out = ModelOutput()
            status = f"failed: {exc}"
        outputs[model.name] = out
        seconds = time.perf_counter() - start

        for metric in config.metrics:
            try:
                if metric == "mse_historical" and out.historical is not None:
                    cells[metric] = mse_paths(out.historical, reference.subset(eval_idx))
                elif metric == "mse_forecast" and out.forecast is not None:
                    cells[metric] = mse_paths(out.forecast, reference.subset(fc_idx))
                elif metric == "loglik_forecast" and out.forecast is not None:
                    cells[metric] = forecast_loglik(out.forecast, obs_hist.subset(fc_idx))
                elif status != "ok":
                    cells[metric] = "failed"
            except GWPError as exc:
                cells[metric] = "failed"
                status = f"failed: {exc}"
        table.add(config.dataset, model.name, seconds=seconds if config.timing else
                  NOT_APPLICABLE, status=status, **cells)

        for kind in ("historical", "forecast", "dense"):
            p = getattr(out, kind)
            if p is not None:
                p.to_csv(os.path.join(out_dir, "paths", f"{model.name}_{kind}.csv"))
        if truth_used is not None:
            proxy_rows.append([config.dataset, model.name] + [
                repr(mse_paths(p, proxy.subset(idx))) if p is not None else NOT_APPLICABLE
                for p, idx in ((out.historical, eval_idx), (out.forecast, fc_idx))])
        if dense_inputs is not None:
            dense_truth = CovariancePath(dense_inputs, periodic_sigma(
                dense_inputs, config.synthetic.periods, config.synthetic.amplitude,
                config.synthetic.max_angle))
            dense_rows.append([model.name, repr(mse_paths(out.dense, dense_truth))
                               if out.dense is not None else NOT_APPLICABLE])

    table.to_csv(os.path.join(out_dir, "results.csv"))
    if proxy_rows:
        with open(os.path.join(out_dir, "proxy_results.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["dataset", "model", "mse_historical_proxy", "mse_forecast_proxy"])
            w.writerows(proxy_rows)
    if dense_rows:
        with open(os.path.join(out_dir, "dense_grid.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["model", "mse_dense"])
            w.writerows(dense_rows)
    _write_plot_data(os.path.join(out_dir, "plot_data.csv"), outputs, truth_used, proxy)
    with open(os.path.join(out_dir, "report.txt"), "w") as fh:
        fh.write(f"dataset: {config.dataset}\n")
        fh.write(f"reference: {'true covariance' if truth is not None else 'proxy x x^T'}\n\n")
        fh.write(table.format() + "\n")
        if truth is None:
            fh.write("\n" + TRAINING_ERROR_CAVEAT + "\n")
    if truth is None:
        logger.warning(TRAINING_ERROR_CAVEAT)
    return table
