"""Experiment drivers: each returns a CsvTable whose bytes depend only on (config, seed)."""

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence, TypeVar, Union

import numpy as np

from smoothloc.concentration import (
    CenteredExponentialVectors,
    GaussianVectors,
    ScaledRademacherVectors,
    TailReport,
    VectorGenerator,
    tail_report,
)
from smoothloc.config import ExperimentConfig
from smoothloc.errors import ConfigurationError, SmoothLocError
from smoothloc.estimator1d import Config1d, EstimateReport, global_mle_1d
from smoothloc.estimatorhd import ConfigHd, ReportHd, global_mle_hd
from smoothloc.model import Density1d, DensityHd, GaussianSawtooth
from smoothloc.modelspec import parse_model, parse_model_1d, parse_model_hd
from smoothloc.rng import RngSeed
from smoothloc.smoothing import SmoothedModelHd, fisher_sandwich, score_vector_generator, smoothed_1d
from smoothloc.trace import ExperimentTracer, SilentTracer
from smoothloc.util import format_number

Row = tuple[object, ...]


@dataclass
class CsvTable:
    header: tuple[str, ...]
    rows: list[Row] = field(default_factory=list)

    def column(self, name: str) -> list[object]:
        i = self.header.index(name)
        return [row[i] for row in self.rows]

    def data_rows(self) -> list[Row]:
        return [row for row in self.rows if row[0] != "summary"]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.header)
        for row in self.rows:
            writer.writerow([format_number(v) for v in row])
        return buf.getvalue()

    def write(self, path: Path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(self.to_csv())


T = TypeVar("T")
TrialOutcome = Union[T, SmoothLocError]


def run_trials(
    trial: Callable[[int], T], trials: int, threads: int
) -> list[TrialOutcome[T]]:
    """Run trial(0..trials-1) on a worker pool; outcomes come back in trial order."""

    def capture(index: int) -> TrialOutcome[T]:
        try:
            return trial(index)
        except SmoothLocError as e:
            return e

    if threads <= 1:
        return [capture(i) for i in range(trials)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(capture, range(trials)))


def _median(values: Sequence[float]) -> float:
    return float(np.median(values)) if len(values) else math.nan


def run_fisher_sweep(model_spec: str, r_grid: Sequence[float]) -> CsvTable:
    base = parse_model_1d(model_spec)
    table = CsvTable(("r", "fisher", "lower", "upper"))
    for r in r_grid:
        m = smoothed_1d(base, float(r))
        lower, upper = fisher_sandwich(m)
        table.rows.append((float(r), m.fisher, lower, upper))
    return table


def run_fisher_sweep_config(cfg: ExperimentConfig, tracer: ExperimentTracer = SilentTracer()) -> CsvTable:
    if not cfg.r_grid:
        raise ConfigurationError("fisher-sweep needs a non-empty r_grid")
    tracer.on_experiment_start("fisher-sweep", len(cfg.r_grid))
    table = run_fisher_sweep(cfg.model, cfg.r_grid)
    for row in table.rows:
        tracer.on_row(row)
    tracer.on_experiment_end("fisher-sweep", len(table.rows), 0)
    return table


def _config_1d(cfg: ExperimentConfig) -> Config1d:
    return Config1d(
        delta=cfg.delta,
        r_star_multiplier=cfg.r_multiplier,
        r_override=cfg.r,
        min_samples_factor=cfg.min_samples_factor,
    )


def _estimate_trial(
    shape: Density1d, cfg: ExperimentConfig, est: Config1d, n: int, trial: int
) -> tuple[EstimateReport, float]:
    seed = RngSeed(cfg.seed, trial)
    samples = shape.with_shift(cfg.lambda_true).sample(n, seed)
    report = global_mle_1d(shape, samples, est, seed)
    baseline = float(samples.mean()) - shape.mean()
    return report, baseline


COVERAGE_HEADER = (
    "trial",
    "lambda_true",
    "lambda_hat",
    "lambda_initial",
    "abs_err",
    "theoretical_radius",
    "within",
    "baseline_hat",
    "baseline_abs_err",
    "r_used",
    "error",
)


def run_coverage(cfg: ExperimentConfig, tracer: ExperimentTracer = SilentTracer()) -> CsvTable:
    """Per-trial rows, then a summary row.

    The summary row carries the median abs_err, the failure rate in the `within`
    column (error rows count as failures), and the median baseline error.
    """
    shape = parse_model_1d(cfg.model).with_shift(0.0)
    est = _config_1d(cfg)
    tracer.on_experiment_start("coverage", cfg.trials)
    outcomes = run_trials(lambda t: _estimate_trial(shape, cfg, est, cfg.n, t), cfg.trials, cfg.threads)
    table = CsvTable(COVERAGE_HEADER)
    errs: list[float] = []
    base_errs: list[float] = []
    failures = errors = 0
    for t, outcome in enumerate(outcomes):
        if isinstance(outcome, SmoothLocError):
            errors += 1
            failures += 1
            tracer.on_trial_error(t, str(outcome))
            row: Row = (t, cfg.lambda_true, None, None, None, None, None, None, None, None, str(outcome))
        else:
            report, baseline = outcome
            err = abs(report.lambda_hat - cfg.lambda_true)
            within = err <= cfg.radius_multiplier * report.theoretical_radius
            failures += not within
            errs.append(err)
            base_errs.append(abs(baseline - cfg.lambda_true))
            row = (
                t,
                cfg.lambda_true,
                report.lambda_hat,
                report.lambda_initial,
                err,
                report.theoretical_radius,
                within,
                baseline,
                base_errs[-1],
                report.r_used,
                None,
            )
        table.rows.append(row)
        tracer.on_row(row)
    table.rows.append(
        (
            "summary",
            cfg.lambda_true,
            None,
            None,
            _median(errs),
            None,
            failures / cfg.trials,
            None,
            _median(base_errs),
            None,
            f"data={len(errs)} errors={errors}",
        )
    )
    tracer.on_experiment_end("coverage", len(errs), errors)
    return table


def _config_hd(cfg: ExperimentConfig) -> ConfigHd:
    if cfg.r is None:
        raise ConfigurationError("high-dimensional runs need an explicit smoothing radius r")
    return ConfigHd(delta=cfg.delta, r=cfg.r, eta=cfg.eta)


def _estimate_hd_trial(
    shape: DensityHd, cfg: ExperimentConfig, est: ConfigHd, trial: int
) -> tuple[ReportHd, np.ndarray, np.ndarray]:
    seed = RngSeed(cfg.seed, trial)
    truth = np.full(shape.dim, cfg.lambda_true)
    samples = shape.with_shift(truth).sample(cfg.n, seed)
    report = global_mle_hd(shape, samples, est, seed)
    return report, truth, samples.mean(axis=0) - shape.mean()


COVERAGE_HD_HEADER = (
    "trial",
    "error_norm",
    "bound",
    "within",
    "initial_error_norm",
    "baseline_error_norm",
    "deviation_bound",
    "error",
)


def run_coverage_hd(cfg: ExperimentConfig, tracer: ExperimentTracer = SilentTracer()) -> CsvTable:
    shape = parse_model_hd(cfg.model)
    shape = shape.with_shift(np.zeros(shape.dim))
    est = _config_hd(cfg)
    tracer.on_experiment_start("coverage-hd", cfg.trials)
    outcomes = run_trials(lambda t: _estimate_hd_trial(shape, cfg, est, t), cfg.trials, cfg.threads)
    table = CsvTable(COVERAGE_HD_HEADER)
    errs: list[float] = []
    base_errs: list[float] = []
    failures = errors = 0
    for t, outcome in enumerate(outcomes):
        if isinstance(outcome, SmoothLocError):
            errors += 1
            failures += 1
            tracer.on_trial_error(t, str(outcome))
            row: Row = (t, None, None, None, None, None, None, str(outcome))
        else:
            report, truth, baseline = outcome
            err = float(np.linalg.norm(report.lambda_hat - truth))
            within = err <= report.m_norm_error_bound
            failures += not within
            errs.append(err)
            base_errs.append(float(np.linalg.norm(baseline - truth)))
            row = (
                t,
                err,
                report.m_norm_error_bound,
                within,
                float(np.linalg.norm(report.lambda_initial - truth)),
                base_errs[-1],
                report.deviation_bound,
                None,
            )
        table.rows.append(row)
        tracer.on_row(row)
    table.rows.append(
        ("summary", _median(errs), None, failures / cfg.trials, None, _median(base_errs), None,
         f"data={len(errs)} errors={errors}")
    )
    tracer.on_experiment_end("coverage-hd", len(errs), errors)
    return table


def run_sawtooth_phase(cfg: ExperimentConfig, tracer: ExperimentTracer = SilentTracer()) -> CsvTable:
    """One row per n: median |lambda_hat - lambda| scaled by sqrt(n), with the r* schedule."""
    if not cfg.n_grid:
        raise ConfigurationError("sawtooth-phase needs a non-empty n_grid")
    shape = GaussianSawtooth(cfg.width, cfg.slope)
    est = _config_1d(cfg)
    table = CsvTable(("n", "median_abs_err", "normalized_error", "r_star", "fisher", "errors"))
    tracer.on_experiment_start("sawtooth-phase", cfg.trials * len(cfg.n_grid))
    total_errors = 0
    for n in cfg.n_grid:
        outcomes = run_trials(lambda t: _estimate_trial(shape, cfg, est, n, t), cfg.trials, cfg.threads)
        errs: list[float] = []
        reports: list[EstimateReport] = []
        for t, outcome in enumerate(outcomes):
            if isinstance(outcome, SmoothLocError):
                tracer.on_trial_error(t, str(outcome))
                continue
            report, _ = outcome
            reports.append(report)
            errs.append(abs(report.lambda_hat - cfg.lambda_true))
        errors = cfg.trials - len(errs)
        total_errors += errors
        med = _median(errs)
        r_star = reports[0].r_used if reports else None
        fisher = reports[0].fisher_at_r if reports else None
        row: Row = (n, med, med * math.sqrt(n), r_star, fisher, errors)
        table.rows.append(row)
        tracer.on_row(row)
    tracer.on_experiment_end("sawtooth-phase", len(table.rows), total_errors)
    return table


def make_generator(family: str, d: int, cfg: ExperimentConfig) -> VectorGenerator:
    if family == "gaussian":
        return GaussianVectors(np.eye(d))
    if family == "exponential":
        return CenteredExponentialVectors((1.0,) * d)
    if family == "rademacher":
        return ScaledRademacherVectors((1.0,) * d)
    if family == "score":
        model = parse_model(cfg.model)
        if isinstance(model, Density1d):
            base = DensityHd((model,) * d)
        elif model.dim == d:
            base = model
        else:
            raise ConfigurationError(f"model has dimension {model.dim}, cell asks for {d}")
        r = cfg.r if cfg.r is not None else 0.5
        return score_vector_generator(SmoothedModelHd(base, r))
    raise ConfigurationError(f"unknown generator family {family!r}")


CONCENTRATION_HEADER = (
    "family",
    "d",
    "delta",
    "trials",
    "empirical_q",
    "bound_subgamma",
    "bound_gaussian",
    "seed",
)


def run_concentration(cfg: ExperimentConfig, tracer: ExperimentTracer = SilentTracer()) -> CsvTable:
    cells = [(family, d) for family in cfg.families for d in cfg.d_grid]
    tracer.on_experiment_start("concentration", len(cells))

    def cell(index: int) -> TailReport:
        family, d = cells[index]
        gen = make_generator(family, d, cfg)
        return tail_report(gen, cfg.delta_grid, cfg.trials, RngSeed(cfg.seed, index))

    outcomes = run_trials(cell, len(cells), cfg.threads)
    table = CsvTable(CONCENTRATION_HEADER)
    for index, outcome in enumerate(outcomes):
        if isinstance(outcome, SmoothLocError):
            tracer.on_trial_error(index, str(outcome))
            raise outcome
        for delta, q, sub, gauss in zip(
            outcome.deltas, outcome.empirical, outcome.subgamma, outcome.gaussian
        ):
            row: Row = (outcome.family, outcome.dim, delta, outcome.trials, q, sub, gauss, cfg.seed)
            table.rows.append(row)
            tracer.on_row(row)
    tracer.on_experiment_end("concentration", len(table.rows), 0)
    return table


ESTIMATE_HEADER = (
    "model",
    "n",
    "delta",
    "seed",
    "lambda_true",
    "lambda_hat",
    "lambda_initial",
    "r_used",
    "fisher",
    "theoretical_radius",
    "n_used_local",
    "n_used_init",
    "alpha",
    "q",
)


def run_estimate(cfg: ExperimentConfig) -> tuple[EstimateReport, CsvTable]:
    shape = parse_model_1d(cfg.model).with_shift(0.0)
    report, _ = _estimate_trial(shape, cfg, _config_1d(cfg), cfg.n, 0)
    row: Row = (
        cfg.model,
        cfg.n,
        cfg.delta,
        cfg.seed,
        cfg.lambda_true,
        report.lambda_hat,
        report.lambda_initial,
        report.r_used,
        report.fisher_at_r,
        report.theoretical_radius,
        report.n_used_local,
        report.n_used_init,
        report.alpha,
        report.q,
    )
    return report, CsvTable(ESTIMATE_HEADER, [row])


def run_estimate_hd(cfg: ExperimentConfig) -> tuple[ReportHd, CsvTable]:
    shape = parse_model_hd(cfg.model)
    shape = shape.with_shift(np.zeros(shape.dim))
    report, truth, _ = _estimate_hd_trial(shape, cfg, _config_hd(cfg), 0)
    table = CsvTable(("coordinate", "lambda_true", "lambda_hat", "lambda_initial", "fisher"))
    diag = np.diag(report.fisher.matrix)
    for i in range(shape.dim):
        table.rows.append(
            (i, float(truth[i]), float(report.lambda_hat[i]), float(report.lambda_initial[i]), float(diag[i]))
        )
    return report, table


DRIVERS: dict[str, Callable[[ExperimentConfig, ExperimentTracer], CsvTable]] = {
    "fisher-sweep": run_fisher_sweep_config,
    "coverage": run_coverage,
    "coverage-hd": run_coverage_hd,
    "sawtooth-phase": run_sawtooth_phase,
    "concentration": run_concentration,
}
