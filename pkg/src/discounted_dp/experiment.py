"""Error-vs-time and error-vs-discount experiments for the three privacy regimes.

The quality metric for day ``t`` is the expected relative error
``E|y(t) - mean_t| / |mean_t|``. With Laplace noise of scale ``b_t`` this is
exactly ``b_t / |mean_t|``; the Monte Carlo estimate is kept as a check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .mechanism import (
    NoiseSchedule,
    PrivacyLedger,
    VerifyReport,
    matching_regime,
    sample_laplace_array,
    schedule_dp_quadratic,
    schedule_exp_constant,
    schedule_hyp_sqrt,
    verify_schedule,
)
from .query import EvolvingDataset, MeanQuery, check_sensitivity, mean_at, sensitivity_mean
from .rng import make_rng

REGIMES = ("dp", "exp", "hyp")
# fixed child-stream slot per regime, so a regime's output does not depend on
# which other regimes are run alongside it
_STREAM_SLOT = {"dp": 0, "exp": 1, "hyp": 2}


class ZeroMean(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    epsilon: float = 1.0
    alpha: float = 0.9
    beta: float = 1.0
    seed: int = 0
    monte_carlo_samples: int = 0
    regimes: tuple[str, ...] = REGIMES

    def __post_init__(self):
        if not (self.epsilon > 0) or math.isinf(self.epsilon):
            raise ValueError(f"epsilon must be a finite positive number, got {self.epsilon}")
        if self.monte_carlo_samples < 0:
            raise ValueError("monte_carlo_samples must be >= 0")
        unknown = set(self.regimes) - set(REGIMES)
        if unknown or not self.regimes:
            raise ValueError(f"regimes must be drawn from {REGIMES}, got {self.regimes}")
        # validate discount parameters up front
        if "exp" in self.regimes:
            build_schedule("exp", 1.0, self.epsilon, alpha=self.alpha)
        if "hyp" in self.regimes:
            build_schedule("hyp", 1.0, self.epsilon, beta=self.beta)


def build_schedule(
    kind: str,
    delta_f: float,
    epsilon: float,
    alpha: float | None = None,
    beta: float | None = None,
) -> NoiseSchedule:
    if kind == "dp":
        return schedule_dp_quadratic(delta_f, epsilon)
    if kind == "exp":
        if alpha is None:
            raise ValueError("exp schedule needs alpha")
        return schedule_exp_constant(delta_f, epsilon, alpha)
    if kind == "hyp":
        if beta is None:
            raise ValueError("hyp schedule needs beta")
        return schedule_hyp_sqrt(delta_f, epsilon, beta)
    raise ValueError(f"unknown schedule kind {kind!r}")


def analytic_expected_relative_error(noise_scale: float, true_mean: float) -> float:
    if true_mean == 0:
        raise ZeroMean("relative error is undefined for a zero mean")
    return noise_scale / abs(true_mean)


def _mc_relative_error(scale: float, true_mean: float, samples: int, rng) -> float:
    if true_mean == 0:
        raise ZeroMean("relative error is undefined for a zero mean")
    w = sample_laplace_array(scale, samples, rng)
    return float(np.mean(np.abs(w))) / abs(true_mean)


def empirical_expected_relative_error(
    ds: EvolvingDataset,
    q: MeanQuery,
    t: int,
    schedule: NoiseSchedule,
    samples: int,
    seed: int,
) -> float:
    """Monte Carlo estimate of the expected relative error of release ``t``."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    return _mc_relative_error(schedule.scale_at(t), mean_at(ds, q, t), samples, make_rng(seed))


@dataclass(frozen=True)
class ErrorRecord:
    t: int
    date: str
    true_mean: float
    noise_scale: float
    report: float
    analytic_err: float
    empirical_err: float | None = None


@dataclass
class ErrorSeries:
    regime: str
    schedule: NoiseSchedule
    delta_f: float
    records: list[ErrorRecord] = field(default_factory=list)
    excluded_days: int = 0
    final_discounted_loss: float = 0.0
    verification: VerifyReport | None = None

    def column(self, name: str) -> np.ndarray:
        return np.array(
            [np.nan if getattr(r, name) is None else getattr(r, name) for r in self.records],
            dtype=float,
        )

    @property
    def average_error(self) -> float:
        """Mean analytic relative error over days with a nonzero mean."""
        errs = self.column("analytic_err")
        errs = errs[~np.isnan(errs)]
        return float(errs.mean()) if errs.size else math.nan


def run_regime(
    ds: EvolvingDataset,
    q: MeanQuery,
    kind: str,
    cfg: ExperimentConfig,
) -> ErrorSeries:
    check_sensitivity(ds, q)
    delta_f = sensitivity_mean(q, ds.n)
    schedule = build_schedule(kind, delta_f, cfg.epsilon, cfg.alpha, cfg.beta)
    ledger = PrivacyLedger(cfg.epsilon, matching_regime(schedule))
    release_ss, mc_ss = np.random.SeedSequence(cfg.seed).spawn(len(_STREAM_SLOT))[
        _STREAM_SLOT[kind]
    ].spawn(2)
    release_rng, mc_rng = make_rng(release_ss), make_rng(mc_ss)

    series = ErrorSeries(kind, schedule, delta_f)
    for t in range(1, ds.t + 1):
        true_mean = mean_at(ds, q, t)
        rec = ledger.release(t, true_mean, delta_f, schedule, release_rng)
        if true_mean == 0:
            series.excluded_days += 1
            analytic = math.nan
            empirical = None
        else:
            analytic = analytic_expected_relative_error(rec.noise_scale, true_mean)
            empirical = (
                _mc_relative_error(rec.noise_scale, true_mean, cfg.monte_carlo_samples, mc_rng)
                if cfg.monte_carlo_samples
                else None
            )
        series.records.append(
            ErrorRecord(t, ds.labels[t - 1], true_mean, rec.noise_scale, rec.report, analytic, empirical)
        )
    series.final_discounted_loss = ledger.discounted_sum()
    series.verification = verify_schedule(
        schedule, ledger.regime, delta_f, cfg.epsilon, max(ds.t, 1)
    )
    return series


def run_experiment(
    ds: EvolvingDataset, q: MeanQuery, cfg: ExperimentConfig
) -> dict[str, ErrorSeries]:
    """One error series per configured regime, released through a fresh ledger each.

    A :class:`~discounted_dp.mechanism.BudgetExceeded` escaping from here means
    the schedule does not meet its own budget condition.
    """
    if ds.t == 0:
        raise ValueError("dataset has no columns")
    return {kind: run_regime(ds, q, kind, cfg) for kind in cfg.regimes}


@dataclass(frozen=True)
class SweepRow:
    param: float
    avg_rel_err: float
    excluded_days: int


def sweep_discount(
    ds: EvolvingDataset,
    q: MeanQuery,
    epsilon: float,
    family: str,
    grid,
    skip_zero: bool = True,
) -> list[SweepRow]:
    """Average analytic relative error across the horizon for each discount parameter."""
    if family not in ("exp", "hyp"):
        raise ValueError(f"family must be 'exp' or 'hyp', got {family!r}")
    grid = [float(v) for v in grid]
    if not grid:
        raise ValueError("parameter grid is empty")
    check_sensitivity(ds, q)
    delta_f = sensitivity_mean(q, ds.n)
    schedules = [
        build_schedule(family, delta_f, epsilon, alpha=v, beta=v) for v in grid
    ]
    means = np.array([mean_at(ds, q, t) for t in range(1, ds.t + 1)])
    zero = means == 0
    if zero.any() and not skip_zero:
        raise ZeroMean(f"{int(zero.sum())} day(s) have a zero mean")
    if zero.all():
        raise ZeroMean("every day has a zero mean")
    rows = []
    for v, schedule in zip(grid, schedules):
        scales = schedule.scales(ds.t)
        errs = scales[~zero] / np.abs(means[~zero])
        rows.append(SweepRow(v, float(errs.mean()), int(zero.sum())))
    return rows
