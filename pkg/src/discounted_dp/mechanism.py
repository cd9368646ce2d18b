"""Discount regimes, noise schedules, the Laplace sampler and the privacy ledger.

A release at index ``k`` with Laplace scale ``b_k`` on a query of sensitivity
``delta_f_k`` costs ``rho(k) = delta_f_k / b_k``. At time ``t`` the ledger
weighs each past cost by its age ``t - k``:

* undiscounted:  1
* exponential:   alpha ** (t - k)
* hyperbolic:    1 / (1 + beta * (t - k))

and refuses any release that would push the weighted sum above ``epsilon``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy.signal import lfilter

# Relative slack on the budget comparison, absorbs float summation error.
BUDGET_RTOL = 1e-9


class BudgetExceeded(Exception):
    """A release was refused because it would overspend the budget."""

    def __init__(self, k: int, would_be: float, limit: float):
        self.k = k
        self.would_be = would_be
        self.limit = limit
        super().__init__(
            f"release {k} refused: discounted loss {would_be:.12g} exceeds budget {limit:.12g}"
        )


class CausalityError(ValueError):
    """Raised for ledger queries or releases out of time order."""


def _check_delay(delay) -> None:
    if np.any(np.asarray(delay) < 0):
        raise ValueError(f"delay must be >= 0, got {delay}")


@dataclass(frozen=True)
class Undiscounted:
    name = "none"

    @property
    def is_undiscounted(self) -> bool:
        return True

    def weight(self, delay: int) -> float:
        _check_delay(delay)
        return 1.0

    def weights(self, delays: np.ndarray) -> np.ndarray:
        return np.ones(np.shape(delays), dtype=float)


@dataclass(frozen=True)
class Exponential:
    """Past losses decay by ``alpha`` per step; ``alpha=1`` is plain DP."""

    alpha: float
    name = "exp"

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")

    @property
    def is_undiscounted(self) -> bool:
        return self.alpha == 1.0

    def weight(self, delay: int) -> float:
        _check_delay(delay)
        return float(self.alpha**delay)

    def weights(self, delays: np.ndarray) -> np.ndarray:
        return np.power(self.alpha, np.asarray(delays, dtype=float))


@dataclass(frozen=True)
class Hyperbolic:
    """Past losses are divided by ``1 + beta * delay``; ``beta=0`` is plain DP."""

    beta: float
    name = "hyp"

    def __post_init__(self):
        if not (self.beta >= 0.0) or math.isinf(self.beta):
            raise ValueError(f"beta must be a finite value >= 0, got {self.beta}")

    @property
    def is_undiscounted(self) -> bool:
        return self.beta == 0.0

    def weight(self, delay: int) -> float:
        _check_delay(delay)
        return 1.0 / (1.0 + self.beta * delay)

    def weights(self, delays: np.ndarray) -> np.ndarray:
        return 1.0 / (1.0 + self.beta * np.asarray(delays, dtype=float))


DiscountRegime = Union[Undiscounted, Exponential, Hyperbolic]
UNDISCOUNTED = Undiscounted()


def weight(regime: DiscountRegime, delay: int) -> float:
    """Weight applied at time ``t`` to a loss recorded ``delay = t - k`` steps ago."""
    return regime.weight(delay)


# --------------------------------------------------------------------------
# noise schedules


def _positive(name: str, value: float) -> float:
    value = float(value)
    if not (value > 0.0) or math.isinf(value):
        raise ValueError(f"{name} must be a finite positive number, got {value}")
    return value


def _check_index(k: int) -> int:
    if int(k) != k or k < 1:
        raise ValueError(f"release index must be an integer >= 1, got {k}")
    return int(k)


def _check_horizon(horizon: int) -> int:
    if int(horizon) != horizon or horizon < 1:
        raise ValueError(f"horizon must be an integer >= 1, got {horizon}")
    return int(horizon)


@dataclass(frozen=True)
class DpQuadratic:
    """Quadratically growing scale; keeps the undiscounted sum below epsilon forever."""

    delta_f: float
    epsilon: float
    kind = "dp"

    def __post_init__(self):
        _positive("delta_f", self.delta_f)
        _positive("epsilon", self.epsilon)

    @property
    def coefficient(self) -> float:
        return self.delta_f * math.pi**2 / (6.0 * self.epsilon)

    def scale_at(self, k: int) -> float:
        k = _check_index(k)
        return self.coefficient * float(k * k)

    def scales(self, horizon: int) -> np.ndarray:
        k = np.arange(1, _check_horizon(horizon) + 1, dtype=float)
        return self.coefficient * (k * k)


@dataclass(frozen=True)
class ExpConstant:
    """Constant scale that keeps the exponentially discounted sum below epsilon."""

    delta_f: float
    epsilon: float
    alpha: float
    kind = "exp"

    def __post_init__(self):
        _positive("delta_f", self.delta_f)
        _positive("epsilon", self.epsilon)
        if not (0.0 < self.alpha < 1.0):
            raise ValueError(
                f"alpha must lie in (0, 1) for a constant schedule, got {self.alpha}"
            )

    @property
    def coefficient(self) -> float:
        return self.delta_f / (self.epsilon * (1.0 - self.alpha))

    def scale_at(self, k: int) -> float:
        _check_index(k)
        return self.coefficient

    def scales(self, horizon: int) -> np.ndarray:
        return np.full(_check_horizon(horizon), self.coefficient)


@dataclass(frozen=True)
class HypSqrt:
    """Scale growing like sqrt(k), calibrated against hyperbolic discounting.

    ``scale_at(k) = C * sqrt(k)`` with

        C = 2 * delta_f * (atanh(1/sqrt(3)) + atanh(sqrt(beta / (1 + beta))))
            / (epsilon * sqrt(beta * (beta + 1)))

    For large ``beta`` (above roughly 4 when ``delta_f == epsilon``) this ``C``
    falls below ``delta_f / epsilon`` and the very first release already
    overspends; ``verify_schedule`` reports it and the ledger refuses it.
    """

    delta_f: float
    epsilon: float
    beta: float
    kind = "hyp"

    def __post_init__(self):
        _positive("delta_f", self.delta_f)
        _positive("epsilon", self.epsilon)
        _positive("beta", self.beta)

    @property
    def coefficient(self) -> float:
        b = self.beta
        # atanh(sqrt(b / (1 + b))) == asinh(sqrt(b)); the latter stays finite for huge b
        growth = math.atanh(1.0 / math.sqrt(3.0)) + math.asinh(math.sqrt(b))
        return 2.0 * self.delta_f * growth / (self.epsilon * math.sqrt(b) * math.sqrt(b + 1.0))

    def scale_at(self, k: int) -> float:
        k = _check_index(k)
        return self.coefficient * math.sqrt(k)

    def scales(self, horizon: int) -> np.ndarray:
        k = np.arange(1, _check_horizon(horizon) + 1, dtype=float)
        return self.coefficient * np.sqrt(k)


@dataclass(frozen=True, init=False)
class Custom:
    """Explicit list of scales; ``scales[0]`` is used for release 1."""

    values: tuple[float, ...]
    kind = "custom"

    def __init__(self, values: Sequence[float]):
        vals = tuple(float(v) for v in values)
        if not vals:
            raise ValueError("custom schedule needs at least one scale")
        for v in vals:
            _positive("scale", v)
        object.__setattr__(self, "values", vals)

    def scale_at(self, k: int) -> float:
        k = _check_index(k)
        if k > len(self.values):
            raise ValueError(f"custom schedule defines {len(self.values)} scales, asked for {k}")
        return self.values[k - 1]

    def scales(self, horizon: int) -> np.ndarray:
        horizon = _check_horizon(horizon)
        if horizon > len(self.values):
            raise ValueError(
                f"custom schedule defines {len(self.values)} scales, horizon is {horizon}"
            )
        return np.asarray(self.values[:horizon], dtype=float)


NoiseSchedule = Union[DpQuadratic, ExpConstant, HypSqrt, Custom]


def schedule_dp_quadratic(delta_f: float, epsilon: float) -> DpQuadratic:
    return DpQuadratic(delta_f, epsilon)


def schedule_exp_constant(delta_f: float, epsilon: float, alpha: float) -> ExpConstant:
    return ExpConstant(delta_f, epsilon, alpha)


def schedule_hyp_sqrt(delta_f: float, epsilon: float, beta: float) -> HypSqrt:
    return HypSqrt(delta_f, epsilon, beta)


# --------------------------------------------------------------------------
# Laplace noise


def laplace_from_uniform(u, scale: float):
    """Inverse CDF of Laplace(0, scale) for ``u`` uniform on (-1/2, 1/2)."""
    u = np.asarray(u, dtype=float)
    out = -scale * np.sign(u) * np.log1p(-2.0 * np.abs(u))
    return float(out) if out.ndim == 0 else out


def sample_laplace_array(scale: float, size: int, rng: np.random.Generator) -> np.ndarray:
    _positive("scale", scale)
    u = rng.random(size) - 0.5
    # u == -0.5 maps to an infinite draw; redraw those (probability 2**-53 each).
    bad = u == -0.5
    while bad.any():
        u[bad] = rng.random(int(bad.sum())) - 0.5
        bad = u == -0.5
    return laplace_from_uniform(u, scale)


def sample_laplace(scale: float, rng: np.random.Generator) -> float:
    """One draw from Laplace(0, scale)."""
    return float(sample_laplace_array(scale, 1, rng)[0])


# --------------------------------------------------------------------------
# ledger


@dataclass(frozen=True)
class ReleaseRecord:
    k: int
    true_value: float
    noise_scale: float
    report: float
    loss: float


class PrivacyLedger:
    """Ordered record of per-release privacy losses under one discount regime.

    Releases are numbered 1, 2, 3, ... without gaps. A period with nothing to
    publish is recorded with :meth:`skip` (zero loss). Before committing a new
    loss the ledger checks that the discounted sum at the new release time stays
    within ``epsilon * (1 + BUDGET_RTOL)``; otherwise :class:`BudgetExceeded` is
    raised and nothing changes.

    Not thread safe: one writer at a time.
    """

    def __init__(self, epsilon: float, regime: DiscountRegime = UNDISCOUNTED):
        self.epsilon = _positive("epsilon", epsilon)
        self.regime = regime
        self._losses = np.empty(64, dtype=float)
        self._count = 0
        # undiscounted: Kahan-compensated running total
        self._total = 0.0
        self._comp = 0.0
        # exponential: discounted sum at the frontier
        self._exp_sum = 0.0

    @property
    def limit(self) -> float:
        return self.epsilon * (1.0 + BUDGET_RTOL)

    @property
    def frontier(self) -> int:
        """Index of the latest recorded release (0 when empty)."""
        return self._count

    def __len__(self) -> int:
        return self._count

    @property
    def losses(self) -> np.ndarray:
        return self._losses[: self._count].copy()

    def discounted_sum(self, t: int | None = None) -> float:
        """Weighted sum of all recorded losses as seen at time ``t``."""
        n = self._count
        if t is None:
            t = n
        if t < n:
            raise CausalityError(f"t={t} precedes the latest release {n}")
        if n == 0:
            return 0.0
        regime = self.regime
        if regime.is_undiscounted:
            return self._total
        if isinstance(regime, Exponential):
            return self._exp_sum * regime.alpha ** (t - n)
        delays = t - np.arange(1, n + 1, dtype=float)
        return float(np.dot(self._losses[:n], regime.weights(delays)))

    def _next_state(self, rho: float) -> tuple[float, tuple[float, float, float]]:
        regime = self.regime
        if regime.is_undiscounted:
            y = rho - self._comp
            total = self._total + y
            comp = (total - self._total) - y
            return total, (total, comp, self._exp_sum)
        if isinstance(regime, Exponential):
            s = regime.alpha * self._exp_sum + rho
            return s, (self._total, self._comp, s)
        return self.discounted_sum(self._count + 1) + rho, (self._total, self._comp, 0.0)

    def record(self, rho: float) -> float:
        """Append loss ``rho`` as the next release; returns the new discounted sum."""
        rho = float(rho)
        if not (rho >= 0.0) or math.isinf(rho):
            raise ValueError(f"privacy loss must be finite and >= 0, got {rho}")
        new_sum, state = self._next_state(rho)
        k = self._count + 1
        if new_sum > self.limit:
            raise BudgetExceeded(k, new_sum, self.limit)
        self._commit(rho, state)
        return new_sum

    def skip(self) -> float:
        """Record a period with no release."""
        return self.record(0.0)

    def _commit(self, rho: float, state: tuple[float, float, float]) -> None:
        if self._count == len(self._losses):
            self._losses = np.concatenate([self._losses, np.empty_like(self._losses)])
        self._losses[self._count] = rho
        self._count += 1
        self._total, self._comp, self._exp_sum = state

    def release(
        self,
        k: int,
        true_value: float,
        delta_f_k: float,
        schedule: NoiseSchedule,
        rng: np.random.Generator,
    ) -> ReleaseRecord:
        """Publish ``true_value`` plus Laplace noise as release ``k``.

        The budget check happens before any noise is drawn, so a refused
        release consumes no randomness and leaves the ledger untouched.
        """
        if k != self._count + 1:
            raise CausalityError(f"expected release {self._count + 1}, got {k}")
        _positive("delta_f_k", delta_f_k)
        scale = schedule.scale_at(k)
        loss = delta_f_k / scale
        new_sum, state = self._next_state(loss)
        if new_sum > self.limit:
            raise BudgetExceeded(k, new_sum, self.limit)
        report = true_value + sample_laplace(scale, rng)
        self._commit(loss, state)
        return ReleaseRecord(k, float(true_value), scale, report, loss)


# --------------------------------------------------------------------------
# schedule verification


@dataclass(frozen=True)
class VerifyReport:
    max_sum: float
    argmax_t: int
    epsilon: float
    sums: np.ndarray

    @property
    def margin(self) -> float:
        return self.epsilon - self.max_sum

    @property
    def ok(self) -> bool:
        return self.max_sum <= self.epsilon * (1.0 + BUDGET_RTOL)


def discounted_sums(losses: np.ndarray, regime: DiscountRegime) -> np.ndarray:
    """Discounted sum at every t = 1..len(losses) for the given loss sequence.

    Undiscounted and exponential regimes use a one-step recurrence (O(T));
    hyperbolic weights have none, so each t is a direct dot product (O(T^2)).
    """
    rho = np.asarray(losses, dtype=float)
    if regime.is_undiscounted:
        return np.cumsum(rho)
    if isinstance(regime, Exponential):
        return lfilter([1.0], [1.0, -regime.alpha], rho)
    horizon = len(rho)
    # w_rev[horizon - t:] holds weights for delays t-1, ..., 0
    w_rev = np.ascontiguousarray(regime.weights(np.arange(horizon))[::-1])
    out = np.empty(horizon)
    for t in range(1, horizon + 1):
        out[t - 1] = np.dot(rho[:t], w_rev[horizon - t :])
    return out


def verify_schedule(
    schedule: NoiseSchedule,
    regime: DiscountRegime,
    delta_f: float,
    epsilon: float,
    horizon: int,
) -> VerifyReport:
    """Largest discounted loss over t = 1..horizon for a constant-sensitivity query."""
    horizon = _check_horizon(horizon)
    rho = _positive("delta_f", delta_f) / schedule.scales(horizon)
    sums = discounted_sums(rho, regime)
    i = int(np.argmax(sums))
    return VerifyReport(float(sums[i]), i + 1, _positive("epsilon", epsilon), sums)


def matching_regime(schedule: NoiseSchedule) -> DiscountRegime:
    """Regime a closed-form schedule was calibrated for."""
    if isinstance(schedule, ExpConstant):
        return Exponential(schedule.alpha)
    if isinstance(schedule, HypSqrt):
        return Hyperbolic(schedule.beta)
    if isinstance(schedule, DpQuadratic):
        return UNDISCOUNTED
    raise ValueError("custom schedules carry no regime")
