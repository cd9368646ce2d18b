import copy
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from discounted_dp.mechanism import (
    BudgetExceeded,
    CausalityError,
    Custom,
    Exponential,
    Hyperbolic,
    PrivacyLedger,
    UNDISCOUNTED,
    discounted_sums,
    laplace_from_uniform,
    sample_laplace,
    sample_laplace_array,
    schedule_dp_quadratic,
    schedule_exp_constant,
    schedule_hyp_sqrt,
    verify_schedule,
    weight,
)
from discounted_dp.rng import make_rng

# Values below come from an independent 30-digit mpmath evaluation of the
# closed forms, frozen here.
HYP_1_1_1 = 2.17768033973317320405
HYP_06667_1_05 = 2.02769070293536371960
BASEL_1E4 = 0.99993921032934878542


def brute_discounted(losses, regime, t):
    """Definition of the discounted sum, term by term."""
    return math.fsum(regime.weight(t - k) * rho for k, rho in enumerate(losses, 1))


# ----------------------------------------------------------------- weights


@pytest.mark.parametrize(
    "regime, delay, expected",
    [
        (UNDISCOUNTED, 5, 1.0),
        (Exponential(1.0), 7, 1.0),
        (Hyperbolic(0.0), 7, 1.0),
        (Exponential(0.5), 3, 0.125),
        (Hyperbolic(1.0), 3, 0.25),
    ],
)
def test_weight_examples(regime, delay, expected):
    assert weight(regime, delay) == expected


@pytest.mark.parametrize("alpha", [0.0, -0.1, 1.0001, float("nan")])
def test_exponential_rejects_bad_alpha(alpha):
    with pytest.raises(ValueError):
        Exponential(alpha)


@pytest.mark.parametrize("beta", [-1e-9, -3.0, float("nan"), float("inf")])
def test_hyperbolic_rejects_bad_beta(beta):
    with pytest.raises(ValueError):
        Hyperbolic(beta)


def test_weight_rejects_negative_delay():
    with pytest.raises(ValueError):
        weight(Hyperbolic(1.0), -1)


@given(st.integers(0, 10_000))
def test_endpoint_regimes_match_undiscounted(delay):
    assert Exponential(1.0).weight(delay) == 1.0
    assert Hyperbolic(0.0).weight(delay) == 1.0


# ----------------------------------------------------------------- ledger sums


def ledger_with(losses, regime, epsilon=10.0):
    ledger = PrivacyLedger(epsilon, regime)
    for rho in losses:
        ledger.record(rho)
    return ledger


def test_discounted_sum_examples():
    assert ledger_with([0.1] * 3, UNDISCOUNTED).discounted_sum(3) == pytest.approx(0.3, abs=1e-15)
    assert ledger_with([0.1] * 3, Exponential(0.5)).discounted_sum(3) == pytest.approx(
        0.25 * 0.1 + 0.5 * 0.1 + 0.1, abs=1e-15
    )
    assert ledger_with([0.2] * 2, Hyperbolic(1.0)).discounted_sum(2) == pytest.approx(
        0.2 / 2 + 0.2 / 1, abs=1e-15
    )


def test_discounted_sum_empty_ledger_is_zero():
    assert PrivacyLedger(1.0).discounted_sum() == 0.0
    assert PrivacyLedger(1.0, Hyperbolic(2.0)).discounted_sum(5) == 0.0


def test_discounted_sum_is_causal():
    ledger = ledger_with([0.1] * 3, Exponential(0.5))
    with pytest.raises(CausalityError):
        ledger.discounted_sum(2)


@pytest.mark.parametrize("regime", [UNDISCOUNTED, Exponential(0.7), Hyperbolic(0.3)])
def test_discounted_sum_beyond_frontier(regime):
    losses = [0.05, 0.2, 0.0, 0.1]
    ledger = ledger_with(losses, regime)
    for t in (4, 5, 9, 40):
        assert ledger.discounted_sum(t) == pytest.approx(brute_discounted(losses, regime, t), rel=1e-13)


loss_lists = st.lists(st.floats(0.0, 1.0, allow_nan=False), min_size=0, max_size=40)


@given(loss_lists, st.integers(0, 30))
def test_reduction_is_exact(losses, extra):
    plain = ledger_with(losses, UNDISCOUNTED, epsilon=100.0)
    t = len(losses) + extra
    expected = plain.discounted_sum(t)
    assert ledger_with(losses, Exponential(1.0), 100.0).discounted_sum(t) == expected
    assert ledger_with(losses, Hyperbolic(0.0), 100.0).discounted_sum(t) == expected


@given(loss_lists, st.floats(0.01, 1.0), st.floats(0.01, 1.0), st.integers(0, 10))
def test_exponential_discounting_is_monotone(losses, a1, a2, extra):
    lo, hi = sorted((a1, a2))
    t = len(losses) + extra
    s_lo = ledger_with(losses, Exponential(lo), 100.0).discounted_sum(t)
    s_hi = ledger_with(losses, Exponential(hi), 100.0).discounted_sum(t)
    plain = ledger_with(losses, UNDISCOUNTED, 100.0).discounted_sum(t)
    assert s_lo <= s_hi + 1e-12
    assert s_hi <= plain + 1e-12


@given(loss_lists, st.floats(0.0, 50.0), st.floats(0.0, 50.0), st.integers(0, 10))
def test_hyperbolic_discounting_is_monotone(losses, b1, b2, extra):
    lo, hi = sorted((b1, b2))
    t = len(losses) + extra
    s_lo = ledger_with(losses, Hyperbolic(lo), 100.0).discounted_sum(t)
    s_hi = ledger_with(losses, Hyperbolic(hi), 100.0).discounted_sum(t)
    plain = ledger_with(losses, UNDISCOUNTED, 100.0).discounted_sum(t)
    assert s_hi <= s_lo + 1e-12
    assert s_lo <= plain + 1e-12


@given(loss_lists, st.sampled_from([UNDISCOUNTED, Exponential(0.8), Hyperbolic(0.5)]))
def test_ledger_matches_definition(losses, regime):
    ledger = ledger_with(losses, regime, 100.0)
    t = len(losses)
    assert ledger.discounted_sum(t) == pytest.approx(brute_discounted(losses, regime, t), rel=1e-12, abs=1e-15)
    np.testing.assert_allclose(
        discounted_sums(np.array(losses), regime)[-1:] if losses else [],
        [brute_discounted(losses, regime, t)] if losses else [],
        rtol=1e-12,
        atol=1e-15,
    )


def test_record_rejects_negative_loss():
    with pytest.raises(ValueError):
        PrivacyLedger(1.0).record(-0.1)


def test_ledger_rejects_nonpositive_epsilon():
    with pytest.raises(ValueError):
        PrivacyLedger(0.0)


def test_skip_records_zero_loss():
    ledger = PrivacyLedger(1.0, Exponential(0.5))
    ledger.record(0.8)
    ledger.skip()
    assert ledger.frontier == 2
    assert list(ledger.losses) == [0.8, 0.0]
    assert ledger.discounted_sum() == pytest.approx(0.4)


def test_budget_can_be_reclaimed_as_losses_decay():
    ledger = PrivacyLedger(1.0, Exponential(0.5))
    ledger.record(1.0)
    with pytest.raises(BudgetExceeded):
        ledger.record(0.6)
    ledger.record(0.5)  # 0.5 * 1.0 + 0.5
    assert ledger.discounted_sum() == pytest.approx(1.0)


# ----------------------------------------------------------------- schedules


def test_dp_quadratic_examples():
    assert schedule_dp_quadratic(1.0, 1.0).scale_at(1) == pytest.approx(1.64493406684822643647, rel=1e-14)
    assert schedule_dp_quadratic(1.0, 1.0).scale_at(2) == pytest.approx(6.57973626739290574589, rel=1e-14)
    assert schedule_dp_quadratic(0.6667, 0.5).scale_at(1) == pytest.approx(2.19335508473542513039, rel=1e-14)


def test_dp_quadratic_basel_oracle():
    # brute-force partial sums of 6 / (pi^2 k^2), k up to 1e6, never exceed 1
    k = np.arange(1, 1_000_001, dtype=float)
    partial = np.cumsum(6.0 / (math.pi**2 * k * k))
    assert partial.max() <= 1.0
    sched = schedule_dp_quadratic(1.0, 1.0)
    assert math.fsum(1.0 / sched.scale_at(j) for j in range(1, 10_001)) == pytest.approx(BASEL_1E4, rel=1e-12)


@pytest.mark.parametrize(
    "args, expected",
    [((1.0, 1.0, 0.5), 2.0), ((1.0, 0.1, 0.9), 100.0), ((0.6667, 1.0, 0.99), 66.67)],
)
def test_exp_constant_examples(args, expected):
    sched = schedule_exp_constant(*args)
    for k in (1, 2, 17, 10_000):
        assert sched.scale_at(k) == pytest.approx(expected, rel=1e-12)


def test_exp_constant_partial_sums_brute_force():
    sched = schedule_exp_constant(0.6667, 1.0, 0.99)
    rho = 0.6667 / sched.scale_at(1)
    s = 0.0
    for _ in range(100_000):
        s = 0.99 * s + rho
        assert s <= 1.0 + 1e-12


def test_hyp_sqrt_examples():
    sched = schedule_hyp_sqrt(1.0, 1.0, 1.0)
    assert sched.scale_at(1) == pytest.approx(HYP_1_1_1, rel=1e-14)
    assert sched.scale_at(4) == 2 * sched.scale_at(1)
    assert schedule_hyp_sqrt(0.6667, 1.0, 0.5).scale_at(1) == pytest.approx(HYP_06667_1_05, rel=1e-14)


def test_hyp_sqrt_stable_for_huge_beta():
    sched = schedule_hyp_sqrt(1.0, 1.0, 1e300)
    assert math.isfinite(sched.scale_at(1)) and sched.scale_at(1) > 0


@pytest.mark.parametrize(
    "factory, args",
    [
        (schedule_dp_quadratic, (0.0, 1.0)),
        (schedule_dp_quadratic, (1.0, -1.0)),
        (schedule_exp_constant, (1.0, 1.0, 1.0)),
        (schedule_exp_constant, (1.0, 1.0, 0.0)),
        (schedule_exp_constant, (1.0, 0.0, 0.5)),
        (schedule_hyp_sqrt, (1.0, 1.0, 0.0)),
        (schedule_hyp_sqrt, (-1.0, 1.0, 1.0)),
    ],
)
def test_schedules_reject_bad_parameters(factory, args):
    with pytest.raises(ValueError):
        factory(*args)


@given(st.integers(1, 10**6))
def test_schedule_shapes(k):
    dp = schedule_dp_quadratic(1.0, 1.0)
    exp = schedule_exp_constant(1.0, 1.0, 0.9)
    hyp = schedule_hyp_sqrt(1.0, 1.0, 1.0)
    assert dp.scale_at(k + 1) > dp.scale_at(k) > 0
    assert exp.scale_at(k) == exp.scale_at(1)
    assert hyp.scale_at(k) / math.sqrt(k) == pytest.approx(hyp.scale_at(1), rel=1e-15)


def test_scale_index_starts_at_one():
    with pytest.raises(ValueError):
        schedule_dp_quadratic(1.0, 1.0).scale_at(0)


def test_custom_schedule():
    sched = Custom([1.0, 2.0])
    assert sched.scale_at(2) == 2.0
    with pytest.raises(ValueError):
        sched.scale_at(3)
    with pytest.raises(ValueError):
        Custom([1.0, 0.0])
    with pytest.raises(ValueError):
        sched.scales(5)


def test_vector_scales_match_scalar():
    for sched in (
        schedule_dp_quadratic(0.7, 0.3),
        schedule_exp_constant(0.7, 0.3, 0.95),
        schedule_hyp_sqrt(0.7, 0.3, 2.0),
    ):
        vec = sched.scales(500)
        assert all(vec[k - 1] == sched.scale_at(k) for k in range(1, 501))


# ----------------------------------------------------------------- laplace


def test_laplace_median_maps_to_zero():
    assert laplace_from_uniform(0.0, 3.0) == 0.0


def test_laplace_inverse_cdf_matches_distribution():
    # P(W <= x) = 1 - exp(-x/b)/2 for x >= 0, so u = 1/2 - exp(-x/b)/2
    b = 2.5
    for x in (0.1, 1.0, 7.0):
        u = 0.5 - 0.5 * math.exp(-x / b)
        assert laplace_from_uniform(u, b) == pytest.approx(x, rel=1e-12)
        assert laplace_from_uniform(-u, b) == pytest.approx(-x, rel=1e-12)


def test_laplace_moments_monte_carlo():
    w = sample_laplace_array(1.0, 10**6, make_rng(11))
    assert abs(w.mean()) <= 0.005
    for b in (0.3, 4.0):
        wb = sample_laplace_array(b, 10**6, make_rng(12))
        assert abs(np.abs(wb).mean() - b) <= 0.01 * b


def test_laplace_error_shrinks_like_inverse_sqrt_n():
    # spread of the mean(|w|) estimator across 200 seeds, at N and 16N
    def spread(n):
        return np.std([np.abs(sample_laplace_array(1.0, n, make_rng(s))).mean() for s in range(200)])

    ratio = spread(400) / spread(6400)
    assert 3.0 < ratio < 5.3  # ideal 4


def test_laplace_seed_determinism():
    a = sample_laplace_array(1.0, 1000, make_rng(5))
    b = sample_laplace_array(1.0, 1000, make_rng(5))
    assert a.tobytes() == b.tobytes()
    assert sample_laplace(1.0, make_rng(9)) == sample_laplace(1.0, make_rng(9))


def test_laplace_rejects_bad_scale():
    with pytest.raises(ValueError):
        sample_laplace(0.0, make_rng(0))


# ----------------------------------------------------------------- release


def test_constant_scale_exhausts_plain_budget():
    ledger = PrivacyLedger(1.0)
    sched = Custom([10.0] * 20)
    rng = make_rng(0)
    for k in range(1, 11):
        ledger.release(k, 5.0, 1.0, sched, rng)
    before = ledger.discounted_sum()
    untouched = copy.deepcopy(rng)
    with pytest.raises(BudgetExceeded) as err:
        ledger.release(11, 5.0, 1.0, sched, rng)
    assert err.value.k == 11
    assert ledger.frontier == 10
    assert ledger.discounted_sum() == before
    assert ledger.discounted_sum(50) == before
    assert rng.random() == untouched.random()  # no noise drawn on refusal


@given(st.floats(0.5, 50.0), st.floats(0.1, 5.0), st.floats(0.1, 5.0))
@settings(max_examples=50, deadline=None)
def test_necessity_bound(b, delta_f, epsilon):
    ledger = PrivacyLedger(epsilon)
    bound = math.ceil(epsilon * b / delta_f) + 1
    sched = Custom([b] * (bound + 1))
    rng = make_rng(1)
    refused_at = None
    for k in range(1, bound + 1):
        try:
            ledger.release(k, 0.0, delta_f, sched, rng)
        except BudgetExceeded:
            refused_at = k
            break
    assert refused_at is not None and refused_at <= bound


@pytest.mark.parametrize("regime", [UNDISCOUNTED, Exponential(0.6), Hyperbolic(0.7)])
def test_refusal_leaves_every_sum_unchanged(regime):
    ledger = ledger_with([0.3, 0.4], regime, epsilon=1.0)
    before = [ledger.discounted_sum(t) for t in range(2, 12)]
    with pytest.raises(BudgetExceeded):
        ledger.record(5.0)
    assert [ledger.discounted_sum(t) for t in range(2, 12)] == before
    assert list(ledger.losses) == [0.3, 0.4]


def test_release_record_fields():
    ledger = PrivacyLedger(1.0, Exponential(0.5))
    sched = schedule_exp_constant(1.0, 1.0, 0.5)
    rec = ledger.release(1, 3.0, 1.0, sched, make_rng(2))
    assert rec.k == 1 and rec.true_value == 3.0
    assert rec.noise_scale == 2.0
    assert rec.loss == 0.5
    assert rec.report != 3.0


def test_release_requires_next_index():
    ledger = PrivacyLedger(1.0)
    with pytest.raises(CausalityError):
        ledger.release(2, 0.0, 1.0, schedule_dp_quadratic(1.0, 1.0), make_rng(0))


def test_long_exponential_and_dp_runs_never_refuse():
    rng = make_rng(3)
    exp_ledger = PrivacyLedger(1.0, Exponential(0.5))
    exp_sched = schedule_exp_constant(1.0, 1.0, 0.5)
    dp_ledger = PrivacyLedger(1.0)
    dp_sched = schedule_dp_quadratic(1.0, 1.0)
    for k in range(1, 100_001):
        exp_ledger.record(1.0 / exp_sched.scale_at(k))
        dp_ledger.record(1.0 / dp_sched.scale_at(k))
    assert exp_ledger.discounted_sum() <= 1.0 + 1e-9
    assert dp_ledger.discounted_sum() < 1.0
    # and through the full release path for a shorter stretch
    ledger = PrivacyLedger(1.0, Exponential(0.5))
    for k in range(1, 2001):
        ledger.release(k, 1.0, 1.0, exp_sched, rng)


# ----------------------------------------------------------------- verify


def test_verify_examples():
    rep = verify_schedule(schedule_exp_constant(1, 1, 0.5), Exponential(0.5), 1, 1, 10**4)
    assert rep.ok and rep.max_sum <= 1.0

    rep = verify_schedule(schedule_dp_quadratic(1, 1), UNDISCOUNTED, 1, 1, 10**4)
    assert rep.ok
    assert rep.max_sum == pytest.approx(BASEL_1E4, rel=1e-12)
    assert rep.argmax_t == 10**4

    rep = verify_schedule(schedule_hyp_sqrt(1, 1, 1), Hyperbolic(1.0), 1, 1, 10**3)
    assert rep.ok and rep.max_sum <= 1.0


def test_verify_hyperbolic_matches_double_loop():
    sched = schedule_hyp_sqrt(1.0, 1.0, 0.5)
    horizon = 300
    rho = [1.0 / sched.scale_at(k) for k in range(1, horizon + 1)]
    oracle = [
        math.fsum(rho[k - 1] / (1 + 0.5 * (t - k)) for k in range(1, t + 1)) for t in range(1, horizon + 1)
    ]
    rep = verify_schedule(sched, Hyperbolic(0.5), 1.0, 1.0, horizon)
    np.testing.assert_allclose(rep.sums, oracle, rtol=1e-12)
    assert rep.max_sum == pytest.approx(max(oracle), rel=1e-12)


def test_verify_flags_overspending_custom_schedule():
    rep = verify_schedule(Custom([0.5] * 10), Hyperbolic(1.0), 1.0, 1.0, 10)
    assert not rep.ok and rep.margin < 0 and rep.argmax_t >= 1


def test_hyp_sqrt_first_release_overspends_for_large_beta():
    # the closed-form constant drops below delta_f/epsilon once beta is large
    for beta in (5.0, 10.0):
        rep = verify_schedule(schedule_hyp_sqrt(1, 1, beta), Hyperbolic(beta), 1, 1, 50)
        assert rep.argmax_t == 1 and not rep.ok
    for beta in (0.01, 0.1, 0.5, 1.0, 2.0, 3.0):
        assert verify_schedule(schedule_hyp_sqrt(1, 1, beta), Hyperbolic(beta), 1, 1, 2000).ok
