"""Streaming Laplace releases under undiscounted, exponentially and hyperbolically discounted privacy budgets."""

from .mechanism import (
    BUDGET_RTOL,
    BudgetExceeded,
    CausalityError,
    Custom,
    DpQuadratic,
    ExpConstant,
    Exponential,
    HypSqrt,
    Hyperbolic,
    PrivacyLedger,
    ReleaseRecord,
    UNDISCOUNTED,
    Undiscounted,
    VerifyReport,
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
from .query import EvolvingDataset, MeanQuery, MissingPolicy, mean_at, sensitivity_mean

__version__ = "0.1.0"
