"""Sample sizes and risk certificates for nonconvex scenario programs.

The risk of a scenario decision with support ``n`` out of ``S`` samples is
bounded, with confidence ``1 - beta``, by

    eps(n) = 1 - (beta / (S * C(S, n))) ** (1 / (S - n)),   n < S

which spreads the confidence budget evenly over the admissible support
values.  Everything is evaluated in log-space so that sample sizes in the
10^3 - 10^5 range do not overflow the binomial coefficient.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

MAX_SAMPLE_SIZE = 10**7


class SampleSizeError(ValueError):
    """No sample size below the cap achieves the requested risk."""


def log_binomial(S: int, n: int) -> float:
    return math.lgamma(S + 1) - math.lgamma(n + 1) - math.lgamma(S - n + 1)


def epsilon_of_n(n: int, S: int, beta: float) -> float:
    """Risk level assigned to support size ``n`` for ``S`` samples."""
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta must lie in (0, 1), got {beta}")
    if n < 0 or n > S:
        raise ValueError(f"support size {n} outside [0, {S}]")
    if n == S:
        return 1.0
    exponent = (math.log(beta) - math.log(S) - log_binomial(S, n)) / (S - n)
    # 1 - exp(x) without cancellation for small |x|
    return min(1.0, max(0.0, -math.expm1(exponent)))


def epsilon_table(S: int, beta: float, support_limit: int) -> list[float]:
    """eps(n) for n = 0..S-1, equal to 1 above the support limit."""
    return [epsilon_of_n(n, S, beta) if n <= support_limit else 1.0 for n in range(S)]


def compute_sample_size(
    epsilon: float, beta: float, n_bar: int, cap: int = MAX_SAMPLE_SIZE
) -> int:
    """Smallest S with eps(n_bar; S, beta) <= epsilon."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta must lie in (0, 1), got {beta}")
    if n_bar < 0:
        raise ValueError("support limit must be non-negative")

    def ok(S: int) -> bool:
        return epsilon_of_n(n_bar, S, beta) <= epsilon

    lo = n_bar + 1
    if ok(lo):
        hi = lo
    else:
        # exponential bracketing, then bisection on the monotone bound
        step = 1
        hi = lo + step
        while not ok(hi):
            if hi >= cap:
                raise SampleSizeError(
                    f"no sample size <= {cap} reaches epsilon={epsilon} "
                    f"at beta={beta}, support limit {n_bar}"
                )
            lo = hi
            step *= 2
            hi = min(cap, lo + step)
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if ok(mid):
                hi = mid
            else:
                lo = mid
    # guard against rounding plateaus: walk down until S - 1 fails
    S = hi
    while S - 1 > n_bar and ok(S - 1):
        S -= 1
    return S


@dataclass(frozen=True)
class RiskConfig:
    """Risk specification of a scenario program.

    ``support_limit`` already includes the removal budget, because removed
    scenarios always belong to the support.
    """

    epsilon: float
    beta: float
    support_limit: int
    removal_budget: int = 0
    sample_size: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if not 0.0 < self.beta < 1.0:
            raise ValueError("beta must lie in (0, 1)")
        if self.support_limit < 0 or self.removal_budget < 0:
            raise ValueError("support limit and removal budget must be non-negative")
        if self.removal_budget > self.support_limit:
            raise ValueError("removal budget cannot exceed the support limit")
        if self.sample_size == 0:
            object.__setattr__(
                self,
                "sample_size",
                compute_sample_size(self.epsilon, self.beta, self.support_limit),
            )
        if self.sample_size <= self.support_limit:
            raise ValueError("sample size must exceed the support limit")

    @property
    def epsilon_at_limit(self) -> float:
        return epsilon_of_n(self.support_limit, self.sample_size, self.beta)


@dataclass(frozen=True)
class RiskCertificate:
    support_estimate: int
    certified: bool
    epsilon_bound: float


def certify(n_hat: int, config: RiskConfig) -> RiskCertificate:
    if n_hat < 0:
        raise ValueError("support estimate must be non-negative")
    if n_hat > config.support_limit or n_hat >= config.sample_size:
        return RiskCertificate(n_hat, False, 1.0)
    return RiskCertificate(n_hat, True, epsilon_of_n(n_hat, config.sample_size, config.beta))


def allocation_sum(S: int, beta: float, support_limit: int) -> float:
    """Left-hand side of the confidence identity, sum_n C(S,n)(1-eps(n))^(S-n)."""
    total = 0.0
    for n in range(min(support_limit, S - 1) + 1):
        eps = epsilon_of_n(n, S, beta)
        if eps >= 1.0:
            continue
        total += math.exp(log_binomial(S, n) + (S - n) * math.log1p(-eps))
    return total
