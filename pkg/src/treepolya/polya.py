"""Singular Pólya kernels, power-series sum laws, and exact sampling.

A split with kind c in {-1, 0, 1} divides a total over its components as
a hypergeometric, multinomial, or Dirichlet-multinomial.  Sum laws are
the univariate distributions placed on the grand total.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy import stats

from .exceptions import DomainError, UsageError
from .special import LogValue, ln_gen_factorial

__all__ = [
    "SplitSpec",
    "Dirac", "Binomial", "Poisson", "NegativeBinomial", "SumLaw",
    "polya_pmf", "polya_uni_pmf", "polya_sample", "polya_sample_many",
    "sumlaw_log_pmf", "sumlaw_factorial_moment", "sumlaw_sample",
    "sumlaw_sample_many", "sumlaw_support_max", "sumlaw_truncation_point",
]

_INT_TOL = 1e-9


@dataclass(frozen=True)
class SplitSpec:
    """One Pólya split: kind c and one positive weight per component."""

    c: int
    theta: tuple

    def __post_init__(self):
        object.__setattr__(self, "theta", tuple(float(t) for t in self.theta))
        if self.c not in (-1, 0, 1):
            raise DomainError(f"split kind must be -1, 0 or 1, got {self.c}")
        if len(self.theta) < 2:
            raise DomainError("a split needs at least two components")
        if any(t <= 0 for t in self.theta):
            raise DomainError("all split weights must be positive")
        if self.c == -1 and any(abs(t - round(t)) > _INT_TOL
                                for t in self.theta):
            raise DomainError("hypergeometric split weights must be integers")

    @property
    def arity(self) -> int:
        return len(self.theta)

    @property
    def total(self) -> float:
        return sum(self.theta)


# ---------------------------------------------------------------------
# Sum laws


@dataclass(frozen=True)
class Dirac:
    m: int

    def __post_init__(self):
        if self.m < 0 or self.m != int(self.m):
            raise DomainError(f"Dirac point must be a nonnegative integer, "
                              f"got {self.m}")


@dataclass(frozen=True)
class Binomial:
    """Binomial on {0, ..., size} with success probability prob.

    The power-series form of this family uses odds alpha = prob/(1-prob);
    the success-probability parameterization is exposed here.
    """

    size: int
    prob: float

    def __post_init__(self):
        if self.size <= 0 or self.size != int(self.size):
            raise DomainError("binomial size must be a positive integer")
        if not 0.0 < self.prob < 1.0:
            raise DomainError("binomial prob must be in (0, 1)")


@dataclass(frozen=True)
class Poisson:
    rate: float

    def __post_init__(self):
        if self.rate <= 0:
            raise DomainError("Poisson rate must be positive")


@dataclass(frozen=True)
class NegativeBinomial:
    """P(y) = (alpha)_y / y! * p^y * (1-p)^alpha."""

    alpha: float
    p: float

    def __post_init__(self):
        if self.alpha <= 0:
            raise DomainError("negative binomial alpha must be positive")
        if not 0.0 < self.p < 1.0:
            raise DomainError("negative binomial p must be in (0, 1)")


SumLaw = Union[Dirac, Binomial, Poisson, NegativeBinomial]


def sumlaw_support_max(law: SumLaw) -> Optional[int]:
    """Upper support bound, or None when unbounded."""
    if isinstance(law, Dirac):
        return law.m
    if isinstance(law, Binomial):
        return law.size
    return None


def sumlaw_log_pmf(n: int, law: SumLaw) -> LogValue:
    if n < 0 or n != int(n):
        return LogValue.ZERO
    if isinstance(law, Dirac):
        return LogValue.ONE if n == law.m else LogValue.ZERO
    if isinstance(law, Binomial):
        if n > law.size:
            return LogValue.ZERO
        log_choose = (math.lgamma(law.size + 1) - math.lgamma(n + 1)
                      - math.lgamma(law.size - n + 1))
        return LogValue(1, log_choose + n * math.log(law.prob)
                        + (law.size - n) * math.log1p(-law.prob))
    if isinstance(law, Poisson):
        return LogValue(1, n * math.log(law.rate) - law.rate
                        - math.lgamma(n + 1))
    if isinstance(law, NegativeBinomial):
        log_rising = math.lgamma(law.alpha + n) - math.lgamma(law.alpha)
        return LogValue(1, log_rising - math.lgamma(n + 1)
                        + n * math.log(law.p) + law.alpha * math.log1p(-law.p))
    raise UsageError(f"unknown sum law {law!r}")


def sumlaw_factorial_moment(r: int, law: SumLaw) -> float:
    """r-th factorial moment E[(N)(N-1)...(N-r+1)]."""
    if r < 0:
        raise DomainError("moment order must be nonnegative")
    if r == 0:
        return 1.0
    if isinstance(law, Dirac):
        if r > law.m:
            return 0.0
        return math.exp(math.lgamma(law.m + 1) - math.lgamma(law.m - r + 1))
    if isinstance(law, Binomial):
        if r > law.size:
            return 0.0
        return math.exp(math.lgamma(law.size + 1)
                        - math.lgamma(law.size - r + 1)) * law.prob ** r
    if isinstance(law, Poisson):
        return law.rate ** r
    if isinstance(law, NegativeBinomial):
        log_rising = math.lgamma(law.alpha + r) - math.lgamma(law.alpha)
        return math.exp(log_rising + r * (math.log(law.p)
                                          - math.log1p(-law.p)))
    raise UsageError(f"unknown sum law {law!r}")


def sumlaw_sample_many(law: SumLaw, size: int,
                       rng: np.random.Generator) -> np.ndarray:
    if isinstance(law, Dirac):
        return np.full(size, law.m, dtype=np.int64)
    if isinstance(law, Binomial):
        return rng.binomial(law.size, law.prob, size=size).astype(np.int64)
    if isinstance(law, Poisson):
        return rng.poisson(law.rate, size=size).astype(np.int64)
    if isinstance(law, NegativeBinomial):
        # numpy's p is the success probability of the stopping trials,
        # i.e. 1 - p in the power-series parameterization used here
        return rng.negative_binomial(law.alpha, 1.0 - law.p,
                                     size=size).astype(np.int64)
    raise UsageError(f"unknown sum law {law!r}")


def sumlaw_sample(law: SumLaw, rng: np.random.Generator) -> int:
    return int(sumlaw_sample_many(law, 1, rng)[0])


def sumlaw_truncation_point(law: SumLaw, tail: float = 1e-14) -> int:
    """Smallest N with cumulative mass above 1 - tail (exact for finite
    support)."""
    bound = sumlaw_support_max(law)
    if bound is not None:
        return bound
    if isinstance(law, Poisson):
        return int(stats.poisson.isf(tail, law.rate)) + 1
    if isinstance(law, NegativeBinomial):
        return int(stats.nbinom.isf(tail, law.alpha, 1.0 - law.p)) + 1
    raise UsageError(f"unknown sum law {law!r}")


# ---------------------------------------------------------------------
# Pólya kernels


def polya_pmf(y, spec: SplitSpec) -> LogValue:
    """Log p.m.f. of the singular Pólya split at a count vector."""
    y = [int(v) for v in y]
    if len(y) != spec.arity:
        raise UsageError(f"count vector has {len(y)} components, split "
                         f"has {spec.arity}")
    if any(v < 0 for v in y):
        return LogValue.ZERO
    n = sum(y)
    if n == 0:
        return LogValue.ONE
    denom = ln_gen_factorial(spec.total, n, spec.c)
    if denom.sign == 0:
        raise DomainError(f"total {n} outside the support of a "
                          f"hypergeometric split with |theta|={spec.total}")
    out = LogValue(1, math.lgamma(n + 1)) / denom
    for theta_j, y_j in zip(spec.theta, y):
        out = out * ln_gen_factorial(theta_j, y_j, spec.c)
        if out.sign == 0:
            return LogValue.ZERO
        out = out / LogValue(1, math.lgamma(y_j + 1))
    return out


def polya_uni_pmf(y: int, n: int, theta: float, tau: float,
                  c: int) -> LogValue:
    """Univariate (non-singular) Pólya p.m.f. at y out of a total n."""
    if y < 0 or y > n:
        return LogValue.ZERO
    return polya_pmf((y, n - y), SplitSpec(c, (theta, tau)))


def polya_sample_many(totals, spec: SplitSpec,
                      rng: np.random.Generator) -> np.ndarray:
    """Exact draws splitting each total; returns shape (len(totals), arity).

    Sequential conditional construction: component j given the remainder
    is binomial (c=0), beta-binomial via a beta draw (c=1), or
    hypergeometric (c=-1).
    """
    totals = np.asarray(totals, dtype=np.int64)
    if np.any(totals < 0):
        raise DomainError("totals must be nonnegative")
    if spec.c == -1 and np.any(totals > round(spec.total)):
        raise DomainError("total exceeds |theta| for a hypergeometric split")
    size = totals.shape[0]
    out = np.zeros((size, spec.arity), dtype=np.int64)
    remaining = totals.copy()
    rest = spec.total
    for j in range(spec.arity - 1):
        theta_j = spec.theta[j]
        rest -= theta_j
        if spec.c == 0:
            draw = rng.binomial(remaining, theta_j / (theta_j + rest))
        elif spec.c == 1:
            probs = rng.beta(theta_j, rest, size=size)
            draw = rng.binomial(remaining, probs)
        else:
            draw = rng.hypergeometric(round(theta_j), round(rest),
                                      np.maximum(remaining, 1))
            draw = np.where(remaining == 0, 0, draw)
        out[:, j] = draw
        remaining -= draw
    out[:, -1] = remaining
    return out


def polya_sample(n: int, spec: SplitSpec,
                 rng: np.random.Generator) -> np.ndarray:
    """One exact draw from the split of a total n."""
    return polya_sample_many(np.array([n]), spec, rng)[0]
