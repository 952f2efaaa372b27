"""Repeated-run comparison statistics: one-way ANOVA and two-sample t-tests.

p-values come from the regularized incomplete beta function evaluated by a
modified-Lentz continued fraction, so no external statistics package is
required.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

from .errors import ConfigError


class StatsError(ConfigError):
    pass


class TooFewSamples(StatsError):
    pass


class TooFewGroups(StatsError):
    pass


class NonpositiveShape(StatsError):
    pass


@dataclass(frozen=True)
class RunGroup:
    """Accuracies from repeated runs of one experimental condition."""

    name: str
    accuracies: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "accuracies", tuple(float(v) for v in self.accuracies))
        if not self.accuracies:
            raise TooFewSamples(f"group {self.name!r} is empty")
        if any(not 0.0 <= v <= 1.0 for v in self.accuracies):
            raise StatsError(f"group {self.name!r}: accuracies must lie in [0, 1]")


Group = Union[RunGroup, Sequence[float]]


def _values(g: Group) -> list[float]:
    return list(g.accuracies) if isinstance(g, RunGroup) else [float(v) for v in g]


@dataclass(frozen=True)
class TestReport:
    kind: str  # "anova" | "t-test"
    statistic: float
    df: Union[tuple[float, float], float]
    p_value: float
    degenerate: bool = False
    variant: str = ""
    groups: tuple[str, ...] = field(default=())

    __test__ = False  # not a pytest class

    def to_dict(self) -> dict:
        df = list(self.df) if isinstance(self.df, tuple) else self.df
        stat = self.statistic
        if math.isinf(stat):
            stat = "inf" if stat > 0 else "-inf"
        d = {"kind": self.kind, "statistic": stat, "df": df,
             "p_value": self.p_value, "degenerate": self.degenerate}
        if self.variant:
            d["variant"] = self.variant
        if self.groups:
            d["groups"] = list(self.groups)
        return d


# Descriptive -------------------------------------------------------------------


def _mean(xs: Sequence[float]) -> float:
    return math.fsum(xs) / len(xs)


def _ss(xs: Sequence[float], m: float) -> float:
    return math.fsum((x - m) ** 2 for x in xs)


def mean_and_sd(group: Group) -> tuple[float, float]:
    """Arithmetic mean and sample (n - 1) standard deviation."""
    xs = _values(group)
    if len(xs) < 2:
        raise TooFewSamples("standard deviation needs at least two values")
    m = _mean(xs)
    return m, math.sqrt(_ss(xs, m) / (len(xs) - 1))


# Special functions -------------------------------------------------------------

_FPMIN = 1e-300
_EPS = 1e-16


def _betacf(x: float, a: float, b: float) -> float:
    """Continued fraction for I_x(a, b), modified Lentz."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _FPMIN:
        d = _FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, 100000):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError(f"incomplete beta failed to converge for x={x}, a={a}, b={b}")


def regularized_incomplete_beta(x: float, a: float, b: float) -> float:
    """I_x(a, b), the CDF of Beta(a, b) at ``x``."""
    if not (a > 0 and b > 0):
        raise NonpositiveShape(f"shape parameters must be positive, got a={a}, b={b}")
    if not 0.0 <= x <= 1.0:
        raise StatsError(f"x must lie in [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return x
    if a == b and x == 0.5:
        return 0.5
    log_front = (a * math.log(x) + b * math.log1p(-x)
                 - (math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)))
    front = math.exp(log_front)
    # the fraction converges fast below the mean; use symmetry above it
    if x < (a + 1.0) / (a + b + 2.0):
        return min(1.0, front * _betacf(x, a, b) / a)
    return max(0.0, 1.0 - front * _betacf(1.0 - x, b, a) / b)


def t_cdf(t: float, df: float) -> float:
    if not df > 0:
        raise NonpositiveShape("degrees of freedom must be positive")
    if t == 0:
        return 0.5
    tail = 0.5 * regularized_incomplete_beta(df / (df + t * t), df / 2.0, 0.5)
    return 1.0 - tail if t > 0 else tail


def t_sf_two_sided(t: float, df: float) -> float:
    """P(|T| >= |t|), computed directly for precision in the tail."""
    if not df > 0:
        raise NonpositiveShape("degrees of freedom must be positive")
    if math.isinf(t):
        return 0.0
    if t == 0:
        return 1.0
    return regularized_incomplete_beta(df / (df + t * t), df / 2.0, 0.5)


def f_cdf(f: float, df1: float, df2: float) -> float:
    if not (df1 > 0 and df2 > 0):
        raise NonpositiveShape("degrees of freedom must be positive")
    if f < 0:
        raise StatsError("F statistic must be non-negative")
    if f == 0:
        return 0.0
    return regularized_incomplete_beta(df1 * f / (df1 * f + df2), df1 / 2.0, df2 / 2.0)


def f_sf(f: float, df1: float, df2: float) -> float:
    """Upper tail P(F >= f) via the complementary beta for precision."""
    if not (df1 > 0 and df2 > 0):
        raise NonpositiveShape("degrees of freedom must be positive")
    if math.isinf(f):
        return 0.0
    if f <= 0:
        return 1.0
    return regularized_incomplete_beta(df2 / (df2 + df1 * f), df2 / 2.0, df1 / 2.0)


# Tests -----------------------------------------------------------------------


def _names(groups: Sequence[Group]) -> tuple[str, ...]:
    if all(isinstance(g, RunGroup) for g in groups):
        return tuple(g.name for g in groups)
    return ()


def one_way_anova(groups: Sequence[Group]) -> TestReport:
    if len(groups) < 2:
        raise TooFewGroups("ANOVA needs at least two groups")
    data = [_values(g) for g in groups]
    if any(len(xs) < 2 for xs in data):
        raise TooFewSamples("every ANOVA group needs at least two values")
    k = len(data)
    n_total = sum(len(xs) for xs in data)
    means = [_mean(xs) for xs in data]
    grand = math.fsum(math.fsum(xs) for xs in data) / n_total
    ssb = math.fsum(len(xs) * (m - grand) ** 2 for xs, m in zip(data, means))
    ssw = math.fsum(_ss(xs, m) for xs, m in zip(data, means))
    df1, df2 = k - 1, n_total - k
    names = _names(groups)
    if ssw == 0.0:
        equal = all(m == means[0] for m in means)
        return TestReport("anova", 0.0 if equal else math.inf, (float(df1), float(df2)),
                          1.0 if equal else 0.0, degenerate=True, groups=names)
    f = (ssb / df1) / (ssw / df2)
    return TestReport("anova", f, (float(df1), float(df2)), f_sf(f, df1, df2), groups=names)


def t_test_two_sample(a: Group, b: Group, variant: str = "pooled") -> TestReport:
    """Two-sided two-sample t-test, Student (``pooled``) or ``welch``."""
    xa, xb = _values(a), _values(b)
    if len(xa) < 2 or len(xb) < 2:
        raise TooFewSamples("each t-test group needs at least two values")
    if variant not in ("pooled", "welch"):
        raise StatsError(f"unknown t-test variant {variant!r}")
    na, nb = len(xa), len(xb)
    ma, mb = _mean(xa), _mean(xb)
    va, vb = _ss(xa, ma) / (na - 1), _ss(xb, mb) / (nb - 1)
    names = _names([a, b])
    if va == 0.0 and vb == 0.0:
        df = float(na + nb - 2)
        if ma == mb:
            return TestReport("t-test", 0.0, df, 1.0, True, variant, names)
        return TestReport("t-test", math.copysign(math.inf, ma - mb), df, 0.0, True, variant, names)
    if variant == "pooled":
        df = float(na + nb - 2)
        sp2 = ((na - 1) * va + (nb - 1) * vb) / df
        se = math.sqrt(sp2 * (1.0 / na + 1.0 / nb))
    else:
        qa, qb = va / na, vb / nb
        se = math.sqrt(qa + qb)
        df = (qa + qb) ** 2 / (qa * qa / (na - 1) + qb * qb / (nb - 1))
    t = (ma - mb) / se
    return TestReport("t-test", t, df, t_sf_two_sided(t, df), False, variant, names)


def compare_groups(groups: Sequence[Group], variant: str = "pooled") -> TestReport:
    """ANOVA for three or more groups, a t-test for exactly two."""
    if len(groups) < 2:
        raise TooFewGroups("comparison needs at least two groups")
    if len(groups) == 2:
        return t_test_two_sample(groups[0], groups[1], variant)
    return one_way_anova(groups)


def groups_from_rows(rows: Iterable[dict], column: str = "accuracy") -> list[RunGroup]:
    """Group CSV rows by ``condition`` in first-seen order, ordered by ``run``."""
    acc: dict[str, list[tuple[int, float]]] = {}
    for row in rows:
        try:
            cond = row["condition"]
            value = row[column]
        except KeyError as exc:
            raise StatsError(f"missing column {exc.args[0]!r}") from None
        if value in ("", None):
            continue
        run = int(row.get("run", len(acc.get(cond, ()))) or 0)
        acc.setdefault(cond, []).append((run, float(value)))
    return [RunGroup(name, tuple(v for _, v in sorted(vals))) for name, vals in acc.items()]


def read_groups_csv(path, column: str = "accuracy") -> list[RunGroup]:
    with open(path, newline="") as fh:
        return groups_from_rows(csv.DictReader(fh), column)
