"""Two-sample comparison of equal-size error-rate samples.

    t = (mean_a - mean_b) / pooled_sd
    pooled_sd = sqrt((sd_a^2 + sd_b^2) / 2)

Two readings of "SD" are supported: the sample standard deviation (default)
and the standard error of the mean (sd / sqrt(n)). Reports carry both, since
published tables rarely say which convention they used.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

CRITICAL_T_05 = 1.645

SD_CONVENTIONS = ("sample", "sem")


@dataclass(frozen=True)
class SampleSummary:
    values: tuple[float, ...]
    mean: float
    sd: float

    @classmethod
    def from_values(cls, values) -> "SampleSummary":
        arr = np.asarray(list(values), dtype=np.float64)
        if arr.size < 2:
            raise InvalidInputError("a sample needs at least 2 values")
        if not np.all(np.isfinite(arr)):
            raise InvalidInputError("sample values must be finite")
        return cls(tuple(float(v) for v in arr), float(arr.mean()), float(arr.std(ddof=1)))

    @property
    def n(self) -> int:
        return len(self.values)


def _spread(sample: SampleSummary, convention: str) -> float:
    if convention == "sample":
        return sample.sd
    if convention == "sem":
        return sample.sd / math.sqrt(sample.n)
    raise InvalidInputError(f"unknown SD convention {convention!r}")


def pooled_sd(a: SampleSummary, b: SampleSummary, convention: str = "sample") -> float:
    """Root mean square of the two spreads; sample sizes must match."""
    if a.n != b.n:
        raise InvalidInputError(f"sample sizes differ: {a.n} vs {b.n}")
    sa = _spread(a, convention)
    sb = _spread(b, convention)
    return math.sqrt((sa * sa + sb * sb) / 2.0)


def t_statistic(a: SampleSummary, b: SampleSummary, convention: str = "sample") -> float:
    pooled = pooled_sd(a, b, convention)
    if pooled == 0.0:
        raise InvalidInputError("pooled spread is zero; t is undefined")
    return (a.mean - b.mean) / pooled


def significance_decision(t: float, critical: float = CRITICAL_T_05) -> bool:
    """Significant only when t strictly exceeds the critical value."""
    return t > critical


def ttest_report(
    a_values, b_values, critical: float = CRITICAL_T_05, label_a: str = "a", label_b: str = "b"
) -> dict:
    """t under both SD conventions plus the significance verdicts."""
    a = SampleSummary.from_values(a_values)
    b = SampleSummary.from_values(b_values)
    report: dict = {
        "n": a.n,
        "mean_a": a.mean,
        "mean_b": b.mean,
        "sd_a": a.sd,
        "sd_b": b.sd,
        "critical": critical,
        "label_a": label_a,
        "label_b": label_b,
    }
    for convention in SD_CONVENTIONS:
        t = t_statistic(a, b, convention)
        report[f"t_{convention}"] = t
        report[f"significant_{convention}"] = significance_decision(t, critical)
        report[f"pooled_sd_{convention}"] = pooled_sd(a, b, convention)
    return report


def format_report(report: dict) -> str:
    lines = [
        f"samples: n={report['n']} per side",
        f"mean[{report['label_a']}] = {report['mean_a']:.6g}   "
        f"mean[{report['label_b']}] = {report['mean_b']:.6g}",
        f"sd[{report['label_a']}]   = {report['sd_a']:.6g}   "
        f"sd[{report['label_b']}]   = {report['sd_b']:.6g}",
    ]
    for convention in SD_CONVENTIONS:
        verdict = "significant" if report[f"significant_{convention}"] else "not significant"
        lines.append(
            f"t ({convention} SD convention) = {report[f't_{convention}']:.6g} "
            f"vs critical {report['critical']:.6g}: {verdict}"
        )
    return "\n".join(lines)
