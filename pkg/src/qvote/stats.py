"""Statistical checks and the report record they produce."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

P_REJECT = 0.001

PROVENANCE_TAGS = ("published", "trivial", "derived")


class ProvenanceError(ValueError):
    pass


class SupportViolation(AssertionError):
    """A sample fell outside the support it is required to lie in."""


@dataclass(frozen=True)
class Reference:
    value: float
    provenance: str
    uncertainty: float | None = None
    note: str = ""

    def __post_init__(self):
        if self.provenance not in PROVENANCE_TAGS:
            raise ProvenanceError(f"reference {self.value!r} has provenance {self.provenance!r}; need one of {PROVENANCE_TAGS}")


@dataclass
class StatReport:
    metric: str
    estimate: float | None
    stderr: float | None = None
    statistic: float | None = None
    p_value: float | None = None
    interval: tuple[float, float] | None = None
    references: list[Reference] = field(default_factory=list)
    status: str = "ok"
    notes: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.p_value is not None and not 0.0 <= self.p_value <= 1.0:
            raise ValueError(f"p-value out of range: {self.p_value}")
        for ref in self.references:
            if not isinstance(ref, Reference):
                raise ProvenanceError(f"reference {ref!r} carries no provenance tag")

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["interval"] = list(self.interval) if self.interval else None
        return d


def bits_key(sample) -> int:
    if isinstance(sample, (int, np.integer)):
        return int(sample)
    v = 0
    for b in sample:
        v = (v << 1) | int(b)
    return v


def uniformity_test(samples: Iterable, support: Iterable, metric: str = "uniformity") -> StatReport:
    """Chi-square goodness of fit to the uniform distribution on ``support``.

    Samples and support entries may be ints or bit sequences. Any sample
    outside the support raises :class:`SupportViolation`.
    """
    keys = np.array([bits_key(s) for s in samples], dtype=np.int64)
    sup = sorted({bits_key(s) for s in support})
    pos = {k: i for i, k in enumerate(sup)}
    outside = sorted(set(np.unique(keys).tolist()) - set(sup))
    if outside:
        raise SupportViolation(f"{metric}: {len(outside)} value(s) outside the support, e.g. {outside[:5]}")
    counts = np.bincount([pos[k] for k in keys.tolist()], minlength=len(sup))
    if len(sup) == 1:
        return StatReport(metric, 1.0, statistic=0.0, p_value=1.0)
    res = stats.chisquare(counts)
    status = "ok" if res.pvalue > P_REJECT else "reject"
    return StatReport(metric, float(counts.min() / counts.sum() * len(sup)), statistic=float(res.statistic),
                      p_value=float(res.pvalue), status=status)


def wilson_interval(successes: int, trials: int, z: float = 1.96) -> tuple[float, float]:
    if trials == 0:
        return (0.0, 1.0)
    p = successes / trials
    denom = 1 + z**2 / trials
    centre = (p + z**2 / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z**2 / (4 * trials**2)) / denom
    lo = 0.0 if successes == 0 else max(0.0, centre - half)
    hi = 1.0 if successes == trials else min(1.0, centre + half)
    return (lo, hi)


def binomial_z(successes: int, trials: int, p: float) -> float:
    """Standardized deviation of a binomial count from its mean."""
    sd = math.sqrt(trials * p * (1 - p))
    if sd == 0:
        return 0.0 if successes == trials * p else math.inf
    return (successes - trials * p) / sd


def within_sigma(observed: float, expected: float, sigma: float, k: float = 3.0) -> bool:
    return abs(observed - expected) <= k * sigma + 1e-12


def homogeneity_test(groups: Sequence[int], values: Sequence[int]) -> tuple[float, float]:
    _, gi = np.unique(np.asarray(groups), return_inverse=True)
    _, vi = np.unique(np.asarray(values), return_inverse=True)
    table = np.zeros((gi.max() + 1, vi.max() + 1))
    np.add.at(table, (gi, vi), 1)
    if min(table.shape) < 2:
        return 0.0, 1.0
    res = stats.chi2_contingency(table, correction=False)
    return float(res.statistic), float(res.pvalue)
