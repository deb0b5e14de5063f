"""Estimator result record shared across modules."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any

from scipy import stats


@dataclass
class EstimatorResult:
    """A Monte Carlo estimate with its uncertainty and provenance.

    ``ci_level`` defaults to 0.999 so that quoted intervals line up with
    the 4-standard-error working tolerance used throughout the acceptance
    checks (z = 3.29 at 0.999; the extra slack is deliberate).
    """

    estimate: float
    std_error: float
    n_samples: int
    ci_level: float = 0.999
    metadata: dict[str, Any] = field(default_factory=dict)

    @property
    def z(self) -> float:
        return float(stats.norm.ppf(0.5 + self.ci_level / 2.0))

    @property
    def ci(self) -> tuple[float, float]:
        h = self.z * self.std_error
        return (self.estimate - h, self.estimate + h)

    def overlaps(self, other: "EstimatorResult") -> bool:
        a, b = self.ci, other.ci
        return a[0] <= b[1] and b[0] <= a[1]

    def compatible_with(self, value: float, n_se: float = 4.0) -> bool:
        if self.std_error == 0.0:
            return self.estimate == value
        return abs(self.estimate - value) <= n_se * self.std_error

    def record(self, name: str, params: dict[str, Any] | None = None,
               seed: int | None = None) -> dict[str, Any]:
        """Flat JSON-ready record of this estimate."""
        lo, hi = self.ci
        return {
            "name": name,
            "params": params or {},
            "estimate": self.estimate,
            "se": self.std_error,
            "ci": [lo, hi],
            "ci_level": self.ci_level,
            "n": self.n_samples,
            "bias_metadata": {k: v for k, v in self.metadata.items()
                              if "bias" in k or "truncat" in k},
            "metadata": self.metadata,
            "seed": seed,
        }


def from_samples(values, ci_level: float = 0.999,
                 metadata: dict[str, Any] | None = None) -> EstimatorResult:
    """Mean/SE summary of an i.i.d. sample array."""
    import numpy as np

    v = np.asarray(values, dtype=float)
    n = len(v)
    if n < 2:
        raise ValueError("need at least two samples for a standard error")
    return EstimatorResult(estimate=float(v.mean()),
                           std_error=float(v.std(ddof=1) / math.sqrt(n)),
                           n_samples=n, ci_level=ci_level,
                           metadata=metadata or {})


def dump_records(records: list[dict], path: str):
    with open(path, "w") as fh:
        json.dump(records, fh, indent=2, sort_keys=True)
        fh.write("\n")
