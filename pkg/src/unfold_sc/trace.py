"""Per-iteration / per-layer record shared by classical and unfolded solvers."""

import csv
from dataclasses import dataclass, field

import numpy as np

TRACE_HEADER = ("iter", "nmse_db", "threshold", "support_size", "objective")


def fmt(v):
    """Round-trippable float text; blank for missing values."""
    if v is None:
        return ""
    return format(float(v), ".17g")


def nmse_db_rows(x, x_true):
    """Row-wise NMSE in dB; rows with an all-zero truth come back as NaN."""
    x = np.atleast_2d(x)
    x_true = np.atleast_2d(x_true)
    sig = np.sum(x_true * x_true, axis=1)
    err = np.sum((x - x_true) ** 2, axis=1)
    out = np.full(sig.shape, np.nan)
    ok = sig > 0
    with np.errstate(divide="ignore"):
        out[ok] = 10.0 * np.log10(err[ok] / sig[ok])
    return out


@dataclass(eq=False)
class SolverTrace:
    """Iterates ``x^(0) .. x^(T)`` for a batch of rows plus per-step diagnostics.

    ``thresholds[t]`` and ``selected[t]`` belong to the step that produced
    ``estimates[t + 1]``. When iterates are not kept only ``x^(0)`` and the
    final iterate are stored, but ``nmse`` and the other per-step records
    still cover every step.
    """

    estimates: list
    thresholds: list = field(default_factory=list)
    selected: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    support_sizes: list = field(default_factory=list)
    nmse: list = field(default_factory=list)
    momentum: list = field(default_factory=list)
    single: bool = False
    steps: int | None = None

    def __len__(self):
        return (self.steps if self.steps is not None else len(self.estimates) - 1) + 1

    @property
    def final(self):
        x = self.estimates[-1]
        return x[0] if self.single else x

    def layer(self, t):
        x = self.estimates[t]
        return x[0] if self.single else x

    def supports(self, t):
        """Boolean support mask(s) of ``x^(t)``."""
        mask = self.estimates[t] != 0
        return mask[0] if self.single else mask

    def nmse_db(self, x_true):
        """``(T + 1, batch)`` NMSE table against ``x_true`` (needs kept iterates)."""
        return np.array([nmse_db_rows(x, x_true) for x in self.estimates])

    def write_csv(self, path):
        """One row per step with batch means of NMSE, threshold, support size and objective."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_HEADER)
            for t in range(len(self)):
                nmse = _mean_or_none(self.nmse[t]) if self.nmse else None
                thr = _mean_or_none(self.thresholds[t - 1]) if t > 0 and self.thresholds else None
                sup = _mean_or_none(self.support_sizes[t]) if self.support_sizes else None
                obj = _mean_or_none(self.objective[t]) if self.objective else None
                w.writerow([t, fmt(nmse), fmt(thr), fmt(sup), fmt(obj)])


def _mean_or_none(v):
    v = np.asarray(v, dtype=np.float64)
    v = v[~np.isnan(v)]
    return float(v.mean()) if v.size else None
