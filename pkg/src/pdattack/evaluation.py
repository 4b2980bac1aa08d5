"""Robustness statistics and cross-attack comparison.

Conventions
-----------
* An example is broken at threshold ``eps`` when the attack succeeded with a
  perturbation of norm ``<= eps``.
* Examples misclassified before any attack are never robust and are left out
  of the average norm.
* Numbers are kept at full precision; only :func:`render_summary` rounds
  (to 0.1 percentage points).

Output schemas (version ``REPORT_SCHEMA``)
------------------------------------------
CSV, one row per attack x model x threshold::

    attack,model,norm,threshold,robust_accuracy

JSON::

    {"schema": "pdattack-report/1",
     "reports": [{"attack", "model", "norm", "num_examples", "success_rate",
                  "avg_norm_successful", "thresholds", "robust_accuracy"}],
     "comparison": {"attacks", "num_cells", "avg_rob_accuracy", "num_best",
                    "avg_diff_to_best", "max_diff_to_best"}}

``avg_norm_successful`` is ``null`` when no qualifying attack succeeded.
"""

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np

from .prox import NormKind

REPORT_SCHEMA = "pdattack-report/1"
CSV_FIELDS = ("attack", "model", "norm", "threshold", "robust_accuracy")


class EmptySelectionError(ValueError):
    """Raised when a statistic is requested over an empty set of examples."""


def _norms(outcomes):
    """Norm of every outcome, ``inf`` where the attack failed."""
    return np.array([o.norm if o.success else math.inf for o in outcomes], dtype=np.float64)


def _aligned(outcomes, clean_correct):
    outcomes = list(outcomes)
    flags = np.asarray(clean_correct, dtype=bool)
    if flags.shape != (len(outcomes),):
        raise ValueError(f"{len(outcomes)} outcomes but {flags.size} clean-correct flags")
    return outcomes, flags


def robust_accuracy(outcomes, clean_correct, thresholds):
    """Fraction of examples still correctly classified at every threshold.

    ``thresholds`` must be sorted ascending.  Returns a list aligned with it.
    """
    outcomes, flags = _aligned(outcomes, clean_correct)
    eps = np.asarray(thresholds, dtype=np.float64)
    if eps.ndim != 1:
        raise ValueError("thresholds must be a flat sequence")
    if np.any(np.diff(eps) < 0):
        raise ValueError("thresholds must be sorted ascending")
    if not outcomes:
        raise EmptySelectionError("robust accuracy of an empty set")
    norms = _norms(outcomes)
    return [float(np.mean(flags & (norms > e))) for e in eps]


def average_norm(outcomes, clean_correct):
    """Mean norm over successful attacks on clean-correct examples."""
    outcomes, flags = _aligned(outcomes, clean_correct)
    norms = _norms(outcomes)[flags]
    norms = norms[np.isfinite(norms)]
    if norms.size == 0:
        raise EmptySelectionError("no successful attack on a correctly classified example")
    return float(norms.mean())


@dataclass(frozen=True)
class RobustnessReport:
    attack_name: str
    norm: NormKind
    thresholds: tuple
    robust_accuracy_at: tuple
    avg_norm_successful: float
    success_rate: float
    num_examples: int
    model: str = ""

    @classmethod
    def from_outcomes(cls, attack_name, norm, outcomes, clean_correct, thresholds, model=""):
        outcomes, flags = _aligned(outcomes, clean_correct)
        acc = robust_accuracy(outcomes, flags, thresholds)
        try:
            avg = average_norm(outcomes, flags)
        except EmptySelectionError:
            avg = math.nan
        attacked = [o for o, f in zip(outcomes, flags) if f]
        rate = float(np.mean([o.success for o in attacked])) if attacked else math.nan
        return cls(attack_name, NormKind.parse(norm), tuple(float(t) for t in thresholds),
                   tuple(acc), avg, rate, len(outcomes), model)

    def as_dict(self):
        return {
            "attack": self.attack_name,
            "model": self.model,
            "norm": str(self.norm),
            "num_examples": self.num_examples,
            "success_rate": _json_number(self.success_rate),
            "avg_norm_successful": _json_number(self.avg_norm_successful),
            "thresholds": list(self.thresholds),
            "robust_accuracy": list(self.robust_accuracy_at),
        }


@dataclass(frozen=True)
class ComparisonSummary:
    """Per-attack aggregates over a grid of (model, threshold) cells."""

    attacks: tuple
    num_cells: int
    avg_rob_accuracy: tuple
    num_best: tuple
    avg_diff_to_best: tuple
    max_diff_to_best: tuple

    def __getitem__(self, name):
        i = self.attacks.index(name)
        return {
            "avg_rob_accuracy": self.avg_rob_accuracy[i],
            "num_best": self.num_best[i],
            "avg_diff_to_best": self.avg_diff_to_best[i],
            "max_diff_to_best": self.max_diff_to_best[i],
        }

    def as_dict(self):
        return {
            "attacks": list(self.attacks),
            "num_cells": self.num_cells,
            "avg_rob_accuracy": list(self.avg_rob_accuracy),
            "num_best": list(self.num_best),
            "avg_diff_to_best": list(self.avg_diff_to_best),
            "max_diff_to_best": list(self.max_diff_to_best),
        }


def comparison_summary(grid, names=None, tie_tol=1e-9):
    """Aggregate a robust-accuracy grid of shape ``(n_attacks, n_cells)``.

    Lower robust accuracy is better.  An attack within ``tie_tol`` of the
    cell minimum is credited as best for that cell.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2 or grid.shape[0] == 0 or grid.shape[1] == 0:
        raise ValueError("grid must be a non-empty attacks x cells matrix")
    if not np.all(np.isfinite(grid)):
        raise ValueError("grid has missing or non-finite cells")
    names = tuple(f"attack-{i}" for i in range(grid.shape[0])) if names is None else tuple(names)
    if len(names) != grid.shape[0]:
        raise ValueError(f"{len(names)} names for {grid.shape[0]} attacks")
    diff = grid - grid.min(axis=0)
    return ComparisonSummary(
        attacks=names,
        num_cells=grid.shape[1],
        avg_rob_accuracy=tuple(float(v) for v in grid.mean(axis=1)),
        num_best=tuple(int(v) for v in (diff <= tie_tol).sum(axis=1)),
        avg_diff_to_best=tuple(float(v) for v in diff.mean(axis=1)),
        max_diff_to_best=tuple(float(v) for v in diff.max(axis=1)),
    )


def summarize_reports(reports):
    """Comparison over reports sharing the same (model, threshold) cells."""
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to compare")
    names, rows, cells = [], {}, None
    for rep in reports:
        if rep.attack_name not in rows:
            names.append(rep.attack_name)
            rows[rep.attack_name] = {}
        for t, a in zip(rep.thresholds, rep.robust_accuracy_at):
            rows[rep.attack_name][(rep.model, t)] = a
    for name in names:
        keys = sorted(rows[name])
        if cells is None:
            cells = keys
        elif keys != cells:
            raise ValueError(f"attack {name!r} covers different (model, threshold) cells")
    return comparison_summary([[rows[n][c] for c in cells] for n in names], names)


# -- serialisation ---------------------------------------------------------------


def _json_number(v):
    return None if v is None or (isinstance(v, float) and math.isnan(v)) else v


def reports_to_csv(reports):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for rep in reports:
        for t, a in zip(rep.thresholds, rep.robust_accuracy_at):
            writer.writerow([rep.attack_name, rep.model, str(rep.norm), repr(t), repr(a)])
    return buf.getvalue()


def summary_to_json(reports, summary):
    doc = {
        "schema": REPORT_SCHEMA,
        "reports": [r.as_dict() for r in reports],
        "comparison": summary.as_dict(),
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def read_grid(path_or_file):
    """Read a wide grid CSV: ``model,threshold,<attack>,<attack>,...``.

    Returns ``(attack_names, cells, matrix)`` with ``matrix`` of shape
    ``(n_attacks, n_cells)`` and ``cells`` a list of ``(model, threshold)``.
    """
    fh = open(path_or_file, newline="") if isinstance(path_or_file, str) else path_or_file
    with fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["model", "threshold"] or len(rows[0]) < 3:
        raise ValueError("grid CSV needs a 'model,threshold,<attacks...>' header")
    names = rows[0][2:]
    cells, values = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(rows[0]):
            raise ValueError(f"grid CSV line {lineno}: expected {len(rows[0])} fields")
        cells.append((row[0], float(row[1])))
        values.append([float(v) for v in row[2:]])
    if not values:
        raise ValueError("grid CSV has no cells")
    return names, cells, np.array(values).T


def render_summary(summary, scale=1.0):
    """Plain-text table; values multiplied by ``scale`` and rounded to 0.1."""
    width = max(12, *(len(a) for a in summary.attacks))
    lines = ["".ljust(20) + "".join(a.rjust(width + 1) for a in summary.attacks)]
    for label, values, fmt in (
        ("avg. rob. acc.", summary.avg_rob_accuracy, "{:.1f}"),
        ("# best", summary.num_best, "{:d}"),
        ("avg. diff. to best", summary.avg_diff_to_best, "{:.1f}"),
        ("max diff. to best", summary.max_diff_to_best, "{:.1f}"),
    ):
        cells = [fmt.format(v if fmt == "{:d}" else v * scale) for v in values]
        lines.append(label.ljust(20) + "".join(c.rjust(width + 1) for c in cells))
    return "\n".join(lines) + "\n"
