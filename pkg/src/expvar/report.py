"""Report tables and their CSV/JSON renderings.

Column names follow the conventional mixed-model summary layouts
("npar logLik AIC LRT Df Pr(>Chisq)" and friends) so the outputs line up
with what practitioners expect from standard tooling. JSON carries full
float precision; CSV display columns are rounded to 6 significant digits.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .inference import AnovaRow, ContrastRow, RanovaResult
from .lmm import FittedLMM

CSV_SIGNIFICANT_DIGITS = 6


@dataclass(frozen=True)
class Table:
    """A rectangular report: column names plus mixed str/number rows."""

    name: str
    columns: tuple[str, ...]
    rows: tuple[tuple, ...]
    label_header: str = ""
    row_labels: tuple[str, ...] | None = None

    def __post_init__(self):
        for row in self.rows:
            if len(row) != len(self.columns):
                raise ValueError(f"row has {len(row)} cells for "
                                 f"{len(self.columns)} columns")
        if self.row_labels is not None and len(self.row_labels) != len(self.rows):
            raise ValueError("row_labels length does not match rows")

    def _csv_cell(self, value) -> str:
        if value is None:
            return ""
        if isinstance(value, bool):
            return str(value).lower()
        if isinstance(value, (int, np.integer)):
            return str(int(value))
        if isinstance(value, (float, np.floating)):
            return f"{float(value):.{CSV_SIGNIFICANT_DIGITS}g}"
        return str(value)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        header = list(self.columns)
        if self.row_labels is not None:
            header = [self.label_header] + header
        writer.writerow(header)
        for i, row in enumerate(self.rows):
            cells = [self._csv_cell(v) for v in row]
            if self.row_labels is not None:
                cells = [self.row_labels[i]] + cells
            writer.writerow(cells)
        return buf.getvalue()

    def _json_value(self, value):
        if value is None or isinstance(value, (bool, str)):
            return value
        if isinstance(value, (int, np.integer)):
            return int(value)
        value = float(value)
        if math.isnan(value):
            return None
        return value

    def to_json_obj(self) -> dict:
        rows = []
        for i, row in enumerate(self.rows):
            obj = {}
            if self.row_labels is not None:
                obj["label"] = self.row_labels[i]
            for col, value in zip(self.columns, row):
                obj[col] = self._json_value(value)
            rows.append(obj)
        return {"table": self.name, "columns": list(self.columns), "rows": rows}

    def to_json(self) -> str:
        return json.dumps(self.to_json_obj(), indent=2) + "\n"

    def to_text(self) -> str:
        """Fixed-width rendering for terminal output."""
        header = list(self.columns)
        if self.row_labels is not None:
            header = [self.label_header] + header
        body = []
        for i, row in enumerate(self.rows):
            cells = [self._csv_cell(v) for v in row]
            if self.row_labels is not None:
                cells = [self.row_labels[i]] + cells
            body.append(cells)
        widths = [max(len(h), *(len(r[j]) for r in body)) if body else len(h)
                  for j, h in enumerate(header)]
        lines = ["  ".join(h.rjust(w) for h, w in zip(header, widths))]
        for cells in body:
            lines.append("  ".join(c.rjust(w) for c, w in zip(cells, widths)))
        return "\n".join(lines) + "\n"


def variance_table(fit: FittedLMM) -> Table:
    """Variance-component summary in the Groups/Name/Variance/Std.Dev. layout."""
    rows = []
    labels = []
    for name, sigma2 in zip(fit.vc.names, fit.vc.sigma2):
        labels.append(name)
        rows.append(("(Intercept)", sigma2, math.sqrt(sigma2)))
    labels.append("Residual")
    rows.append(("", fit.vc.sigma2_eps, fit.vc.sd_eps))
    return Table(name="variance_components",
                 columns=("Name", "Variance", "Std.Dev."),
                 rows=tuple(rows), label_header="Groups",
                 row_labels=tuple(labels))


def fixed_effects_table(fit: FittedLMM) -> Table:
    rows = tuple((float(b), float(se)) for b, se in
                 zip(fit.beta, np.sqrt(np.diag(fit.vcov_beta))))
    return Table(name="fixed_effects", columns=("Estimate", "Std. Error"),
                 rows=rows, label_header="", row_labels=tuple(fit.column_map))


def fit_summary(fit: FittedLMM) -> dict:
    """Machine-readable fit summary (criterion, likelihood, convergence)."""
    return {
        "criterion": fit.criterion,
        "loglik": fit.loglik,
        "aic": fit.aic,
        "npar": fit.npar,
        "converged": fit.converged,
        "deviance_profile_evals": fit.deviance_profile_evals,
        "fixed_effects": {name: float(b) for name, b in zip(fit.column_map, fit.beta)},
        "variance_components": {
            **{name: s2 for name, s2 in zip(fit.vc.names, fit.vc.sigma2)},
            "Residual": fit.vc.sigma2_eps,
        },
    }


def ranova_table(result: RanovaResult) -> Table:
    rows = []
    labels = []
    for r in result.rows:
        labels.append(f"(1 | {r.factor})")
        rows.append((r.npar, r.loglik, r.aic, r.lrt, r.df, r.p_value))
    return Table(name="random_effects_anova",
                 columns=("npar", "logLik", "AIC", "LRT", "Df", "Pr(>Chisq)"),
                 rows=tuple(rows), label_header="", row_labels=tuple(labels))


def anova_table(rows: list[AnovaRow] | AnovaRow) -> Table:
    if isinstance(rows, AnovaRow):
        rows = [rows]
    labels = tuple(r.term for r in rows)
    body = tuple((r.sum_sq, r.mean_sq, r.num_df, r.den_df, r.f_value, r.p_value)
                 for r in rows)
    return Table(name="fixed_effects_anova",
                 columns=("Sum Sq", "Mean Sq", "NumDF", "DenDF", "F value", "Pr(>F)"),
                 rows=body, label_header="", row_labels=labels)


def contrast_table(rows: list[ContrastRow]) -> Table:
    labels = tuple(r.label for r in rows)
    body = tuple((r.estimate, r.std_error, r.lower, r.upper, r.p_value)
                 for r in rows)
    return Table(name="means_comparisons",
                 columns=("Estimate", "Std. Error", "lower", "upper", "Pr(>|t|)"),
                 rows=body, label_header="", row_labels=labels)


def boxplot_table(dataset: Dataset) -> Table:
    """Per-(model, optimizer, config, seed) five-number summaries.

    Quantiles use linear interpolation (the type-7 rule). Output rows are
    sorted by group key, so the table is deterministic.
    """
    groups: dict[tuple[str, str, str, str], list[float]] = {}
    for r in dataset.records:
        groups.setdefault((r.model, r.optimizer, r.hparams, r.seed), []).append(r.metric)
    rows = []
    for key in sorted(groups):
        values = np.asarray(groups[key], dtype=float)
        q = np.quantile(values, [0.0, 0.25, 0.5, 0.75, 1.0], method="linear")
        rows.append(key + tuple(float(v) for v in q) + (int(values.size),))
    return Table(name="boxplot_data",
                 columns=("model", "optimizer", "hparams", "seed",
                          "min", "q1", "median", "q3", "max", "n"),
                 rows=tuple(rows))
