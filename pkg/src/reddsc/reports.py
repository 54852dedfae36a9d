"""CSV/JSON writers for validation, effect, sensitivity and credit tables.

Numbers are written at full precision; pass/fail columns are booleans.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Sequence

import pandas as pd

from .credits import CreditLedgerRow, LedgerTotals
from .inference import AttResult, SensitivityRow
from .scsolver import ScFit
from .validation import ValidationReport

METHOD_ORDER = ("ascm", "scm")


def _write(df: pd.DataFrame, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, lineterminator="\n")
    return path


def _clean(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None if math.isnan(x) else ("inf" if x > 0 else "-inf")
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    return x


def write_json(obj, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")
    return path


def _wide(reports: Sequence[ValidationReport], key_cols, per_method) -> pd.DataFrame:
    methods = [m for m in METHOD_ORDER if any(r.method == m for r in reports)]
    rows: dict[str, dict] = {}
    for r in reports:
        row = rows.setdefault(r.project_id, {"country": r.country, "project_id": r.project_id})
        for k, fn in key_cols.items():
            if row.get(k) is None:
                row[k] = fn(r)
        for col, fn in per_method.items():
            row[f"{r.method}_{col}"] = None if r.error else fn(r)
    cols = ["country", "project_id", *key_cols] + [f"{m}_{c}" for m in methods for c in per_method]
    return pd.DataFrame(list(rows.values()), columns=cols)


def validation_tables(reports: Sequence[ValidationReport], out_dir) -> dict[str, Path]:
    """Final-year gap, RMSPE-ratio and max-gap tables (one row per project, methods side by side),
    plus a long table with every field."""
    out = Path(out_dir)
    final_gap = _wide(
        reports,
        {"end_of_validation_period": lambda r: r.window[1] if r.window else None},
        {"difference_ha": lambda r: r.west_diff_ha, "difference_pct": lambda r: r.west_diff_pct_area,
         "pass": lambda r: r.west_pass},
    )
    rmspe = _wide(
        reports, {},
        {"post_pre_rmspe_ratio": lambda r: r.rmspe_ratio, "pass": lambda r: r.rmspe_pass},
    )
    max_gap = _wide(
        reports,
        {"years": lambda r: f"{r.window[0] + 1}-{r.window[1]}" if r.window else None},
        {"difference_ha": lambda r: r.max_gap_ha, "difference_pct": lambda r: 100.0 * r.max_gap_ratio,
         "pass": lambda r: r.max_gap_pass},
    )
    long = pd.DataFrame([{**r.to_dict(), "flags": ";".join(r.flags)} for r in reports])
    return {
        "final_gap": _write(final_gap, out / "validation_final_gap.csv"),
        "rmspe_ratio": _write(rmspe, out / "validation_rmspe_ratio.csv"),
        "max_gap": _write(max_gap, out / "validation_max_gap.csv"),
        "long": _write(long, out / "validation_reports.csv"),
    }


def att_table(results: Sequence[tuple[str, AttResult]], path) -> Path:
    rows = [{"country": c, "project_id": a.project_id, "method": a.method, "filter": a.filter_state,
             "att_ha": a.att, "flags": ";".join(a.flags)} for c, a in results]
    return _write(pd.DataFrame(rows, columns=["country", "project_id", "method", "filter", "att_ha", "flags"]),
                  Path(path))


def gap_series_table(entries: Sequence[tuple[AttResult, ScFit, dict, tuple[int, int, int]]], path) -> Path:
    """Plot data: per project/method/filter/year the project and synthetic series, gap and band.

    ``entries`` holds ``(att_result, fit, project_series, (train_end, validation_end, start_year))``.
    """
    rows = []
    for a, f, series, (te, ve, start) in entries:
        for y, sc in f.fitted_series.items():
            phase = "train" if y <= te else "validation" if y <= ve else "pre" if y < start else "post"
            rows.append({
                "project_id": a.project_id, "method": a.method, "filter": a.filter_state, "year": y,
                "phase": phase, "project_cum_ha": series[y], "sc_cum_ha": sc, "gap_ha": series[y] - sc,
                "ci_lower": a.ci_lower.get(y), "ci_upper": a.ci_upper.get(y),
            })
    cols = ["project_id", "method", "filter", "year", "phase", "project_cum_ha", "sc_cum_ha", "gap_ha",
            "ci_lower", "ci_upper"]
    return _write(pd.DataFrame(rows, columns=cols), Path(path))


def sensitivity_csv(rows: Sequence[SensitivityRow], path) -> Path:
    df = pd.DataFrame([{"country": r.country, "project_id": r.project_id, "without_filter": r.att_without,
                        "with_filter": r.att_with, "difference_pct": r.diff_pct, "sign_reversal": r.reversed,
                        "flags": ";".join(r.flags)} for r in rows],
                      columns=["country", "project_id", "without_filter", "with_filter", "difference_pct",
                               "sign_reversal", "flags"])
    return _write(df, Path(path))


def credit_tables(rows: Sequence[CreditLedgerRow], totals: LedgerTotals, out_dir) -> dict[str, Path]:
    """Per-hectare/offset ledger and real-share table, each closed by a totals row."""
    out = Path(out_dir)
    ledger = pd.DataFrame([{
        "project": r.project_id,
        "avoided_deforestation_ha": r.avoided_defor_ha,
        "baseline_west_ha": r.baseline_west_ha,
        "baseline_correct_ha": r.baseline_correct_ha,
        "credits_expected": r.expected_credits,
        "per_ha_west": r.per_ha_west,
        "per_ha_correct": r.per_ha_correct,
        "offsets_west": r.offsets_west,
        "offsets_correct": r.offsets_correct,
    } for r in rows])
    ledger.loc[len(ledger)] = {"project": "Sum", "offsets_west": totals.total_offsets_west,
                               "offsets_correct": totals.total_offsets_correct}
    real = pd.DataFrame([{
        "project": r.project_id,
        "credits_expected": r.expected_credits,
        "credits_issued": r.issued_credits,
        "offsets_west": r.offsets_west,
        "offsets_correct": r.offsets_correct,
        "pct_real_west": 100 * r.pct_real_west,
        "pct_real_correct": 100 * r.pct_real_correct,
        "over_100_west": r.over_100_west,
        "over_100_correct": r.over_100_correct,
    } for r in rows])
    real.loc[len(real)] = {
        "project": "TOTAL", "credits_expected": totals.total_expected, "credits_issued": totals.total_issued,
        "offsets_west": totals.total_offsets_west, "offsets_correct": totals.total_offsets_correct,
        "pct_real_west": 100 * totals.pct_real_west, "pct_real_correct": 100 * totals.pct_real_correct,
        "over_100_west": totals.pct_real_west > 1, "over_100_correct": totals.pct_real_correct > 1,
    }
    return {
        "ledger": _write(ledger, out / "credit_ledger.csv"),
        "real_share": _write(real, out / "credit_real_share.csv"),
    }
