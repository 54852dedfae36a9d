"""Batch orchestration shared by the CLI subcommands."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
import pandas as pd

from . import reports
from .biascorrect import BiasModel, correct_difference, correction_factor
from .credits import ledger_rows_from_meta, ledger_totals, baseline_inflation_stats, load_avoided
from .donorpool import FilterConfig
from .errors import PanelError, ReddscError
from .inference import AttResult, SensitivityRow, filter_difference_pct, project_att, sensitivity_summary
from .panel import PanelSet, load_panels
from .scsolver import FitConfig
from .validation import resolve_window, validate_all

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INGEST = 3
EXIT_SOLVER = 4
EXIT_WRITE = 5


@dataclass(frozen=True)
class RunConfig:
    sites: str
    meta: str
    out_dir: str
    covariates: str | None = None
    methods: tuple[str, ...] = ("scm", "ascm")
    filter: FilterConfig = field(default_factory=FilterConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    bias: BiasModel | None = None
    split_overrides: str | None = None
    avoided: str | None = None
    workers: int = 1
    seed: int = 0
    bands: bool = True
    alpha: float = 0.05

    def to_dict(self) -> dict:
        return {
            "sites": self.sites, "meta": self.meta, "covariates": self.covariates, "out_dir": self.out_dir,
            "methods": list(self.methods),
            "filter": {"enabled": self.filter.enabled, "ladder": list(self.filter.tolerance_ladder),
                       "min_donors": self.filter.min_donors,
                       "match_covariates": list(self.filter.match_covariates)},
            "fit": {k: v for k, v in self.fit.to_dict().items() if k not in ("method", "train_end_year")},
            "bias": None if self.bias is None else {"r_d": self.bias.r_d, "r_f": self.bias.r_f},
            "split_overrides": self.split_overrides, "avoided": self.avoided,
            "workers": self.workers, "seed": self.seed, "bands": self.bands, "alpha": self.alpha,
        }


def load_split_overrides(path) -> dict[str, tuple[int | None, int | None]]:
    """CSV with ``project_id`` and optional ``train_end_year`` / ``validation_end_year``."""
    df = pd.read_csv(path, dtype={"project_id": str})
    if "project_id" not in df.columns:
        raise PanelError(f"{path}: split overrides need a project_id column")

    def val(rec, k):
        v = rec.get(k)
        return None if v is None or (isinstance(v, float) and math.isnan(v)) else int(v)

    return {str(r["project_id"]): (val(r, "train_end_year"), val(r, "validation_end_year"))
            for r in df.to_dict("records")}


def ingest(cfg: RunConfig) -> tuple[PanelSet, dict]:
    panels = load_panels(cfg.sites, cfg.meta, cfg.covariates)
    overrides = load_split_overrides(cfg.split_overrides) if cfg.split_overrides else {}
    return panels, overrides


# --------------------------------------------------------------------------
# per-project effect estimation


def _att_job(args):
    site, meta, pool, fit_cfg, filter_cfg, overrides, bands, alpha, states = args
    try:
        window = resolve_window(site, meta, overrides)
    except ReddscError as exc:
        return [(None, None, None, f"{type(exc).__name__}: {exc}")]
    out = []
    for state in states:
        fcfg = replace(filter_cfg, enabled=state)
        try:
            a, f = project_att(site, meta, pool, fit_cfg, fcfg, bands=bands, alpha=alpha, window=window)
            out.append((a, f, window, None))
        except ReddscError as exc:
            out.append((AttResult(meta.project_id, fit_cfg.method, {}, math.nan,
                                  filter_state="with" if state else "without"),
                        None, window, f"{type(exc).__name__}: {exc}"))
    return out


def estimate_effects(panels: PanelSet, cfg: RunConfig, overrides,
                     states: tuple[bool, ...] = (True, False)) -> dict[str, list]:
    """ATT per method and project for each donor-filter state in ``states`` (with, then without).

    Returns ``{method: [(meta, site, [(AttResult, ScFit, Window, error), ...]), ...]}``.
    """
    res = {}
    for m in cfg.methods:
        fit_cfg = replace(cfg.fit, method=m)
        jobs = [(s, meta, panels.pool(meta.country), fit_cfg, cfg.filter, overrides, cfg.bands, cfg.alpha, states)
                for s, meta in panels.projects]
        if cfg.workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
                outs = list(ex.map(_att_job, jobs))
        else:
            outs = [_att_job(j) for j in jobs]
        res[m] = [(meta, site, o) for (site, meta), o in zip(panels.projects, outs)]
    return res


def _flagged(a: AttResult, err):
    return replace(a, flags=a.flags + ((f"error: {err}",) if err else ()))


def sensitivity_rows(entries) -> list[SensitivityRow]:
    rows = []
    for meta, _, outs in entries:
        if len(outs) != 2:
            rows.append(SensitivityRow(meta.project_id, math.nan, math.nan, math.nan, meta.country,
                                       (f"error: {outs[0][3]}",)))
            continue
        (aw, _, _, ew), (ao, _, _, eo) = outs
        flags = [f"error: {e}" for e in (ew, eo) if e]
        d = filter_difference_pct(ao.att, aw.att) if not flags else math.nan
        if not flags and math.isnan(d):
            flags.append("division_by_zero_att")
        rows.append(SensitivityRow(meta.project_id, ao.att, aw.att, d, meta.country,
                                   tuple(flags) + tuple(aw.flags)))
    return rows


def avoided_from_effects(entries, filter_enabled: bool) -> dict[str, float]:
    """Avoided deforestation per project: the synthetic control's excess cumulative
    deforestation in the final year, floored at zero."""
    want = "with" if filter_enabled else "without"
    out = {}
    for meta, _, outs in entries:
        for a, _, _, err in outs:
            if a is not None and a.filter_state == want and not err and a.gap_series:
                out[meta.project_id] = max(0.0, -a.gap_series[max(a.gap_series)])
    return out


# --------------------------------------------------------------------------


def run_pipeline(cfg: RunConfig) -> int:
    """Ingest, validate, estimate, correct and account; write every table under ``cfg.out_dir``."""
    try:
        panels, overrides = ingest(cfg)
        avoided_ext = load_avoided(cfg.avoided) if cfg.avoided else None
    except (PanelError, FileNotFoundError, OSError) as exc:
        log.error("ingestion failed: %s", exc)
        return EXIT_INGEST

    out = Path(cfg.out_dir)
    try:
        val_reports, val_summary = validate_all(panels, cfg.fit, cfg.filter, cfg.methods, overrides,
                                                workers=cfg.workers)
        effects = estimate_effects(panels, cfg, overrides)
    except ReddscError as exc:
        log.error("solver failure: %s", exc)
        return EXIT_SOLVER

    summary: dict = {"validation": val_summary, "sensitivity": {}, "n_projects": len(panels.projects)}
    try:
        reports.write_json(cfg.to_dict(), out / "run_config.json")
        reports.validation_tables(val_reports, out)
        att_rows, gap_entries, bias_rows = [], [], []
        for m, entries in effects.items():
            for meta, site, outs in entries:
                for a, f, w, err in outs:
                    if a is None:
                        att_rows.append((meta.country, AttResult(meta.project_id, m, {}, math.nan,
                                                                 flags=(f"error: {err}",))))
                        continue
                    att_rows.append((meta.country, _flagged(a, err)))
                    if f is not None:
                        gap_entries.append((a, f, site.series,
                                            (w.train_end_year, w.validation_end_year, meta.start_year)))
                        if cfg.bias is not None:
                            bias_rows.append({
                                "project_id": a.project_id, "method": m, "filter": a.filter_state,
                                "att_observed_ha": a.att, "correction_factor": correction_factor(cfg.bias),
                                "att_corrected_ha": correct_difference(cfg.bias, a.att),
                            })
            rows = sensitivity_rows(entries)
            reports.sensitivity_csv(rows, out / f"att_sensitivity_{m}.csv")
            summary["sensitivity"][m] = sensitivity_summary(rows)
        reports.att_table(att_rows, out / "att.csv")
        reports.gap_series_table(gap_entries, out / "gap_series.csv")
        if cfg.bias is not None:
            pd.DataFrame(bias_rows).to_csv(out / "att_bias_corrected.csv", index=False, lineterminator="\n")
            summary["bias"] = {"r_d": cfg.bias.r_d, "r_f": cfg.bias.r_f,
                               "correction_factor": correction_factor(cfg.bias)}

        metas = [m for _, m in panels.projects]
        if any(m.expected_credits > 0 for m in metas):
            avoided = avoided_ext if avoided_ext is not None else \
                avoided_from_effects(effects[cfg.methods[0]], cfg.filter.enabled)
            rows = ledger_rows_from_meta(metas, avoided)
            totals = ledger_totals(rows)
            reports.credit_tables(rows, totals, out)
            mean_i, min_i, max_i = baseline_inflation_stats(rows)
            summary["credits"] = {**totals.to_dict(), "baseline_inflation_mean_pct": mean_i,
                                  "baseline_inflation_min_pct": min_i, "baseline_inflation_max_pct": max_i,
                                  "avoided_source": "file" if avoided_ext is not None else cfg.methods[0]}
        summary["n_validation_errors"] = sum(r.error is not None for r in val_reports)
        reports.write_json(summary, out / "run_summary.json")
    except OSError as exc:
        log.error("report write failed: %s", exc)
        return EXIT_WRITE
    return EXIT_OK
