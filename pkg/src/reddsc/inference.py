"""Post-treatment effects, jackknife+ bands and donor-filter sensitivity.

Jackknife+ for synthetic controls
---------------------------------
The jackknife+ was built for regression prediction; the adaptation used
here treats donors as the exchangeable units:

* for each donor ``j`` the synthetic control is refit without ``j``;
* the leave-one-out gap ``g_j(t) = d_PA(t) - d_SC^(-j)(t)`` is the
  prediction, and the pre-treatment RMSPE of that refit, ``R_j``, is the
  conformity score;
* for each post year the band is
  ``[q-_{a/2}{g_j(t) - R_j}, q+_{1-a/2}{g_j(t) + R_j}]`` with ``q-`` the
  ``floor(a/2 (n+1))``-th smallest and ``q+`` the
  ``ceil((1-a/2)(n+1))``-th smallest value.

With few donors those ranks fall outside ``1..n``; they are clamped to the
sample minimum and maximum (finite bands, coverage no longer guaranteed).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from statistics import median
from typing import Sequence

import numpy as np

from .donorpool import FilterConfig
from .errors import NoPostYears, ReddscError, TooFewDonors
from .panel import PanelSet, ProjectMeta, SitePanel
from .scsolver import FitConfig, ScFit, fit
from .validation import resolve_window, select_donors

__all__ = [
    "AttResult",
    "SensitivityRow",
    "att",
    "jackknife_plus_bands",
    "loo_gaps",
    "filter_difference_pct",
    "sensitivity_table",
    "sensitivity_summary",
    "project_att",
]


@dataclass(frozen=True)
class AttResult:
    project_id: str
    method: str
    gap_series: dict[int, float]
    att: float
    ci_lower: dict[int, float] = field(default_factory=dict)
    ci_upper: dict[int, float] = field(default_factory=dict)
    filter_state: str = "with"
    flags: tuple[str, ...] = ()


@dataclass(frozen=True)
class SensitivityRow:
    project_id: str
    att_without: float
    att_with: float
    diff_pct: float
    country: str = ""
    flags: tuple[str, ...] = ()

    @property
    def reversed(self) -> bool:
        return self.att_with * self.att_without < 0


def att(fit: ScFit, project: SitePanel, meta: ProjectMeta) -> AttResult:
    """Mean cumulative gap ``d_PA - d_SC`` over start_year..last year.

    Negative values mean less deforestation in the project than in its
    synthetic control.
    """
    post = [y for y in fit.years if y >= meta.start_year]
    if not post:
        raise NoPostYears(f"project {meta.project_id!r}: no years from {meta.start_year}")
    gap = {y: float(project.series[y] - fit.fitted_series[y]) for y in post}
    return AttResult(meta.project_id, fit.method, gap, float(np.mean(list(gap.values()))))


def loo_gaps(project: SitePanel, donors: Sequence[SitePanel], cfg: FitConfig,
             post_years: Sequence[int], workers: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Leave-one-donor-out gaps on ``post_years`` (donors x years) and pre-treatment RMSPEs."""
    post_years = list(post_years)
    first_post = min(post_years)

    def one(j):
        f = fit(project, [d for i, d in enumerate(donors) if i != j], cfg)
        g = np.array([project.series[y] - f.fitted_series[y] for y in post_years])
        pre = [y for y in f.years if y < first_post]
        e = np.array([project.series[y] - f.fitted_series[y] for y in pre])
        return g, float(np.sqrt(np.mean(e * e))) if e.size else 0.0

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            res = list(ex.map(one, range(len(donors))))
    else:
        res = [one(j) for j in range(len(donors))]
    return np.array([g for g, _ in res]), np.array([r for _, r in res])


def _rank(k: int, n: int) -> int:
    return min(max(k, 1), n) - 1


def jackknife_plus_bands(project: SitePanel, donors: Sequence[SitePanel], cfg: FitConfig,
                         post_years: Sequence[int], alpha: float = 0.05,
                         workers: int = 1) -> tuple[dict[int, float], dict[int, float]]:
    """95% (by default) jackknife+ bands for the post-treatment gap."""
    n = len(donors)
    if n < 3:
        raise TooFewDonors(f"jackknife+ needs at least 3 donors, got {n}")
    post_years = list(post_years)
    G, R = loo_gaps(project, donors, cfg, post_years, workers)
    lo_k = _rank(math.floor(alpha / 2 * (n + 1)), n)
    hi_k = _rank(math.ceil((1 - alpha / 2) * (n + 1)), n)
    lower = np.sort(G - R[:, None], axis=0)[lo_k]
    upper = np.sort(G + R[:, None], axis=0)[hi_k]
    return ({y: float(v) for y, v in zip(post_years, lower)},
            {y: float(v) for y, v in zip(post_years, upper)})


def project_att(project: SitePanel, meta: ProjectMeta, pool: Sequence[SitePanel], fit_cfg: FitConfig,
                filter_cfg: FilterConfig, bands: bool = True, alpha: float = 0.05,
                window=None) -> tuple[AttResult, ScFit]:
    """Donor selection, fit, ATT and (optionally) jackknife+ bands for one project."""
    window = window or resolve_window(project, meta)
    donors, flags = select_donors(project, meta, pool, filter_cfg)
    cfg = FitConfig(**{**fit_cfg.to_dict(), "train_end_year": window.train_end_year})
    f = fit(project, donors, cfg)
    res = att(f, project, meta)
    lower, upper = {}, {}
    if bands:
        try:
            lower, upper = jackknife_plus_bands(project, donors, cfg, list(res.gap_series), alpha)
        except TooFewDonors:
            flags.append("too_few_donors_for_bands")
    state = "with" if filter_cfg.enabled else "without"
    return AttResult(res.project_id, res.method, res.gap_series, res.att, lower, upper, state,
                     tuple(flags) + f.flags), f


def filter_difference_pct(att_without: float, att_with: float) -> float:
    """``100 * (with - without) / with``; ``nan`` when ``att_with`` is zero."""
    if att_with == 0:
        return math.nan
    return 100.0 * (att_with - att_without) / att_with


def sensitivity_table(panelset: PanelSet, fit_cfg: FitConfig, filter_cfg: FilterConfig,
                      overrides=None) -> list[SensitivityRow]:
    """ATT with and without the donor filter for every project."""
    off = FilterConfig(filter_cfg.tolerance_ladder, filter_cfg.min_donors, False, filter_cfg.match_covariates)
    on = FilterConfig(filter_cfg.tolerance_ladder, filter_cfg.min_donors, True, filter_cfg.match_covariates)
    rows = []
    for site, meta in panelset.projects:
        pool = panelset.pool(meta.country)
        try:
            window = resolve_window(site, meta, overrides)
            a_with, _ = project_att(site, meta, pool, fit_cfg, on, bands=False, window=window)
            a_without, _ = project_att(site, meta, pool, fit_cfg, off, bands=False, window=window)
        except ReddscError as exc:
            rows.append(SensitivityRow(meta.project_id, math.nan, math.nan, math.nan, meta.country,
                                       (f"error: {type(exc).__name__}: {exc}",)))
            continue
        flags = list(a_with.flags)
        d = filter_difference_pct(a_without.att, a_with.att)
        if math.isnan(d):
            flags.append("division_by_zero_att")
        rows.append(SensitivityRow(meta.project_id, a_without.att, a_with.att, d, meta.country, tuple(flags)))
    return rows


def sensitivity_summary(rows: Sequence[SensitivityRow]) -> dict:
    """Sign reversals and mean/median of ``|diff_pct|`` over rows where it is defined."""
    valid = [r for r in rows if not math.isnan(r.att_with) and not math.isnan(r.att_without)]
    defined = [abs(r.diff_pct) for r in valid if not math.isnan(r.diff_pct)]
    return {
        "n_projects": len(rows),
        "sign_reversals": sum(r.reversed for r in valid),
        "n_undefined": len(valid) - len(defined),
        "mean_abs_diff_pct": float(np.mean(defined)) if defined else math.nan,
        "median_abs_diff_pct": float(median(defined)) if defined else math.nan,
    }
