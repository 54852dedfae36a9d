"""Pre-treatment validation of fitted synthetic controls.

The pre-treatment period is split at ``train_end_year``: weights are fit on
the training years and judged on the validation years up to
``validation_end_year``. Three tests are applied to the gap
``d_PA - d_SC`` of cumulative deforestation:

* ``west_test``: final validation-year gap as a percentage of project area.
  Passes when ``|pct| <= 0.5``.
* ``max_gap_test``: largest absolute validation-year gap divided by the
  project's cumulative deforestation in the final validation year. Passes
  when the ratio is ``< 0.2``.
* ``rmspe_ratio_test``: RMSPE over validation years divided by RMSPE over
  training years. Passes when ``<= 5``.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .donorpool import FilterConfig, filter_donors
from .errors import EmptyWindow, ReddscError, WindowOutOfRange, ZeroProjectBuffer
from .panel import PanelSet, ProjectMeta, SitePanel
from .scsolver import ScFit, FitConfig, fit
from .simgen import default_train_end

__all__ = [
    "Window",
    "Thresholds",
    "ValidationReport",
    "west_test",
    "max_gap_test",
    "rmspe_ratio_test",
    "validate_fit",
    "resolve_window",
    "select_donors",
    "validate_project",
    "validate_all",
    "summarize",
]


@dataclass(frozen=True)
class Window:
    train_end_year: int
    validation_end_year: int

    def __post_init__(self):
        if self.train_end_year >= self.validation_end_year:
            raise WindowOutOfRange(
                f"train_end_year {self.train_end_year} must precede validation_end_year "
                f"{self.validation_end_year}"
            )


@dataclass(frozen=True)
class Thresholds:
    west_pct_area: float = 0.5
    max_gap_ratio: float = 0.2
    rmspe_ratio: float = 5.0

    def west_pass(self, pct: float) -> bool:
        return abs(pct) <= self.west_pct_area

    def max_gap_pass(self, ratio: float) -> bool:
        return ratio < self.max_gap_ratio

    def rmspe_pass(self, ratio: float) -> bool:
        return ratio <= self.rmspe_ratio


DEFAULT_THRESHOLDS = Thresholds()


@dataclass(frozen=True)
class ValidationReport:
    project_id: str
    method: str
    window: tuple[int, int] | None
    west_diff_ha: float = math.nan
    west_diff_pct_area: float = math.nan
    west_pass: bool = False
    max_gap_ha: float = math.nan
    max_gap_ratio: float = math.nan
    max_gap_pass: bool = False
    rmspe_train: float = math.nan
    rmspe_valid: float = math.nan
    rmspe_ratio: float = math.nan
    rmspe_pass: bool = False
    flags: tuple[str, ...] = ()
    error: str | None = None
    country: str = ""

    @property
    def both_pass(self) -> bool:
        return self.max_gap_pass and self.rmspe_pass

    def to_dict(self) -> dict:
        d = asdict(self)
        d["window"] = None if self.window is None else list(self.window)
        d["flags"] = list(self.flags)
        d["both_pass"] = self.both_pass
        return d


def _years(fit: ScFit, window: Window) -> tuple[list[int], list[int]]:
    years = fit.years
    if window.validation_end_year not in fit.fitted_series or window.validation_end_year > years[-1]:
        raise WindowOutOfRange(
            f"validation end {window.validation_end_year} outside fitted years {years[0]}..{years[-1]}"
        )
    train = [y for y in years if y <= window.train_end_year]
    valid = [y for y in years if window.train_end_year < y <= window.validation_end_year]
    return train, valid


def _gap(fit: ScFit, project: SitePanel, years: Iterable[int]) -> np.ndarray:
    years = list(years)
    return project.values(years) - np.array([fit.fitted_series[y] for y in years])


def west_test(fit: ScFit, project: SitePanel, window: Window,
              thresholds: Thresholds = DEFAULT_THRESHOLDS) -> tuple[float, float, bool]:
    """Final validation-year gap in hectares and as a percentage of project area."""
    _years(fit, window)
    y = window.validation_end_year
    diff = float(project.series[y] - fit.fitted_series[y])
    pct = 100.0 * diff / project.area_ha
    return diff, pct, thresholds.west_pass(pct)


def max_gap_test(fit: ScFit, project: SitePanel, window: Window,
                 thresholds: Thresholds = DEFAULT_THRESHOLDS) -> tuple[float, float, bool, bool]:
    """Returns ``(max_abs_gap, ratio, passed, zero_final)``.

    When the project has no deforestation by the final validation year the
    ratio is undefined; it is reported as ``inf`` (or ``nan`` for a zero
    gap) and the test fails with ``zero_final`` set.
    """
    _, valid = _years(fit, window)
    if not valid:
        raise EmptyWindow("validation window has no years")
    m = float(np.max(np.abs(_gap(fit, project, valid))))
    final = project.series[window.validation_end_year]
    if final <= 0:
        return m, (math.inf if m > 0 else math.nan), False, True
    ratio = m / final
    return m, ratio, thresholds.max_gap_pass(ratio), False


def rmspe_ratio_test(fit: ScFit, project: SitePanel, window: Window,
                     thresholds: Thresholds = DEFAULT_THRESHOLDS,
                     zero_tol: float = 1e-10) -> tuple[float, float, float, bool, bool]:
    """Returns ``(rmspe_train, rmspe_valid, ratio, passed, perfect_fit)``.

    RMSPEs at or below ``zero_tol`` times the largest absolute project value
    in the two windows are round-off and count as zero. A perfect fit on both
    windows (0/0) is reported as ratio 0 and passes with ``perfect_fit`` set;
    a perfect training fit with a nonzero validation error gives an infinite
    ratio and fails.
    """
    train, valid = _years(fit, window)
    if not train or not valid:
        raise EmptyWindow("training and validation windows must both contain years")
    rt = float(np.sqrt(np.mean(_gap(fit, project, train) ** 2)))
    rv = float(np.sqrt(np.mean(_gap(fit, project, valid) ** 2)))
    floor = zero_tol * max(abs(project.series[y]) for y in train + valid)
    zt, zv = rt <= floor, rv <= floor
    if zt:
        if zv:
            return rt, rv, 0.0, True, True
        return rt, rv, math.inf, False, False
    ratio = 0.0 if zv else rv / rt
    return rt, rv, ratio, thresholds.rmspe_pass(ratio), False


def validate_fit(fit: ScFit, project: SitePanel, window: Window,
                 thresholds: Thresholds = DEFAULT_THRESHOLDS, flags: Sequence[str] = (),
                 country: str = "") -> ValidationReport:
    flags = list(flags) + list(fit.flags)
    wd, wp, wpass = west_test(fit, project, window, thresholds)
    mg, mr, mpass, zero_final = max_gap_test(fit, project, window, thresholds)
    rt, rv, rr, rpass, perfect = rmspe_ratio_test(fit, project, window, thresholds)
    if zero_final:
        flags.append("zero_final_deforestation")
    if perfect:
        flags.append("perfect_fit")
    return ValidationReport(
        project_id=fit.project_id, method=fit.method,
        window=(window.train_end_year, window.validation_end_year),
        west_diff_ha=wd, west_diff_pct_area=wp, west_pass=wpass,
        max_gap_ha=mg, max_gap_ratio=mr, max_gap_pass=mpass,
        rmspe_train=rt, rmspe_valid=rv, rmspe_ratio=rr, rmspe_pass=rpass,
        flags=tuple(flags), country=country,
    )


# --------------------------------------------------------------------------
# batch


def resolve_window(project: SitePanel, meta: ProjectMeta,
                   overrides: Mapping[str, tuple[int | None, int | None]] | None = None) -> Window:
    """Training/validation split for a project.

    Precedence: ``overrides[project_id]``, then the meta row, then an even
    split of the years before ``validation_end_year``.
    """
    te, ve = meta.train_end_year, meta.validation_end_year
    if overrides and meta.project_id in overrides:
        ote, ove = overrides[meta.project_id]
        te = ote if ote is not None else te
        ve = ove if ove is not None else ve
    if te is None:
        te = default_train_end(project.years[0], ve)
    if ve >= meta.start_year:
        raise WindowOutOfRange(f"project {meta.project_id!r}: validation window reaches the start year")
    return Window(int(te), int(ve))


def select_donors(project: SitePanel, meta: ProjectMeta, pool: Sequence[SitePanel],
                  filter_cfg: FilterConfig) -> tuple[list[SitePanel], list[str]]:
    """Apply the donor filter; a zero project buffer falls back to the full pool with a flag."""
    flags = []
    try:
        sel = filter_donors(project, meta, pool, filter_cfg)
    except ZeroProjectBuffer:
        flags.append("zero_project_buffer")
        sel = filter_donors(project, meta, pool, FilterConfig(
            filter_cfg.tolerance_ladder, filter_cfg.min_donors, False, filter_cfg.match_covariates))
    if sel.insufficient:
        flags.append("insufficient_donors")
    keep = set(sel.selected)
    return [d for d in pool if d.site_id in keep], flags


def validate_project(project: SitePanel, meta: ProjectMeta, pool: Sequence[SitePanel],
                     fit_cfg: FitConfig, filter_cfg: FilterConfig,
                     methods: Sequence[str] = ("scm", "ascm"),
                     window: Window | None = None,
                     thresholds: Thresholds = DEFAULT_THRESHOLDS,
                     overrides: Mapping[str, tuple[int | None, int | None]] | None = None,
                     ) -> list[ValidationReport]:
    """Validate one project for each method; errors become flagged rows."""
    out = []
    try:
        window = window or resolve_window(project, meta, overrides)
        donors, flags = select_donors(project, meta, pool, filter_cfg)
    except ReddscError as exc:
        return [ValidationReport(meta.project_id, m, None, error=f"{type(exc).__name__}: {exc}",
                                 country=meta.country) for m in methods]
    for m in methods:
        cfg = FitConfig(**{**fit_cfg.to_dict(), "method": m, "train_end_year": window.train_end_year})
        try:
            f = fit(project, donors, cfg)
            out.append(validate_fit(f, project, window, thresholds, flags, meta.country))
        except ReddscError as exc:
            out.append(ValidationReport(meta.project_id, m, (window.train_end_year, window.validation_end_year),
                                        flags=tuple(flags), error=f"{type(exc).__name__}: {exc}",
                                        country=meta.country))
    return out


def _validate_job(args):
    return validate_project(*args)


def validate_all(panelset: PanelSet, fit_cfg: FitConfig, filter_cfg: FilterConfig,
                 methods: Sequence[str] = ("scm", "ascm"),
                 overrides: Mapping[str, tuple[int | None, int | None]] | None = None,
                 thresholds: Thresholds = DEFAULT_THRESHOLDS,
                 workers: int = 1) -> tuple[list[ValidationReport], dict]:
    """Validate every project; returns reports (project order, then method) and summary counts."""
    jobs = [(site, meta, panelset.pool(meta.country), fit_cfg, filter_cfg, tuple(methods), None, thresholds,
             overrides) for site, meta in panelset.projects]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_validate_job, jobs))
    else:
        results = [_validate_job(j) for j in jobs]
    reports = [r for rs in results for r in rs]
    return reports, summarize(reports)


def summarize(reports: Sequence[ValidationReport]) -> dict:
    """Pass counts per method plus the both-pass overlap between SCM and ASCM."""
    by_method: dict[str, list[ValidationReport]] = {}
    for r in reports:
        by_method.setdefault(r.method, []).append(r)
    out: dict = {"methods": {}}
    for m, rs in by_method.items():
        ok = [r for r in rs if r.error is None]
        out["methods"][m] = {
            "n_projects": len(rs),
            "n_errors": len(rs) - len(ok),
            "west_pass": sum(r.west_pass for r in ok),
            "max_gap_pass": sum(r.max_gap_pass for r in ok),
            "rmspe_pass": sum(r.rmspe_pass for r in ok),
            "both_pass": sum(r.both_pass for r in ok),
            "fail_combined": len(rs) - sum(r.both_pass for r in ok),
            "both_pass_projects": sorted(r.project_id for r in ok if r.both_pass),
        }
    if "scm" in out["methods"] and "ascm" in out["methods"]:
        a = set(out["methods"]["ascm"]["both_pass_projects"])
        s = set(out["methods"]["scm"]["both_pass_projects"])
        out["both_pass_overlap"] = len(a & s)
    return out
