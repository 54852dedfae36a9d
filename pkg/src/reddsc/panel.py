"""Deforestation panel data model and CSV ingestion.

Deforestation is held cumulatively (hectares deforested since the first
year of record). Annual increments are derived on demand and never stored.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
import pandas as pd

from .errors import (
    DuplicateSiteId,
    MissingColumn,
    NonMonotoneSeries,
    PanelError,
    SeriesExceedsArea,
    YearGap,
    YearOutOfDomain,
)

__all__ = [
    "SitePanel",
    "ProjectMeta",
    "PanelSet",
    "load_panels",
    "load_meta",
    "write_panels",
    "annual_increments",
    "SITES_COLUMNS",
    "COVARIATE_COLUMNS",
    "META_COLUMNS",
]

SITES_COLUMNS = ("site_id", "country", "role", "area_ha", "year", "cum_defor_ha", "buffer_cum_defor_ha")
COVARIATE_COLUMNS = ("site_id", "covariate_name", "value")
META_COLUMNS = (
    "project_id",
    "country",
    "start_year",
    "validation_end_year",
    "expected_credits",
    "issued_credits",
    "baseline_raw_ha",
    "baseline_correct_ha",
)
# accepted when present, never required
META_OPTIONAL_COLUMNS = ("train_end_year", "baseline_flagged")

_MONOTONE_TOL = 1e-9


def _as_series(mapping: Mapping) -> dict[int, float]:
    return {int(y): float(v) for y, v in sorted(mapping.items())}


@dataclass(frozen=True)
class SitePanel:
    """One site's area, cumulative deforestation, buffer deforestation and covariates."""

    site_id: str
    area_ha: float
    series: dict[int, float]
    buffer_series: dict[int, float]
    covariates: dict[str, float] = field(default_factory=dict)
    country: str = ""
    role: str = "donor"

    def __post_init__(self):
        object.__setattr__(self, "site_id", str(self.site_id))
        object.__setattr__(self, "area_ha", float(self.area_ha))
        object.__setattr__(self, "series", _as_series(self.series))
        object.__setattr__(self, "buffer_series", _as_series(self.buffer_series))
        object.__setattr__(self, "covariates", {str(k): float(v) for k, v in self.covariates.items()})
        self._check()

    def _check(self):
        sid = self.site_id
        if not np.isfinite(self.area_ha) or self.area_ha <= 0:
            raise PanelError(f"site {sid!r}: area_ha must be positive, got {self.area_ha}")
        if self.role not in ("project", "donor"):
            raise PanelError(f"site {sid!r}: role must be 'project' or 'donor', got {self.role!r}")
        years = list(self.series)
        if not years:
            raise PanelError(f"site {sid!r}: empty deforestation series")
        if list(self.buffer_series) != years:
            raise PanelError(f"site {sid!r}: series and buffer_series cover different years")
        missing = sorted(set(range(years[0], years[-1] + 1)) - set(years))
        if missing:
            raise YearGap(sid, missing)
        for name, ser in (("cum_defor_ha", self.series), ("buffer_cum_defor_ha", self.buffer_series)):
            prev = None
            for y, v in ser.items():
                if not np.isfinite(v) or v < 0:
                    raise PanelError(f"site {sid!r}: {name} must be finite and nonnegative ({y}: {v})")
                if prev is not None and v < prev - _MONOTONE_TOL:
                    raise NonMonotoneSeries(sid, y, name)
                prev = v
        for y, v in self.series.items():
            if v > self.area_ha * (1 + 1e-12):
                raise SeriesExceedsArea(sid, y, v, self.area_ha)

    @property
    def years(self) -> tuple[int, ...]:
        return tuple(self.series)

    def values(self, years: Iterable[int] | None = None) -> np.ndarray:
        """Cumulative deforestation on ``years`` (all years by default) as an array."""
        if years is None:
            return np.fromiter(self.series.values(), float, len(self.series))
        years = list(years)
        try:
            return np.array([self.series[y] for y in years], dtype=float)
        except KeyError:
            bad = [y for y in years if y not in self.series]
            raise YearOutOfDomain(bad, self.years) from None

    def buffer_at(self, year: int) -> float:
        try:
            return self.buffer_series[year]
        except KeyError:
            raise YearOutOfDomain([year], self.years) from None


@dataclass(frozen=True)
class ProjectMeta:
    project_id: str
    country: str
    start_year: int
    validation_end_year: int
    expected_credits: float = 0.0
    issued_credits: float = 0.0
    baseline_deforestation_raw: float = 0.0
    baseline_deforestation_correct: float = 0.0
    train_end_year: int | None = None
    # source-document error on the raw baseline; excluded from inflation statistics
    baseline_flagged: bool = False

    def __post_init__(self):
        object.__setattr__(self, "project_id", str(self.project_id))
        object.__setattr__(self, "start_year", int(self.start_year))
        object.__setattr__(self, "validation_end_year", int(self.validation_end_year))
        if self.train_end_year is not None:
            object.__setattr__(self, "train_end_year", int(self.train_end_year))
        pid = self.project_id
        for name in ("expected_credits", "issued_credits", "baseline_deforestation_raw",
                     "baseline_deforestation_correct"):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v < 0:
                raise PanelError(f"project {pid!r}: {name} must be nonnegative, got {v}")
            object.__setattr__(self, name, v)
        if self.validation_end_year >= self.start_year:
            raise PanelError(
                f"project {pid!r}: validation_end_year {self.validation_end_year} must precede "
                f"start_year {self.start_year}"
            )
        if self.train_end_year is not None and self.train_end_year >= self.validation_end_year:
            raise PanelError(f"project {pid!r}: train_end_year must precede validation_end_year")
        if self.baseline_deforestation_correct > self.baseline_deforestation_raw:
            raise PanelError(f"project {pid!r}: corrected baseline exceeds raw baseline")


@dataclass(frozen=True)
class PanelSet:
    projects: tuple[tuple[SitePanel, ProjectMeta], ...]
    donors: dict[str, tuple[SitePanel, ...]]

    def __post_init__(self):
        object.__setattr__(self, "projects", tuple((s, m) for s, m in self.projects))
        object.__setattr__(self, "donors", {str(c): tuple(p) for c, p in self.donors.items()})
        seen = set()
        for site in self.sites():
            if site.site_id in seen:
                raise DuplicateSiteId(site.site_id)
            seen.add(site.site_id)
        for site, meta in self.projects:
            if site.site_id != meta.project_id:
                raise PanelError(f"project site {site.site_id!r} paired with meta {meta.project_id!r}")
            years = site.years
            if not years[0] < meta.start_year <= years[-1]:
                raise PanelError(
                    f"project {meta.project_id!r}: start_year {meta.start_year} not inside "
                    f"{years[0]}..{years[-1]}"
                )
            if not self.donors.get(meta.country):
                raise PanelError(f"project {meta.project_id!r}: no donors for country {meta.country!r}")

    def sites(self) -> list[SitePanel]:
        out = [s for s, _ in self.projects]
        for pool in self.donors.values():
            out.extend(pool)
        return out

    def pool(self, country: str) -> tuple[SitePanel, ...]:
        return self.donors.get(country, ())

    def project(self, project_id: str) -> tuple[SitePanel, ProjectMeta]:
        for site, meta in self.projects:
            if meta.project_id == project_id:
                return site, meta
        raise KeyError(project_id)

    @property
    def project_ids(self) -> list[str]:
        return [m.project_id for _, m in self.projects]


def annual_increments(panel: SitePanel) -> dict[int, float]:
    """Year-on-year differences of the cumulative series (first year dropped)."""
    years = panel.years
    vals = panel.values()
    return {y: float(max(d, 0.0)) for y, d in zip(years[1:], np.diff(vals))}


# --------------------------------------------------------------------------
# CSV ingestion


def _read_csv(path, required, str_cols=()) -> pd.DataFrame:
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such file: {path}")
    df = pd.read_csv(path, dtype={c: str for c in str_cols}, float_precision="round_trip",
                     keep_default_na=False, na_values=[""])
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise MissingColumn(path, missing)
    return df


def _to_bool(v) -> bool:
    if isinstance(v, str):
        return v.strip().lower() in ("1", "true", "yes", "y")
    if v is None or (isinstance(v, float) and np.isnan(v)):
        return False
    return bool(v)


def load_meta(meta_path) -> list[ProjectMeta]:
    """Read the project metadata file on its own (no site data needed)."""
    df = _read_csv(meta_path, META_COLUMNS, str_cols=("project_id", "country"))
    metas = []
    seen = set()
    for rec in df.to_dict("records"):
        pid = rec["project_id"]
        if pid in seen:
            raise DuplicateSiteId(pid)
        seen.add(pid)
        te = rec.get("train_end_year")
        te = None if te is None or (isinstance(te, float) and np.isnan(te)) or te == "" else int(te)
        metas.append(ProjectMeta(
            project_id=pid,
            country=rec["country"],
            start_year=int(rec["start_year"]),
            validation_end_year=int(rec["validation_end_year"]),
            expected_credits=rec["expected_credits"],
            issued_credits=rec["issued_credits"],
            baseline_deforestation_raw=rec["baseline_raw_ha"],
            baseline_deforestation_correct=rec["baseline_correct_ha"],
            train_end_year=te,
            baseline_flagged=_to_bool(rec.get("baseline_flagged", False)),
        ))
    return metas


def load_panels(sites_path, meta_path, covariates_path=None) -> PanelSet:
    """Load a :class:`PanelSet` from the long-format sites file, meta file and
    optional covariates file. Raises a :class:`PanelError` subclass on any
    invariant violation."""
    df = _read_csv(sites_path, SITES_COLUMNS, str_cols=("site_id", "country", "role"))
    metas = load_meta(meta_path)

    covs: dict[str, dict[str, float]] = {}
    if covariates_path is not None:
        cdf = _read_csv(covariates_path, COVARIATE_COLUMNS, str_cols=("site_id", "covariate_name"))
        for rec in cdf.to_dict("records"):
            covs.setdefault(rec["site_id"], {})[rec["covariate_name"]] = float(rec["value"])

    sites: dict[str, SitePanel] = {}
    for sid, g in df.groupby("site_id", sort=False):
        for col in ("country", "role", "area_ha"):
            if g[col].nunique() != 1:
                raise PanelError(f"site {sid!r}: inconsistent {col} across rows")
        if g["year"].duplicated().any():
            raise PanelError(f"site {sid!r}: duplicated year rows")
        g = g.sort_values("year")
        years = g["year"].astype(int).tolist()
        sites[sid] = SitePanel(
            site_id=sid,
            area_ha=float(g["area_ha"].iloc[0]),
            series=dict(zip(years, g["cum_defor_ha"].astype(float))),
            buffer_series=dict(zip(years, g["buffer_cum_defor_ha"].astype(float))),
            covariates=covs.get(sid, {}),
            country=g["country"].iloc[0],
            role=g["role"].iloc[0],
        )
    unknown = set(covs) - set(sites)
    if unknown:
        raise PanelError(f"covariates given for unknown site(s) {sorted(unknown)}")

    projects = []
    meta_ids = set()
    for m in metas:
        meta_ids.add(m.project_id)
        site = sites.get(m.project_id)
        if site is None or site.role != "project":
            raise PanelError(f"meta row {m.project_id!r} has no project-role site")
        if site.country != m.country:
            raise PanelError(f"project {m.project_id!r}: country differs between sites and meta")
        projects.append((site, m))
    orphan = [s.site_id for s in sites.values() if s.role == "project" and s.site_id not in meta_ids]
    if orphan:
        raise PanelError(f"project site(s) without meta rows: {orphan}")

    donors: dict[str, list[SitePanel]] = {}
    for s in sites.values():
        if s.role == "donor":
            donors.setdefault(s.country, []).append(s)
    return PanelSet(projects=tuple(projects), donors={c: tuple(p) for c, p in donors.items()})


def write_panels(panelset: PanelSet, out_dir) -> dict[str, Path]:
    """Write ``sites.csv``, ``covariates.csv`` and ``meta.csv`` in the ingestion schema."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows, crow = [], []
    for s in panelset.sites():
        for y, v in s.series.items():
            rows.append((s.site_id, s.country, s.role, s.area_ha, y, v, s.buffer_series[y]))
        for k, v in s.covariates.items():
            crow.append((s.site_id, k, v))
    mrow = []
    for _, m in panelset.projects:
        mrow.append((m.project_id, m.country, m.start_year, m.validation_end_year, m.expected_credits,
                     m.issued_credits, m.baseline_deforestation_raw, m.baseline_deforestation_correct,
                     "" if m.train_end_year is None else m.train_end_year, int(m.baseline_flagged)))
    paths = {"sites": out / "sites.csv", "covariates": out / "covariates.csv", "meta": out / "meta.csv"}
    pd.DataFrame(rows, columns=SITES_COLUMNS).to_csv(paths["sites"], index=False)
    pd.DataFrame(crow, columns=COVARIATE_COLUMNS).to_csv(paths["covariates"], index=False)
    pd.DataFrame(mrow, columns=META_COLUMNS + META_OPTIONAL_COLUMNS).to_csv(paths["meta"], index=False)
    return paths
