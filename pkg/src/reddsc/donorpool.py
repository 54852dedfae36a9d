"""Donor selection by buffer-deforestation similarity.

A donor is kept when the relative deviation of its cumulative buffer
deforestation at the year before project start from the project's,
``|b_donor - b_proj| / b_proj``, is within the tolerance. Tolerances are
tried in ladder order and the first one giving ``min_donors`` wins.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .errors import EmptyPool, ZeroProjectBuffer
from .panel import ProjectMeta, SitePanel

__all__ = ["FilterConfig", "DonorSelection", "filter_donors", "buffer_deviation"]

# guards the inclusive comparison against representation error (0.3 vs 30/100)
_EPS = 1e-12


@dataclass(frozen=True)
class FilterConfig:
    tolerance_ladder: tuple[float, ...] = (0.10, 0.20, 0.30)
    min_donors: int = 4
    enabled: bool = True
    # optional exact-match hook on categorical covariates (e.g. a biome code)
    match_covariates: tuple[str, ...] = ()

    def __post_init__(self):
        ladder = tuple(float(t) for t in self.tolerance_ladder)
        object.__setattr__(self, "tolerance_ladder", ladder)
        object.__setattr__(self, "match_covariates", tuple(self.match_covariates))
        if not ladder:
            raise ValueError("tolerance_ladder must not be empty")
        if any(not 0 < t <= 1 for t in ladder):
            raise ValueError(f"ladder values must lie in (0, 1]: {ladder}")
        if any(b <= a for a, b in zip(ladder, ladder[1:])):
            raise ValueError(f"ladder must be strictly increasing: {ladder}")
        if int(self.min_donors) < 1:
            raise ValueError("min_donors must be positive")


@dataclass(frozen=True)
class DonorSelection:
    project_id: str
    selected: tuple[str, ...]
    tolerance_used: float | None
    pool_size_before: int
    pool_size_after: int
    insufficient: bool = False


def buffer_deviation(project: SitePanel, donor: SitePanel, start_year: int) -> float:
    """Relative deviation of the donor's pre-start buffer deforestation from the project's."""
    b_proj = project.buffer_at(start_year - 1)
    if b_proj == 0:
        raise ZeroProjectBuffer(
            f"project {project.site_id!r} has zero buffer deforestation in {start_year - 1}; "
            "disable the filter for this project"
        )
    return abs(donor.buffer_at(start_year - 1) - b_proj) / b_proj


def filter_donors(
    project: SitePanel,
    meta: ProjectMeta,
    pool: Sequence[SitePanel],
    cfg: FilterConfig,
) -> DonorSelection:
    pool = list(pool)
    if not pool:
        raise EmptyPool(f"project {meta.project_id!r}: empty donor pool")
    before = len(pool)
    if cfg.match_covariates:
        pool = [d for d in pool
                if all(d.covariates.get(k) == project.covariates.get(k) for k in cfg.match_covariates)]
        if not pool:
            raise EmptyPool(f"project {meta.project_id!r}: no donor matches {cfg.match_covariates}")

    if not cfg.enabled:
        ids = tuple(d.site_id for d in pool)
        return DonorSelection(meta.project_id, ids, None, before, len(ids))

    dev = [(d.site_id, buffer_deviation(project, d, meta.start_year)) for d in pool]
    for tol in cfg.tolerance_ladder:
        ids = tuple(sid for sid, x in dev if x <= tol + _EPS)
        if len(ids) >= cfg.min_donors:
            return DonorSelection(meta.project_id, ids, tol, before, len(ids))
    ids = tuple(sid for sid, _ in dev)
    return DonorSelection(meta.project_id, ids, cfg.tolerance_ladder[-1], before, len(ids), insufficient=True)
