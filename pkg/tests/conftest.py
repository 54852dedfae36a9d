from __future__ import annotations

import numpy as np
import pytest

from reddsc.panel import PanelSet, ProjectMeta, SitePanel
from reddsc.simgen import ScenarioSpec, generate

# acceptance lines collected during the run, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


def site(site_id, series, area=1000.0, buffer=None, role="donor", country="X", covariates=None, first=2000):
    """SitePanel from a list of cumulative values starting at ``first``."""
    years = range(first, first + len(series))
    buf = buffer if buffer is not None else [2 * v for v in series]
    if np.isscalar(buf):
        buf = [float(buf)] * len(series)
    return SitePanel(site_id, area, dict(zip(years, series)), dict(zip(years, buf)),
                     covariates or {}, country=country, role=role)


def meta(pid, start=2012, val_end=2011, train_end=None, country="X", **kw):
    return ProjectMeta(pid, country, start, val_end, train_end_year=train_end, **kw)


def hull_exit_case(seed: int, train_end: int = 2008):
    """Donors from a simulated scenario and a project 1.5x as steep as the steepest donor."""
    panels, _ = generate(ScenarioSpec(seed=seed, n_donors=5, noise_scale=0.2))
    donors = list(panels.pool("SIM"))
    top = max(donors, key=lambda d: d.series[d.years[-1]])
    proj = SitePanel("PX", top.area_ha, {y: 1.5 * v for y, v in top.series.items()}, top.buffer_series,
                     role="project", country="SIM")
    return proj, donors, train_end


@pytest.fixture
def three_site_set():
    p = site("P1", [0, 10, 20, 30, 40, 50], role="project")
    d1 = site("D1", [0, 5, 10, 15, 20, 25])
    d2 = site("D2", [0, 15, 30, 45, 60, 75])
    return PanelSet(((p, meta("P1", start=2004, val_end=2003, train_end=2001)),), {"X": (d1, d2)})
