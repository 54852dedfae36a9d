import numpy as np
import pandas as pd
import pytest

from reddsc.errors import (DuplicateSiteId, MissingColumn, NonMonotoneSeries, PanelError, SeriesExceedsArea,
                           YearGap, YearOutOfDomain)
from reddsc.panel import META_COLUMNS, SITES_COLUMNS, PanelSet, annual_increments, load_meta, load_panels, write_panels

from conftest import meta, site


def _write_fixture(tmp_path, rows=None, meta_rows=None):
    rows = rows or [
        ("P1", "X", "project", 100.0, 2000, 0.0, 0.0),
        ("P1", "X", "project", 100.0, 2001, 5.0, 7.0),
        ("P1", "X", "project", 100.0, 2002, 9.0, 12.0),
        ("D1", "X", "donor", 200.0, 2000, 0.0, 0.0),
        ("D1", "X", "donor", 200.0, 2001, 3.0, 6.0),
        ("D1", "X", "donor", 200.0, 2002, 8.0, 11.0),
        ("D2", "X", "donor", 150.0, 2000, 1.0, 2.0),
        ("D2", "X", "donor", 150.0, 2001, 4.0, 6.0),
        ("D2", "X", "donor", 150.0, 2002, 6.0, 9.0),
    ]
    meta_rows = meta_rows or [("P1", "X", 2002, 2001, 1000.0, 800.0, 50.0, 40.0)]
    pd.DataFrame(rows, columns=SITES_COLUMNS).to_csv(tmp_path / "sites.csv", index=False)
    pd.DataFrame(meta_rows, columns=META_COLUMNS).to_csv(tmp_path / "meta.csv", index=False)
    return tmp_path / "sites.csv", tmp_path / "meta.csv"


def test_three_site_fixture_loads(tmp_path):
    ps = load_panels(*_write_fixture(tmp_path))
    assert ps.project_ids == ["P1"]
    assert [d.site_id for d in ps.pool("X")] == ["D1", "D2"]
    p, m = ps.project("P1")
    assert p.series == {2000: 0.0, 2001: 5.0, 2002: 9.0}
    assert m.expected_credits == 1000.0 and m.train_end_year is None


def test_decreasing_cumulative_series_rejected(tmp_path):
    rows = [("P1", "X", "project", 100.0, 2000, 10.0, 0.0), ("P1", "X", "project", 100.0, 2001, 9.0, 0.0),
            ("D1", "X", "donor", 100.0, 2000, 0.0, 0.0), ("D1", "X", "donor", 100.0, 2001, 1.0, 1.0)]
    with pytest.raises(NonMonotoneSeries) as exc:
        load_panels(*_write_fixture(tmp_path, rows, [("P1", "X", 2001, 2000, 0, 0, 0, 0)]))
    assert exc.value.site_id == "P1"


def test_deforestation_above_area_rejected():
    with pytest.raises(SeriesExceedsArea):
        site("X1", [0, 120], area=100)


def test_interior_year_gap_rejected():
    with pytest.raises(YearGap):
        from reddsc.panel import SitePanel
        SitePanel("G", 100, {2000: 0, 2002: 1}, {2000: 0, 2002: 1})


def test_missing_column_named(tmp_path):
    s, m = _write_fixture(tmp_path)
    pd.read_csv(s).drop(columns=["buffer_cum_defor_ha"]).to_csv(s, index=False)
    with pytest.raises(MissingColumn) as exc:
        load_panels(s, m)
    assert "buffer_cum_defor_ha" in str(exc.value)


def test_missing_meta_file(tmp_path):
    s, _ = _write_fixture(tmp_path)
    with pytest.raises(FileNotFoundError):
        load_panels(s, tmp_path / "nope.csv")


def test_duplicate_site_ids_rejected():
    p = site("P1", [0, 1, 2], role="project")
    with pytest.raises(DuplicateSiteId):
        PanelSet(((p, meta("P1", start=2002, val_end=2001)),), {"X": (site("P1", [0, 1, 2]),)})


def test_project_without_donors_rejected():
    p = site("P1", [0, 1, 2], role="project")
    with pytest.raises(PanelError):
        PanelSet(((p, meta("P1", start=2002, val_end=2001, country="Y")),), {"X": (site("D", [0, 1, 2]),)})


def test_meta_without_project_site(tmp_path):
    s, m = _write_fixture(tmp_path, meta_rows=[("P9", "X", 2002, 2001, 0, 0, 0, 0)])
    with pytest.raises(PanelError):
        load_panels(s, m)


def test_meta_checks_window_order():
    with pytest.raises(PanelError):
        meta("P", start=2010, val_end=2010)
    with pytest.raises(PanelError):
        meta("P", start=2010, val_end=2008, train_end=2008)


def test_corrected_baseline_cannot_exceed_raw():
    with pytest.raises(PanelError):
        meta("P", baseline_deforestation_raw=10, baseline_deforestation_correct=11)


def test_load_meta_alone(tmp_path):
    _, m = _write_fixture(tmp_path)
    (row,) = load_meta(m)
    assert row.baseline_deforestation_raw == 50.0 and row.baseline_deforestation_correct == 40.0


@pytest.mark.parametrize("series, expected", [
    ([0, 5, 5], {2001: 5, 2002: 0}),
    ([3, 3, 3, 3], {2001: 0, 2002: 0, 2003: 0}),
    ([1, 4, 9], {2001: 3, 2002: 5}),
])
def test_annual_increments(series, expected):
    assert annual_increments(site("S", series, area=100)) == expected


def test_values_outside_domain():
    s = site("S", [0, 1, 2])
    assert np.array_equal(s.values([2001, 2002]), [1.0, 2.0])
    with pytest.raises(YearOutOfDomain):
        s.values([1999])
    with pytest.raises(YearOutOfDomain):
        s.buffer_at(2005)


def test_write_then_load_is_identity(tmp_path, three_site_set):
    paths = write_panels(three_site_set, tmp_path)
    again = load_panels(paths["sites"], paths["meta"], paths["covariates"])
    assert again == three_site_set
