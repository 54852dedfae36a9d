import json

import numpy as np
import pytest

from reddsc.biascorrect import BiasModel, correct_difference
from reddsc.donorpool import FilterConfig
from reddsc.errors import InfeasibleEffect
from reddsc.inference import project_att
from reddsc.panel import load_panels
from reddsc.scsolver import FitConfig, fit_scm
from reddsc.simgen import ScenarioSpec, default_train_end, generate, write_scenario

DRY = BiasModel(0.19, 0.08)


def test_noiseless_half_half_recovered():
    panels, truth = generate(ScenarioSpec(seed=0, n_donors=2, noise_scale=0.0, true_weights=(0.5, 0.5)))
    p, m = panels.projects[0]
    f = fit_scm(p, panels.pool("SIM"), FitConfig(train_end_year=m.train_end_year))
    assert np.allclose(f.weights, [0.5, 0.5], atol=1e-9)
    r, _ = project_att(p, m, panels.pool("SIM"), FitConfig(), FilterConfig(enabled=False), bands=False)
    assert r.att == pytest.approx(0, abs=1e-9) and truth.att["P001"] == 0


@pytest.mark.parametrize("delta, start", [(-10.0, 2012), (-3.0, 2018), (-25.0, 2005)])
def test_true_att_closed_form(delta, start):
    spec = ScenarioSpec(seed=1, treatment_effect_ha_per_yr=delta, effect_start_year=start)
    _, truth = generate(spec)
    k = spec.last_year - start + 1
    assert truth.att["P001"] == pytest.approx(delta * (k + 1) / 2, rel=1e-12)
    assert not truth.clamped["P001"]


def test_perfect_sensor_changes_nothing():
    base = ScenarioSpec(seed=4, n_projects=2, treatment_effect_ha_per_yr=-5)
    a, _ = generate(base)
    b, _ = generate(ScenarioSpec(**{**base.__dict__, "sensor": BiasModel(1.0, 0.0)}))
    assert a == b


def test_same_seed_same_panels():
    spec = ScenarioSpec(seed=9, n_donors=7, n_projects=3, sensor=DRY)
    assert generate(spec)[0] == generate(spec)[0]
    assert generate(spec)[0] != generate(ScenarioSpec(seed=10, n_donors=7, n_projects=3, sensor=DRY))[0]


def test_stochastic_sensor_is_seeded_and_valid():
    spec = ScenarioSpec(seed=3, sensor=DRY, sensor_mode="stochastic", n_projects=2)
    a, _ = generate(spec)
    assert a == generate(spec)[0]
    for s in a.sites():
        v = s.values()
        assert np.all(np.diff(v) >= 0) and v.max() <= s.area_ha


def test_expected_sensor_scales_gap_exactly():
    spec = ScenarioSpec(seed=6, n_donors=5, treatment_effect_ha_per_yr=-30, sensor=DRY)
    observed, truth = generate(spec)
    p_obs = observed.projects[0][0]
    p_true = truth.true_panels.projects[0][0]
    d_obs, d_true = observed.pool("SIM")[0], truth.true_panels.pool("SIM")[0]
    for y in p_obs.years:
        obs_gap = p_obs.series[y] - d_obs.series[y]
        true_gap = p_true.series[y] - d_true.series[y]
        assert correct_difference(DRY, obs_gap) == pytest.approx(true_gap, rel=1e-9, abs=1e-8)


def test_oversized_effect_is_refused():
    with pytest.raises(InfeasibleEffect):
        generate(ScenarioSpec(seed=0, treatment_effect_ha_per_yr=-1e4))


def test_default_split():
    assert default_train_end(2000, 2011) == 2005
    _, m = generate(ScenarioSpec(seed=0))[0].projects[0]
    assert (m.train_end_year, m.validation_end_year) == (2005, 2011)


@pytest.mark.parametrize("kw", [{"n_donors": 0}, {"effect_start_year": 2000}, {"true_weights": (0.5, 0.6)},
                                {"sensor_mode": "binomial"}, {"noise_scale": -1}])
def test_spec_validation(kw):
    with pytest.raises(ValueError):
        ScenarioSpec(**{"n_donors": 2, **kw})


def test_written_scenario_loads(tmp_path):
    spec = ScenarioSpec(seed=2, n_projects=2, treatment_effect_ha_per_yr=-8)
    paths = write_scenario(spec, tmp_path)
    loaded = load_panels(paths["sites"], paths["meta"], paths["covariates"])
    assert loaded == generate(spec)[0]
    gt = json.loads(paths["ground_truth"].read_text())
    assert gt["scenario"]["seed"] == 2
    assert gt["projects"]["P001"]["att_true"] == pytest.approx(-8 * 10 / 2)
