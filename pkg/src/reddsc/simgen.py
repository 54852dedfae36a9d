"""Synthetic deforestation panels with known ground truth.

Donor increments come from a seeded gamma process with a per-donor base
rate and linear trend. Each project is an exact convex combination of the
donors, optionally with a constant treatment effect added to its annual
increments from ``effect_start_year``. An optional sensor maps every true
cumulative series through the detection-error model year by year.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .biascorrect import BiasModel
from .errors import InfeasibleEffect, PanelError
from .panel import PanelSet, ProjectMeta, SitePanel, write_panels

__all__ = ["ScenarioSpec", "GroundTruth", "generate", "write_scenario", "default_train_end"]


def default_train_end(first_year: int, validation_end_year: int) -> int:
    """Split the pre-treatment years in two, training on the first half (rounded up)."""
    return first_year + (validation_end_year - first_year) // 2


@dataclass(frozen=True)
class ScenarioSpec:
    seed: int = 0
    n_donors: int = 5
    first_year: int = 2000
    last_year: int = 2020
    area_ha: float = 100_000.0
    base_rate: float = 100.0
    rate_spread: float = 0.5
    trend: float = 0.02
    trend_spread: float = 0.03
    noise_scale: float = 0.3
    buffer_factor: float = 2.0
    true_weights: tuple[float, ...] | None = None
    n_projects: int = 1
    treatment_effect_ha_per_yr: float = 0.0
    effect_start_year: int = 2012
    sensor: BiasModel | None = None
    sensor_mode: str = "expected"
    train_end_year: int | None = None
    clamp_tol: float = 0.01
    country: str = "SIM"

    def __post_init__(self):
        if self.n_donors < 1 or self.n_projects < 1:
            raise ValueError("n_donors and n_projects must be positive")
        if not self.first_year < self.effect_start_year <= self.last_year:
            raise ValueError("effect_start_year must lie inside (first_year, last_year]")
        if self.true_weights is not None:
            w = np.asarray(self.true_weights, dtype=float)
            if w.size != self.n_donors or np.any(w < 0) or abs(w.sum() - 1) > 1e-12:
                raise ValueError("true_weights must be a nonnegative vector of length n_donors summing to 1")
            object.__setattr__(self, "true_weights", tuple(float(x) for x in w))
        if self.sensor_mode not in ("expected", "stochastic"):
            raise ValueError("sensor_mode must be 'expected' or 'stochastic'")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be nonnegative")

    @property
    def years(self) -> list[int]:
        return list(range(self.first_year, self.last_year + 1))

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["true_weights"] = None if self.true_weights is None else list(self.true_weights)
        d["sensor"] = None if self.sensor is None else {"r_d": self.sensor.r_d, "r_f": self.sensor.r_f}
        return d


@dataclass(frozen=True)
class GroundTruth:
    weights: dict[str, np.ndarray]
    att: dict[str, float]
    gap: dict[str, dict[int, float]]
    clamped: dict[str, bool]
    true_panels: PanelSet
    donor_ids: tuple[str, ...] = field(default_factory=tuple)

    def to_dict(self) -> dict:
        return {
            "donor_ids": list(self.donor_ids),
            "projects": {
                pid: {
                    "weights": [float(x) for x in self.weights[pid]],
                    "att_true": self.att[pid],
                    "gap_true": {str(y): v for y, v in self.gap[pid].items()},
                    "clamped": self.clamped[pid],
                }
                for pid in self.weights
            },
        }


def _increments(rng, mean, noise):
    if noise == 0:
        return mean.copy()
    shape = 1.0 / noise**2
    out = np.zeros_like(mean)
    pos = mean > 0
    out[pos] = rng.gamma(shape, mean[pos] / shape)
    return out


def _cumulative(inc):
    # series start at zero in the first year of record
    return np.concatenate([[0.0], np.cumsum(inc)])


def _observe(rng, cum, area, sensor: BiasModel | None, mode: str):
    if sensor is None:
        return cum
    if mode == "expected":
        return sensor.r_f * (area - cum) + sensor.r_d * cum
    # stochastic: false-alarm stock in the first year, then per-year detections
    # of new loss minus previously false-flagged pixels that are now truly lost
    new = np.rint(np.diff(cum)).astype(np.int64)
    stock = rng.binomial(int(round(area - cum[0])), sensor.r_f) + rng.binomial(int(round(cum[0])), sensor.r_d)
    inc = np.maximum(rng.binomial(new, sensor.r_d) - rng.binomial(new, sensor.r_f), 0)
    return np.minimum(np.concatenate([[float(stock)], stock + np.cumsum(inc)]), area)


def generate(spec: ScenarioSpec) -> tuple[PanelSet, GroundTruth]:
    """Build an observed :class:`PanelSet` and its :class:`GroundTruth`.

    Raises :class:`InfeasibleEffect` when clamping the treated increments at
    zero removes more than ``clamp_tol`` of the injected effect.
    """
    rng = np.random.default_rng(spec.seed)
    years = spec.years
    T = len(years)
    idx = np.arange(1, T)
    A = float(spec.area_ha)

    J = spec.n_donors
    rates = spec.base_rate * np.exp(spec.rate_spread * rng.standard_normal(J))
    trends = spec.trend + spec.trend_spread * rng.standard_normal(J)
    donor_cum = np.empty((J, T))
    donor_buf = np.empty((J, T))
    covs = []
    for j in range(J):
        mean = rates[j] * np.maximum(0.0, 1.0 + trends[j] * idx)
        donor_cum[j] = _cumulative(_increments(rng, mean, spec.noise_scale))
        donor_buf[j] = _cumulative(_increments(rng, spec.buffer_factor * mean, spec.noise_scale))
        covs.append({"trend": float(trends[j]), "elevation": float(rng.standard_normal())})
    if donor_cum.max() > A:
        raise PanelError("simulated donor deforestation exceeds area_ha; lower base_rate or raise area_ha")

    donor_ids = tuple(f"D{j + 1:03d}" for j in range(J))
    start = years.index(spec.effect_start_year)
    k_post = T - start
    effect = float(spec.treatment_effect_ha_per_yr)

    weights, att, gap, clamped = {}, {}, {}, {}
    true_proj, proj_cum_obs = [], []
    for p in range(spec.n_projects):
        pid = f"P{p + 1:03d}"
        if spec.true_weights is not None and p == 0:
            w = np.asarray(spec.true_weights)
        else:
            w = rng.dirichlet(np.ones(J))
        untreated = w @ donor_cum
        inc = np.diff(untreated)
        treated_inc = inc.copy()
        treated_inc[start - 1:] += effect
        lost = float(np.sum(np.maximum(-treated_inc, 0.0)))
        treated_inc = np.maximum(treated_inc, 0.0)
        if effect != 0 and lost > spec.clamp_tol * abs(effect) * k_post:
            raise InfeasibleEffect(
                f"project {pid}: effect {effect} ha/yr exceeds baseline increments "
                f"(clamping removes {lost:.3g} ha)"
            )
        cum = _cumulative(treated_inc)
        if cum.max() > A:
            raise PanelError(f"project {pid}: simulated deforestation exceeds area_ha")
        g = cum - untreated
        weights[pid] = w
        gap[pid] = {years[i]: float(g[i]) for i in range(start, T)}
        att[pid] = float(np.mean(g[start:]))
        clamped[pid] = lost > 0
        true_proj.append((pid, cum, w @ donor_buf, {k: float(sum(w[j] * covs[j][k] for j in range(J)))
                                                    for k in covs[0]}))

    val_end = spec.effect_start_year - 1
    train_end = spec.train_end_year
    if train_end is None:
        train_end = default_train_end(spec.first_year, val_end)

    def build(observe: bool) -> PanelSet:
        def ser(x):
            return dict(zip(years, x))

        projects = []
        for pid, cum, buf, cv in true_proj:
            obs = _observe(rng, cum, A, spec.sensor, spec.sensor_mode) if observe else cum
            site = SitePanel(pid, A, ser(obs), ser(buf), cv, country=spec.country, role="project")
            meta = ProjectMeta(pid, spec.country, spec.effect_start_year, val_end, train_end_year=train_end)
            projects.append((site, meta))
        donors = []
        for j, sid in enumerate(donor_ids):
            obs = _observe(rng, donor_cum[j], A, spec.sensor, spec.sensor_mode) if observe else donor_cum[j]
            donors.append(SitePanel(sid, A, ser(obs), ser(donor_buf[j]), covs[j], country=spec.country))
        return PanelSet(tuple(projects), {spec.country: tuple(donors)})

    truth_set = build(False)
    observed = build(True) if spec.sensor is not None else truth_set
    return observed, GroundTruth(weights, att, gap, clamped, truth_set, donor_ids)


def write_scenario(spec: ScenarioSpec, out_dir) -> dict[str, Path]:
    """Write the observed panels in the ingestion schema plus ``ground_truth.json``."""
    panels, truth = generate(spec)
    paths = write_panels(panels, out_dir)
    gt = Path(out_dir) / "ground_truth.json"
    payload = {"scenario": spec.to_dict(), **truth.to_dict()}
    gt.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    paths["ground_truth"] = gt
    return paths
