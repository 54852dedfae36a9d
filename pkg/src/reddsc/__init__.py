"""Synthetic-control auditing of avoided-deforestation carbon projects.

Panels of cumulative deforestation are loaded with :func:`load_panels`,
donors are screened by buffer-zone similarity, synthetic controls are fit
(SCM or ridge-augmented ASCM), validated on held-out pre-treatment years,
and turned into effect estimates, detection-bias corrections and credit
ledgers.
"""

from .biascorrect import BiasModel, correct_difference, correction_factor, corrected_effectiveness
from .credits import baseline_inflation_stats, ledger_row, ledger_totals, published_credit_rows
from .donorpool import FilterConfig, filter_donors
from .errors import ReddscError
from .inference import AttResult, jackknife_plus_bands, project_att, sensitivity_table
from .panel import PanelSet, ProjectMeta, SitePanel, load_panels, write_panels
from .pipeline import RunConfig, run_pipeline
from .scsolver import FitConfig, ScFit, fit, predict_counterfactual
from .simgen import ScenarioSpec, generate
from .validation import Window, validate_all, validate_fit

__version__ = "0.1.0"

__all__ = [
    "AttResult", "BiasModel", "FilterConfig", "FitConfig", "PanelSet", "ProjectMeta", "ReddscError",
    "RunConfig", "ScFit", "ScenarioSpec", "SitePanel", "Window",
    "baseline_inflation_stats", "correct_difference", "correction_factor", "corrected_effectiveness",
    "filter_donors", "fit", "generate", "jackknife_plus_bands", "ledger_row", "ledger_totals",
    "load_panels", "predict_counterfactual", "project_att", "published_credit_rows", "run_pipeline",
    "sensitivity_table", "validate_all", "validate_fit", "write_panels",
]
