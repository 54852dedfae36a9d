"""Command-line entry point: ``reddsc <subcommand> [options]``.

Every subcommand reads its inputs from disk and writes its outputs under
``--out``, so steps can be rerun independently. Options may also come from a
YAML or JSON file given with ``--config``; flags on the command line win.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import pandas as pd
import yaml

from . import pipeline, reports
from .biascorrect import PRESETS, BiasModel, correct_difference, correction_factor, corrected_effectiveness
from .credits import baseline_inflation_stats, ledger_totals, load_credit_inputs, published_credit_rows
from .donorpool import FilterConfig
from .errors import PanelError, ReddscError
from .pipeline import EXIT_INGEST, EXIT_OK, EXIT_SOLVER, EXIT_WRITE, RunConfig
from .scsolver import FitConfig, fit
from .simgen import ScenarioSpec, write_scenario
from .validation import resolve_window, select_donors, validate_all

log = logging.getLogger("reddsc")

EXIT_USAGE = 2

# option defaults; kept apart from argparse so a config file can fill gaps
DEFAULTS = {
    "method": "both",
    "filter": "on",
    "ladder": "0.10,0.20,0.30",
    "min_donors": 4,
    "workers": 1,
    "seed": 0,
    "ridge_lambda": "auto",
    "covariate_weight": 0.0,
    "alpha": 0.05,
}


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# parser


def _common(p: argparse.ArgumentParser, inputs=True, analysis=True, bias=False):
    p.add_argument("--config", help="YAML or JSON file of option values")
    p.add_argument("--out", help="output directory")
    p.add_argument("--workers", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    if inputs:
        p.add_argument("--sites")
        p.add_argument("--covariates")
        p.add_argument("--meta")
        p.add_argument("--split-overrides", dest="split_overrides",
                       help="CSV of project_id, train_end_year, validation_end_year")
    if analysis:
        p.add_argument("--method", choices=("scm", "ascm", "both"))
        p.add_argument("--filter", choices=("on", "off"))
        p.add_argument("--ladder", help="comma-separated buffer tolerances, e.g. 0.10,0.20,0.30")
        p.add_argument("--min-donors", dest="min_donors", type=int)
        p.add_argument("--ridge-lambda", dest="ridge_lambda", help="'auto' or a relative penalty")
        p.add_argument("--covariate-weight", dest="covariate_weight", type=float)
    if bias:
        p.add_argument("--bias-preset", dest="bias_preset", choices=sorted(PRESETS))
        p.add_argument("--rd", type=float, help="detection rate of true deforestation")
        p.add_argument("--rf", type=float, help="false-positive rate on intact forest")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="reddsc", description="Synthetic-control audit of avoided-deforestation projects")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate input CSVs and print a summary")
    _common(p, analysis=False)

    p = sub.add_parser("fit", help="fit synthetic controls and write fits.json")
    _common(p)

    p = sub.add_parser("validate", help="run the three pre-treatment validation tests")
    _common(p)

    p = sub.add_parser("att", help="post-treatment effects with jackknife+ bands")
    _common(p)
    p.add_argument("--no-bands", dest="no_bands", action="store_true")
    p.add_argument("--alpha", type=float)

    p = sub.add_parser("sensitivity", help="effects with and without the donor filter")
    _common(p)

    p = sub.add_parser("bias", help="correct observed differences for detection error")
    _common(p, inputs=False, analysis=False, bias=True)
    p.add_argument("--att", help="att.csv from the att subcommand")
    p.add_argument("--observed-diff", dest="observed_diff", type=float, help="observed PA minus SC difference (ha)")
    p.add_argument("--effect", type=float, help="observed effect (ha/yr) for the effectiveness ratio")
    p.add_argument("--baseline", type=float, help="baseline deforestation (ha/yr) for the effectiveness ratio")

    p = sub.add_parser("credits", help="recompute the credit ledger")
    _common(p, inputs=False, analysis=False)
    p.add_argument("--meta")
    p.add_argument("--avoided", help="CSV of project_id, avoided_ha")
    p.add_argument("--published", action="store_true", help="use the bundled registry table")

    p = sub.add_parser("simulate", help="write a synthetic scenario with ground truth")
    _common(p, inputs=False, analysis=False, bias=True)
    p.add_argument("--n-donors", dest="n_donors", type=int)
    p.add_argument("--n-projects", dest="n_projects", type=int)
    p.add_argument("--first-year", dest="first_year", type=int)
    p.add_argument("--last-year", dest="last_year", type=int)
    p.add_argument("--effect", dest="treatment_effect_ha_per_yr", type=float, help="ha/yr added after the start year")
    p.add_argument("--effect-start", dest="effect_start_year", type=int)
    p.add_argument("--noise", dest="noise_scale", type=float)
    p.add_argument("--sensor-mode", dest="sensor_mode", choices=("expected", "stochastic"))
    p.add_argument("--train-end", dest="train_end_year", type=int)

    p = sub.add_parser("report", help="full run: validation, effects, sensitivity, bias and credits")
    _common(p, bias=True)
    p.add_argument("--avoided", help="CSV of project_id, avoided_ha; default derives it from the effects")
    p.add_argument("--no-bands", dest="no_bands", action="store_true")
    p.add_argument("--alpha", type=float)
    return ap


def load_config(path) -> dict:
    text = Path(path).read_text()
    data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise UsageError(f"{path}: config must be a mapping")
    return {str(k).replace("-", "_"): v for k, v in data.items()}


def resolve_options(ns: argparse.Namespace) -> dict:
    """Command line, then config file, then built-in defaults."""
    opts = dict(DEFAULTS)
    if getattr(ns, "config", None):
        opts.update(load_config(ns.config))
    opts.update({k: v for k, v in vars(ns).items() if v is not None and v is not False})
    if isinstance(opts.get("ladder"), (list, tuple)):
        opts["ladder"] = ",".join(str(x) for x in opts["ladder"])
    return opts


# --------------------------------------------------------------------------
# option -> config objects


def _methods(opts) -> tuple[str, ...]:
    m = str(opts["method"]).lower()
    return ("scm", "ascm") if m == "both" else (m,)


def _filter_cfg(opts) -> FilterConfig:
    try:
        ladder = tuple(float(x) for x in str(opts["ladder"]).split(",") if x.strip())
    except ValueError:
        raise UsageError(f"bad --ladder {opts['ladder']!r}") from None
    return FilterConfig(ladder, int(opts["min_donors"]), str(opts["filter"]) == "on",
                        tuple(opts.get("match_covariates") or ()))


def _fit_cfg(opts) -> FitConfig:
    lam = opts["ridge_lambda"]
    if isinstance(lam, str) and lam.lower() != "auto":
        try:
            lam = float(lam)
        except ValueError:
            raise UsageError(f"bad --ridge-lambda {lam!r}") from None
    return FitConfig(ridge_lambda=lam, covariate_weight=float(opts["covariate_weight"]))


def _bias_model(opts) -> BiasModel | None:
    preset, rd, rf = opts.get("bias_preset"), opts.get("rd"), opts.get("rf")
    if preset and (rd is not None or rf is not None):
        raise UsageError("give either --bias-preset or --rd/--rf, not both")
    if preset:
        return BiasModel.preset(preset)
    if rd is None and rf is None:
        return None
    if rd is None or rf is None:
        raise UsageError("--rd and --rf must be given together")
    return BiasModel(rd, rf)


def _require(opts, *keys):
    missing = [k for k in keys if not opts.get(k)]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _run_config(opts) -> RunConfig:
    _require(opts, "sites", "meta", "out")
    return RunConfig(
        sites=opts["sites"], meta=opts["meta"], out_dir=opts["out"], covariates=opts.get("covariates"),
        methods=_methods(opts), filter=_filter_cfg(opts), fit=_fit_cfg(opts), bias=_bias_model(opts),
        split_overrides=opts.get("split_overrides"), avoided=opts.get("avoided"),
        workers=int(opts["workers"]), seed=int(opts["seed"]), bands=not opts.get("no_bands", False),
        alpha=float(opts["alpha"]),
    )


# --------------------------------------------------------------------------
# subcommands


def cmd_ingest(opts) -> int:
    _require(opts, "sites", "meta")
    cfg = RunConfig(opts["sites"], opts["meta"], opts.get("out") or "", opts.get("covariates"),
                    split_overrides=opts.get("split_overrides"))
    panels, overrides = pipeline.ingest(cfg)
    years = sorted({y for s in panels.sites() for y in s.years})
    summary = {
        "n_projects": len(panels.projects),
        "donors_per_country": {c: len(d) for c, d in sorted(panels.donors.items())},
        "years": [years[0], years[-1]],
        "n_split_overrides": len(overrides),
    }
    if opts.get("out"):
        from .panel import write_panels
        write_panels(panels, opts["out"])
        reports.write_json(summary, Path(opts["out"]) / "ingest_summary.json")
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_fit(opts) -> int:
    cfg = _run_config(opts)
    panels, overrides = pipeline.ingest(cfg)
    fits, errors = [], []
    for m in cfg.methods:
        for site, meta in panels.projects:
            try:
                w = resolve_window(site, meta, overrides)
                donors, _ = select_donors(site, meta, panels.pool(meta.country), cfg.filter)
                f = fit(site, donors, replace(cfg.fit, method=m, train_end_year=w.train_end_year))
                fits.append(f.to_dict())
            except ReddscError as exc:
                errors.append({"project_id": meta.project_id, "method": m, "error": f"{type(exc).__name__}: {exc}"})
    reports.write_json({"fits": fits, "errors": errors}, Path(cfg.out_dir) / "fits.json")
    reports.write_json(cfg.to_dict(), Path(cfg.out_dir) / "run_config.json")
    return EXIT_OK


def cmd_validate(opts) -> int:
    cfg = _run_config(opts)
    panels, overrides = pipeline.ingest(cfg)
    reps, summary = validate_all(panels, cfg.fit, cfg.filter, cfg.methods, overrides, workers=cfg.workers)
    out = Path(cfg.out_dir)
    reports.validation_tables(reps, out)
    reports.write_json(summary, out / "validation_summary.json")
    print(json.dumps(reports._clean(summary), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_att(opts) -> int:
    cfg = _run_config(opts)
    panels, overrides = pipeline.ingest(cfg)
    effects = pipeline.estimate_effects(panels, cfg, overrides, states=(cfg.filter.enabled,))
    rows, gaps = [], []
    for entries in effects.values():
        for meta, site, outs in entries:
            for a, f, w, err in outs:
                if a is None:
                    continue
                rows.append((meta.country, pipeline._flagged(a, err)))
                if f is not None:
                    gaps.append((a, f, site.series, (w.train_end_year, w.validation_end_year, meta.start_year)))
    out = Path(cfg.out_dir)
    reports.att_table(rows, out / "att.csv")
    reports.gap_series_table(gaps, out / "gap_series.csv")
    return EXIT_OK


def cmd_sensitivity(opts) -> int:
    cfg = replace(_run_config(opts), bands=False)
    panels, overrides = pipeline.ingest(cfg)
    effects = pipeline.estimate_effects(panels, cfg, overrides)
    out = Path(cfg.out_dir)
    summary = {}
    for m, entries in effects.items():
        rows = pipeline.sensitivity_rows(entries)
        reports.sensitivity_csv(rows, out / f"att_sensitivity_{m}.csv")
        summary[m] = pipeline.sensitivity_summary(rows)
    reports.write_json(summary, out / "sensitivity_summary.json")
    print(json.dumps(reports._clean(summary), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_bias(opts) -> int:
    model = _bias_model(opts)
    if model is None:
        raise UsageError("bias needs --bias-preset or --rd/--rf")
    result: dict = {"r_d": model.r_d, "r_f": model.r_f, "correction_factor": correction_factor(model)}
    if opts.get("observed_diff") is not None:
        result["corrected_diff_ha"] = correct_difference(model, opts["observed_diff"])
    if opts.get("effect") is not None or opts.get("baseline") is not None:
        _require(opts, "effect", "baseline")
        eff = corrected_effectiveness(opts["effect"], opts["baseline"], model)
        result["corrected_effectiveness"] = eff.value
        result["over_unity"] = eff.over_unity
    if opts.get("att"):
        _require(opts, "out")
        df = pd.read_csv(opts["att"], dtype={"project_id": str})
        if "att_ha" not in df.columns:
            raise PanelError(f"{opts['att']}: missing column att_ha")
        df["correction_factor"] = correction_factor(model)
        df["att_corrected_ha"] = [correct_difference(model, v) if not math.isnan(v) else math.nan
                                  for v in df["att_ha"].astype(float)]
        Path(opts["out"]).mkdir(parents=True, exist_ok=True)
        df.to_csv(Path(opts["out"]) / "att_bias_corrected.csv", index=False, lineterminator="\n")
    if opts.get("out"):
        reports.write_json(result, Path(opts["out"]) / "bias_summary.json")
    print(json.dumps(result, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_credits(opts) -> int:
    _require(opts, "out")
    if opts.get("published"):
        rows = published_credit_rows()
    else:
        _require(opts, "meta", "avoided")
        rows = load_credit_inputs(opts["meta"], opts["avoided"])
    totals = ledger_totals(rows)
    out = Path(opts["out"])
    reports.credit_tables(rows, totals, out)
    mean_i, min_i, max_i = baseline_inflation_stats(rows)
    summary = {**totals.to_dict(), "baseline_inflation_mean_pct": mean_i,
               "baseline_inflation_min_pct": min_i, "baseline_inflation_max_pct": max_i}
    reports.write_json(summary, out / "credit_summary.json")
    print(json.dumps(reports._clean(summary), indent=2, sort_keys=True))
    return EXIT_OK


_SCENARIO_KEYS = ("n_donors", "n_projects", "first_year", "last_year", "treatment_effect_ha_per_yr",
                  "effect_start_year", "noise_scale", "sensor_mode", "train_end_year", "area_ha", "base_rate",
                  "rate_spread", "trend", "trend_spread", "buffer_factor", "clamp_tol", "country")


def cmd_simulate(opts) -> int:
    _require(opts, "out")
    kw = {k: opts[k] for k in _SCENARIO_KEYS if opts.get(k) is not None}
    if opts.get("true_weights") is not None:
        kw["true_weights"] = tuple(opts["true_weights"])
    spec = ScenarioSpec(seed=int(opts["seed"]), sensor=_bias_model(opts), **kw)
    paths = write_scenario(spec, opts["out"])
    print(json.dumps({k: str(v) for k, v in paths.items()}, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_report(opts) -> int:
    return pipeline.run_pipeline(_run_config(opts))


COMMANDS = {
    "ingest": cmd_ingest, "fit": cmd_fit, "validate": cmd_validate, "att": cmd_att,
    "sensitivity": cmd_sensitivity, "bias": cmd_bias, "credits": cmd_credits,
    "simulate": cmd_simulate, "report": cmd_report,
}


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        opts = resolve_options(ns)
        return COMMANDS[ns.command](opts)
    except (UsageError, ValueError) as exc:
        if isinstance(exc, PanelError):
            log.error("%s", exc)
            return EXIT_INGEST
        log.error("%s", exc)
        return EXIT_USAGE
    except (FileNotFoundError, PanelError) as exc:
        log.error("%s", exc)
        return EXIT_INGEST
    except ReddscError as exc:
        log.error("%s", exc)
        return EXIT_SOLVER
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_WRITE


if __name__ == "__main__":
    sys.exit(main())
