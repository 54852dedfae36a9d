"""Carbon-credit ledger recomputation.

Offsets implied by a synthetic-control analysis are
``avoided_ha * expected_credits / baseline_ha``: a fixed carbon value per
hectare of avoided deforestation. Two baselines are carried side by side:

* ``west``: the raw baseline, which also counts deforestation between 2000
  and the project start, compared against *expected* (ex ante) credits;
* ``correct``: the post-start baseline, compared against *issued* (ex post)
  credits.

Everything is computed at full precision; :func:`round_half_away` is for
display only.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from decimal import ROUND_HALF_UP, Decimal
from importlib import resources
from typing import Iterable, NamedTuple, Sequence

import numpy as np
import pandas as pd

from .errors import MissingColumn, ZeroBaseline, ZeroDenominator
from .panel import ProjectMeta, load_meta

__all__ = [
    "CreditLedgerRow",
    "LedgerTotals",
    "RealShare",
    "per_hectare_factor",
    "offsets_from_sc",
    "percent_real",
    "ledger_row",
    "ledger_rows_from_meta",
    "ledger_totals",
    "baseline_inflation_stats",
    "load_avoided",
    "published_credit_rows",
    "round_half_away",
    "load_credit_inputs",
]


def round_half_away(x: float, ndigits: int = 0) -> float:
    """Round half away from zero (``round`` in Python rounds half to even)."""
    q = Decimal(1).scaleb(-ndigits)
    return float(Decimal(repr(x)).quantize(q, rounding=ROUND_HALF_UP))


class RealShare(NamedTuple):
    fraction: float
    over_100: bool


def per_hectare_factor(expected_credits: float, baseline_ha: float) -> float:
    if baseline_ha <= 0:
        raise ZeroBaseline(f"baseline deforestation must be positive, got {baseline_ha}")
    return expected_credits / baseline_ha


def offsets_from_sc(avoided_ha: float, per_ha: float) -> float:
    if avoided_ha < 0 or per_ha < 0:
        raise ValueError("avoided_ha and per_ha must be nonnegative")
    return avoided_ha * per_ha


def percent_real(offsets_sc: float, denominator_credits: float) -> RealShare:
    """Share of credits backed by avoided deforestation, flagged above 100 %."""
    if denominator_credits <= 0:
        raise ZeroDenominator("credit denominator must be positive")
    f = offsets_sc / denominator_credits
    return RealShare(f, f > 1)


@dataclass(frozen=True)
class CreditLedgerRow:
    project_id: str
    avoided_defor_ha: float
    baseline_west_ha: float
    baseline_correct_ha: float
    expected_credits: float
    issued_credits: float
    per_ha_west: float
    per_ha_correct: float
    offsets_west: float
    offsets_correct: float
    pct_real_west: float
    pct_real_correct: float
    over_100_west: bool = False
    over_100_correct: bool = False
    baseline_flagged: bool = False
    flags: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["flags"] = ";".join(self.flags)
        return d


def ledger_row(project_id: str, avoided_ha: float, baseline_west_ha: float, baseline_correct_ha: float,
               expected_credits: float, issued_credits: float, baseline_flagged: bool = False) -> CreditLedgerRow:
    flags = []
    pw = per_hectare_factor(expected_credits, baseline_west_ha)
    pc = per_hectare_factor(expected_credits, baseline_correct_ha)
    ow = offsets_from_sc(avoided_ha, pw)
    oc = offsets_from_sc(avoided_ha, pc)
    shares = []
    for off, den, name in ((ow, expected_credits, "expected"), (oc, issued_credits, "issued")):
        try:
            shares.append(percent_real(off, den))
        except ZeroDenominator:
            flags.append(f"zero_{name}_credits")
            shares.append(RealShare(math.nan, False))
    return CreditLedgerRow(
        project_id=project_id,
        avoided_defor_ha=float(avoided_ha),
        baseline_west_ha=float(baseline_west_ha),
        baseline_correct_ha=float(baseline_correct_ha),
        expected_credits=float(expected_credits),
        issued_credits=float(issued_credits),
        per_ha_west=pw,
        per_ha_correct=pc,
        offsets_west=ow,
        offsets_correct=oc,
        pct_real_west=shares[0].fraction,
        pct_real_correct=shares[1].fraction,
        over_100_west=shares[0].over_100,
        over_100_correct=shares[1].over_100,
        baseline_flagged=bool(baseline_flagged),
        flags=tuple(flags),
    )


def ledger_rows_from_meta(metas: Iterable[ProjectMeta], avoided: dict[str, float]) -> list[CreditLedgerRow]:
    """One ledger row per meta row; projects missing from ``avoided`` get zero avoided area."""
    return [
        ledger_row(m.project_id, avoided.get(m.project_id, 0.0), m.baseline_deforestation_raw,
                   m.baseline_deforestation_correct, m.expected_credits, m.issued_credits, m.baseline_flagged)
        for m in metas
    ]


@dataclass(frozen=True)
class LedgerTotals:
    total_offsets_west: float
    total_offsets_correct: float
    total_expected: float
    total_issued: float
    pct_real_west: float
    pct_real_correct: float
    relative_increase: float
    offset_increase: float
    flags: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["flags"] = list(self.flags)
        return d


def _ratio(a, b):
    return a / b if b else math.nan


def ledger_totals(rows: Sequence[CreditLedgerRow]) -> LedgerTotals:
    """Column sums and aggregate real shares.

    ``relative_increase`` is ``pct_real_correct / pct_real_west - 1``;
    ``offset_increase`` is the growth in total offsets from the baseline fix alone.
    """
    if not rows:
        raise ValueError("ledger_totals needs at least one row")
    ow = math.fsum(r.offsets_west for r in rows)
    oc = math.fsum(r.offsets_correct for r in rows)
    te = math.fsum(r.expected_credits for r in rows)
    ti = math.fsum(r.issued_credits for r in rows)
    pw, pc = _ratio(ow, te), _ratio(oc, ti)
    rel = _ratio(pc, pw) - 1 if pw and not math.isnan(pw) else math.nan
    flags = ("relative_increase_undefined",) if math.isnan(rel) else ()
    return LedgerTotals(ow, oc, te, ti, pw, pc, rel, _ratio(oc, ow) - 1 if ow else math.nan, flags)


def baseline_inflation_stats(rows: Sequence[CreditLedgerRow]) -> tuple[float, float, float]:
    """Mean, min and max of ``100 * (baseline_west / baseline_correct - 1)``,
    skipping rows whose raw baseline is flagged as a source error."""
    vals = [100.0 * (r.baseline_west_ha / r.baseline_correct_ha - 1) for r in rows if not r.baseline_flagged]
    if not vals:
        return math.nan, math.nan, math.nan
    return float(np.mean(vals)), float(min(vals)), float(max(vals))


def load_avoided(path) -> dict[str, float]:
    df = pd.read_csv(path, dtype={"project_id": str})
    missing = [c for c in ("project_id", "avoided_ha") if c not in df.columns]
    if missing:
        raise MissingColumn(path, missing)
    return {str(p): float(v) for p, v in zip(df["project_id"], df["avoided_ha"])}


def published_credit_rows() -> list[CreditLedgerRow]:
    """Ledger rows for the 17 credited projects of the audited study.

    Issued credits for Peru 2278 follow its current registry figure
    (3,002,760) rather than the zero in the study's own table.
    """
    with resources.files("reddsc.data").joinpath("registry_credits.csv").open() as fh:
        df = pd.read_csv(fh)
    return [
        ledger_row(r.project_id, r.avoided_ha, r.baseline_raw_ha, r.baseline_correct_ha,
                   r.expected_credits, r.issued_credits, bool(r.baseline_flagged))
        for r in df.itertuples()
    ]


def load_credit_inputs(meta_path, avoided_path) -> list[CreditLedgerRow]:
    return ledger_rows_from_meta(load_meta(meta_path), load_avoided(avoided_path))
