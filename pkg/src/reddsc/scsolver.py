"""Synthetic-control weight fitting.

Two estimators share one design:

* SCM: simplex-constrained least squares on training-year outcomes, with
  optional standardized covariate rows appended (weight ``covariate_weight``).
* ASCM: SCM weights plus a ridge correction on the same design rows,

      w_aug = w_scm + Dc^T (Dc Dc^T + lam I)^-1 (b - D w_scm)

  where ``D`` holds donors in columns and ``Dc`` is ``D`` centred across
  donors, so the correction sums to zero and ``sum(w_aug) == 1``.

``ridge_lambda`` is dimensionless: it multiplies the largest squared singular
value of ``Dc``. That keeps fits invariant to the units of the series.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    EmptyPool,
    IllConditioned,
    InsufficientTraining,
    SolverDiverged,
    YearOutOfDomain,
)
from .panel import SitePanel

__all__ = [
    "FitConfig",
    "ScFit",
    "fit",
    "fit_scm",
    "fit_ascm",
    "predict_counterfactual",
    "simplex_lstsq",
    "project_simplex",
    "ascm_correction",
    "DEFAULT_LAMBDA_GRID",
]

SCM = "scm"
ASCM = "ascm"
AUTO = "auto"

DEFAULT_LAMBDA_GRID = tuple(np.logspace(-6, 2, 33))


@dataclass(frozen=True)
class FitConfig:
    method: str = SCM
    train_end_year: int | None = None
    covariate_weight: float = 0.0
    ridge_lambda: float | str = AUTO
    solver_tol: float = 1e-9
    max_iter: int = 10_000

    def __post_init__(self):
        m = str(self.method).lower()
        if m not in (SCM, ASCM):
            raise ValueError(f"method must be 'scm' or 'ascm', got {self.method!r}")
        object.__setattr__(self, "method", m)
        if self.covariate_weight < 0:
            raise ValueError("covariate_weight must be nonnegative")
        lam = self.ridge_lambda
        if isinstance(lam, str):
            if lam.lower() != AUTO:
                raise ValueError(f"ridge_lambda must be a number or 'auto', got {lam!r}")
            object.__setattr__(self, "ridge_lambda", AUTO)
        elif not lam >= 0:
            raise ValueError("ridge_lambda must be nonnegative")
        if not self.solver_tol > 0 or int(self.max_iter) < 1:
            raise ValueError("solver_tol and max_iter must be positive")

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "train_end_year": self.train_end_year,
            "covariate_weight": self.covariate_weight,
            "ridge_lambda": self.ridge_lambda,
            "solver_tol": self.solver_tol,
            "max_iter": self.max_iter,
        }


@dataclass(frozen=True)
class ScFit:
    project_id: str
    donor_ids: tuple[str, ...]
    weights: np.ndarray
    method: str
    fitted_series: dict[int, float]
    train_rmspe: float
    config: FitConfig
    scm_weights: np.ndarray | None = None
    ridge_lambda: float | None = None
    kkt_residual: float = 0.0
    iterations: int = 0
    flags: tuple[str, ...] = field(default_factory=tuple)

    @property
    def years(self) -> tuple[int, ...]:
        return tuple(self.fitted_series)

    def to_dict(self) -> dict:
        return {
            "project_id": self.project_id,
            "method": self.method,
            "donor_ids": list(self.donor_ids),
            "weights": [float(x) for x in self.weights],
            "scm_weights": None if self.scm_weights is None else [float(x) for x in self.scm_weights],
            "ridge_lambda": self.ridge_lambda,
            "train_rmspe": self.train_rmspe,
            "kkt_residual": self.kkt_residual,
            "iterations": self.iterations,
            "flags": list(self.flags),
            "fitted_series": {str(y): v for y, v in self.fitted_series.items()},
            "config": self.config.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScFit":
        cfg = FitConfig(**d["config"])
        scm_w = d.get("scm_weights")
        return cls(
            project_id=d["project_id"],
            donor_ids=tuple(d["donor_ids"]),
            weights=np.asarray(d["weights"], dtype=float),
            method=d["method"],
            fitted_series={int(y): float(v) for y, v in d["fitted_series"].items()},
            train_rmspe=float(d["train_rmspe"]),
            config=cfg,
            scm_weights=None if scm_w is None else np.asarray(scm_w, dtype=float),
            ridge_lambda=d.get("ridge_lambda"),
            kkt_residual=float(d.get("kkt_residual", 0.0)),
            iterations=int(d.get("iterations", 0)),
            flags=tuple(d.get("flags", ())),
        )


# --------------------------------------------------------------------------
# simplex least squares


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    theta = css[rho] / (rho + 1)
    return np.maximum(v - theta, 0.0)


def _pg_residual(A, b, w, L):
    g = A.T @ (A @ w - b)
    return float(np.max(np.abs(w - project_simplex(w - g / L))))


def _null_basis(k: int) -> np.ndarray:
    # orthonormal basis of {v : sum(v) = 0}
    q, _ = np.linalg.qr(np.ones((k, 1)), mode="complete")
    return q[:, 1:]


def _eqp(A, b, free):
    """min ||A[:, free] v - b|| subject to sum(v) == 1 (minimum-norm when rank deficient)."""
    k = len(free)
    if k == 1:
        return np.ones(1)
    AF = A[:, free]
    v0 = np.full(k, 1.0 / k)
    N = _null_basis(k)
    z, *_ = np.linalg.lstsq(AF @ N, b - AF @ v0, rcond=None)
    return v0 + N @ z


def simplex_lstsq(A, b, tol: float = 1e-9, max_iter: int = 10_000, start=None):
    """Minimize ``||A w - b||^2`` over the probability simplex.

    Primal active-set iterations from ``start`` (uniform by default); each
    step solves the equality-constrained problem on the free set exactly.
    If the projected-gradient residual is still above ``tol`` afterwards,
    accelerated projected-gradient steps polish the answer.

    Returns ``(w, iterations, residual)`` where ``residual`` is the
    projected-gradient stationarity measure ``max|w - P(w - grad/L)|``.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    J = A.shape[1]
    scale = max(np.abs(A).max(initial=0.0), np.abs(b).max(initial=0.0))
    if scale == 0:
        return np.full(J, 1.0 / J), 0, 0.0
    A = A / scale
    b = b / scale
    L = max(np.linalg.norm(A, 2) ** 2, 1e-300)

    w = np.full(J, 1.0 / J) if start is None else project_simplex(np.asarray(start, dtype=float))
    free = [j for j in range(J) if w[j] > 0]
    tiny = 1e-15
    it = 0
    converged = False
    while it < max_iter:
        it += 1
        v = _eqp(A, b, free)
        if v.min() >= -tiny:
            w = np.zeros(J)
            w[free] = np.maximum(v, 0.0)
            w /= w.sum()
            out = [j for j in range(J) if j not in free]
            if not out:
                converged = True
                break
            g = A.T @ (A @ w - b)
            nu = g[free].mean()
            lam = (g[out] - nu) / L
            j = int(np.argmin(lam))
            if lam[j] >= -tol * 1e-3:
                converged = True
                break
            free = sorted(free + [out[j]])
        else:
            # move toward v until the first free coordinate hits zero
            wf = w[free]
            ratio = np.where(v < -tiny, wf / (wf - v), np.inf)
            blk = int(np.argmin(ratio))
            wf = wf + ratio[blk] * (v - wf)
            wf[blk] = 0.0
            keep = [i for i, x in enumerate(wf) if x > tiny]
            w = np.zeros(J)
            w[[free[i] for i in keep]] = wf[keep]
            w /= w.sum()
            free = [free[i] for i in keep]

    res = _pg_residual(A, b, w, L)
    if converged and res <= tol:
        return w, it, res

    # accelerated projected gradient (FISTA with restart)
    y, w_prev, tk = w.copy(), w.copy(), 1.0
    while it < max_iter:
        it += 1
        g = A.T @ (A @ y - b)
        w_new = project_simplex(y - g / L)
        tk1 = (1 + np.sqrt(1 + 4 * tk * tk)) / 2
        if np.dot(w_new - w_prev, y - w_new) > 0:
            tk1, y = 1.0, w_new.copy()
        else:
            y = w_new + (tk - 1) / tk1 * (w_new - w_prev)
        w_prev, tk = w_new, tk1
        if it % 10 == 0:
            res = _pg_residual(A, b, w_new, L)
            if res <= tol:
                return w_new, it, res
    raise SolverDiverged(f"simplex least squares did not reach tolerance {tol:g} in {max_iter} iterations "
                         f"(residual {res:.3g})")


# --------------------------------------------------------------------------
# design construction


@dataclass(frozen=True)
class _Design:
    years: list[int]
    train_idx: np.ndarray
    y_all: np.ndarray  # project, all years
    Y_all: np.ndarray  # donors in columns, all years
    D: np.ndarray  # training design rows (outcomes + weighted covariates)
    b: np.ndarray
    n_outcome_rows: int


def _common_years(project: SitePanel, donors: Sequence[SitePanel]) -> list[int]:
    years = set(project.years)
    for d in donors:
        years &= set(d.years)
    return sorted(years)


def _build_design(project: SitePanel, donors: Sequence[SitePanel], cfg: FitConfig) -> _Design:
    if not donors:
        raise EmptyPool(f"project {project.site_id!r}: no donors to fit")
    if cfg.train_end_year is None:
        raise ValueError("FitConfig.train_end_year must be set")
    years = _common_years(project, donors)
    train_idx = np.array([i for i, y in enumerate(years) if y <= cfg.train_end_year], dtype=int)
    if train_idx.size < 2:
        raise InsufficientTraining(
            f"project {project.site_id!r}: {train_idx.size} training year(s) up to {cfg.train_end_year}"
        )
    y_all = project.values(years)
    Y_all = np.column_stack([d.values(years) for d in donors])
    D = Y_all[train_idx]
    b = y_all[train_idx]
    if cfg.covariate_weight > 0:
        names = sorted(set(project.covariates).intersection(*(d.covariates for d in donors)))
        if names:
            Z = np.array([[d.covariates[k] for d in donors] for k in names])
            z = np.array([project.covariates[k] for k in names])
            mu = Z.mean(axis=1)
            sd = Z.std(axis=1)
            ok = sd > 0
            if ok.any():
                w = np.sqrt(cfg.covariate_weight)
                Zs = (Z[ok] - mu[ok, None]) / sd[ok, None]
                zs = (z[ok] - mu[ok]) / sd[ok]
                D = np.vstack([D, w * Zs])
                b = np.concatenate([b, w * zs])
    return _Design(years, train_idx, y_all, Y_all, D, b, int(train_idx.size))


def _rmse(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.sqrt(np.mean(x * x))) if x.size else float("nan")


def _scm_weights(des: _Design, cfg: FitConfig):
    J = des.D.shape[1]
    if not np.any(des.D[: des.n_outcome_rows]) and not np.any(des.b[: des.n_outcome_rows]):
        return np.full(J, 1.0 / J), 0, 0.0, ("degenerate_training",)
    w, it, res = simplex_lstsq(des.D, des.b, tol=cfg.solver_tol, max_iter=cfg.max_iter)
    return w, it, res, ()


def _make_fit(project, donors, des, cfg, w, method, **kw) -> ScFit:
    fitted = des.Y_all @ w
    gap = des.y_all[des.train_idx] - fitted[des.train_idx]
    return ScFit(
        project_id=project.site_id,
        donor_ids=tuple(d.site_id for d in donors),
        weights=w,
        method=method,
        fitted_series={y: float(v) for y, v in zip(des.years, fitted)},
        train_rmspe=_rmse(gap),
        config=cfg,
        **kw,
    )


def fit_scm(project: SitePanel, donors: Sequence[SitePanel], cfg: FitConfig) -> ScFit:
    """Nonnegative synthetic-control weights summing to one, fitted on years
    up to ``cfg.train_end_year``."""
    des = _build_design(project, donors, cfg)
    w, it, res, flags = _scm_weights(des, cfg)
    return _make_fit(project, donors, des, cfg, w, SCM, kkt_residual=res, iterations=it, flags=flags)


# --------------------------------------------------------------------------
# ridge augmentation


def _centered_svd(D):
    Dc = D - D.mean(axis=1, keepdims=True)
    U, s, Vt = np.linalg.svd(Dc, full_matrices=False)
    return U, s, Vt


def ascm_correction(D, residual, lam_rel: float, svd=None) -> np.ndarray:
    """Ridge correction to synthetic-control weights (sums to zero).

    ``lam_rel`` is relative to the largest squared singular value of the
    donor-centred design. Raises :class:`IllConditioned` for ``lam_rel == 0``
    when ``Dc Dc^T`` is singular.
    """
    D = np.asarray(D, dtype=float)
    U, s, Vt = svd if svd is not None else _centered_svd(D)
    smax = s[0] if s.size else 0.0
    if smax == 0:
        return np.zeros(D.shape[1])
    lam = lam_rel * smax * smax
    if lam == 0:
        rank_tol = smax * max(D.shape) * np.finfo(float).eps
        if D.shape[0] > s.size or np.any(s <= rank_tol):
            raise IllConditioned("ridge system is singular at lambda = 0; use a positive ridge_lambda")
        coef = 1.0 / s
    else:
        coef = s / (s * s + lam)
    return Vt.T @ (coef * (U.T @ residual))


def _select_lambda(des: _Design, cfg: FitConfig, grid: Sequence[float]) -> float:
    """Leave-one-year-out cross-validation over the training outcome rows."""
    n = des.n_outcome_rows
    if n < 3:
        return float(max(grid))
    _, s_full, _ = _centered_svd(des.D)
    errs = np.zeros(len(grid))
    for t in range(n):
        keep = np.array([i for i in range(des.D.shape[0]) if i != t])
        Dk, bk = des.D[keep], des.b[keep]
        if np.any(Dk[: n - 1]) or np.any(bk[: n - 1]):
            w, *_ = simplex_lstsq(Dk, bk, tol=cfg.solver_tol, max_iter=cfg.max_iter)
        else:
            w = np.full(Dk.shape[1], 1.0 / Dk.shape[1])
        r = bk - Dk @ w
        U, s, Vt = _centered_svd(Dk)
        # fold penalties share the full-window scale
        rel = (s_full[0] / s[0]) ** 2 if s[0] > 0 else 1.0
        for i, lam in enumerate(grid):
            c = ascm_correction(Dk, r, lam * rel, svd=(U, s, Vt))
            pred = des.D[t] @ (w + c)
            errs[i] += (des.b[t] - pred) ** 2
    best = errs.min()
    # ties resolve to the heaviest penalty
    cand = [lam for lam, e in zip(grid, errs) if e <= best * (1 + 1e-12) + 1e-300]
    return float(max(cand))


def fit_ascm(project: SitePanel, donors: Sequence[SitePanel], cfg: FitConfig,
             lambda_grid: Sequence[float] = DEFAULT_LAMBDA_GRID) -> ScFit:
    """Ridge-augmented synthetic control; weights may be negative."""
    des = _build_design(project, donors, cfg)
    w_scm, it, res, flags = _scm_weights(des, cfg)
    if cfg.ridge_lambda == AUTO:
        lam = _select_lambda(des, cfg, lambda_grid)
    else:
        lam = float(cfg.ridge_lambda)
    r = des.b - des.D @ w_scm
    corr = ascm_correction(des.D, r, lam)
    w = w_scm + corr
    return _make_fit(project, donors, des, cfg, w, ASCM, scm_weights=w_scm, ridge_lambda=lam,
                     kkt_residual=res, iterations=it, flags=flags)


def fit(project: SitePanel, donors: Sequence[SitePanel], cfg: FitConfig) -> ScFit:
    return fit_ascm(project, donors, cfg) if cfg.method == ASCM else fit_scm(project, donors, cfg)


def predict_counterfactual(fit: ScFit, years: Iterable[int]) -> dict[int, float]:
    years = list(years)
    bad = [y for y in years if y not in fit.fitted_series]
    if bad:
        raise YearOutOfDomain(bad, fit.years)
    return {y: fit.fitted_series[y] for y in years}
