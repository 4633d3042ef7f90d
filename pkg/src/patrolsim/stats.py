"""OLS regression, Pearson/Spearman correlations, and Student-t p-values
for the neighborhood-level socioeconomic analysis.

The regression models pooled per-neighborhood detection rate on %Black,
median income (raw dollars), and poverty rate, with an intercept.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import betainc

from .ingest import Neighborhood
from .simulate import MonthRunResult

RANK_DEFICIENCY_TOL = 1e-10


@dataclass(frozen=True)
class NeighborhoodObservation:
    neighborhood_id: str
    city: str
    year: int
    mode: str
    detection_rate: float
    pct_black: float
    pct_white: float
    median_income: float
    poverty_rate: float


@dataclass(frozen=True)
class OlsFit:
    coefficients: np.ndarray
    std_errors: np.ndarray
    t_stats: np.ndarray
    p_values: np.ndarray
    r_squared: float
    dof: int


@dataclass(frozen=True)
class CorrelationResult:
    pearson_r: float
    pearson_p: float
    spearman_rho: float
    spearman_p: float


class RankDeficientError(ValueError):
    def __init__(self, column: int):
        super().__init__(f"design matrix is rank deficient at column {column}")
        self.column = column


def student_t_cdf(t: float, dof: int) -> float:
    """CDF of Student's t via the regularized incomplete beta function."""
    if dof < 1:
        raise ValueError("dof must be >= 1")
    if t == 0.0:
        return 0.5
    x = dof / (dof + t * t)
    tail = 0.5 * float(betainc(dof / 2.0, 0.5, x))
    return 1.0 - tail if t > 0 else tail


def _two_sided_p(t: float, dof: int) -> float:
    return 2.0 * student_t_cdf(-abs(t), dof)


def _check_rank(x: np.ndarray) -> None:
    """Greedy Gram-Schmidt on unit-normalized columns; reports the first
    column whose residual drops below the pivot threshold."""
    n, k = x.shape
    basis: list[np.ndarray] = []
    for j in range(k):
        col = x[:, j].astype(float)
        norm0 = np.linalg.norm(col)
        if norm0 == 0.0:
            raise RankDeficientError(j)
        col = col / norm0
        for b in basis:
            col = col - (b @ col) * b
        resid = np.linalg.norm(col)
        if resid < RANK_DEFICIENCY_TOL:
            raise RankDeficientError(j)
        basis.append(col / resid)


def ols_fit(x: np.ndarray, y: np.ndarray) -> OlsFit:
    """Least squares via QR, with classical standard errors and t tests.

    x must already include the intercept column.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n, k = x.shape
    if n <= k:
        raise ValueError(f"need more observations ({n}) than regressors ({k})")
    _check_rank(x)

    q, r = np.linalg.qr(x)
    beta = np.linalg.solve(r, q.T @ y)
    resid = y - x @ beta
    dof = n - k
    sigma2 = float(resid @ resid) / dof
    r_inv = np.linalg.solve(r, np.eye(k))
    cov = sigma2 * (r_inv @ r_inv.T)
    se = np.sqrt(np.diag(cov))
    with np.errstate(divide="ignore"):
        t_stats = np.where(se > 0, beta / se, np.inf)
    p_values = np.array([_two_sided_p(float(t), dof) for t in t_stats])
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r_squared = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    return OlsFit(beta, se, t_stats, p_values, r_squared, dof)


def _rankdata(x: np.ndarray) -> np.ndarray:
    """Average ranks, ties sharing the mean rank."""
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x), dtype=float)
    i = 0
    sorted_x = x[order]
    while i < len(x):
        j = i
        while j + 1 < len(x) and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def pearson(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Product-moment correlation and its two-sided t-test p-value."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(x)
    if n < 3:
        raise ValueError("need at least 3 observations")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = float(xc @ xc)
    sy = float(yc @ yc)
    if sx == 0.0 or sy == 0.0:
        raise ValueError("correlation undefined for a constant vector")
    r = float(xc @ yc) / float(np.sqrt(sx * sy))
    r = max(-1.0, min(1.0, r))
    if abs(r) == 1.0:
        return r, 0.0
    t = r * np.sqrt((n - 2) / (1.0 - r * r))
    return r, _two_sided_p(float(t), n - 2)


def spearman(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Rank correlation: Pearson on average-ranked data."""
    return pearson(_rankdata(np.asarray(x, dtype=float)),
                   _rankdata(np.asarray(y, dtype=float)))


def correlate(x: np.ndarray, y: np.ndarray) -> CorrelationResult:
    r, rp = pearson(x, y)
    rho, rhop = spearman(x, y)
    return CorrelationResult(r, rp, rho, rhop)


def build_neighborhood_dataset(results: list[MonthRunResult],
                               neighborhoods: dict[str, Neighborhood],
                               expected: bool = False,
                               ) -> tuple[list[NeighborhoodObservation], int]:
    """One observation per (neighborhood, city, year, mode) with that unit's
    pooled detection rate across months; zero-crime units are excluded.

    Returns (observations, excluded_count).
    """
    pooled: dict[tuple[str, str, int, str], list[float]] = {}
    for res in results:
        for o in res.outcomes:
            key = (o.neighborhood_id, res.city, res.year, res.mode)
            pooled.setdefault(key, []).append(
                o.detection_prob if expected else float(o.detected))
    observations = []
    excluded = 0
    for (nb_id, city, year, mode), hits in sorted(pooled.items()):
        nb = neighborhoods.get(nb_id)
        if nb is None or not hits:
            excluded += 1
            continue
        observations.append(NeighborhoodObservation(
            neighborhood_id=nb_id, city=city, year=year, mode=mode,
            detection_rate=sum(hits) / len(hits),
            pct_black=nb.pct_black, pct_white=nb.pct_white,
            median_income=nb.median_income, poverty_rate=nb.poverty_rate))
    return observations, excluded


def regression_design(observations: list[NeighborhoodObservation],
                      ) -> tuple[np.ndarray, np.ndarray]:
    x = np.array([[1.0, o.pct_black, o.median_income, o.poverty_rate]
                  for o in observations])
    y = np.array([o.detection_rate for o in observations])
    return x, y


def significance_stars(p: float) -> str:
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""


REGRESSION_VARIABLES = ("Intercept", "pct_black", "median_income", "poverty_rate")
CORRELATION_PREDICTORS = ("pct_black", "pct_white", "median_income", "poverty_rate")


def regression_csv(fit: OlsFit) -> str:
    lines = ["variable,coefficient,se,t,p,stars"]
    for name, b, se, t, p in zip(REGRESSION_VARIABLES, fit.coefficients,
                                 fit.std_errors, fit.t_stats, fit.p_values):
        lines.append(f"{name},{b!r},{se!r},{float(t)!r},{p!r},"
                     f"{significance_stars(p)}")
    return "\n".join(lines) + "\n"


def correlations_csv(observations: list[NeighborhoodObservation]) -> str:
    rates = np.array([o.detection_rate for o in observations])
    lines = ["predictor,pearson_r,pearson_p,spearman_rho,spearman_p"]
    for name in CORRELATION_PREDICTORS:
        values = np.array([getattr(o, name) for o in observations])
        c = correlate(values, rates)
        lines.append(f"{name},{c.pearson_r!r},{c.pearson_p!r},"
                     f"{c.spearman_rho!r},{c.spearman_p!r}")
    return "\n".join(lines) + "\n"
