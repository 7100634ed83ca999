"""Bivariate Poisson goal model and weighted maximum-likelihood team strengths.

The score of a match is modelled as a pair of correlated Poisson counts:
home and away goals share a common component with mean ``lambda_c``, so

    P(X = x, Y = y) = sum_k Pois(lambda_c, k) Pois(lambda_home, x - k)
                            Pois(lambda_away, y - k)

with ``lambda_c = 0`` reducing to two independent Poissons.  Expected goals
come from a log link on team strength differences, a shared intercept and a
home effect.  Strengths are identified by constraining them to sum to zero.
"""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import gammaln, logsumexp

__all__ = [
    "MatchRecord",
    "WeightScheme",
    "ScoreParams",
    "StrengthModel",
    "FitConvergenceError",
    "bivariate_poisson_pmf",
    "bivariate_poisson_logpmf",
    "score_matrix",
    "outcome_probs",
    "match_weight",
    "log_likelihood",
    "fit",
]

MIN_LAMBDA_C = 1e-8  # below this the common component is reported as 0


class FitConvergenceError(RuntimeError):
    """Raised when the optimizer stops without convergence.

    The best iterate reached so far is attached as ``.model`` so callers can
    inspect or, at their own risk, use it.
    """

    def __init__(self, message: str, model: "StrengthModel", n_iter: int):
        super().__init__(message)
        self.model = model
        self.n_iter = n_iter


@dataclass(frozen=True)
class MatchRecord:
    """One fixture, played (both goal counts set) or scheduled (both absent)."""

    date: dt.date | None
    home_team: str
    away_team: str
    home_goals: int | None = None
    away_goals: int | None = None
    neutral_venue: bool = False
    round: int | None = None

    def __post_init__(self):
        if self.home_team == self.away_team:
            raise ValueError(f"a team cannot play itself: {self.home_team!r}")
        if (self.home_goals is None) != (self.away_goals is None):
            raise ValueError(
                f"{self.home_team} vs {self.away_team}: goals must be set for "
                "both teams or neither"
            )
        if self.home_goals is not None:
            if self.home_goals < 0 or self.away_goals < 0:
                raise ValueError(
                    f"{self.home_team} vs {self.away_team}: negative goals"
                )

    @property
    def played(self) -> bool:
        return self.home_goals is not None


@dataclass(frozen=True)
class WeightScheme:
    """Per-match likelihood weights.

    ``uniform`` weighs every match 1.  ``decay`` halves a match's weight for
    every ``half_period_days`` between its date and ``reference_date``.
    """

    mode: str = "uniform"
    half_period_days: float = 390.0
    reference_date: dt.date | None = None

    def __post_init__(self):
        if self.mode not in ("uniform", "decay"):
            raise ValueError(f"unknown weight mode {self.mode!r}")
        if not self.half_period_days > 0:
            raise ValueError("half_period_days must be positive")
        if self.mode == "decay" and self.reference_date is None:
            raise ValueError("decay weighting needs a reference_date")

    @classmethod
    def uniform(cls) -> "WeightScheme":
        return cls(mode="uniform")

    @classmethod
    def decay(cls, reference_date: dt.date, half_period_days: float = 390.0) -> "WeightScheme":
        return cls(mode="decay", half_period_days=half_period_days,
                   reference_date=reference_date)


def match_weight(match: MatchRecord, scheme: WeightScheme) -> float:
    """Weight of one match under a scheme, in (0, 1]."""
    if scheme.mode == "uniform":
        return 1.0
    if match.date is None:
        raise ValueError("match has no date; decay weighting requires one")
    age_days = (scheme.reference_date - match.date).days
    if age_days < 0:
        raise ValueError(
            f"match on {match.date} is after the reference date "
            f"{scheme.reference_date}"
        )
    return 0.5 ** (age_days / scheme.half_period_days)


@dataclass(frozen=True)
class ScoreParams:
    """Parameters of the score distribution for a single match."""

    lambda_home: float
    lambda_away: float
    lambda_c: float = 0.0

    def __post_init__(self):
        for name in ("lambda_home", "lambda_away", "lambda_c"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and nonnegative, got {v}")


@dataclass(frozen=True)
class StrengthModel:
    """Fitted team-strength model.

    ``strengths`` from :func:`fit` sum to zero (only differences enter the
    link, so the sum is fixed for identifiability).  ``log_likelihood`` is
    the weighted log-likelihood at the fitted parameters.
    """

    strengths: dict[str, float]
    intercept: float
    home_effect: float
    lambda_c: float
    fitted_at: dt.date | None = None
    log_likelihood: float = math.nan

    def __post_init__(self):
        if not self.strengths:
            raise ValueError("model has no teams")
        if not (math.isfinite(self.lambda_c) and self.lambda_c >= 0):
            raise ValueError(f"lambda_c must be finite and nonnegative, got {self.lambda_c}")
        for v in (self.intercept, self.home_effect):
            if not math.isfinite(v):
                raise ValueError("intercept and home_effect must be finite")

    @property
    def teams(self) -> tuple[str, ...]:
        return tuple(sorted(self.strengths))

    def expected_goals(self, home_team: str, away_team: str,
                       neutral: bool = False) -> ScoreParams:
        """Score-distribution parameters for one fixture.

        log lambda_home = intercept + (r_home - r_away) + home_effect (unless
        neutral); the away side mirrors the difference and never gets the
        home effect.
        """
        try:
            r_home = self.strengths[home_team]
            r_away = self.strengths[away_team]
        except KeyError as exc:
            raise ValueError(f"unknown team {exc.args[0]!r}") from None
        diff = r_home - r_away
        home_bonus = 0.0 if neutral else self.home_effect
        return ScoreParams(
            lambda_home=math.exp(self.intercept + diff + home_bonus),
            lambda_away=math.exp(self.intercept - diff),
            lambda_c=self.lambda_c,
        )


def _poisson_logpmf(n: np.ndarray, lam: float) -> np.ndarray:
    n = np.asarray(n, dtype=float)
    if lam == 0.0:
        return np.where(n == 0, 0.0, -np.inf)
    return n * math.log(lam) - lam - gammaln(n + 1.0)


def _check_count(name: str, value) -> int:
    v = int(value)
    if v != value or v < 0:
        raise ValueError(f"{name} must be a nonnegative integer, got {value!r}")
    return v


def bivariate_poisson_logpmf(x, y, params: ScoreParams) -> float:
    """log P(home goals = x, away goals = y).

    Evaluated in log space by summing over the shared component, which keeps
    the inner sum finite even for large goal counts.
    """
    x = _check_count("x", x)
    y = _check_count("y", y)
    k = np.arange(min(x, y) + 1)
    terms = (
        _poisson_logpmf(k, params.lambda_c)
        + _poisson_logpmf(x - k, params.lambda_home)
        + _poisson_logpmf(y - k, params.lambda_away)
    )
    return float(logsumexp(terms))


def bivariate_poisson_pmf(x, y, params: ScoreParams) -> float:
    """P(home goals = x, away goals = y), in [0, 1]."""
    return math.exp(bivariate_poisson_logpmf(x, y, params))


def score_matrix(params: ScoreParams, max_goals: int) -> np.ndarray:
    """Joint score probabilities on the grid 0..max_goals x 0..max_goals.

    Entry [x, y] equals ``bivariate_poisson_pmf(x, y, params)``; the matrix
    is built by convolving the shared component with the two independent
    marginals, which is much faster than per-cell evaluation.
    """
    if max_goals < 0:
        raise ValueError("max_goals must be nonnegative")
    g = max_goals + 1
    p_home = np.exp(_poisson_logpmf(np.arange(g), params.lambda_home))
    p_away = np.exp(_poisson_logpmf(np.arange(g), params.lambda_away))
    p_common = np.exp(_poisson_logpmf(np.arange(g), params.lambda_c))
    out = np.zeros((g, g))
    for k in range(g):
        if p_common[k] == 0.0:
            continue
        out[k:, k:] += p_common[k] * np.outer(p_home[: g - k], p_away[: g - k])
    return out


def outcome_probs(params: ScoreParams, max_goals: int | None = None) -> tuple[float, float, float]:
    """(home win, draw, away win) probabilities for one fixture.

    The score grid is truncated far into the Poisson tail and renormalized,
    so the triple sums to 1 exactly.
    """
    if max_goals is None:
        mu = max(params.lambda_home, params.lambda_away) + params.lambda_c
        max_goals = max(12, int(math.ceil(mu + 10.0 * math.sqrt(mu) + 10.0)))
    grid = score_matrix(params, max_goals)
    grid /= grid.sum()
    home = float(np.tril(grid, -1).sum())
    draw = float(np.trace(grid))
    away = float(np.triu(grid, 1).sum())
    return home, draw, away


# --- likelihood internals -------------------------------------------------

class _FitData:
    """Match data flattened to arrays for likelihood evaluation."""

    def __init__(self, matches, teams: list[str], scheme: WeightScheme):
        index = {t: i for i, t in enumerate(teams)}
        self.teams = teams
        self.home = np.array([index[m.home_team] for m in matches], dtype=np.intp)
        self.away = np.array([index[m.away_team] for m in matches], dtype=np.intp)
        self.x = np.array([m.home_goals for m in matches], dtype=float)
        self.y = np.array([m.away_goals for m in matches], dtype=float)
        self.home_ind = np.array([0.0 if m.neutral_venue else 1.0 for m in matches])
        self.w = np.array([match_weight(m, scheme) for m in matches])
        self.n_teams = len(teams)
        self.k_max = int(np.minimum(self.x, self.y).max(initial=0))
        self.log_fact = gammaln(self.x + 1.0) + gammaln(self.y + 1.0)


def _loglik_and_grad(data: _FitData, strengths: np.ndarray, intercept: float,
                     home_effect: float, lambda_c: float):
    """Weighted log-likelihood and its gradient.

    Returns ``(ll, g_strengths, g_intercept, g_home, g_log_lambda_c)`` where
    the last component is the derivative with respect to log(lambda_c).
    """
    diff = strengths[data.home] - strengths[data.away]
    lam1 = np.exp(intercept + diff + home_effect * data.home_ind)
    lam2 = np.exp(intercept - diff)

    # Inner sum over the shared component and its mean, via the recurrence
    # t_k = t_{k-1} (x-k+1)(y-k+1) rho / k with rho = lambda_c/(lam1 lam2);
    # terms vanish exactly once k exceeds min(x, y).
    with np.errstate(over="ignore", invalid="ignore"):
        rho = lambda_c / (lam1 * lam2)
        t = np.ones_like(rho)
        s = np.ones_like(rho)
        ks = np.zeros_like(rho)
        for k in range(1, data.k_max + 1):
            t = t * (data.x - k + 1.0) * (data.y - k + 1.0) * rho / k
            s += t
            ks += k * t
        kappa = np.where(s > 0, ks / np.where(s > 0, s, 1.0), 0.0)
        ll_terms = (
            -(lam1 + lam2 + lambda_c)
            + data.x * np.log(lam1)
            + data.y * np.log(lam2)
            - data.log_fact
            + np.log(s)
        )
        ll = float(np.dot(data.w, ll_terms))

    if not math.isfinite(ll):
        return -math.inf, np.zeros(data.n_teams), 0.0, 0.0, 0.0

    a = data.x - kappa - lam1
    b = data.y - kappa - lam2
    wa = data.w * a
    wb = data.w * b
    g_strengths = (
        np.bincount(data.home, weights=wa - wb, minlength=data.n_teams)
        + np.bincount(data.away, weights=wb - wa, minlength=data.n_teams)
    )
    g_intercept = float(np.sum(wa + wb))
    g_home = float(np.dot(wa, data.home_ind))
    g_log_c = float(np.dot(data.w, kappa) - lambda_c * np.sum(data.w))
    return ll, g_strengths, g_intercept, g_home, g_log_c


def _validate_played(matches) -> list[MatchRecord]:
    matches = list(matches)
    if not matches:
        raise ValueError("no matches given")
    for m in matches:
        if not m.played:
            raise ValueError(f"{m.home_team} vs {m.away_team} has no result")
    return matches


def log_likelihood(matches, model: StrengthModel, scheme: WeightScheme | None = None) -> float:
    """Weighted log-likelihood of played matches under a model."""
    scheme = scheme or WeightScheme.uniform()
    matches = _validate_played(matches)
    teams = sorted({t for m in matches for t in (m.home_team, m.away_team)})
    missing = [t for t in teams if t not in model.strengths]
    if missing:
        raise ValueError(f"model does not cover: {', '.join(missing)}")
    data = _FitData(matches, teams, scheme)
    r = np.array([model.strengths[t] for t in teams])
    ll, *_ = _loglik_and_grad(data, r, model.intercept, model.home_effect,
                              model.lambda_c)
    return ll


def fit(matches, teams=None, scheme: WeightScheme | None = None, *,
        max_iter: int = 500, ftol: float = 1e-9, gtol: float = 1e-6) -> StrengthModel:
    """Maximum-likelihood team strengths from played matches.

    Optimizes n-1 free strengths (the last is minus their sum), the
    intercept, the home effect and log(lambda_c) with L-BFGS-B, stopping on
    relative improvement below ``ftol``, gradient infinity-norm below
    ``gtol`` or ``max_iter`` iterations.  A common component estimated
    at the boundary is reported as exactly 0.

    Raises ``ValueError`` if any team has no played match (its strength
    would be unidentifiable) and ``FitConvergenceError``, carrying the best
    iterate, if the optimizer stops without convergence.
    """
    scheme = scheme or WeightScheme.uniform()
    matches = _validate_played(matches)
    seen = {t for m in matches for t in (m.home_team, m.away_team)}
    if teams is None:
        teams = sorted(seen)
    else:
        teams = sorted(teams)
        unknown = sorted(seen - set(teams))
        if unknown:
            raise ValueError(f"matches mention teams outside the team set: "
                             f"{', '.join(unknown)}")
    idle = sorted(set(teams) - seen)
    if idle:
        raise ValueError(
            f"no played matches for: {', '.join(idle)}; "
            "their strengths are unidentifiable"
        )
    if len(teams) < 2:
        raise ValueError("need at least two teams")

    data = _FitData(matches, teams, scheme)
    n = len(teams)

    def unpack(theta):
        r_free = theta[: n - 1]
        r = np.append(r_free, -r_free.sum())
        return r, theta[n - 1], theta[n], theta[n + 1]

    def objective(theta):
        r, intercept, home_effect, log_c = unpack(theta)
        ll, g_r, g_b0, g_h, g_logc = _loglik_and_grad(
            data, r, intercept, home_effect, math.exp(log_c))
        if not math.isfinite(ll):
            return math.inf, np.zeros_like(theta)
        grad = np.empty_like(theta)
        grad[: n - 1] = g_r[:-1] - g_r[-1]
        grad[n - 1] = g_b0
        grad[n] = g_h
        grad[n + 1] = g_logc
        return -ll, -grad

    goals_per_team = float(data.x.sum() + data.y.sum()) / (2.0 * len(matches))
    x0 = np.zeros(n + 2)
    x0[n - 1] = math.log(max(goals_per_team, 0.05))
    x0[n] = 0.1
    x0[n + 1] = math.log(0.05)
    bounds = [(None, None)] * (n + 1) + [(math.log(1e-13), None)]

    res = minimize(objective, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                   options={"maxiter": max_iter, "ftol": ftol, "gtol": gtol})

    r, intercept, home_effect, log_c = unpack(res.x)
    lambda_c = math.exp(log_c)
    if lambda_c < MIN_LAMBDA_C:
        lambda_c = 0.0
    dates = [m.date for m in matches if m.date is not None]
    fitted_at = scheme.reference_date or (max(dates) if dates else None)
    ll_final, *_ = _loglik_and_grad(data, r, intercept, home_effect, lambda_c)
    model = StrengthModel(
        strengths={t: float(r[i]) for i, t in enumerate(teams)},
        intercept=float(intercept),
        home_effect=float(home_effect),
        lambda_c=lambda_c,
        fitted_at=fitted_at,
        log_likelihood=ll_final,
    )
    if not res.success:
        raise FitConvergenceError(
            f"fit did not converge after {res.nit} iterations: "
            f"{res.message}", model=model, n_iter=int(res.nit))
    return model
