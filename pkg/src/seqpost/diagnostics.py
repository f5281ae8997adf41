"""Numerical accuracy of posterior moments and of evidence estimates.

Group means of the J independent particle groups carry everything: the
numerical standard error of a moment is the standard error of the mean of
the J group means, and the marginal likelihood estimators are built from
per-group mean C-phase weights.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .particles import ModelSpec, ParticleSystem, WeightCollapseError, _centered_weighted_means

__all__ = [
    "MomentReport",
    "EvidenceReport",
    "nse_from_group_means",
    "rne",
    "moment_report",
    "log_mean_nse",
    "evidence_accumulate",
    "predictive_likelihood",
    "log_score",
    "pit",
]


@dataclass
class MomentReport:
    name: str
    t: int
    mean: float
    sd: float
    nse: float
    rne: float
    group_means: list[float]
    weighted: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EvidenceReport:
    cycle_log_group_means: list[list[float]]  # [cycle][group] log w_j(l-1)
    log_group_products: list[float]  # log w_j
    log_ml: float  # log w-bar
    log_ml_tilde: float  # log w-tilde
    nse_log_ml: float
    log_score: float | None = None
    nse_log_score: float | None = None
    t_burn: int | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def nse_from_group_means(group_means, N: int) -> tuple[float, float]:
    """Returns (v_hat, NSE) for a set of J group means of N particles each."""
    g = np.asarray(group_means, dtype=float)
    J = g.size
    if J < 2:
        raise ValueError("NSE needs at least two groups")
    ss = float(np.sum((g - g.mean()) ** 2))
    return N * ss / (J - 1), float(np.sqrt(ss / (J * (J - 1))))


def rne(values, vhat: float, log_weight=None) -> float:
    """Posterior variance estimate over all JN particles divided by ``vhat``.

    Returns NaN when ``vhat`` is zero (the function is constant across groups).
    """
    g = np.asarray(values, dtype=float)
    if not vhat > 0:
        return float("nan")
    return _population_variance(g, log_weight) / vhat


def _population_variance(g, log_weight=None) -> float:
    if log_weight is None:
        return float(np.var(g, ddof=1))
    lw = np.asarray(log_weight, dtype=float).ravel()
    w = np.exp(lw - lw.max())
    w /= w.sum()
    flat = g.ravel()
    m = np.dot(w, flat)
    n = flat.size
    return float(np.dot(w, (flat - m) ** 2) * n / (n - 1))


def moment_report(name: str, t: int, values, log_weight=None) -> MomentReport:
    """Moment summary for function values ``(J, N)``.

    With ``log_weight`` the group means are self-normalised weighted means.
    """
    g = np.asarray(values, dtype=float)
    J, N = g.shape
    weighted = log_weight is not None and not np.all(np.asarray(log_weight) == 0.0)
    if weighted:
        lw = np.asarray(log_weight, dtype=float)
        top = lw.max(axis=1, keepdims=True)
        if not np.all(np.isfinite(top)):
            raise WeightCollapseError(f"group {int(np.flatnonzero(~np.isfinite(top[:, 0]))[0])} has zero total weight")
        group_means, _ = _centered_weighted_means(np.exp(lw - top), g)
        var = _population_variance(g, lw)
    else:
        group_means = g.mean(axis=1)
        var = float(np.var(g, ddof=1))
    vhat, nse = nse_from_group_means(group_means, N)
    return MomentReport(
        name=name, t=int(t), mean=float(group_means.mean()), sd=float(np.sqrt(var)),
        nse=nse, rne=var / vhat if vhat > 0 else float("nan"),
        group_means=[float(x) for x in group_means], weighted=bool(weighted),
    )


def log_mean_nse(log_values) -> tuple[float, float]:
    """log of the mean of exp(log_values) and the delta-method NSE of that log.

    With a_j = exp(x_j - max x), the NSE of log(mean_j exp(x_j)) is
    sqrt(sum (a_j - a_bar)^2 / (J (J - 1))) / a_bar; the common factor
    exp(max x) cancels between numerator and denominator, so nothing overflows.
    """
    x = np.asarray(log_values, dtype=float)
    J = x.size
    top = x.max()
    if not np.isfinite(top):
        return float("-inf"), float("nan")
    a = np.exp(x - top)
    abar = a.mean()
    nse = np.sqrt(np.sum((a - abar) ** 2) / (J * (J - 1))) / abar if J > 1 else float("nan")
    return float(top + np.log(abar)), float(nse)


def _cycle_rows(trace) -> list[int]:
    cycles = trace.cycle_bounds()
    if not cycles:
        raise ValueError("trace has no completed cycles")
    prev = 0
    for start, end in cycles:
        if start != prev or end <= start:
            raise ValueError(f"trace cycles are not contiguous at t={start}")
        prev = end
    return [end - 1 for _, end in cycles]


def evidence_accumulate(trace, t_burn: int | None = None) -> EvidenceReport:
    """Marginal likelihood estimators and their NSE from a run trace."""
    lgm = np.asarray(trace.log_group_mean_weight, dtype=float)
    per_cycle = lgm[_cycle_rows(trace)]  # (L, J)
    group_products = per_cycle.sum(axis=0)
    log_ml, nse = log_mean_nse(group_products)
    # same log-mean-exp as w-bar, so the two agree to the bit when L = 1
    log_tilde = float(sum(log_mean_nse(row)[0] for row in per_cycle))
    report = EvidenceReport(
        cycle_log_group_means=per_cycle.tolist(),
        log_group_products=group_products.tolist(),
        log_ml=log_ml, log_ml_tilde=log_tilde, nse_log_ml=nse,
    )
    if t_burn is not None:
        report.log_score, report.nse_log_score = log_score(trace, t_burn)
        report.t_burn = int(t_burn)
    return report


def _group_log_products_at(trace, t: int) -> np.ndarray:
    """Per-group log of the product of cycle mean weights through observation t."""
    J = np.asarray(trace.log_group_mean_weight).shape[1]
    if t == 0:
        return np.zeros(J)
    lgm = np.asarray(trace.log_group_mean_weight, dtype=float)
    total = np.zeros(J)
    for start, end in trace.cycle_bounds():
        if end <= t:
            total += lgm[end - 1]
        elif start < t:
            total += lgm[t - 1]
    return total


def log_score(trace, t_burn: int) -> tuple[float, float]:
    """log p(y_{t_burn+1:T} | y_{1:t_burn}) and its delta-method NSE.

    The estimate is log w-bar(T) - log w-bar(t_burn). Its NSE accounts for the
    correlation of the two group-level products across the J groups.
    """
    T = np.asarray(trace.log_group_mean_weight).shape[0]
    if not 0 <= t_burn < T:
        raise ValueError(f"burn-in {t_burn} outside [0, {T})")
    a_log = _group_log_products_at(trace, T)
    b_log = _group_log_products_at(trace, t_burn)
    J = a_log.size
    a = np.exp(a_log - a_log.max())
    b = np.exp(b_log - b_log.max())
    abar, bbar = a.mean(), b.mean()
    value = (a_log.max() + np.log(abar)) - (b_log.max() + np.log(bbar))
    # delta method for log(A) - log(B) with A, B means of J i.i.d. group pairs
    da = (a - abar) / abar
    db = (b - bbar) / bbar
    var = np.sum((da - db) ** 2) / (J * (J - 1))
    return float(value), float(np.sqrt(var))


def predictive_likelihood(trace, t: int, s: int):
    """p(y_{t+1:s} | y_{1:t}) from the C-phase weights of the cycle starting at t.

    Returns ``(value, nse, log_value, nse_log)``.
    """
    for start, end in trace.cycle_bounds():
        if start == t and t < s <= end:
            break
    else:
        raise ValueError(f"(t={t}, s={s}) does not lie within a single recorded cycle")
    x = np.asarray(trace.log_group_mean_weight, dtype=float)[s - 1]
    log_value, nse_log = log_mean_nse(x)
    value = float(np.exp(log_value))
    return value, value * nse_log, log_value, nse_log


def pit(system: ParticleSystem, model: ModelSpec, y_s: float, streams, F=None, aux_draws: int = 1) -> float:
    """Weighted fraction of simulated F(Y_s) at or below F(y_s).

    ``system`` must hold the weights w(s-1); ``streams`` is a ``StreamBatch``
    covering the whole population.
    """
    try:
        draws = model.simulate_next(system.flat_theta(), system.flat_state(), streams, aux_draws)
    except NotImplementedError as exc:
        raise ValueError(str(exc)) from exc
    if F is None:
        below = draws <= y_s
    else:
        below = F(draws) <= F(y_s)
    frac = below.mean(axis=1)
    lw = system.log_weight.ravel()
    w = np.exp(lw - lw.max())
    return float(np.dot(w, frac) / w.sum())
