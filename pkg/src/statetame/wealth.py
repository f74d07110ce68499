"""Wealth, income and portfolio structures along simulated flows.

Portfolio holdings ``pi`` are dollar amounts in the ``n`` stocks; the bond
holding ``pi_0 = X - pi' 1`` is always derived.  Wealth is advanced with an
Euler step of the discounted wealth equation using left-point coefficients,
holdings and income.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ExplosionError, InvalidInputError
from .flow import FlowPath, step_coefficients
from .market import MarketSpec, risk_price_from

RuleFn = Callable[[np.ndarray, np.ndarray, float], np.ndarray]
DEFAULT_FLOOR = -1e6


@dataclass(frozen=True)
class PortfolioRule:
    """Holdings and income as functions of ``(x, p, t)``.

    ``pi`` returns ``(N, n)`` dollar holdings; ``b_gamma`` returns income
    drift ``(N,)`` and ``sigma_gamma`` income volatility ``(N, d)``.  Missing
    income functions mean no income.
    """

    pi: RuleFn
    b_gamma: Optional[RuleFn] = None
    sigma_gamma: Optional[RuleFn] = None

    @classmethod
    def zero(cls, n: int) -> "PortfolioRule":
        return cls(lambda x, p, t: np.zeros((np.shape(x)[0], n)))

    @property
    def self_financed(self) -> bool:
        return self.b_gamma is None and self.sigma_gamma is None


@dataclass(frozen=True, eq=False)
class WealthIncomePath:
    """Wealth ensemble on a flow grid.

    ``pi`` and ``dGamma`` are per interval (``steps`` entries); ``X``,
    ``Gamma``, ``G`` and ``Y`` are per grid time.  ``G`` is accumulated from
    the portfolio gains directly; :func:`gain_in_excess` recomputes it from
    wealth and income.
    """

    flow: FlowPath
    x: float
    X: np.ndarray
    Gamma: np.ndarray
    dGamma: np.ndarray
    G: np.ndarray
    Y: np.ndarray
    pi: np.ndarray

    @property
    def times(self) -> np.ndarray:
        return self.flow.times

    @property
    def pi0(self) -> np.ndarray:
        return self.X[:, :-1] - self.pi.sum(axis=2)


def _per_path(value, shape):
    return np.broadcast_to(np.asarray(value, dtype=float), shape)


def simulate_wealth(m: MarketSpec, flow: FlowPath, rule: PortfolioRule, x: float) -> WealthIncomePath:
    """Euler scheme for ``B^{-1} X = x + int B^{-1} (dGamma + pi' sigma dW + pi' (b + delta - r 1) du)``."""
    if flow.any_exploded:
        raise ExplosionError("flow ensemble contains exploded paths", flow.first_explosion())
    N, steps = flow.n_paths, flow.grid.steps
    times, dts, inc = flow.times, flow.grid.dt, flow.noise.increments
    B = flow.B
    X = np.empty((N, steps + 1))
    Gamma = np.zeros((N, steps + 1))
    dGamma = np.zeros((N, steps))
    G = np.zeros((N, steps + 1))
    Y = np.empty((N, steps + 1))
    PI = np.empty((N, steps, m.n))
    X[:, 0] = x
    Y[:, 0] = x
    disc = np.full(N, float(x))  # B^{-1} X
    disc_gain = np.zeros(N)  # int B^{-1} (portfolio gains)
    deflated_income = np.zeros(N)  # int H dGamma
    for i in range(steps):
        t, dt, dW = times[i], dts[i], inc[:, i]
        P = flow.P[:, i]
        coef, _ = step_coefficients(m, P, t)
        pi = _per_path(rule.pi(X[:, i], P, t), (N, m.n))
        dg = np.zeros(N)
        if rule.b_gamma is not None:
            dg = dg + _per_path(rule.b_gamma(X[:, i], P, t), (N,)) * dt
        if rule.sigma_gamma is not None:
            sg = _per_path(rule.sigma_gamma(X[:, i], P, t), (N, m.d))
            dg = dg + np.einsum("ij,ij->i", sg, dW)
        vol = np.broadcast_to(coef.sigma, (N, m.n, m.d))
        excess = np.broadcast_to(coef.excess, (N, m.n))
        gain = np.einsum("ik,ikj,ij->i", pi, vol, dW) + np.einsum("ik,ik->i", pi, excess) * dt
        disc = disc + (dg + gain) / B[:, i]
        disc_gain = disc_gain + gain / B[:, i]
        deflated_income = deflated_income + flow.H[:, i] * dg
        X[:, i + 1] = B[:, i + 1] * disc
        G[:, i + 1] = B[:, i + 1] * disc_gain
        Gamma[:, i + 1] = Gamma[:, i] + dg
        dGamma[:, i] = dg
        Y[:, i + 1] = flow.H[:, i + 1] * X[:, i + 1] - deflated_income
        PI[:, i] = pi
        bad = ~np.isfinite(X[:, i + 1])
        if np.any(bad):
            raise ExplosionError("wealth became non-finite", times[i + 1])
    return WealthIncomePath(flow=flow, x=float(x), X=X, Gamma=Gamma, dGamma=dGamma, G=G, Y=Y, pi=PI)


def gain_in_excess(path: WealthIncomePath) -> np.ndarray:
    """``G = X - x B - B int B^{-1} dGamma`` with the same left-point quadrature."""
    B = path.flow.B
    banked = np.zeros_like(B)
    np.cumsum(path.dGamma / B[:, :-1], axis=1, out=banked[:, 1:])
    return path.X - path.x * B - B * banked


def arbitrage_portfolio(m: MarketSpec) -> PortfolioRule:
    """Hold ``pi = kappa(p, t)``: self-financed, with ``G = B int B^{-1} kappa' kappa du``."""

    def pi(x, p, t):
        rp = risk_price_from(m.coefficients(p, t))
        return np.broadcast_to(rp.kappa, (np.shape(x)[0], m.n))

    return PortfolioRule(pi)


@dataclass(frozen=True)
class TameReport:
    tame: bool
    inf_HG: float
    floor: float


def check_state_tame(path: WealthIncomePath, floor: float = DEFAULT_FLOOR) -> TameReport:
    """Empirical screen: infimum of ``H G`` over all paths and grid times versus ``floor``.

    Passing is necessary, not sufficient: only the simulated paths are seen.
    """
    inf = float(np.min(path.flow.H * path.G))
    return TameReport(tame=inf > floor, inf_HG=inf, floor=floor)


@dataclass(frozen=True)
class OpportunityReport:
    all_nonneg: bool
    frac_nonneg: float
    frac_positive: float

    @property
    def opportunity(self) -> bool:
        return self.all_nonneg and self.frac_positive > 0


def check_arbitrage_opportunity(path: WealthIncomePath, t: float = None) -> OpportunityReport:
    """Empirical P[HG >= 0] and P[HG > 0] at grid time ``t`` (default: the last)."""
    if np.any(path.dGamma != 0):
        raise InvalidInputError("arbitrage opportunities are defined for self-financed portfolios")
    k = -1 if t is None else path.flow.grid.index(t)
    hg = path.flow.H[:, k] * path.G[:, k]
    nonneg = hg >= 0
    return OpportunityReport(
        all_nonneg=bool(np.all(nonneg)), frac_nonneg=float(nonneg.mean()), frac_positive=float(np.mean(hg > 0))
    )


def summary_rows(path: WealthIncomePath):
    """Per grid time: time, mean Y, SE of Y, inf HG."""
    N = path.Y.shape[0]
    mean = path.Y.mean(axis=0)
    se = path.Y.std(axis=0, ddof=1) / np.sqrt(N) if N > 1 else np.zeros_like(mean)
    inf = np.min(path.flow.H * path.G, axis=0)
    return [(float(t), float(a), float(b), float(c)) for t, a, b, c in zip(path.times, mean, se, inf)]


def write_summary_csv(path: WealthIncomePath, fh) -> None:
    w = csv.writer(fh)
    w.writerow(["time", "mean_Y", "se_Y", "inf_HG"])
    for row in summary_rows(path):
        w.writerow([repr(v) for v in row])
