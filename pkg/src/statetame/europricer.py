"""European claims: deflated valuation, representation, hedging and replication.

A claim pays ``g`` at its expiration, which is either the end of the
simulation grid or the first grid time the stock prices leave an open
region.  Its deflated payoff process is ``Y = H X - int H dGamma``; the price
is ``E[Y(tau)]``.  The hedge comes from the representation ``dY = phi' dW``:
the stock holdings solve ``sigma' pi = H^{-1} phi + X theta`` in the
minimum-norm sense.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import linalg, regression
from .errors import (
    ExplosionError,
    HedgingInfeasibleError,
    InvalidInputError,
    PricingRefusedError,
    WitnessUnavailableError,
)
from .flow import KAPPA_TOL, FlowPath, simulate_ensemble, step_coefficients
from .market import MarketSpec, completeness_check
from .noise import TimeGrid
from .wealth import PortfolioRule, simulate_wealth

HEDGE_TOL = 1e-8


@dataclass(frozen=True)
class ClaimSpec:
    """Payoff ``g(p, w)`` with an expiration rule and optional income.

    ``payoff`` maps augmented prices ``(N, n+1)`` and cumulative noise
    ``(N, d)`` to ``(N,)``.  ``barrier`` is an ``inside(p)`` predicate of an
    open region; the claim expires at the first grid time outside it, capped
    at the end of the grid.  ``b_gamma(p, t)`` / ``sigma_gamma(p, t)`` give
    the income rate and volatility.  ``driving`` lists the noise components
    the claim may depend on (``None``: all).  ``uses_noise`` adds the
    cumulative noise to the regression state.
    """

    payoff: Callable[[np.ndarray, np.ndarray], np.ndarray]
    name: str = "claim"
    barrier: Optional[Callable[[np.ndarray], np.ndarray]] = None
    b_gamma: Optional[Callable] = None
    sigma_gamma: Optional[Callable] = None
    driving: Optional[tuple] = None
    uses_noise: bool = False

    @property
    def has_income(self) -> bool:
        return self.b_gamma is not None or self.sigma_gamma is not None


@dataclass(frozen=True, eq=False)
class ClaimPaths:
    """A claim evaluated along a flow: stop index, payoff and income per path."""

    stop: np.ndarray
    payoff: np.ndarray
    dGamma: np.ndarray
    W: Optional[np.ndarray]

    def deflated(self, flow: FlowPath) -> np.ndarray:
        """``Y(tau) = H(tau) g - int_s^tau H dGamma`` per path."""
        rows = np.arange(flow.n_paths)
        income = np.cumsum(flow.H[:, :-1] * self.dGamma, axis=1)
        income = np.concatenate([np.zeros((flow.n_paths, 1)), income], axis=1)
        return flow.H[rows, self.stop] * self.payoff - income[rows, self.stop]


def _check_flow(flow: FlowPath, kappa_tol: float = KAPPA_TOL):
    if flow.max_kappa > kappa_tol:
        raise PricingRefusedError(
            f"arbitrage residual |kappa| = {flow.max_kappa:.3e} exceeds {kappa_tol:.1e}; deflated prices are meaningless"
        )
    if flow.any_exploded:
        raise ExplosionError("ensemble contains exploded paths", flow.first_explosion())


def income_increments(m: MarketSpec, claim: ClaimSpec, flow: FlowPath) -> np.ndarray:
    N, steps = flow.n_paths, flow.grid.steps
    out = np.zeros((N, steps))
    if not claim.has_income:
        return out
    for i in range(steps):
        t, dt = flow.times[i], flow.grid.dt[i]
        P = flow.P[:, i]
        if claim.b_gamma is not None:
            out[:, i] += np.broadcast_to(claim.b_gamma(P, t), (N,)) * dt
        if claim.sigma_gamma is not None:
            sg = np.broadcast_to(claim.sigma_gamma(P, t), (N, m.d))
            out[:, i] += np.einsum("ij,ij->i", sg, flow.noise.increments[:, i])
    return out


def claim_paths(m: MarketSpec, claim: ClaimSpec, flow: FlowPath) -> ClaimPaths:
    N, steps = flow.n_paths, flow.grid.steps
    W = flow.noise.cumulative() if claim.uses_noise else None
    stop = np.full(N, steps)
    if claim.barrier is not None:
        if not np.all(claim.barrier(flow.P[:, 0])):
            raise InvalidInputError("barrier region must contain the start price")
        inside = np.stack([np.asarray(claim.barrier(flow.P[:, k]), dtype=bool) for k in range(steps + 1)], axis=1)
        out = ~inside
        hit = out.any(axis=1)
        stop = np.where(hit, out.argmax(axis=1), steps)
    rows = np.arange(N)
    P_stop = flow.P[rows, stop]
    W_stop = W[rows, stop] if W is not None else np.zeros((N, m.d))
    g = np.broadcast_to(np.asarray(claim.payoff(P_stop, W_stop), dtype=float), (N,)).copy()
    if not np.all(np.isfinite(g)):
        raise InvalidInputError(f"payoff of {claim.name} is not finite")
    dG = income_increments(m, claim, flow)
    # income stops with the claim
    dG[np.arange(steps)[None, :] >= stop[:, None]] = 0.0
    return ClaimPaths(stop=stop, payoff=g, dGamma=dG, W=W)


@dataclass(frozen=True)
class EuropeanPrice:
    price: float
    se: float
    paths: int
    samples: np.ndarray


def _mean_se(v: np.ndarray):
    n = v.size
    return float(v.mean()), float(v.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0


def price_european(m: MarketSpec, claim: ClaimSpec, flow: FlowPath, kappa_tol: float = KAPPA_TOL) -> EuropeanPrice:
    """Sample mean and standard error of the deflated payoff ``Y(tau)``."""
    _check_flow(flow, kappa_tol)
    y = claim_paths(m, claim, flow).deflated(flow)
    price, se = _mean_se(y)
    return EuropeanPrice(price=price, se=se, paths=flow.n_paths, samples=y)


def state_features(P: np.ndarray, W: Optional[np.ndarray] = None, driving=None) -> np.ndarray:
    """Regression state: log of the augmented prices, plus cumulative noise if given."""
    feats = [np.log(P)]
    if W is not None:
        feats.append(W if driving is None else W[:, list(driving)])
    return np.concatenate(feats, axis=1)


@dataclass(frozen=True, eq=False)
class SplitFit:
    """Separate polynomial fits on the in-the-money (``g > 0``) and remaining rows."""

    itm: Optional[regression.PolyFit]
    otm: Optional[regression.PolyFit]

    def predict(self, features: np.ndarray, itm: np.ndarray) -> np.ndarray:
        out = None
        for fit, rows in ((self.itm, itm), (self.otm, ~itm)):
            if fit is None or not np.any(rows):
                continue
            pred = fit.predict(features[rows])
            if out is None:
                out = np.zeros((features.shape[0],) + pred.shape[1:])
            out[rows] = pred
        if out is None:
            raise InvalidInputError("no fitted region covers these states")
        return out


def split_fit(features, target, alive, itm, degree) -> SplitFit:
    """Fit ``target`` separately on ``alive & itm`` and ``alive & ~itm``.

    Payoff kinks sit on the boundary ``g = 0``, so each side is smooth and
    a low-degree polynomial fits it far better than one global polynomial.
    A side with too few rows borrows the fit of the other side.
    """
    fits = []
    k = features.shape[1]
    for rows in (alive & itm, alive & ~itm):
        fits.append(regression.fit(features, target, degree, mask=rows) if rows.sum() > 2 * (k + 1) else None)
    if fits[0] is None and fits[1] is None:
        fits[0] = fits[1] = regression.fit(features, target, degree, mask=alive)
    return SplitFit(fits[0] or fits[1], fits[1] or fits[0])


@dataclass(frozen=True, eq=False)
class Representation:
    """Per-step regressions of the claim value and of ``psi = H^{-1} phi``.

    ``value[k]`` predicts the undeflated value at grid time ``k`` and
    ``psi[k]`` the representation integrand over ``[t_k, t_k+1]`` divided by
    ``H(t_k)``.  Both are :class:`SplitFit` objects on :func:`state_features`,
    split by the sign of the payoff.
    """

    grid: TimeGrid
    value: list
    psi: list
    d: int
    payoff: Callable
    driving: Optional[tuple]
    uses_noise: bool

    def features(self, P, W=None):
        return state_features(P, W if self.uses_noise else None, self.driving)

    def in_money(self, P, W=None) -> np.ndarray:
        w = np.zeros((P.shape[0], self.d)) if W is None else W
        return np.broadcast_to(np.asarray(self.payoff(P, w)) > 0, (P.shape[0],))

    def psi_at(self, k: int, P, W=None) -> np.ndarray:
        out = np.atleast_2d(self.psi[k].predict(self.features(P, W), self.in_money(P, W)))
        if self.driving is not None:
            out[:, np.setdiff1d(np.arange(self.d), self.driving)] = 0.0
        return out


@dataclass(frozen=True, eq=False)
class RepresentationEstimate:
    rep: Representation
    V: np.ndarray
    phi: np.ndarray
    stop: np.ndarray


def estimate_representation(
    m: MarketSpec,
    claim: ClaimSpec,
    flow: FlowPath,
    degree: int = regression.DEFAULT_DEGREE,
    exercise=None,
) -> RepresentationEstimate:
    """Backward regression for the value and the integrand of ``dY = phi' dW``.

    With ``rho = H(t_k+1)/H(t_k)`` the continuation value is
    ``C_k = E[rho V_k+1 - dGamma_k | state]`` and
    ``psi_k = E[(rho V_k+1 - dGamma_k - C_k) dW_k | state] / dt_k``;
    ``phi_k = H_k psi_k``.  ``V_k = C_k`` except at the grid indices in
    ``exercise``, where the payoff acts as an obstacle: ``V_k = max(g_k, C_k)``.
    Regressions use the paths still alive at ``t_k``, split by the sign of
    the payoff at ``t_k``.  Noise components outside ``claim.driving`` are
    forced to zero.
    """
    _check_flow(flow)
    cp = claim_paths(m, claim, flow)
    N, steps, d = flow.n_paths, flow.grid.steps, m.d
    W = cp.W
    H, inc, dts = flow.H, flow.noise.increments, flow.grid.dt
    V = np.zeros((N, steps + 1))
    phi = np.zeros((N, steps, d))
    rows = np.arange(N)
    V[rows, cp.stop] = cp.payoff
    value_fits = [None] * (steps + 1)
    psi_fits = [None] * steps
    # deflated value at the next step, already paid values frozen at their stop
    next_deflated = H[rows, cp.stop] * cp.payoff
    exercise = set() if exercise is None else set(int(k) for k in exercise)
    zero_w = np.zeros((N, d))
    for k in range(steps - 1, -1, -1):
        alive = cp.stop > k
        Wk = None if W is None else W[:, k]
        feats = state_features(flow.P[:, k], Wk, claim.driving)
        gk = np.broadcast_to(np.asarray(claim.payoff(flow.P[:, k], zero_w if Wk is None else Wk), dtype=float), (N,))
        itm = gk > 0
        target = next_deflated / H[:, k] - cp.dGamma[:, k]
        vfit = split_fit(feats, target, alive, itm, degree)
        ck = vfit.predict(feats, itm)
        dw_scaled = inc[:, k] / dts[k]
        pfit = split_fit(feats, (target - ck)[:, None] * dw_scaled, alive, itm, degree)
        vk = np.maximum(gk, ck) if k in exercise else ck
        psi = np.atleast_2d(pfit.predict(feats, itm))
        if claim.driving is not None:
            psi[:, np.setdiff1d(np.arange(d), claim.driving)] = 0.0
        V[alive, k] = vk[alive]
        phi[alive, k] = H[alive, k, None] * psi[alive]
        value_fits[k], psi_fits[k] = vfit, pfit
        # paths alive at k now carry their fitted value; stopped ones keep theirs
        next_deflated = np.where(alive, H[:, k] * vk, next_deflated)
    rep = Representation(flow.grid, value_fits, psi_fits, d, claim.payoff, claim.driving, claim.uses_noise)
    return RepresentationEstimate(rep=rep, V=V, phi=phi, stop=cp.stop)


@dataclass(frozen=True, eq=False)
class HedgeSolution:
    pi: np.ndarray
    pi0: np.ndarray
    max_residual: float


def hedge_rhs_residual(m: MarketSpec, P, t, theta, X, psi):
    """Minimum-norm ``pi`` for ``sigma' pi = psi + X theta`` and the residual norm per path."""
    coef, _ = step_coefficients(m, P, t)
    N = P.shape[0]
    sig_t = np.swapaxes(np.broadcast_to(coef.sigma, (N, m.n, m.d)), -1, -2)
    rhs = psi + X[:, None] * theta
    pi, residual = linalg.min_norm_split(sig_t, rhs)
    return pi, np.linalg.norm(residual, axis=-1), np.linalg.norm(rhs, axis=-1)


def synthesize_hedge(m: MarketSpec, flow: FlowPath, X: np.ndarray, phi: np.ndarray, tol: float = HEDGE_TOL) -> HedgeSolution:
    """Solve ``sigma' pi = H^{-1} phi + X theta`` at every grid interval.

    ``X`` has one value per grid time (or per interval) and ``phi`` one
    ``d``-vector per interval.  Raises :class:`HedgingInfeasibleError` with
    the largest residual when the right side leaves ``Range(sigma')``.
    """
    N, steps = flow.n_paths, flow.grid.steps
    X = np.asarray(X, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if X.shape not in ((N, steps + 1), (N, steps)) or phi.shape != (N, steps, m.d):
        raise InvalidInputError("X and phi must align with the flow grid")
    PI = np.empty((N, steps, m.n))
    worst = 0.0
    for k in range(steps):
        pi, res, scale = hedge_rhs_residual(m, flow.P[:, k], flow.times[k], flow.theta[:, k], X[:, k], phi[:, k] / flow.H[:, k, None])
        bad = res > tol * np.maximum(1.0, scale)
        worst = max(worst, float(res.max()))
        if np.any(bad):
            raise HedgingInfeasibleError(
                f"hedge equation has no solution at t={flow.times[k]:.6g} on {int(bad.sum())} paths", float(res[bad].max())
            )
        PI[:, k] = pi
    return HedgeSolution(pi=PI, pi0=X[:, :steps] - PI.sum(axis=2), max_residual=worst)


def hedge_rule(m: MarketSpec, claim: ClaimSpec, rep: Representation, flow: FlowPath) -> PortfolioRule:
    """Portfolio rule that applies the fitted representation to the current state and wealth."""
    W = flow.noise.cumulative() if rep.uses_noise else None
    grid = flow.grid

    def pi(x, p, t):
        k = grid.index(t)
        psi = rep.psi_at(k, p, None if W is None else W[:, k])
        out, _, _ = hedge_rhs_residual(m, p, t, flow.theta[:, k], x, psi)
        return out

    b_g = None if claim.b_gamma is None else (lambda x, p, t: claim.b_gamma(p, t))
    s_g = None if claim.sigma_gamma is None else (lambda x, p, t: claim.sigma_gamma(p, t))
    return PortfolioRule(pi, b_g, s_g)


@dataclass(frozen=True)
class ReplicationReport:
    terminal_rmse: float
    price: float
    steps: int
    paths: int


def replication_backtest(
    m: MarketSpec,
    claim: ClaimSpec,
    rep: Representation,
    price: float,
    paths: int,
    seed: int,
    s: float = None,
    p=None,
    threads: int = 1,
) -> ReplicationReport:
    """Run the fitted hedge from ``x = price`` on a fresh ensemble.

    Reports the RMS of ``X(tau) - g`` over paths.
    """
    flow = simulate_ensemble(m, rep.grid, seed, paths, s, p, threads=threads)
    _check_flow(flow)
    cp = claim_paths(m, claim, flow)
    w = simulate_wealth(m, flow, hedge_rule(m, claim, rep, flow), price)
    rows = np.arange(flow.n_paths)
    err = w.X[rows, cp.stop] - cp.payoff
    return ReplicationReport(
        terminal_rmse=float(np.sqrt(np.mean(err**2))), price=price, steps=flow.grid.steps, paths=flow.n_paths
    )


@dataclass(frozen=True, eq=False)
class HedgeReport:
    price: float
    se: float
    phi: np.ndarray
    pi: np.ndarray
    replication_rmse: float


def hedge_european(
    m: MarketSpec,
    claim: ClaimSpec,
    grid: TimeGrid,
    paths: int,
    seed: int,
    degree: int = regression.DEFAULT_DEGREE,
    threads: int = 1,
    tol: float = HEDGE_TOL,
) -> HedgeReport:
    """Price, estimate the representation, synthesize the hedge and backtest it out of sample."""
    flow = simulate_ensemble(m, grid, seed, paths, threads=threads)
    pr = price_european(m, claim, flow)
    est = estimate_representation(m, claim, flow, degree)
    sol = synthesize_hedge(m, flow, est.V, est.phi, tol)
    rep = replication_backtest(m, claim, est.rep, pr.price, paths, seed + 1, threads=threads)
    return HedgeReport(price=pr.price, se=pr.se, phi=est.phi, pi=sol.pi, replication_rmse=rep.terminal_rmse)


@dataclass(frozen=True, eq=False)
class WitnessReport:
    hedgeable: bool
    residual: float
    verdict: str
    psi: np.ndarray
    X: np.ndarray


def witness_direction(m: MarketSpec, sigma: np.ndarray, indices) -> np.ndarray:
    """A nonzero vector of ``ker(sigma_I)`` embedded in ``R^d`` (zero when the block has full rank)."""
    idx = list(indices)
    block = np.asarray(sigma)[..., idx]
    psi_block = linalg.rowspace_selector(linalg.kernel_projector(block))
    out = np.zeros(psi_block.shape[:-1] + (m.d,))
    out[..., idx] = psi_block
    return out


def incompleteness_witness(
    m: MarketSpec,
    grid: TimeGrid,
    indices=None,
    paths: int = 256,
    seed: int = 0,
    x: float = 0.0,
    scale: float = 1.0,
    tol: float = HEDGE_TOL,
) -> WitnessReport:
    """Build ``X = x + int H^{-1} psi' dW`` with ``psi`` in the kernel of ``sigma_I`` and try to hedge it.

    ``indices`` are 0-based noise components (default: all).  A full-rank
    block has no such ``psi`` and raises :class:`WitnessUnavailableError`.
    """
    idx = tuple(range(m.d)) if indices is None else tuple(sorted(indices))
    report = completeness_check(m, indices=idx)
    if report.complete:
        raise WitnessUnavailableError(f"sigma restricted to {idx} has full rank {report.k}")
    flow = simulate_ensemble(m, grid, seed, paths)
    _check_flow(flow)
    N, steps = flow.n_paths, grid.steps
    psi = np.zeros((N, steps, m.d))
    X = np.empty((N, steps + 1))
    X[:, 0] = x
    for k in range(steps):
        coef, _ = step_coefficients(m, flow.P[:, k], flow.times[k])
        psi[:, k] = scale * np.broadcast_to(witness_direction(m, coef.sigma, idx), (N, m.d))
        X[:, k + 1] = X[:, k] + np.einsum("ij,ij->i", psi[:, k], flow.noise.increments[:, k]) / flow.H[:, k]
    try:
        synthesize_hedge(m, flow, X, psi, tol)
    except HedgingInfeasibleError as exc:
        return WitnessReport(False, exc.residual, "not hedgeable", psi, X)
    return WitnessReport(True, 0.0, "hedgeable", psi, X)


def write_price_csv(rows, fh) -> None:
    """Rows of (claim id, price, SE)."""
    w = csv.writer(fh)
    w.writerow(["claim", "price", "se"])
    for name, price, se in rows:
        w.writerow([name, repr(float(price)), repr(float(se))])
