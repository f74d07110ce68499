"""American claims: regression Snell envelopes on a finite exercise grid.

Exercise decisions depend only on the date and the current augmented state,
so every rule here induces a consistent family of stopping times.  Values
are deflated: ``Y = H g - int H dGamma``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import regression
from .errors import InvalidInputError
from .europricer import (
    ClaimSpec,
    _check_flow,
    claim_paths,
    estimate_representation,
    hedge_rule,
    split_fit,
    state_features,
    synthesize_hedge,
)
from .flow import FlowPath, simulate_flow
from .market import MarketSpec
from .noise import NoisePath
from .wealth import simulate_wealth


@dataclass(frozen=True, eq=False)
class ExerciseData:
    """Claim data on the exercise dates of one ensemble.

    ``cap[i]`` is the last date path ``i`` may use (a barrier exit or the
    final date); ``payoff`` is undeflated and ``income`` is the cumulative
    deflated income ``int H dGamma`` up to each date.
    """

    times: np.ndarray
    index: np.ndarray
    P: np.ndarray
    H: np.ndarray
    payoff: np.ndarray
    income: np.ndarray
    cap: np.ndarray
    W: Optional[np.ndarray] = None
    driving: Optional[tuple] = None

    @property
    def n_paths(self) -> int:
        return self.P.shape[0]

    @property
    def dates(self) -> int:
        return self.times.size

    @property
    def Y(self) -> np.ndarray:
        return self.H * self.payoff - self.income

    def features(self, j: int) -> np.ndarray:
        return state_features(self.P[:, j], None if self.W is None else self.W[:, j], self.driving)

    def at_stop(self, stop: np.ndarray) -> np.ndarray:
        return self.Y[np.arange(self.n_paths), stop]


def exercise_indices(steps: int, dates: int) -> np.ndarray:
    """``dates`` equally spaced exercise dates after the start, plus the start itself."""
    if dates < 1 or steps % dates:
        raise InvalidInputError(f"{dates} exercise dates do not divide {steps} steps")
    return np.arange(0, steps + 1, steps // dates)


def exercise_data(m: MarketSpec, claim: ClaimSpec, flow: FlowPath, index=None) -> ExerciseData:
    """Sample ``claim`` along ``flow`` at the grid indices ``index`` (default: every grid time)."""
    _check_flow(flow)
    steps = flow.grid.steps
    index = np.arange(steps + 1) if index is None else np.asarray(index, dtype=int)
    if index[0] != 0 or index[-1] != steps or np.any(np.diff(index) <= 0):
        raise InvalidInputError("exercise dates must start at the flow start and end at its last grid time")
    cp = claim_paths(m, claim, flow)
    N = flow.n_paths
    W = cp.W
    payoff = np.empty((N, index.size))
    for j, k in enumerate(index):
        w = np.zeros((N, m.d)) if W is None else W[:, k]
        payoff[:, j] = np.broadcast_to(claim.payoff(flow.P[:, k], w), (N,))
    inc = np.concatenate([np.zeros((N, 1)), np.cumsum(flow.H[:, :-1] * cp.dGamma, axis=1)], axis=1)
    # the last exercise date not after the barrier exit
    cap = np.searchsorted(index, cp.stop, side="right") - 1
    return ExerciseData(
        times=flow.times[index],
        index=index,
        P=flow.P[:, index],
        H=flow.H[:, index],
        payoff=payoff,
        income=inc[:, index],
        cap=cap,
        W=None if W is None else W[:, index],
        driving=claim.driving,
    )


class StoppingRule:
    """Stop at the first date where :meth:`decide` holds, never after the cap."""

    def decide(self, data: ExerciseData, j: int) -> np.ndarray:
        raise NotImplementedError

    def stop_index(self, data: ExerciseData) -> np.ndarray:
        N = data.n_paths
        stop = data.cap.copy()
        open_ = np.ones(N, dtype=bool)
        for j in range(data.dates):
            fire = open_ & (j < data.cap) & np.asarray(self.decide(data, j), dtype=bool)
            stop[fire] = j
            open_ &= ~fire
            if not np.any(open_):
                break
        return stop


class Immediate(StoppingRule):
    def decide(self, data, j):
        return np.full(data.n_paths, j == 0)


class Never(StoppingRule):
    def decide(self, data, j):
        return np.zeros(data.n_paths, dtype=bool)


@dataclass
class Threshold(StoppingRule):
    """Stop in the money once ``P[asset]`` is at or below (or above) ``level``."""

    level: float
    asset: int = 1
    below: bool = True

    def decide(self, data, j):
        p = data.P[:, j, self.asset]
        hit = p <= self.level if self.below else p >= self.level
        return hit & (data.payoff[:, j] > 0)


@dataclass
class StateRule(StoppingRule):
    """Arbitrary state rule ``rho(t, g, p) -> bool`` with ``g`` the undeflated exercise value."""

    rho: Callable

    def decide(self, data, j):
        return self.rho(data.times[j], data.payoff[:, j], data.P[:, j])


@dataclass
class RegressionRule(StoppingRule):
    """Exercise in the money when ``g >= C_j(state)``; ``fits[j]`` predicts undeflated continuation."""

    fits: list

    def decide(self, data, j):
        if self.fits[j] is None:
            return np.zeros(data.n_paths, dtype=bool)
        g = data.payoff[:, j]
        return (g > 0) & (g >= self.fits[j].predict(data.features(j)))


@dataclass
class CombinedRule(StoppingRule):
    """At the earlier of two stops, stop only if ``Y`` beats the estimated value of waiting for the later one."""

    first: StoppingRule
    second: StoppingRule
    fits: dict = field(default_factory=dict)

    def stop_index(self, data):
        s1, s2 = self.first.stop_index(data), self.second.stop_index(data)
        lo, hi = np.minimum(s1, s2), np.maximum(s1, s2)
        out = hi.copy()
        out[lo == hi] = lo[lo == hi]
        for j in np.unique(lo[lo < hi]):
            sel = (lo == j) & (lo < hi)
            fit = self.fits.get(int(j))
            if fit is None:
                continue
            wait = data.H[sel, j] * fit.predict(data.features(j)[sel])
            stop_now = data.Y[sel, j] >= wait
            out[np.flatnonzero(sel)[stop_now]] = j
        return out


@dataclass(frozen=True)
class StopValue:
    mean: float
    se: float


def evaluate_stopping(data: ExerciseData, rule: StoppingRule) -> StopValue:
    """Mean and standard error of ``Y`` at the rule's stopping date."""
    y = data.at_stop(rule.stop_index(data))
    return StopValue(float(y.mean()), float(y.std(ddof=1) / np.sqrt(y.size)) if y.size > 1 else 0.0)


def combine_stopping(rule1: StoppingRule, rule2: StoppingRule, data: ExerciseData, degree: int = 2) -> CombinedRule:
    """Combine two rules by regressing, at each earlier stop date, the deflated value of waiting.

    The regression target is ``Y(later stop) / H(t_j)`` over paths whose
    earlier stop is ``j`` and whose stops differ.
    """
    s1, s2 = rule1.stop_index(data), rule2.stop_index(data)
    lo, hi = np.minimum(s1, s2), np.maximum(s1, s2)
    y_hi = data.at_stop(hi)
    fits = {}
    for j in np.unique(lo[lo < hi]):
        sel = (lo == j) & (lo < hi)
        fits[int(j)] = regression.fit(data.features(j), y_hi / data.H[:, j], degree, mask=sel)
    return CombinedRule(rule1, rule2, fits)


@dataclass(frozen=True, eq=False)
class SnellEnvelope:
    """Regression Snell envelope on the exercise dates of a training ensemble.

    ``lower`` is the value of the induced rule on the evaluation ensemble;
    ``upper`` is the regression (value-iteration) estimate ``Ybar(s)``.
    ``Ybar`` dominates ``Y`` by construction.
    """

    data: ExerciseData
    Ybar: np.ndarray
    rule: StoppingRule
    lower: StopValue
    upper: StopValue

    @property
    def value(self) -> float:
        return self.lower.mean


def _continuation_fit(data, j, target, mask, degree):
    if not np.any(mask):
        return None
    if j == 0:
        # every path shares the start state
        return regression.constant_fit(target[mask].mean(), data.features(0).shape[1])
    return regression.fit(data.features(j), target, degree, mask=mask)


def price_american(
    m: MarketSpec,
    claim: ClaimSpec,
    flow: FlowPath,
    index=None,
    degree: int = regression.DEFAULT_DEGREE,
    test_flow: FlowPath = None,
) -> SnellEnvelope:
    """Least-squares Snell envelope with two estimators.

    The exercise rule regresses the realised deflated cash flow of the
    current rule on in-the-money paths and is evaluated on ``test_flow``
    when given (low biased), else in sample.  The envelope ``Ybar`` is the
    value iteration ``max(Y, H C)`` with ``C`` regressed from ``Ybar(t_j+1)``
    separately on in- and out-of-the-money paths; its root is the
    regression (high biased) estimate.
    """
    data = exercise_data(m, claim, flow, index)
    N, M = data.n_paths, data.dates - 1
    rows = np.arange(N)
    Y = data.Y
    stop = data.cap.copy()
    cash = Y[rows, stop]
    Ybar = np.empty_like(Y)
    Ybar[:, M] = Y[:, M]
    fits = [None] * (M + 1)
    for j in range(M - 1, -1, -1):
        live = data.cap > j
        g = data.payoff[:, j]
        itm = live & (g > 0)
        fit = _continuation_fit(data, j, cash / data.H[:, j], itm, degree)
        if fit is not None:
            ex = itm & (g >= fit.predict(data.features(j)))
            stop[ex] = j
            cash[ex] = Y[ex, j]
        fits[j] = fit
        if j == 0:
            cont = np.full(N, Ybar[live, 1].mean()) if np.any(live) else Y[:, 0]
        else:
            F = data.features(j)
            cont = data.H[:, j] * split_fit(F, Ybar[:, j + 1] / data.H[:, j], live, g > 0, degree).predict(F, g > 0)
        frozen = np.where(data.cap == j, Y[:, j], Ybar[:, j + 1])
        Ybar[:, j] = np.where(live, np.maximum(Y[:, j], cont), frozen)
    rule = RegressionRule(fits)
    eval_data = data if test_flow is None else exercise_data(m, claim, test_flow, data.index)
    lower = evaluate_stopping(eval_data, rule)
    nxt = Ybar[:, 1] if M >= 1 else Ybar[:, 0]
    upper = StopValue(float(Ybar[:, 0].mean()), float(nxt.std(ddof=1) / np.sqrt(N)))
    return SnellEnvelope(data=data, Ybar=Ybar, rule=rule, lower=lower, upper=upper)


def rule_value_process(data: ExerciseData, rule: StoppingRule, degree: int = regression.DEFAULT_DEGREE) -> np.ndarray:
    """Regression estimate of ``E[Y(tau) | state]`` per date for an arbitrary rule, frozen after ``tau``."""
    stop = rule.stop_index(data)
    M = data.dates - 1
    V = np.empty_like(data.Y)
    V[:, M] = data.at_stop(stop)
    for j in range(M - 1, -1, -1):
        done = stop <= j
        fit = _continuation_fit(data, j, V[:, j + 1] / data.H[:, j], ~done, degree)
        cont = data.H[:, j] * fit.predict(data.features(j)) if fit is not None else V[:, j + 1]
        V[:, j] = np.where(stop == j, data.Y[:, j], np.where(done, V[:, j + 1], cont))
    return V


@dataclass(frozen=True)
class SupermartingaleReport:
    ok: bool
    means: np.ndarray
    worst_increase_z: float
    dominated_fraction: float


def check_snell_supermartingale(data: ExerciseData, Ybar: np.ndarray, z: float = 3.0, slack: float = 1e-9) -> SupermartingaleReport:
    """Means of ``Ybar`` must not rise by more than ``z`` standard errors between dates,
    and ``Ybar >= Y`` must hold on every path and date (up to ``slack`` times the payoff scale).
    """
    means = Ybar.mean(axis=0)
    diffs = np.diff(Ybar, axis=1)
    se = diffs.std(axis=0, ddof=1) / np.sqrt(Ybar.shape[0])
    rise = diffs.mean(axis=0)
    zs = np.where(se > 0, rise / np.where(se > 0, se, 1.0), np.where(rise > 0, np.inf, 0.0))
    worst = float(zs.max()) if zs.size else 0.0
    scale = max(1.0, float(np.max(np.abs(data.Y))))
    dominated = Ybar >= data.Y - slack * scale
    return SupermartingaleReport(
        ok=bool(worst <= z and np.all(dominated)),
        means=means,
        worst_increase_z=worst,
        dominated_fraction=float(dominated.mean()),
    )


@dataclass(frozen=True, eq=False)
class Structure:
    """A wealth-income structure on common dates: ``X``, ``Gamma`` per date and a stop date per path."""

    times: np.ndarray
    X: np.ndarray
    Gamma: np.ndarray
    stop: np.ndarray

    @classmethod
    def of_claim(cls, data: ExerciseData, consumption: float = 0.0) -> "Structure":
        """The American claim itself: payoff as wealth, available up to its cap."""
        gamma = -consumption * (data.times - data.times[0])
        return cls(data.times, data.payoff, np.broadcast_to(gamma, data.payoff.shape), data.cap)


@dataclass(frozen=True)
class DominationReport:
    dominates: bool
    worst_wealth_gap: float
    worst_income_gap: float
    rms_shortfall: float


def check_domination(a: Structure, b: Structure, slack: float = 1e-9) -> DominationReport:
    """Does ``a`` dominate ``b``: later stop, ``X_a >= X_b`` and ``Gamma_a <= Gamma_b`` up to ``b``'s stop?"""
    if a.X.shape != b.X.shape or not np.allclose(a.times, b.times, rtol=0, atol=1e-12):
        raise InvalidInputError("structures must share paths and dates")
    upto = np.arange(a.times.size)[None, :] <= b.stop[:, None]
    xgap = np.where(upto, b.X - a.X, -np.inf)
    ggap = np.where(upto, np.asarray(a.Gamma) - np.asarray(b.Gamma), -np.inf)
    short = np.where(upto, np.maximum(b.X - a.X, 0.0), 0.0)
    worst_x, worst_g = float(xgap.max()), float(ggap.max())
    ok = bool(np.all(a.stop >= b.stop) and worst_x <= slack and worst_g <= slack)
    rms = float(np.sqrt((short**2).sum() / upto.sum()))
    return DominationReport(dominates=ok, worst_wealth_gap=worst_x, worst_income_gap=worst_g, rms_shortfall=rms)


@dataclass(frozen=True, eq=False)
class DominatingHedgeReport:
    price: float
    verdict: bool
    domination: DominationReport
    pi: np.ndarray
    X: np.ndarray


def dominating_hedge(
    m: MarketSpec,
    claim: ClaimSpec,
    flow: FlowPath,
    test_flow: FlowPath,
    index=None,
    degree: int = regression.DEFAULT_DEGREE,
    rel_tol: float = 0.05,
) -> DominatingHedgeReport:
    """Hedge the Snell envelope and test whether the hedged wealth dominates the claim.

    The envelope is regressed on the full grid with the payoff as an obstacle
    at the exercise dates; its representation gives the portfolio.  The
    synthesis on the training paths raises :class:`HedgingInfeasibleError`
    when the envelope needs noise outside ``Range(sigma')``.  The hedge then
    runs from ``x = u`` on ``test_flow``; the verdict holds when the RMS
    shortfall of wealth below the payoff over all dates up to the claim's cap
    is at most ``rel_tol`` times the value.
    """
    steps = flow.grid.steps
    index = np.arange(steps + 1) if index is None else np.asarray(index, dtype=int)
    est = estimate_representation(m, claim, flow, degree, exercise=index)
    sol = synthesize_hedge(m, flow, est.V, est.phi)
    u = float(est.V[0, 0])
    w = simulate_wealth(m, test_flow, hedge_rule(m, claim, est.rep, test_flow), u)
    data = exercise_data(m, claim, test_flow, index)
    hedged = Structure(data.times, w.X[:, index], np.zeros_like(data.payoff), np.full(data.n_paths, data.dates - 1))
    rep = check_domination(hedged, Structure.of_claim(data))
    verdict = rep.rms_shortfall <= rel_tol * abs(u)
    return DominatingHedgeReport(price=u, verdict=verdict, domination=rep, pi=sol.pi, X=w.X)


@dataclass(frozen=True)
class MomentExponentReport:
    gamma: float
    exponents: dict
    constants: dict
    degenerate: tuple
    reciprocal_sum: float

    @property
    def condition_met(self) -> Optional[bool]:
        """``sum 1/alpha < 1`` when every requested exponent was identified, else ``None``."""
        if self.degenerate or not self.exponents:
            return None
        return self.reciprocal_sum < 1.0


def moment_exponent_diagnostic(sampler: Callable, base: dict, perturbations: dict, gamma: float = 2.0) -> MomentExponentReport:
    """Fit ``E|Y(base + h e_a) - Y(base)|^gamma ~ C h^alpha`` per argument by log-log least squares.

    ``sampler(x, p, s, t)`` returns samples of ``Y`` on common noise.
    ``perturbations`` maps ``'x'``, ``'s'``, ``'t'`` or ``'p<i>'`` to a list
    of step sizes.  Arguments whose moments are all zero are reported as
    degenerate.  The result is descriptive and never gates anything.
    """
    ref = np.asarray(sampler(base["x"], np.asarray(base["p"], float), base["s"], base["t"]))
    exps, consts, degen = {}, {}, []
    for name, sizes in perturbations.items():
        h = np.asarray(sizes, dtype=float)
        moments = np.array([np.mean(np.abs(np.asarray(sampler(*_bump(base, name, dh))) - ref) ** gamma) for dh in h])
        ok = moments > 0
        if ok.sum() < 2:
            degen.append(name)
            continue
        slope, icpt = np.polyfit(np.log(h[ok]), np.log(moments[ok]), 1)
        exps[name], consts[name] = float(slope), float(np.exp(icpt))
    recip = float(sum(1.0 / a for a in exps.values() if a > 0)) if exps else float("nan")
    return MomentExponentReport(gamma=gamma, exponents=exps, constants=consts, degenerate=tuple(degen), reciprocal_sum=recip)


def flow_sampler(m: MarketSpec, noise: NoisePath, asset: int = 1) -> Callable:
    """Sampler ``Y(x, p, s, t) = H(s, t) (x + P_asset(s, t, p))`` on common noise.

    ``s`` and ``t`` must be points of ``noise.grid``; every call reuses the
    same increments, so differences isolate the perturbed argument.
    """

    def sample(x, p, s, t):
        g = noise.grid
        i, k = g.index(s), g.index(t)
        if k < i:
            raise InvalidInputError("need s <= t")
        if k == i:
            return np.full(noise.n_paths, x + float(np.asarray(p)[asset]))
        window = NoisePath(g.window(i, k), noise.d, noise.seed, noise.path_index, noise.increments[:, i:k])
        f = simulate_flow(m, window, None, p)
        return f.H[:, -1] * (x + f.P[:, -1, asset])

    return sample


def _bump(base, name, h):
    x, p, s, t = base["x"], np.array(base["p"], dtype=float), base["s"], base["t"]
    if name == "x":
        x = x + h
    elif name == "s":
        s = s + h
    elif name == "t":
        t = t + h
    elif name.startswith("p"):
        p[int(name[1:])] += h
    else:
        raise InvalidInputError(f"unknown argument {name!r}")
    return x, p, s, t


def write_value_csv(rows, fh) -> None:
    """Rows of (claim id, lower bound, SE, regression value, SE)."""
    w = csv.writer(fh)
    w.writerow(["claim", "lower", "lower_se", "regression", "regression_se"])
    for name, env in rows:
        w.writerow([name, repr(env.lower.mean), repr(env.lower.se), repr(env.upper.mean), repr(env.upper.se)])


def exercise_boundary(env: SnellEnvelope, asset: int = 1):
    """Per date: smallest and largest ``P[asset]`` among training paths the rule exercises."""
    data, rule = env.data, env.rule
    out = []
    for j in range(data.dates - 1):
        ex = (j < data.cap) & rule.decide(data, j)
        if np.any(ex):
            p = data.P[ex, j, asset]
            out.append((float(data.times[j]), float(p.min()), float(p.max())))
        else:
            out.append((float(data.times[j]), float("nan"), float("nan")))
    return out
