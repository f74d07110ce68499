"""Log-Euler simulation of the augmented price flow, bond, Z and deflator.

Stocks follow ``dP_i = P_i (b_i dt + sigma_i dW)``; the shadow stock follows
``dP_0 = P_0 (-r dt - theta' dW)`` so that ``P_0 = p_0 H``.  All coefficients
are frozen at the left end of each grid interval and every quantity is
advanced in log space, which keeps prices positive by construction.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import noise as noise_mod
from .errors import InvalidInputError, UnsupportedOperationError
from .market import Coefficients, MarketSpec, risk_price_from
from .noise import NoisePath, TimeGrid

KAPPA_TOL = 1e-10
DEFAULT_BLOCK = 16384
_LOG_CAP = 700.0


@dataclass(frozen=True, eq=False)
class FlowPath:
    """An ensemble of simulated flows started at time ``s``.

    Arrays carry the path axis first.  ``theta`` holds the left-point market
    price of risk of each interval, so it has one entry fewer in time than
    the price arrays.  Exploded paths are frozen at NaN from their first
    non-finite state onwards and flagged in ``exploded``.
    """

    grid: TimeGrid
    P: np.ndarray
    B: np.ndarray
    Z: np.ndarray
    H: np.ndarray
    theta: np.ndarray
    noise: NoisePath
    max_kappa: float
    exploded: np.ndarray
    explosion_time: np.ndarray

    @property
    def s(self) -> float:
        return float(self.grid.times[0])

    @property
    def p(self) -> np.ndarray:
        return self.P[:, 0]

    @property
    def n_paths(self) -> int:
        return self.P.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    @property
    def arbitrage(self) -> bool:
        return self.max_kappa > KAPPA_TOL

    @property
    def any_exploded(self) -> bool:
        return bool(np.any(self.exploded))

    def first_explosion(self) -> float:
        return float(np.nanmin(self.explosion_time)) if self.any_exploded else float("nan")


def _start_states(m: MarketSpec, p, N: int) -> np.ndarray:
    p = np.asarray(m.p0 if p is None else p, dtype=float)
    if p.shape == (m.n + 1,):
        p = np.tile(p, (N, 1))
    if p.shape != (N, m.n + 1):
        raise InvalidInputError(f"start must have shape ({m.n + 1},) or ({N}, {m.n + 1})")
    if not np.all(p > 0):
        raise InvalidInputError("start prices must be strictly positive")
    return p


def _finite_rows(arr, N: int) -> np.ndarray:
    arr = np.asarray(arr)
    ok = np.isfinite(arr)
    if arr.ndim and arr.shape[0] == N and N > 1:
        return ok.reshape(N, -1).all(axis=1)
    return np.full(N, bool(np.all(ok)))


def step_coefficients(m: MarketSpec, state: np.ndarray, t: float):
    """Coefficients at ``state`` plus a per-row finiteness mask.

    Non-finite rows are zeroed so the SVD downstream stays well defined.
    """
    N = state.shape[0]
    coef = m.coefficients(state, t, check=False)
    good = np.ones(N, dtype=bool)
    for arr in (coef.b, coef.sigma, coef.delta, coef.r):
        good &= _finite_rows(arr, N)
    if not np.all(good):
        clean = [np.nan_to_num(np.asarray(a), nan=0.0, posinf=0.0, neginf=0.0) for a in (coef.b, coef.sigma, coef.delta, coef.r)]
        coef = Coefficients(*clean)
    return coef, good


def simulate_flow(m: MarketSpec, noise: NoisePath, s: float = None, p=None) -> FlowPath:
    """Advance every noise path from ``(s, p)`` to the end of the noise grid.

    ``p`` is a single start (length ``n+1``, default ``m.p0``) or one start
    per path.
    """
    if noise.d != m.d:
        raise InvalidInputError(f"noise has d={noise.d}, market needs d={m.d}")
    s = noise.grid.times[0] if s is None else s
    w = noise_mod.restrict_after(noise, s)
    times, dts, inc = w.grid.times, w.grid.dt, w.increments
    N, steps = w.n_paths, w.grid.steps
    p = _start_states(m, p, N)

    log_p = np.log(p)
    log_b = np.zeros(N)
    log_z = np.zeros(N)
    P = np.empty((N, steps + 1, m.n + 1))
    logB = np.zeros((N, steps + 1))
    logZ = np.zeros((N, steps + 1))
    theta_path = np.empty((N, steps, m.d))
    P[:, 0] = p
    alive = np.ones(N, dtype=bool)
    explosion_time = np.full(N, np.nan)
    max_kappa = 0.0

    for i in range(steps):
        t, dt, dW = times[i], dts[i], inc[:, i]
        state = np.where(alive[:, None], P[:, i], 1.0)
        coef, good = step_coefficients(m, state, t)
        explosion_time[alive & ~good] = t
        alive &= good

        rp = risk_price_from(coef)
        theta = np.broadcast_to(rp.theta, (N, m.d))
        kappa_norm = np.broadcast_to(np.linalg.norm(rp.kappa, axis=-1), (N,))
        if np.any(alive):
            max_kappa = max(max_kappa, float(kappa_norm[alive].max()))
        r = np.broadcast_to(coef.r, (N,))
        b = np.broadcast_to(coef.b, (N, m.n))
        var = np.sum(coef.sigma**2, axis=-1)
        th2 = np.sum(theta**2, axis=-1)
        th_dw = np.einsum("ij,ij->i", theta, dW)
        log_p[:, 1:] += (b - 0.5 * var) * dt + np.einsum("...kj,...j->...k", coef.sigma, dW)
        log_p[:, 0] += (-r - 0.5 * th2) * dt - th_dw
        log_b += r * dt
        log_z += -th_dw - 0.5 * th2 * dt
        theta_path[:, i] = theta

        finite = np.all(np.isfinite(log_p), axis=1) & np.all(log_p < _LOG_CAP, axis=1)
        explosion_time[alive & ~finite] = times[i + 1]
        alive &= finite
        dead = ~alive
        if np.any(dead):
            log_p[dead] = np.nan
            log_b[dead] = np.nan
            log_z[dead] = np.nan
            theta_path[dead, i] = np.nan
        P[:, i + 1] = np.exp(log_p)
        logB[:, i + 1] = log_b
        logZ[:, i + 1] = log_z

    return FlowPath(
        grid=w.grid,
        P=P,
        B=np.exp(logB),
        Z=np.exp(logZ),
        H=np.exp(logZ - logB),
        theta=theta_path,
        noise=w,
        max_kappa=max_kappa,
        exploded=~alive,
        explosion_time=explosion_time,
    )


def concat(flows: list[FlowPath]) -> FlowPath:
    """Stack flows of consecutive path blocks simulated on the same grid."""
    first = flows[0]
    if len(flows) == 1:
        return first

    def cat(get):
        return np.concatenate([get(f) for f in flows], axis=0)

    nz = first.noise
    return FlowPath(
        grid=first.grid,
        P=cat(lambda f: f.P),
        B=cat(lambda f: f.B),
        Z=cat(lambda f: f.Z),
        H=cat(lambda f: f.H),
        theta=cat(lambda f: f.theta),
        noise=NoisePath(nz.grid, nz.d, nz.seed, nz.path_index, cat(lambda f: f.noise.increments)),
        max_kappa=max(f.max_kappa for f in flows),
        exploded=cat(lambda f: f.exploded),
        explosion_time=cat(lambda f: f.explosion_time),
    )


def simulate_ensemble(
    m: MarketSpec,
    grid: TimeGrid,
    seed: int,
    n_paths: int,
    s: float = None,
    p=None,
    first_index: int = 0,
    threads: int = 1,
    block: int = DEFAULT_BLOCK,
) -> FlowPath:
    """Generate noise and simulate ``n_paths`` flows in fixed-size blocks.

    Blocks are cut at fixed path indices, so the output is identical for any
    ``threads``.
    """
    if n_paths < 1:
        raise InvalidInputError("need at least one path")
    stop = first_index + n_paths
    starts = list(range(first_index, stop, block))

    def run(start):
        nz = noise_mod.generate(grid, m.d, seed, start, min(block, stop - start))
        return simulate_flow(m, nz, s, p)

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, starts))
    else:
        parts = [run(k) for k in starts]
    return concat(parts)


def deflate(flow: FlowPath, values) -> np.ndarray:
    """``H * values`` for values on the flow grid, shape ``(steps+1,)`` or ``(paths, steps+1)``."""
    values = np.asarray(values, dtype=float)
    if values.shape not in ((flow.grid.steps + 1,), flow.H.shape):
        raise InvalidInputError(f"values of shape {values.shape} do not align with the flow grid {flow.H.shape}")
    return flow.H * values


@dataclass(frozen=True)
class ConsistencyReport:
    steps: list
    gaps: list
    max_abs_gap: float
    convergence_slope: float


def _window(noise: NoisePath, i0: int, i1: int) -> NoisePath:
    g = noise.grid
    return NoisePath(g.window(i0, i1), noise.d, noise.seed, noise.path_index, noise.increments[:, i0:i1])


def check_consistency(
    m: MarketSpec, noise: NoisePath, s: float, s_mid: float, t: float, p=None, factors=(1,)
) -> ConsistencyReport:
    """Restart gap ``|P(s,t,p) - P(s_mid, t, P_h(s, s_mid, p))|`` on common noise.

    ``noise`` lives on the reference grid and ``P(s, t, p)`` is the reference
    flow.  For each coarsening factor the first leg ``[s, s_mid]`` is run on
    the nested coarser grid and its end state restarts the reference flow at
    ``s_mid``.  Factor 1 checks the discrete flow property itself.  ``gaps``
    are path-averaged Euclidean gaps at ``t``; the slope is the log-log
    least-squares exponent against step size over factors above 1.
    """
    if not s <= s_mid <= t:
        raise InvalidInputError("need s <= s_mid <= t")
    g = noise.grid
    i_s, i_mid, i_t = g.index(s), g.index(s_mid), g.index(t)
    ref = _window(noise, 0, i_t)
    direct = simulate_flow(m, ref, s, p).P[:, -1]
    start = _start_states(m, p, noise.n_paths)
    first_leg = _window(noise, i_s, i_mid)

    steps, gaps = [], []
    for f in factors:
        if i_mid > i_s:
            mid_state = simulate_flow(m, noise_mod.coarsen(first_leg, f), s, start).P[:, -1]
        else:
            mid_state = start
        out = simulate_flow(m, ref, s_mid, mid_state).P[:, -1]
        steps.append(float(g.dt[0] * f) if g.steps else 0.0)
        gaps.append(float(np.mean(np.linalg.norm(direct - out, axis=1))))

    pts = [(h, e) for f, h, e in zip(factors, steps, gaps) if f > 1 and e > 0]
    slope = float("nan")
    if len(pts) >= 2:
        h, e = np.array(pts).T
        slope = float(np.polyfit(np.log(h), np.log(e), 1)[0])
    return ConsistencyReport(steps=steps, gaps=gaps, max_abs_gap=float(max(gaps)), convergence_slope=slope)


def check_cocycle(m: MarketSpec, noise: NoisePath, s: float, t: float, p=None) -> float:
    """Largest pathwise ``|P(s, s+t, p)(w) - P(0, t, p)(shift(w, s))|``.

    Only defined for autonomous coefficients on a uniform grid.
    """
    if not m.autonomous:
        raise UnsupportedOperationError("cocycle property needs time-independent coefficients")
    if not noise.grid.is_uniform():
        raise UnsupportedOperationError("cocycle check requires a uniform grid")
    g = noise.grid
    t0 = g.times[0]
    i_s, i_end = g.index(t0 + s), g.index(t0 + s + t)
    trimmed = _window(noise, 0, i_end)
    later = simulate_flow(m, trimmed, g.times[i_s], p).P[:, -1]
    fresh = simulate_flow(m, noise_mod.shift(trimmed, g.times[i_s]), None, p).P[:, -1]
    return float(np.max(np.abs(later - fresh)))


def write_csv(flow: FlowPath, fh, path: int = 0) -> None:
    """One row per grid time: time, P0..Pn, B, Z, H for a single path."""
    w = csv.writer(fh)
    w.writerow(["time"] + [f"P{i}" for i in range(flow.P.shape[2])] + ["B", "Z", "H"])
    for k, t in enumerate(flow.times):
        row = [t, *flow.P[path, k], flow.B[path, k], flow.Z[path, k], flow.H[path, k]]
        w.writerow([repr(float(v)) for v in row])
