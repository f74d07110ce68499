"""Markets with deterministic coefficients and their coefficient-level checks.

Coefficient callables take ``(p, t)`` where ``p`` has shape ``(N, n+1)``
(column 0 is the shadow stock) and ``t`` is a float or an ``(N,)`` array.
They may return unbatched arrays when they do not depend on the state:
``b`` and ``delta`` broadcast to ``(N, n)``, ``sigma`` to ``(N, n, d)`` and
``r`` to ``(N,)``.  Keeping constants unbatched lets the price of risk be
computed from a single SVD.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.stats import qmc

from . import linalg
from .errors import InvalidInputError, ModelEvaluationError

Coefficient = Callable[[np.ndarray, "float | np.ndarray"], np.ndarray]

DEFAULT_SAMPLES = 4096


@dataclass(frozen=True)
class MarketSpec:
    n: int
    d: int
    b: Coefficient
    sigma: Coefficient
    delta: Coefficient
    r: Coefficient
    p0: np.ndarray
    T: float
    autonomous: bool = False
    name: str = "custom"

    def __post_init__(self):
        p0 = np.asarray(self.p0, dtype=float)
        if self.n < 1 or self.d < 1:
            raise InvalidInputError("need n >= 1 stocks and d >= 1 noise factors")
        if p0.shape != (self.n + 1,):
            raise InvalidInputError(f"p0 must have shape ({self.n + 1},), got {p0.shape}")
        if not np.all(p0 > 0):
            raise InvalidInputError("initial prices must be strictly positive")
        if not self.T > 0:
            raise InvalidInputError("horizon T must be positive")
        object.__setattr__(self, "p0", p0)

    def coefficients(self, p, t, check: bool = True) -> "Coefficients":
        p = np.atleast_2d(np.asarray(p, dtype=float))
        if p.shape[-1] != self.n + 1:
            raise InvalidInputError(f"state must have {self.n + 1} components")
        b = np.asarray(self.b(p, t), dtype=float)
        sigma = np.asarray(self.sigma(p, t), dtype=float)
        delta = np.asarray(self.delta(p, t), dtype=float)
        r = np.asarray(self.r(p, t), dtype=float)
        if sigma.shape[-2:] != (self.n, self.d):
            raise ModelEvaluationError(f"sigma has shape {sigma.shape}, expected (..., {self.n}, {self.d})")
        if b.shape[-1:] != (self.n,) or delta.shape[-1:] != (self.n,):
            raise ModelEvaluationError("b and delta must end in dimension n")
        if check:
            for name, arr in (("b", b), ("sigma", sigma), ("delta", delta), ("r", r)):
                if not np.all(np.isfinite(arr)):
                    raise ModelEvaluationError(f"coefficient {name} is not finite")
        return Coefficients(b, sigma, delta, r)


@dataclass(frozen=True)
class Coefficients:
    b: np.ndarray
    sigma: np.ndarray
    delta: np.ndarray
    r: np.ndarray

    @property
    def excess(self) -> np.ndarray:
        """b + delta - r 1_n, the excess return the volatility has to explain."""
        return self.b + self.delta - np.asarray(self.r)[..., None]


@dataclass(frozen=True)
class RiskPrice:
    theta: np.ndarray
    kappa: np.ndarray
    rank: "int | np.ndarray"


def risk_price_from(coef: Coefficients, tol: float = linalg.DEFAULT_TOL) -> RiskPrice:
    """Market price of risk and arbitrage residual for evaluated coefficients."""
    theta, kappa = linalg.min_norm_split(coef.sigma, coef.excess, tol)
    s = np.linalg.svd(coef.sigma, compute_uv=False)
    smax = s[..., :1]
    rank = np.count_nonzero((s > tol * smax) & (smax > 0), axis=-1)
    return RiskPrice(theta, kappa, rank)


def risk_price(m: MarketSpec, p, t: float, tol: float = linalg.DEFAULT_TOL) -> RiskPrice:
    """theta, kappa with sigma theta + kappa = b + delta - r 1 and kappa in ker(sigma')."""
    p = np.asarray(p, dtype=float)
    single = p.ndim == 1
    if np.any(p <= 0):
        raise InvalidInputError("prices must be strictly positive")
    rp = risk_price_from(m.coefficients(p, t), tol)
    if single:
        theta = np.broadcast_to(rp.theta, (1, m.d))[0].copy()
        kappa = np.broadcast_to(rp.kappa, (1, m.n))[0].copy()
        return RiskPrice(theta, kappa, int(np.broadcast_to(rp.rank, (1,))[0]))
    return rp


@dataclass(frozen=True)
class Box:
    """Axis-aligned region of (p_0, ..., p_n, t)."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1 or np.any(hi < lo):
            raise InvalidInputError("box bounds must be matching 1-d arrays with lower <= upper")
        if np.any(lo[:-1] <= 0) or lo[-1] < 0:
            raise InvalidInputError("box must lie in positive prices and t >= 0")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def around(cls, m: MarketSpec, rel: float = 0.5) -> "Box":
        """Prices within a factor (1 +- rel) of p0, times in [0, T]."""
        return cls(np.append(m.p0 * (1 - rel), 0.0), np.append(m.p0 * (1 + rel), m.T))

    def sample(self, count: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
        """Low-discrepancy (scrambled Halton) points split into prices and times."""
        u = qmc.Halton(d=self.lower.size, scramble=True, seed=seed).random(count)
        pts = self.lower + u * (self.upper - self.lower)
        return pts[:, :-1], pts[:, -1]


def _check_box(m: MarketSpec, box: Box):
    if box.lower.size != m.n + 2:
        raise InvalidInputError(f"box must have {m.n + 2} coordinates (p_0..p_n, t)")
    if box.upper[-1] > m.T:
        raise InvalidInputError("box times exceed the horizon")


@dataclass(frozen=True)
class ArbitrageReport:
    free: bool
    worst_kappa_norm: float
    witness_p: np.ndarray
    witness_t: float
    tol: float
    samples: int
    rank_min: int
    rank_max: int

    @property
    def rank_varies(self) -> bool:
        """theta may lose Hoelder regularity where the rank of sigma changes."""
        return self.rank_min != self.rank_max


def is_state_arbitrage_free(
    m: MarketSpec, box: Box | None = None, samples: int = DEFAULT_SAMPLES, tol: float = 1e-10
) -> ArbitrageReport:
    """Screen for kappa = 0 on sampled (p, t); the free verdict is a sampled one."""
    box = box or Box.around(m)
    _check_box(m, box)
    p, t = box.sample(samples)
    rp = risk_price_from(m.coefficients(p, t))
    norms = np.broadcast_to(np.linalg.norm(rp.kappa, axis=-1), (samples,))
    ranks = np.broadcast_to(rp.rank, (samples,))
    k = int(np.argmax(norms))
    worst = float(norms[k])
    return ArbitrageReport(
        free=worst <= tol,
        worst_kappa_norm=worst,
        witness_p=p[k],
        witness_t=float(t[k]),
        tol=tol,
        samples=samples,
        rank_min=int(ranks.min()),
        rank_max=int(ranks.max()),
    )


@dataclass(frozen=True)
class CompletenessReport:
    complete: bool
    min_rank: int
    k: int
    witness_p: np.ndarray
    witness_t: float
    min_singular_ratio: float


def completeness_check(
    m: MarketSpec,
    box: Box | None = None,
    samples: int = DEFAULT_SAMPLES,
    indices=None,
    tol: float = linalg.DEFAULT_TOL,
) -> CompletenessReport:
    """Does the column block ``sigma[:, indices]`` keep full column rank on the sample?

    ``indices`` are 0-based noise components (default: all ``d``).  The
    witness is the sampled point with the smallest relative singular value.
    """
    box = box or Box.around(m)
    _check_box(m, box)
    idx = np.arange(m.d) if indices is None else np.asarray(sorted(indices), dtype=int)
    if idx.size == 0 or idx.min() < 0 or idx.max() >= m.d or np.unique(idx).size != idx.size:
        raise InvalidInputError(f"indices must be distinct members of 0..{m.d - 1}")
    p, t = box.sample(samples)
    sigma = np.asarray(m.coefficients(p, t).sigma)[..., idx]
    s = np.broadcast_to(np.linalg.svd(sigma, compute_uv=False), (samples, min(m.n, idx.size)))
    k = idx.size
    if k > m.n:
        # more columns than rows: the block can never have rank k
        s = np.concatenate([s, np.zeros((samples, k - m.n))], axis=1)
    smax = s[:, :1]
    ratio = np.where(smax[:, 0] > 0, s[:, -1] / np.where(smax[:, 0] > 0, smax[:, 0], 1.0), 0.0)
    ranks = np.count_nonzero((s > tol * smax) & (smax > 0), axis=1)
    w = int(np.argmin(ratio))
    min_rank = int(ranks.min())
    return CompletenessReport(
        complete=min_rank == k,
        min_rank=min_rank,
        k=k,
        witness_p=p[w],
        witness_t=float(t[w]),
        min_singular_ratio=float(ratio[w]),
    )


@dataclass(frozen=True)
class LipschitzReport:
    finite: bool
    max_quotient: float
    samples: int


def lipschitz_screen(m: MarketSpec, box: Box | None = None, samples: int = 512, rel_step: float = 1e-4) -> LipschitzReport:
    """Empirical local-Lipschitz screen: largest sampled difference quotient in p.

    This is evidence, not proof: it only sees the sampled points.
    """
    box = box or Box.around(m)
    _check_box(m, box)
    p, t = box.sample(samples)
    rng = np.random.default_rng(0)
    step = rel_step * p * rng.choice([-1.0, 1.0], size=p.shape)
    c0 = m.coefficients(p, t, check=False)
    c1 = m.coefficients(p + step, t, check=False)
    h = np.linalg.norm(step, axis=1)
    diff = np.zeros(samples)
    for a, b in ((c0.b, c1.b), (c0.delta, c1.delta)):
        diff += np.broadcast_to(np.sum((a - b) ** 2, axis=-1), (samples,))
    diff += np.broadcast_to(np.sum((c0.sigma - c1.sigma) ** 2, axis=(-2, -1)), (samples,))
    diff += np.broadcast_to((np.asarray(c0.r) - np.asarray(c1.r)) ** 2, (samples,))
    q = np.sqrt(diff) / h
    finite = all(
        np.all(np.isfinite(x)) for c in (c0, c1) for x in (c.b, c.sigma, c.delta, c.r)
    )
    return LipschitzReport(finite=bool(finite and np.all(np.isfinite(q))), max_quotient=float(np.max(q)), samples=samples)
