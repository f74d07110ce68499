"""Built-in markets and claims.

Every preset market is autonomous (no calendar-time dependence) and starts
the shadow stock at 1, so ``P_0 = H``.
"""

from __future__ import annotations

import numpy as np

from .europricer import ClaimSpec
from .market import MarketSpec


def _const(value):
    value = np.asarray(value, dtype=float)
    return lambda p, t: value


def bs_1stock(r=0.05, sigma=0.2, b=0.08, delta=0.0, s0=100.0, T=1.0) -> MarketSpec:
    """One stock, one factor, constant coefficients."""
    return MarketSpec(
        n=1, d=1, b=_const([b]), sigma=_const([[sigma]]), delta=_const([delta]), r=_const(r),
        p0=[1.0, s0], T=T, autonomous=True, name="bs-1stock",
    )


def kappa_arbitrage(r=0.0, s0=100.0, T=1.0) -> MarketSpec:
    """Two stocks on one factor with excess returns (0.1, 0.3): kappa = (-0.1, 0.1)."""
    return MarketSpec(
        n=2, d=1, b=_const([0.1 + r, 0.3 + r]), sigma=_const([[1.0], [1.0]]), delta=_const([0.0, 0.0]),
        r=_const(r), p0=[1.0, s0, s0], T=T, autonomous=True, name="kappa-arbitrage",
    )


def rank_deficient_2factor(r=0.05, sigma=0.2, b=0.08, s0=100.0, T=1.0) -> MarketSpec:
    """One stock on two factors, loading only on the first: the second factor is unhedgeable."""
    return MarketSpec(
        n=1, d=2, b=_const([b]), sigma=_const([[sigma, 0.0]]), delta=_const([0.0]), r=_const(r),
        p0=[1.0, s0], T=T, autonomous=True, name="rank-deficient-2factor",
    )


def state_dependent_vol(r=0.03, b=0.06, s0=100.0, T=1.0, lo=0.1, hi=0.3, scale=100.0) -> MarketSpec:
    """Local volatility ``lo + (hi - lo) scale / (p_1 + scale)``: bounded, smooth, decreasing in price."""

    def sigma(p, t):
        p1 = np.asarray(p)[..., 1]
        return (lo + (hi - lo) * scale / (p1 + scale))[..., None, None]

    return MarketSpec(
        n=1, d=1, b=_const([b]), sigma=sigma, delta=_const([0.0]), r=_const(r),
        p0=[1.0, s0], T=T, autonomous=True, name="state-dependent-vol",
    )


MARKETS = {
    "bs-1stock": bs_1stock,
    "kappa-arbitrage": kappa_arbitrage,
    "rank-deficient-2factor": rank_deficient_2factor,
    "state-dependent-vol": state_dependent_vol,
}


def call(strike=100.0, asset=1) -> ClaimSpec:
    return ClaimSpec(lambda p, w: np.maximum(p[:, asset] - strike, 0.0), f"call(K={strike})")


def put(strike=100.0, asset=1) -> ClaimSpec:
    return ClaimSpec(lambda p, w: np.maximum(strike - p[:, asset], 0.0), f"put(K={strike})")


def digital(strike=100.0, asset=1) -> ClaimSpec:
    return ClaimSpec(lambda p, w: (p[:, asset] > strike).astype(float), f"digital(K={strike})")


def barrier_capped(strike=100.0, barrier=130.0, asset=1) -> ClaimSpec:
    """Call that pays its intrinsic value at the first time the price reaches ``barrier`` (or at expiry)."""
    return ClaimSpec(
        lambda p, w: np.maximum(p[:, asset] - strike, 0.0),
        f"barrier-capped(K={strike},U={barrier})",
        barrier=lambda p: p[:, asset] < barrier,
    )


CLAIMS = {"call": call, "put": put, "digital": digital, "barrier-capped": barrier_capped}


def listing() -> str:
    """Plain-text table of the built-in presets."""
    lines = ["markets:"]
    for name, fn in MARKETS.items():
        lines.append(f"  {name:<24} {fn.__doc__.strip().splitlines()[0] if fn.__doc__ else ''}")
    lines.append("claims:")
    for name, fn in CLAIMS.items():
        doc = (fn.__doc__ or name).strip().splitlines()[0]
        lines.append(f"  {name:<24} {doc}")
    return "\n".join(lines)
