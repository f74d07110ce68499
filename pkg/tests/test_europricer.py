import io

import numpy as np
import pytest

from oracles import bs_delta, bs_digital, bs_price
from statetame import europricer, flow, noise, presets
from statetame.errors import (
    ExplosionError,
    HedgingInfeasibleError,
    InvalidInputError,
    PricingRefusedError,
    WitnessUnavailableError,
)
from statetame.europricer import ClaimSpec
from statetame.market import MarketSpec


def test_call_and_digital_against_closed_form(bs_market, bs_flow):
    call = europricer.price_european(bs_market, presets.call(), bs_flow)
    assert abs(call.price - bs_price(100, 100, 1, 0.05, 0.2)) < 4 * call.se
    dig = europricer.price_european(bs_market, presets.digital(), bs_flow)
    assert abs(dig.price - bs_digital(100, 100, 1, 0.05, 0.2)) < 4 * dig.se


def test_pricing_is_linear_on_common_paths(bs_market, bs_flow):
    c = europricer.price_european(bs_market, presets.call(), bs_flow).price
    p = europricer.price_european(bs_market, presets.put(), bs_flow).price
    mix = ClaimSpec(lambda q, w: 2 * np.maximum(q[:, 1] - 100, 0) - 3 * np.maximum(100 - q[:, 1], 0))
    assert europricer.price_european(bs_market, mix, bs_flow).price == pytest.approx(2 * c - 3 * p, rel=1e-12)


def test_barrier_stops_at_first_exit(bs_market, bs_flow):
    claim = presets.barrier_capped(100, 115)
    cp = europricer.claim_paths(bs_market, claim, bs_flow)
    hit = cp.stop < bs_flow.grid.steps
    assert hit.any() and (~hit).any()
    rows = np.flatnonzero(hit)
    assert np.all(bs_flow.P[rows, cp.stop[rows], 1] >= 115)
    before = [bs_flow.P[r, : cp.stop[r], 1].max() for r in rows[:50]]
    assert max(before) < 115
    np.testing.assert_allclose(cp.payoff[hit], bs_flow.P[rows, cp.stop[rows], 1] - 100)


def test_barrier_must_contain_start(bs_market, bs_flow):
    with pytest.raises(InvalidInputError):
        europricer.claim_paths(bs_market, presets.barrier_capped(100, 90), bs_flow)


def test_income_is_priced():
    m = presets.bs_1stock(sigma=0.2)
    f = flow.simulate_ensemble(m, noise.TimeGrid.uniform(1.0, 20), 1, 500)
    claim = ClaimSpec(lambda p, w: np.zeros(p.shape[0]), b_gamma=lambda p, t: np.full(p.shape[0], -1.0))
    # paying a unit rate costs the annuity value
    price = europricer.price_european(m, claim, f).price
    assert price == pytest.approx((1 - np.exp(-0.05)) / 0.05, rel=0.02)


def test_refuses_arbitrage_market():
    m = presets.kappa_arbitrage()
    f = flow.simulate_ensemble(m, noise.TimeGrid.uniform(1.0, 10), 1, 100)
    with pytest.raises(PricingRefusedError):
        europricer.price_european(m, presets.call(), f)


def test_explosion_is_reported():
    const = lambda v: (lambda p, t: np.asarray(v, dtype=float))
    m = MarketSpec(1, 1, const([400.0]), const([[0.1]]), const([0.0]), const(0.0), [1.0, 1.0], 3.0)
    f = flow.simulate_ensemble(m, noise.TimeGrid.uniform(3.0, 6), 1, 10)
    with pytest.raises(ExplosionError):
        europricer.price_european(m, presets.call(), f)


def test_synthesize_recovers_known_portfolio(bs_market):
    f = flow.simulate_ensemble(bs_market, noise.TimeGrid.uniform(1.0, 10), 2, 50)
    X = np.full((50, 11), 5.0)
    pi_true = np.full((50, 10, 1), 3.0)
    # sigma' pi = H^-1 phi + X theta  =>  phi = H (sigma' pi - X theta)
    phi = f.H[:, :-1, None] * (0.2 * pi_true - X[:, :-1, None] * f.theta)
    sol = europricer.synthesize_hedge(bs_market, f, X, phi)
    np.testing.assert_allclose(sol.pi, pi_true, rtol=1e-10)
    np.testing.assert_allclose(sol.pi0, 2.0, rtol=1e-10)


def test_hedge_matches_black_scholes_delta(bs_market, bs_flow):
    claim = presets.call()
    est = europricer.estimate_representation(bs_market, claim, bs_flow)
    price = europricer.price_european(bs_market, claim, bs_flow).price
    assert est.V[0, 0] == pytest.approx(price, rel=0.02)
    sol = europricer.synthesize_hedge(bs_market, bs_flow, est.V, est.phi)
    k = 25
    S = bs_flow.P[:, k, 1]
    exact = bs_delta(S, 100, 1 - bs_flow.times[k], 0.05, 0.2) * S
    err = np.sqrt(np.mean((sol.pi[:, k, 0] - exact) ** 2)) / np.sqrt(np.mean(exact**2))
    assert err < 0.1


def test_replication_error_shrinks_with_steps(bs_market):
    claim = presets.call()
    errs = []
    for steps in (25, 100):
        f = flow.simulate_ensemble(bs_market, noise.TimeGrid.uniform(1.0, steps), 5, 10000)
        est = europricer.estimate_representation(bs_market, claim, f)
        price = europricer.price_european(bs_market, claim, f).price
        errs.append(europricer.replication_backtest(bs_market, claim, est.rep, price, 10000, 6).terminal_rmse)
    assert errs[1] < errs[0]


def test_witness_on_rank_deficient_market():
    m = presets.rank_deficient_2factor()
    g = noise.TimeGrid.uniform(1.0, 20)
    rep = europricer.incompleteness_witness(m, g, paths=64, seed=1)
    assert not rep.hedgeable and rep.residual > 10 * europricer.HEDGE_TOL
    assert np.allclose(rep.psi[..., 0], 0.0) and np.all(rep.psi[..., 1] != 0)
    assert europricer.incompleteness_witness(m, g, paths=16, scale=0.0).hedgeable
    assert europricer.incompleteness_witness(m, g, indices=[1], paths=16).residual > 0
    with pytest.raises(WitnessUnavailableError):
        europricer.incompleteness_witness(m, g, indices=[0], paths=16)
    with pytest.raises(WitnessUnavailableError):
        europricer.incompleteness_witness(presets.bs_1stock(), g, paths=16)


def test_claim_on_hedgeable_factor_only_is_hedgeable():
    m = presets.rank_deficient_2factor()
    f = flow.simulate_ensemble(m, noise.TimeGrid.uniform(1.0, 20), 3, 4000)
    base = presets.call()
    claim = ClaimSpec(base.payoff, driving=(0,))
    est = europricer.estimate_representation(m, claim, f)
    europricer.synthesize_hedge(m, f, est.V, est.phi)
    with pytest.raises(HedgingInfeasibleError):
        unrestricted = europricer.estimate_representation(m, base, f)
        europricer.synthesize_hedge(m, f, unrestricted.V, unrestricted.phi)


def test_price_csv():
    buf = io.StringIO()
    europricer.write_price_csv([("call", 10.5, 0.04)], buf)
    assert buf.getvalue().splitlines() == ["claim,price,se", "call,10.5,0.04"]


def test_orthogonal_factor_claim():
    m = presets.rank_deficient_2factor()
    f = flow.simulate_ensemble(m, noise.TimeGrid.uniform(1.0, 20), 8, 20000)
    claim = ClaimSpec(lambda p, w: np.maximum(-w[:, 1], 0.0), "w2-put", uses_noise=True)
    pr = europricer.price_european(m, claim, f)
    # H depends on the first factor only, so the price is a discounted half-normal mean
    assert abs(pr.price - np.exp(-0.05) / np.sqrt(2 * np.pi)) < 4 * pr.se
    est = europricer.estimate_representation(m, claim, f)
    with pytest.raises(HedgingInfeasibleError):
        europricer.synthesize_hedge(m, f, est.V, est.phi)
