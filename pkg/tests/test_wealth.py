import io

import numpy as np
import pytest

from statetame import flow, noise, presets, wealth
from statetame.errors import InvalidInputError


def _flow(m, steps=50, paths=200, seed=0):
    return flow.simulate_ensemble(m, noise.TimeGrid.uniform(m.T, steps), seed, paths)


def test_zero_portfolio_grows_with_bond():
    m = presets.bs_1stock()
    f = _flow(m)
    w = wealth.simulate_wealth(m, f, wealth.PortfolioRule.zero(1), 3.0)
    np.testing.assert_allclose(w.X, 3.0 * f.B, rtol=1e-13)
    np.testing.assert_allclose(w.G, 0.0, atol=1e-13)
    np.testing.assert_allclose(w.pi0, w.X[:, :-1])


def test_buy_and_hold_tracks_stock():
    m = presets.bs_1stock()
    f = _flow(m, steps=400, paths=50)
    rule = wealth.PortfolioRule(lambda x, p, t: p[:, 1:])
    w = wealth.simulate_wealth(m, f, rule, m.p0[1])
    rel = np.abs(w.X[:, -1] / f.P[:, -1, 1] - 1)
    assert rel.max() < 0.02


def test_gain_identity_with_income():
    m = presets.bs_1stock()
    f = _flow(m)
    rule = wealth.PortfolioRule(lambda x, p, t: 0.5 * x[:, None], b_gamma=lambda x, p, t: np.full(x.shape, 2.0))
    w = wealth.simulate_wealth(m, f, rule, 10.0)
    np.testing.assert_allclose(wealth.gain_in_excess(w), w.G, atol=1e-10)
    np.testing.assert_allclose(w.Gamma[:, -1], 2.0, rtol=1e-12)


def test_kappa_portfolio_gains_deterministically():
    m = presets.kappa_arbitrage()
    f = _flow(m, steps=20, paths=100)
    w = wealth.simulate_wealth(m, f, wealth.arbitrage_portfolio(m), 0.0)
    np.testing.assert_allclose(w.G, np.broadcast_to(0.02 * f.times, w.G.shape), atol=1e-12)
    rep = wealth.check_arbitrage_opportunity(w)
    assert rep.all_nonneg and rep.frac_positive == 1.0 and rep.opportunity


def test_arbitrage_portfolio_zero_on_bs():
    m = presets.bs_1stock()
    f = _flow(m, paths=20)
    w = wealth.simulate_wealth(m, f, wealth.arbitrage_portfolio(m), 1.0)
    assert np.all(w.pi == 0.0)
    assert not wealth.check_arbitrage_opportunity(w).opportunity


def test_tameness_screen():
    m = presets.bs_1stock()
    f = _flow(m, paths=100)
    w = wealth.simulate_wealth(m, f, wealth.PortfolioRule(lambda x, p, t: np.full((x.size, 1), 1e4)), 0.0)
    assert wealth.check_state_tame(w).tame
    assert not wealth.check_state_tame(w, floor=0.0).tame


def test_opportunity_requires_self_financing():
    m = presets.bs_1stock()
    f = _flow(m, paths=10)
    rule = wealth.PortfolioRule(lambda x, p, t: np.zeros((x.size, 1)), b_gamma=lambda x, p, t: np.ones(x.size))
    with pytest.raises(InvalidInputError):
        wealth.check_arbitrage_opportunity(wealth.simulate_wealth(m, f, rule, 0.0))


def test_summary_csv():
    m = presets.bs_1stock()
    w = wealth.simulate_wealth(m, _flow(m, steps=5, paths=10), wealth.PortfolioRule.zero(1), 1.0)
    buf = io.StringIO()
    wealth.write_summary_csv(w, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "time,mean_Y,se_Y,inf_HG" and len(lines) == 7
    assert float(lines[-1].split(",")[1]) == pytest.approx(np.mean(w.Y[:, -1]))
