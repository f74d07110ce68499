import io

import numpy as np
import pytest

from oracles import bs_price, crr_price
from statetame import ampricer, flow, noise, presets
from statetame.errors import HedgingInfeasibleError, InvalidInputError


def test_exercise_indices():
    np.testing.assert_array_equal(ampricer.exercise_indices(10, 5), [0, 2, 4, 6, 8, 10])
    with pytest.raises(InvalidInputError):
        ampricer.exercise_indices(10, 3)


def test_american_put_brackets_lattice(put_market, put_flows):
    train, test = put_flows
    env = ampricer.price_american(put_market, presets.put(), train, test_flow=test)
    oracle = crr_price(100, 100, 1, 0.06, 0.2, 1000)
    assert env.lower.mean < oracle + 3 * env.lower.se
    assert abs(env.lower.mean / oracle - 1) < 0.02
    assert abs(env.upper.mean / oracle - 1) < 0.02
    assert env.upper.mean >= env.lower.mean - 3 * env.lower.se


def test_simple_rules(put_market, put_flows):
    data = ampricer.exercise_data(put_market, presets.put(), put_flows[0])
    assert ampricer.evaluate_stopping(data, ampricer.Immediate()).mean == 0.0
    never = ampricer.evaluate_stopping(data, ampricer.Never())
    assert abs(never.mean - bs_price(100, 100, 1, 0.06, 0.2, call=False)) < 4 * never.se
    thr = ampricer.Threshold(85.0)
    stop = thr.stop_index(data)
    early = stop < data.dates - 1
    assert np.all(data.P[early, stop[early], 1] <= 85.0)


def test_state_rule_matches_threshold(put_market, put_flows):
    data = ampricer.exercise_data(put_market, presets.put(), put_flows[0])
    a = ampricer.Threshold(90.0).stop_index(data)
    b = ampricer.StateRule(lambda t, g, p: (p[:, 1] <= 90.0) & (g > 0)).stop_index(data)
    np.testing.assert_array_equal(a, b)


def test_combined_rule_does_not_lose(put_market, put_flows):
    train = ampricer.exercise_data(put_market, presets.put(), put_flows[0], ampricer.exercise_indices(50, 10))
    test = ampricer.exercise_data(put_market, presets.put(), put_flows[1], train.index)
    r1, r2 = ampricer.Threshold(80.0), ampricer.Threshold(90.0)
    combo = ampricer.combine_stopping(r1, r2, train)
    v = ampricer.evaluate_stopping(test, combo)
    for r in (r1, r2):
        base = ampricer.evaluate_stopping(test, r)
        assert v.mean >= base.mean - 3 * np.hypot(v.se, base.se)


def test_supermartingale_check_detects_corruption(put_market, put_flows):
    env = ampricer.price_american(put_market, presets.put(), put_flows[0], ampricer.exercise_indices(50, 10))
    assert ampricer.check_snell_supermartingale(env.data, env.Ybar).ok
    rising = env.Ybar + np.linspace(0, 5, env.Ybar.shape[1])[None]
    assert not ampricer.check_snell_supermartingale(env.data, rising).ok
    assert not ampricer.check_snell_supermartingale(env.data, env.Ybar - 1.0).ok
    never = ampricer.rule_value_process(env.data, ampricer.Never())
    assert ampricer.check_snell_supermartingale(env.data, never).dominated_fraction < 1.0


def test_domination_check():
    times = np.array([0.0, 0.5, 1.0])
    b = ampricer.Structure(times, np.ones((2, 3)), np.zeros((2, 3)), np.array([2, 1]))
    a = ampricer.Structure(times, np.full((2, 3), 2.0), np.zeros((2, 3)), np.array([2, 2]))
    assert ampricer.check_domination(a, b).dominates
    rep = ampricer.check_domination(b, a)
    assert not rep.dominates and rep.worst_wealth_gap == pytest.approx(1.0)
    worse_income = ampricer.Structure(times, a.X, np.full((2, 3), 0.5), a.stop)
    assert not ampricer.check_domination(worse_income, b).dominates


def test_dominating_hedge_on_complete_market(put_market, put_flows):
    rep = ampricer.dominating_hedge(put_market, presets.put(), put_flows[0], put_flows[1], ampricer.exercise_indices(50, 25))
    assert rep.verdict
    assert rep.price == pytest.approx(crr_price(100, 100, 1, 0.06, 0.2, 1000), rel=0.03)


def test_dominating_hedge_infeasible_when_incomplete():
    m = presets.rank_deficient_2factor(r=0.06)
    g = noise.TimeGrid.uniform(1.0, 20)
    f = flow.simulate_ensemble(m, g, 4, 4000)
    t = flow.simulate_ensemble(m, g, 4, 4000, first_index=4000)
    with pytest.raises(HedgingInfeasibleError):
        ampricer.dominating_hedge(m, presets.put(), f, t)


def test_moment_diagnostic_reports_degenerate_arguments():
    sampler = lambda x, p, s, t: np.sqrt(t) * np.linspace(-1, 1, 11)
    rep = ampricer.moment_exponent_diagnostic(sampler, {"x": 0.0, "p": [1.0, 1.0], "s": 0.0, "t": 1.0},
                                         {"x": [0.1, 0.2], "t": [0.1, 0.2, 0.4]})
    assert rep.degenerate == ("x",) and rep.condition_met is None
    assert rep.exponents["t"] == pytest.approx(2.0, abs=0.1)
    with pytest.raises(InvalidInputError):
        ampricer.moment_exponent_diagnostic(sampler, {"x": 0.0, "p": [1.0], "s": 0.0, "t": 1.0}, {"q": [0.1, 0.2]})


def test_value_csv_and_boundary(put_market, put_flows):
    env = ampricer.price_american(put_market, presets.put(), put_flows[0], ampricer.exercise_indices(50, 10))
    buf = io.StringIO()
    ampricer.write_value_csv([("put", env)], buf)
    assert buf.getvalue().splitlines()[0] == "claim,lower,lower_se,regression,regression_se"
    boundary = ampricer.exercise_boundary(env)
    assert len(boundary) > 0
