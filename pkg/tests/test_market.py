import numpy as np
import pytest

from statetame import market, presets
from statetame.errors import InvalidInputError, ModelEvaluationError


def test_bs_risk_price():
    m = presets.bs_1stock()
    rp = market.risk_price(m, m.p0, 0.0)
    np.testing.assert_allclose(rp.theta, [(0.08 - 0.05) / 0.2])
    np.testing.assert_allclose(rp.kappa, [0.0], atol=1e-15)
    assert rp.rank == 1


def test_kappa_preset_hand_value():
    m = presets.kappa_arbitrage()
    rp = market.risk_price(m, m.p0, 0.0)
    np.testing.assert_allclose(rp.kappa, [-0.1, 0.1], atol=1e-15)
    np.testing.assert_allclose(rp.theta, [0.2], atol=1e-15)


def test_arbitrage_screen():
    assert market.is_state_arbitrage_free(presets.bs_1stock(), samples=256).free
    rep = market.is_state_arbitrage_free(presets.kappa_arbitrage(), samples=256)
    assert not rep.free
    assert rep.worst_kappa_norm == pytest.approx(np.sqrt(0.02), abs=1e-12)
    assert rep.witness_p.shape == (3,)


def test_completeness():
    assert market.completeness_check(presets.bs_1stock(), samples=64).complete
    rep = market.completeness_check(presets.rank_deficient_2factor(), samples=64)
    assert not rep.complete and rep.min_rank == 1 and rep.k == 2
    assert market.completeness_check(presets.rank_deficient_2factor(), samples=64, indices=[0]).complete
    assert not market.completeness_check(presets.rank_deficient_2factor(), samples=64, indices=[1]).complete
    with pytest.raises(InvalidInputError):
        market.completeness_check(presets.bs_1stock(), indices=[3])


def test_state_dependent_vol_values():
    m = presets.state_dependent_vol()
    c = m.coefficients(np.array([[1.0, 100.0], [1.0, 0.0001]]), 0.0)
    np.testing.assert_allclose(c.sigma[:, 0, 0], [0.2, 0.3], atol=1e-6)


def test_lipschitz_screen():
    rep = market.lipschitz_screen(presets.state_dependent_vol(), samples=64)
    assert rep.finite and 0 < rep.max_quotient < 0.01


def test_non_finite_coefficients_raise():
    m = market.MarketSpec(1, 1, lambda p, t: np.where(p[:, 1] > 60, 0.05, np.inf)[:, None], lambda p, t: np.array([[0.2]]),
                          lambda p, t: np.zeros(1), lambda p, t: np.array(0.0), [1, 100], 1.0)
    with pytest.raises(ModelEvaluationError):
        m.coefficients(np.array([[1.0, 50.0]]), 0.0)


def test_spec_validation():
    with pytest.raises(InvalidInputError):
        presets.bs_1stock(s0=-1.0)
    with pytest.raises(InvalidInputError):
        presets.bs_1stock(T=0.0)
    with pytest.raises(InvalidInputError):
        market.risk_price(presets.bs_1stock(), np.array([1.0, -1.0]), 0.0)
