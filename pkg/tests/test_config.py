import numpy as np
import pytest

from statetame import config, expr, presets
from statetame.errors import ValidationError


def test_expression_arithmetic():
    e = expr.Expression("max(p1 - 100, 0) + exp(log(2)) * t ** 2 - -1", 1)
    p = np.array([[1.0, 90.0], [1.0, 110.0]])
    np.testing.assert_allclose(e(p, 3.0), [19.0, 29.0])


@pytest.mark.parametrize("src", ["__import__('os')", "p1.real", "[1]", "lambda: 1", "p9", "x", "'a'", "f(1)", "1 < 2", "min(1)"])
def test_expression_rejects_unsafe_or_unknown(src):
    with pytest.raises(ValidationError):
        expr.Expression(src, 2)


def test_matrix_constant_and_state_dependent():
    const = expr.matrix([["0.2", "0"]], 1, 1, 2)
    assert const(np.ones((4, 2)), 0.0).shape == (1, 2)
    local = expr.matrix([["0.1 + p1/1000", "0"]], 1, 1, 2)
    out = local(np.array([[1.0, 100.0], [1.0, 200.0]]), 0.0)
    np.testing.assert_allclose(out[:, 0, 0], [0.2, 0.3])


def _base(**over):
    raw = {"market": {"preset": "bs-1stock"}, "grid": {"steps": 10}, "noise": {"seed": 1, "paths": 100},
           "task": {"name": "price-eu"}, "claim": {"preset": "call"}}
    raw.update(over)
    return raw


@pytest.mark.parametrize("name", list(presets.MARKETS))
def test_every_preset_validates(name):
    cfg = config.validate(_base(market={"preset": name}))
    assert cfg.build_market().name == name


@pytest.mark.parametrize("claim", list(presets.CLAIMS))
def test_every_claim_validates(claim):
    config.validate(_base(claim={"preset": claim}))


def test_explicit_market_matches_preset():
    raw = _base(market={"n": 1, "d": 1, "b": ["0.08"], "sigma": [["0.2"]], "r": "0.05", "p0": [1, 100], "T": 1})
    m = config.validate(raw).build_market()
    ref = presets.bs_1stock()
    p = np.array([[1.0, 100.0]])
    for key in ("b", "sigma", "delta", "r"):
        np.testing.assert_allclose(getattr(m, key)(p, 0.0), getattr(ref, key)(p, 0.0))


@pytest.mark.parametrize(
    "raw",
    [
        [],
        {"bogus": {}},
        {"market": {"preset": "nope"}, "task": {"name": "price-eu"}},
        _base(task={"name": "fly"}),
        _base(grid={"steps": 0}),
        _base(noise={"seed": -1}),
        _base(market={"preset": "bs-1stock", "n": 2}),
        _base(market={"n": 1, "d": 1, "b": ["0.08"], "sigma": [["0.2"]], "r": "0.05", "p0": [1], "T": 1}),
        _base(market={"n": 1, "d": 1, "b": ["0.08"], "sigma": [["0.2", "0"]], "r": "0.05", "p0": [1, 100], "T": 1}),
        _base(claim={"preset": "call", "asset": 2}),
        _base(claim={"preset": "barrier-capped", "barrier": 50}),
        _base(claim={"preset": "call", "barrier": 120}),
        _base(task={"name": "price-am"}),
        _base(grid={"steps": 10, "exercise_dates": 3}),
        _base(task={"name": "consistency", "s_mid": 0.33}),
        _base(task={"name": "price-eu", "typo": 1}),
        _base(tolerances={"kappa": -1}),
    ],
)
def test_invalid_configs_rejected(raw):
    with pytest.raises(ValidationError):
        config.validate(raw)


def test_overrides_and_digest():
    cfg = config.validate(_base())
    again = config.validate(_base())
    assert cfg.digest() == again.digest()
    other = cfg.with_overrides(seed=2, paths=50)
    assert (other.seed, other.paths) == (2, 50) and other.digest() != cfg.digest()
    assert cfg.seed == 1


def test_load_yaml(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("market: {preset: bs-1stock}\ntask: {name: simulate}\n")
    assert config.load(path).task_name == "simulate"
    path.write_text("market: [unclosed\n")
    with pytest.raises(ValidationError):
        config.load(path)
    with pytest.raises(ValidationError):
        config.load(tmp_path / "missing.yaml")
