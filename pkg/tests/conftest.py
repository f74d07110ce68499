import pytest

from statetame import flow, noise, presets


@pytest.fixture(scope="session")
def bs_market():
    return presets.bs_1stock()


@pytest.fixture(scope="session")
def bs_flow(bs_market):
    return flow.simulate_ensemble(bs_market, noise.TimeGrid.uniform(1.0, 50), 17, 20000)


@pytest.fixture(scope="session")
def put_market():
    return presets.bs_1stock(r=0.06, sigma=0.2)


@pytest.fixture(scope="session")
def put_flows(put_market):
    g = noise.TimeGrid.uniform(1.0, 50)
    return flow.simulate_ensemble(put_market, g, 23, 20000), flow.simulate_ensemble(put_market, g, 23, 20000, first_index=20000)


ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        for line in ACCEPTANCE_LINES[k]:
            terminalreporter.write_line(line)
