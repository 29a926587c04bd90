import numpy as np
import pytest

from cyclespace.case_io import BranchRecord, BusRecord, GridCase, load_case

TRIANGLE_M = """function mpc = triangle
mpc.baseMVA = 100;
%% bus_i type Pd Qd Gs Bs area Vm Va baseKV zone Vmax Vmin
mpc.bus = [
    1   3   0    0   0   0   1   1   0   1   1   1.1   0.9;
    2   1   50   0   0   0   1   1   0   1   1   1.1   0.9;
    3   1   30   0   0   0   1   1   0   1   1   1.1   0.9;
];
%% fbus tbus r x b rateA rateB rateC ratio angle status angmin angmax
mpc.branch = [
    1   2   0   0.1   0   0   0   0   0   0   1   -360   360;
    2   3   0   0.2   0   0   0   0   0   0   1   -360   360;
    3   1   0   0.3   0   0   0   0   0   0   1   -360   360;
];
"""


def make_case(edges, reactances=None, loads=None, slack=1, name="test"):
    """GridCase over buses 1..n from (from, to) pairs."""
    n = max(max(e) for e in edges)
    x = reactances if reactances is not None else [0.1] * len(edges)
    loads = loads if loads is not None else [0.0] + [0.1] * (n - 1)
    buses = [BusRecord(i + 1, loads[i]) for i in range(n)]
    branches = [BranchRecord(k, a, b, x[k]) for k, (a, b) in enumerate(edges)]
    return GridCase(name, 100.0, buses, branches, slack)


@pytest.fixture
def triangle():
    return make_case([(1, 2), (2, 3), (3, 1)], [0.1, 0.2, 0.3], [0.0, 0.5, 0.3], name="triangle")


@pytest.fixture(scope="session")
def ieee14():
    return load_case("ieee14")


@pytest.fixture(scope="session")
def ieee30():
    return load_case("ieee30")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def flows14():
    """Noise-free and sigma=0.02 14-bus load-driven flows: 2000 training + 300 held-out samples."""
    from cyclespace.case_io import synthetic_profile
    from cyclespace.dcsim import NoiseModel, build_h, generate_measurements, simulate_states

    case = load_case("ieee14")
    h = build_h(case)
    T = 2300
    st = simulate_states(case, synthetic_profile(T, seed=1), T, seed=1)
    clean = generate_measurements(h, st, NoiseModel.homoscedastic(1e-300, h.m), seed=1)
    noisy = generate_measurements(h, st, NoiseModel.homoscedastic(0.02, h.m), seed=1)
    return h, clean, noisy


@pytest.fixture(scope="session")
def ae14(flows14):
    from cyclespace.autoencoder import TrainConfig, train_autoencoder

    h, _, noisy = flows14
    return train_autoencoder(noisy.z[:, :2000], h.n_states, TrainConfig())


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
