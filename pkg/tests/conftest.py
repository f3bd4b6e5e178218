from __future__ import annotations

import numpy as np
import pytest

from ssitl.model import load_model, parse_model


def make_net(doc: dict):
    return parse_model(doc)


def decay_net(k=1.0, x0=100, T=1.0):
    return make_net({"species": ["S"], "initial": [x0], "T": T,
                     "reactions": [{"rate": k, "reactants": {"S": 1}, "products": {}}]})


def linear_pair_net(x0=(50, 10), T=1.0):
    """Birth of A, conversion A -> B, decay of B; every law is linear."""
    return make_net({
        "species": ["A", "B"], "initial": list(x0), "T": T,
        "reactions": [
            {"rate": 20.0, "reactants": {}, "products": {"A": 1}},
            {"rate": 2.0, "reactants": {"A": 1}, "products": {"B": 1}},
            {"rate": 1.0, "reactants": {"B": 1}, "products": {}},
        ],
    })


def zero_rate_net(T=1.0):
    return make_net({
        "species": ["A", "B"], "initial": [7, 3], "T": T,
        "reactions": [
            {"rate": 0.0, "reactants": {"A": 1}, "products": {"B": 1}},
            {"rate": 0.0, "reactants": {"B": 2}, "products": {}},
        ],
    })


@pytest.fixture(scope="session")
def ex1():
    return load_model("example1")


@pytest.fixture(scope="session")
def ex2():
    return load_model("example2")


@pytest.fixture
def decay():
    return decay_net()


@pytest.fixture
def pair():
    return linear_pair_net()


@pytest.fixture
def zero_net():
    return zero_rate_net()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config._acceptance_lines = []


@pytest.fixture
def report(request):
    """Record one pass/fail line per acceptance criterion, printed in the terminal summary."""
    lines = request.config._acceptance_lines

    def record(number: int, name: str, ok: bool, detail: str) -> None:
        line = f"CRITERION {number} {'PASS' if ok else 'FAIL'} {name}: {detail}"
        lines.append(line)
        print(line, flush=True)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
