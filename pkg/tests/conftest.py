import numpy as np
import pytest

from abworld.core import AbstractState, Vocabulary
from abworld.env_craft import make_env


@pytest.fixture(scope="session")
def craft2():
    return make_env("craft2")


@pytest.fixture(scope="session")
def craft3():
    return make_env("craft3")


@pytest.fixture(scope="session")
def craft4():
    return make_env("craft4")


@pytest.fixture(scope="session")
def adversarial():
    return make_env("craft_adversarial")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy_vocab():
    return Vocabulary(("a", "b", "c"))


@pytest.fixture
def toy_state():
    # a IN_WORLD, b IN_INVENTORY, c ABSENT
    return AbstractState([(1, 0), (2, 1), (3, 2)])


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def criterion(request, capsys):
    """``criterion(n, ok, detail)`` prints and records one pass/fail line, returns ``ok``."""
    def report(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.stash[_ACCEPTANCE].append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok
    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
