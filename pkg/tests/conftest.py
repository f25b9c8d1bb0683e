import numpy as np
import pytest

from leica.metric import Models
from leica.synthworld import all_scenes, build_oracles


@pytest.fixture(scope="session")
def small_world():
    """64 px world, 4x4 code grid, one jitter seed: cheap enough for unit tests."""
    return build_oracles(all_scenes((0,)), size=64, K=64)


@pytest.fixture(scope="session")
def small_models(small_world):
    w = small_world
    return Models(w.tokenizer, w.estimator, w.prior, w.matcher)


@pytest.fixture(scope="session")
def world():
    """Default-size world (256 px, K=512, four jitter seeds)."""
    return build_oracles()


@pytest.fixture(scope="session")
def models(world):
    return Models(world.tokenizer, world.estimator, world.prior, world.matcher)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = {}


@pytest.fixture
def acceptance(request):
    """``record(n, ok, detail)`` files one criterion line for the terminal summary."""
    rows = request.config.stash[ACCEPTANCE]

    def record(n: int, ok: bool, detail: str) -> bool:
        rows[n] = (bool(ok), detail)
        print(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter, config):
    rows = config.stash.get(ACCEPTANCE, {})
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(rows):
        ok, detail = rows[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
