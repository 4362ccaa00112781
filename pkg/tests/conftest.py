import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None)
settings.load_profile("default")


def random_points(rng, n, side=200.0):
    return rng.uniform(0.0, side, size=(n, 2))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# criterion id -> (passed, detail); filled by the acceptance tests
ACCEPTANCE = {}


@pytest.fixture
def verdict():
    def record(cid, passed, detail):
        ACCEPTANCE[cid] = (bool(passed), detail)
        print(f"{cid} {'PASS' if passed else 'FAIL'}: {detail}")
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE, key=lambda c: int(c[1:])):
        ok, detail = ACCEPTANCE[cid]
        terminalreporter.write_line(f"{cid:>4} {'PASS' if ok else 'FAIL'}  {detail}")
