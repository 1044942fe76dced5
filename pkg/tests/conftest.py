import numpy as np
import pytest

from qflow.conformal import PaneitzMultiplier
from qflow.sphere import make_context

# criterion number -> (passed, detail), filled by the acceptance suite
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def record_criterion():
    def record(number: int, passed: bool, detail: str) -> bool:
        ACCEPTANCE[number] = (bool(passed), detail)
        print(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def ctx2():
    return make_context(2, "full2d", 32)


@pytest.fixture(scope="session")
def ctx2_64():
    return make_context(2, "full2d", 64)


@pytest.fixture(scope="session")
def ctx4():
    return make_context(4, "axisymmetric", 32)


@pytest.fixture(scope="session")
def mult2(ctx2):
    return PaneitzMultiplier.for_context(ctx2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_field(ctx, rng, amp: float, lmax: int) -> np.ndarray:
    """Band-limited coefficients whose grid values satisfy max|u| = amp."""
    c = rng.standard_normal(ctx.ncoeffs) * (ctx.degrees <= lmax)
    return c * amp / np.max(np.abs(ctx.synthesize(c)))
