import numpy as np
import pytest

from salsa.space import SynthonSet, build_space, generate_space


def make_set(v, n, d=2, seed=0):
    rng = np.random.default_rng(seed + 100 * v)
    return SynthonSet(v, tuple(f"s{v}_{i}" for i in range(n)), rng.random((n, d)))


@pytest.fixture
def toy_space():
    return build_space([make_set(0, 2), make_set(1, 2)])


@pytest.fixture
def space_10x10():
    return generate_space([10, 10], dim=4, seed=3)


@pytest.fixture
def space_100x100():
    return generate_space([100, 100], dim=16, seed=0)


# --- acceptance reporting -------------------------------------------------------

_ACCEPTANCE: dict[int, list[tuple[bool, str]]] = {}


@pytest.fixture
def acceptance_report():
    """Record one checked part of an acceptance criterion and print its line."""

    def report(criterion: int, ok: bool, detail: str) -> bool:
        _ACCEPTANCE.setdefault(criterion, []).append((bool(ok), detail))
        print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(_ACCEPTANCE):
        parts = _ACCEPTANCE[criterion]
        status = "PASS" if all(ok for ok, _ in parts) else "FAIL"
        terminalreporter.write_line(f"criterion {criterion}: {status}")
        for ok, detail in parts:
            terminalreporter.write_line(f"    [{'ok' if ok else 'FAIL'}] {detail}")
