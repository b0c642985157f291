import pytest

from micropolar_rb.basis import DomainSpec, build_all

SMALL = DomainSpec(ax=2.0, ay=2.0, Mv=16, Nh=2)
TINY = DomainSpec(Mv=8, Nh=1, Nz=2, Nmodes=(3, 3, 3))
DESK = DomainSpec(ax=2.0, ay=2.0, Mv=32, Nh=4)

# one line per acceptance criterion, printed after the run
ACCEPTANCE = {}


@pytest.fixture(scope="session")
def small_bases():
    return build_all(SMALL)


@pytest.fixture(scope="session")
def tiny_bases():
    return build_all(TINY)


@pytest.fixture(scope="session")
def desk_bases():
    return build_all(DESK)


@pytest.fixture
def record():
    def put(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE[number] = line
        print(line)

    return put


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
