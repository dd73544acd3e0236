import os

# Pin BLAS/OpenMP threading before numpy loads anywhere; keeps gradient and
# reduction order deterministic across machines so byte-identity tests hold.
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")

import pytest  # noqa: E402

# One verdict line per acceptance criterion, printed after the test summary
# so they are visible regardless of output capturing.
ACCEPTANCE_LINES: list[str] = []


def pytest_addoption(parser):
    parser.addoption(
        "--fresh-acceptance-cache",
        action="store_true",
        default=False,
        help="discard cached acceptance training runs and retrain every arm",
    )


@pytest.fixture(scope="session")
def fresh_acceptance_cache(request):
    return request.config.getoption("--fresh-acceptance-cache")


@pytest.fixture(scope="session")
def acceptance_report():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
