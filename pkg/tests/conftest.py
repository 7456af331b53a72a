import sys

import numpy as np
import pytest

from mrtumor.phantom import PhantomSpec, generate_cohort, template_volume
from mrtumor.pipeline import prepare_patients


@pytest.fixture(scope="session")
def template():
    return template_volume(PhantomSpec())


@pytest.fixture(scope="session")
def small_cohort():
    """20 normal + 20 tumor phantoms at the default noise level."""
    return generate_cohort(PhantomSpec(), n_normal=20, n_tumor=20, seed=7)


@pytest.fixture(scope="session")
def small_records(small_cohort, template):
    # phantoms are generated in register, so skipping registration keeps this fast
    return prepare_patients(small_cohort, template, workers=1, do_register=False)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
