import pytest

from nolan.testbed import calibrated_testbed


@pytest.fixture(scope="session")
def testbed():
    return calibrated_testbed()


@pytest.fixture(scope="session")
def adversarial_suite(testbed):
    return testbed.adversarial_suite(40, seed=0)
