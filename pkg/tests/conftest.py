import pytest

from mpsim import harness


@pytest.fixture(scope="session")
def corpus_runs():
    """One shared pass over the scenario corpus; treat results as read-only."""
    return {name: harness.run_scenario(sc, name)
            for name, sc in harness.corpus().items()}
