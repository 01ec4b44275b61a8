import pytest

from pouwsim.netsim import ScenarioResult, run_scenario
from pouwsim.scenario import load_bundled_scenario


class ScenarioCache:
    """Run each bundled scenario at most once per session; several test
    modules assert different properties of the same runs."""

    def __init__(self) -> None:
        self._runs: dict[str, ScenarioResult] = {}

    def get(self, name: str) -> ScenarioResult:
        if name not in self._runs:
            self._runs[name] = run_scenario(load_bundled_scenario(name))
        return self._runs[name]


@pytest.fixture(scope="session")
def scenarios() -> ScenarioCache:
    return ScenarioCache()
