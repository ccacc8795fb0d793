import os
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from diplobench.board import custom_state
from diplobench.mapgraph import load_map, standard_map

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = Path(__file__).parent / "golden"

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def graph():
    return standard_map()


@pytest.fixture(scope="session")
def fig2_graph():
    return load_map((FIXTURES / "fig2.map").read_text())


@pytest.fixture
def fig2_state():
    return custom_state({"ITALY": ["A VEN"], "AUSTRIA": ["F TRI", "A VIE"]}, {"VEN": "ITALY", "TRI": "AUSTRIA"})


def check_golden(name: str, text: str) -> None:
    """Compare against tests/golden/<name>; set DIPLOBENCH_REGEN_GOLDEN=1 to rewrite after review."""
    path = GOLDEN / name
    if os.environ.get("DIPLOBENCH_REGEN_GOLDEN"):
        path.write_text(text)
    assert path.exists(), f"missing golden file {name}"
    assert text == path.read_text()


def golden_text(name: str) -> str:
    return (GOLDEN / name).read_text()
