import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cvrspline.mesh import HierarchicalTMesh

settings.register_profile(
    "default", deadline=None, max_examples=25, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def fig15_mesh() -> HierarchicalTMesh:
    """4x4 square with level-0 lines at 0, 2, 4; three level-1 and two level-2 splits."""
    m = HierarchicalTMesh.tensor([0, 2, 4], [0, 2, 4])
    m = m.subdivide_many(["L0:(0,0)", "L0:(0,1)", "L0:(1,1)"])
    return m.subdivide_many(["L0:(0,1)/q1", "L0:(1,1)/q0"])


def fig5_mesh() -> HierarchicalTMesh:
    """4x4 unit grid with three subdivided cells around the middle."""
    return HierarchicalTMesh.tensor(range(5), range(5)).subdivide_many(["L0:(1,1)", "L0:(1,2)", "L0:(2,2)"])


@pytest.fixture
def fig15():
    return fig15_mesh()


@pytest.fixture
def fig5():
    return fig5_mesh()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for k in sorted(results):
            terminalreporter.write_line(results[k])
