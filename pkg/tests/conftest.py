import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from actlab.env import bundled_env
from actlab.rigid2d import character_from_dict, load_character
from actlab.task import load_motion

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=15, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def pendulum_doc(n_links=2, fixed_root=True, limits=(-100.0, 100.0), contacts=False,
                 base_mass=1.0, base_inertia=0.01):
    """Chain of thin rods hanging from a pinned (or floating) root link."""
    links = [{"name": "base", "length": 0.0, "mass": base_mass, "com_offset": [0.0, 0.0],
              "inertia": base_inertia}]
    joints = []
    for i in range(n_links):
        links.append({"name": f"rod{i}", "length": 0.5, "mass": 1.0 + 0.5 * i,
                      "com_offset": [0.0, -0.25], "inertia": 0.03 + 0.01 * i})
        joints.append({"name": f"j{i}", "parent": links[-2]["name"], "child": f"rod{i}",
                       "parent_anchor": [0.0, 0.0] if i == 0 else [0.0, -0.5],
                       "child_anchor": [0.0, 0.0], "limits": list(limits),
                       "torque_limit": 50.0})
    doc = {"name": "chain", "root": "base", "links": links, "joints": joints,
           "trunk": ["base"], "fixed_root": fixed_root}
    if not contacts:
        # keep all auto contact points far above the ground
        doc["links"] = [dict(l, length=0.0) for l in links]
    return doc


@pytest.fixture(scope="session")
def biped():
    return load_character("biped7.json")


@pytest.fixture(scope="session")
def walk():
    return load_motion("biped_walk.json")


@pytest.fixture(scope="session")
def pendulum():
    return character_from_dict(pendulum_doc())


@pytest.fixture(scope="session", params=["tor", "vel", "pd", "mtu"])
def env_any(request):
    return bundled_env(request.param)


@pytest.fixture(scope="session")
def env_pd():
    return bundled_env("pd")


@pytest.fixture(scope="session")
def env_mtu():
    return bundled_env("mtu")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = []


@pytest.fixture
def criterion():
    """Record one acceptance line; the summary prints every recorded line."""
    def record(number, title, ok, detail=""):
        ACCEPTANCE.append((number, title, bool(ok), detail))
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, detail in sorted(ACCEPTANCE):
        line = f"{'PASS' if ok else 'FAIL'} {number:>2} {title}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))
