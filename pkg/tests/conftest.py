from __future__ import annotations

import pytest
from hypothesis import HealthCheck, settings

from queryforge import build_project, extract_spec, load_dataset
from queryforge.cpg import CodePropertyGraph
from queryforge.resources import DATASET_PATH, fixture_projects, project

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def dataset():
    return load_dataset(DATASET_PATH)


@pytest.fixture(scope="session")
def spec():
    return extract_spec()


@pytest.fixture(scope="session")
def graphs() -> dict[str, CodePropertyGraph]:
    """Every shipped fixture project, built once."""
    return {p.name: build_project(p) for p in fixture_projects()}


@pytest.fixture(scope="session")
def graph(graphs):
    def get(name: str) -> CodePropertyGraph:
        return graphs[name]
    return get


@pytest.fixture()
def project_dir():
    return project


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE

    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda l: int(l.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
