from __future__ import annotations

import pytest

from labelforge.corpus import Taxonomy, load_fixture_taxonomy

from helpers import hier3_taxonomy, multi5_taxonomy, tiny3_taxonomy


@pytest.fixture
def tiny3() -> Taxonomy:
    return tiny3_taxonomy()


@pytest.fixture
def multi5() -> Taxonomy:
    return multi5_taxonomy()


@pytest.fixture
def hier3() -> Taxonomy:
    return hier3_taxonomy()


@pytest.fixture(scope="session")
def cap() -> Taxonomy:
    return load_fixture_taxonomy("cap")


@pytest.fixture(scope="session")
def dataverse() -> Taxonomy:
    return load_fixture_taxonomy("dataverse")


@pytest.fixture(scope="session")
def flourishing() -> Taxonomy:
    return load_fixture_taxonomy("flourishing")
