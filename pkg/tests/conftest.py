from pathlib import Path

import pytest

from fpsearch.taxonomy import (
    AttributeGroup,
    Taxonomy,
    load_taxonomy,
)

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


@pytest.fixture(scope="session")
def taxonomy() -> Taxonomy:
    return load_taxonomy(FIXTURES / "taxonomy.json")


@pytest.fixture(scope="session")
def tiny_taxonomy() -> Taxonomy:
    """Smallest useful vocabulary: one category, one attribute, EOS (3 symbols)."""
    return Taxonomy(
        categories=("c",),
        groups=(AttributeGroup(group_id="g", name="g", classes=("a",)),),
    )


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES
