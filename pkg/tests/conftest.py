import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from swarmlab.grammar import load_builtin


@pytest.fixture(scope="session")
def ppa_grammar():
    return load_builtin("ppa")


@pytest.fixture(scope="session")
def nominal_grammar():
    return load_builtin("nominal")
