import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from oracles import random_params, tiny_config  # noqa: E402


@pytest.fixture
def config():
    return tiny_config()


@pytest.fixture
def params(config):
    return random_params(config, 0)
