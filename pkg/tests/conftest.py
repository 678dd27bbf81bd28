import pathlib

import numpy as np
import pytest

from mufde.config import load_config
from mufde.solver import build_table

FIXTURES = pathlib.Path(__file__).resolve().parent.parent / "src" / "mufde" / "fixtures"


def fixture_path(name: str) -> str:
    return str(FIXTURES / name)


@pytest.fixture(scope="session")
def scalar_cfg():
    return load_config(fixture_path("scalar_neutral.toml"))


@pytest.fixture(scope="session")
def ex3_cfg():
    return load_config(fixture_path("example3.toml"))


@pytest.fixture(scope="session")
def ex3_linear_cfg():
    return load_config(fixture_path("example3_linear.toml"))


@pytest.fixture(scope="session")
def ex3_table(ex3_cfg):
    return build_table(ex3_cfg.system, 200)


@pytest.fixture(scope="session")
def ex3_linear_table(ex3_linear_cfg):
    return build_table(ex3_linear_cfg.system, 200)


def rel_sup(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b)) / (1.0 + np.max(np.abs(b))))
