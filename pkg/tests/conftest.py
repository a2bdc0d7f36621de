"""Test fixtures for pytest."""
import pytest

from src.hjb_maxplus.config import get_settings
from src.hjb_maxplus.services.decomp import build_decomposition
from src.hjb_maxplus.services.expect import QuadratureEngine
from src.hjb_maxplus.services.problem import load_problem


@pytest.fixture(autouse=True)
def fresh_settings(monkeypatch, tmp_path):
    """Settings without seed override, artifacts under a temporary directory."""
    monkeypatch.delenv("HJB_SEED", raising=False)
    monkeypatch.setenv("HJB_OUTPUT_DIR", str(tmp_path))
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def lq1d():
    return load_problem("lq1d")


@pytest.fixture
def lq1d_decomp(lq1d):
    return build_decomposition(lq1d)


@pytest.fixture
def switching_decomp():
    return build_decomposition(load_problem("switching"))


@pytest.fixture
def degenerate_decomp():
    return build_decomposition(load_problem("degenerate"))


@pytest.fixture
def quad_engine():
    return QuadratureEngine(7)


def _one_mode_config(**mode):
    base = {"name": "m", "B": [1.0], "sigma": [1.0], "Lxx": [-2.0], "Luu": [-2.0]}
    base.update(mode)
    return {
        "name": "custom",
        "d": 1,
        "T": 1.0,
        "modes": [base],
        "controls": [{"min": -2.0, "max": 2.0, "count": 9}],
        "terminal_forms": [{"Q": [-2.0], "b": [0.0], "c": 0.0}],
    }


@pytest.fixture
def make_config():
    """Factory of minimal 1-d problem documents; keyword arguments override the mode."""
    return _one_mode_config

