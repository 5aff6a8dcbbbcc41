import functools

import pytest
from hypothesis import HealthCheck, settings

from pairsim.config import parse_config
from pairsim.modes import schmidt_decompose
from pairsim.scenarios import jsa_for

settings.register_profile(
    "pairsim", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("pairsim")


@functools.lru_cache(maxsize=None)
def default_config():
    return parse_config("")


@functools.lru_cache(maxsize=None)
def default_jsa(n_points=512):
    cfg = default_config()
    return jsa_for(cfg.replace(grid=cfg.grid.__class__(n_points, cfg.grid.span_factor, cfg.grid.envelope)))


@pytest.fixture
def cfg():
    return default_config()


@pytest.fixture
def jsa():
    return default_jsa()


@pytest.fixture
def schmidt(jsa):
    return schmidt_decompose(jsa)
