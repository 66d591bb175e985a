import functools

import numpy as np
import pytest

from geoloop.loops import LoopContext
from geoloop.manifold import catalog

CURVED = ("sphere2-stereographic", "hyperbolic-halfplane", "poly-perturbed2")
ALL = ("flat2", "flat3") + CURVED

_criteria = {}


def record(number, passed, detail):
    """Remember one acceptance line; they are printed together after the run."""
    prev = _criteria.get(number)
    ok = passed and (prev is None or prev[0])
    text = detail if prev is None else f"{prev[1]}; {detail}"
    _criteria[number] = (ok, text)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        ok, text = _criteria[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {text}")


@functools.lru_cache(maxsize=None)
def entry(name):
    return catalog(name)


@functools.lru_cache(maxsize=None)
def context(name, radius=None):
    e = entry(name)
    return LoopContext(e.connection, e.base_point, radius)


def ball(rng, center, radius, count):
    center = np.asarray(center, dtype=float)
    d = rng.standard_normal((count, center.size))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return center + radius * rng.uniform(size=(count, 1)) ** (1 / center.size) * d


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)
