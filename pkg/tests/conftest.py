import os
from importlib import resources

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from mvgcn import data

# single BLAS thread keeps floating-point reductions reproducible
threadpool_limits(limits=1)

ACCEPTANCE_RESULTS = {}


def record_acceptance(number, passed, detail):
    ACCEPTANCE_RESULTS[number] = (passed, detail)
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'} | {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        passed, detail = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if passed else 'FAIL'} | {detail}")


def random_hpd(rng, n=3, size=None, looks=5):
    """Random complex Wishart-like HPD matrices of shape size + (n, n)."""
    shape = () if size is None else ((size,) if np.isscalar(size) else tuple(size))
    X = rng.standard_normal(shape + (n, looks)) + 1j * rng.standard_normal(shape + (n, looks))
    C = X @ np.swapaxes(X.conj(), -1, -2) / looks
    return 0.5 * (C + np.swapaxes(C, -1, -2).conj()) + 1e-3 * np.eye(n)


def scene_spec_path(name):
    return str(resources.files("mvgcn") / "scenes" / f"{name}.json")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def easy_scene():
    return data.synth_scene(data.load_scene_spec(scene_spec_path("three_class")))


@pytest.fixture(scope="session")
def hard_scene():
    return data.synth_scene(data.load_scene_spec(scene_spec_path("three_class_hard")))


@pytest.fixture
def workdir(tmp_path):
    old = os.getcwd()
    os.chdir(tmp_path)
    yield tmp_path
    os.chdir(old)
