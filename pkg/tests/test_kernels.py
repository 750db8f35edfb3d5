import os
import subprocess
import sys

import numpy as np
import pytest
from scipy.special import logsumexp

from coulombgap import _pykernels, kernels

try:
    from coulombgap import _ckernels
except ImportError:  # extension not built
    _ckernels = None

needs_extension = pytest.mark.skipif(_ckernels is None, reason="compiled extension not built")


def random_tables(rows: int, points: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    r = np.cumsum(rng.uniform(0.01, 0.1, size=(rows, points)), axis=1)
    key = np.cumsum(rng.uniform(0.0, 1.0, size=(rows, points)), axis=1) - 30.0
    key[:, 5] = key[:, 4]  # a flat cell
    slope = rng.uniform(0.0, 0.2, size=(rows, points))
    return np.ascontiguousarray(r), np.ascontiguousarray(key), np.ascontiguousarray(slope)


def test_log_moments_fallback_against_logsumexp():
    rng = np.random.default_rng(1)
    logw = rng.normal(size=200)
    logw[:3] = -np.inf
    logr = np.log(rng.uniform(0.1, 2.0, size=200))
    out = _pykernels.log_moments(logw, logr, 4, 6)
    expected = [logsumexp(logw + (2 * j + 1) * logr) for j in range(4, 10)]
    assert np.allclose(out, expected, rtol=1e-14, atol=1e-13)


def test_invert_fallback_hits_nodes_and_clamps():
    r, key, slope = random_tables(3, 50)
    rows = np.array([0, 1, 2, 2], dtype=np.intp)
    u = np.array([key[0, 10], key[1, 0] - 1.0, key[2, -1] + 1.0, key[2, 20]])
    out = _pykernels.invert_tables(r, key, slope, rows, u)
    assert out == pytest.approx([r[0, 10], r[1, 0], r[2, -1], r[2, 20]], abs=1e-14)


def test_invert_fallback_is_monotone_between_nodes():
    # slopes within the secant bound give a monotone cubic
    r = np.linspace(0.0, 1.0, 11)[None, :]
    key = np.linspace(-2.0, 0.0, 11)[None, :] ** 3
    secant = np.diff(r[0]) / np.diff(key[0])
    slope = np.concatenate([[secant[0]], np.minimum(secant[:-1], secant[1:]), [secant[-1]]])[None, :]
    u = np.linspace(key[0, 0], key[0, -1], 2001)
    out = _pykernels.invert_tables(r, key, slope, np.zeros(u.size, dtype=np.intp), u)
    assert np.all(np.diff(out) >= -1e-15)


@needs_extension
def test_backends_agree_on_log_moments():
    rng = np.random.default_rng(2)
    logw = np.ascontiguousarray(rng.normal(size=3000) - 5.0)
    logr = np.ascontiguousarray(np.log(rng.uniform(0.05, 1.8, size=3000)))
    a = _pykernels.log_moments(logw, logr, 0, 300)
    b = _ckernels.log_moments(logw, logr, 0, 300)
    assert np.allclose(a, b, rtol=1e-13, atol=1e-12)


@needs_extension
def test_backends_agree_on_inversion():
    r, key, slope = random_tables(40, 400, seed=3)
    rng = np.random.default_rng(4)
    rows = np.ascontiguousarray(rng.integers(0, 40, size=5000).astype(np.intp))
    u = np.ascontiguousarray(rng.uniform(key.min() - 1.0, key.max() + 1.0, size=5000))
    assert np.array_equal(_pykernels.invert_tables(r, key, slope, rows, u), _ckernels.invert_tables(r, key, slope, rows, u))


@needs_extension
def test_extension_selected_by_default():
    if os.environ.get("COULOMBGAP_PURE_PYTHON"):
        pytest.skip("fallback forced by the environment")
    assert kernels.BACKEND == "cython"


def test_environment_forces_fallback():
    code = "from coulombgap import kernels, _pykernels; print(kernels.BACKEND, kernels.invert_tables is _pykernels.invert_tables)"
    env = {**os.environ, "COULOMBGAP_PURE_PYTHON": "1"}
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True).stdout
    assert out.split() == ["python", "True"]


def test_sampler_identical_under_both_backends():
    code = (
        "import numpy as np\n"
        "from coulombgap.orthopoly import PerturbedWeight\n"
        "from coulombgap.potential import ginibre_outpost\n"
        "from coulombgap.sampler import build_sampler\n"
        "ms = build_sampler(PerturbedWeight(ginibre_outpost()), 48, seed=3)\n"
        "print(ms.sample_moduli(4).tobytes().hex())\n"
    )
    runs = []
    for flag in ("0", "1"):
        env = {**os.environ, "COULOMBGAP_PURE_PYTHON": flag}
        runs.append(subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True).stdout)
    a, b = (np.frombuffer(bytes.fromhex(x.strip())) for x in runs)
    assert np.allclose(a, b, rtol=0, atol=1e-13)
