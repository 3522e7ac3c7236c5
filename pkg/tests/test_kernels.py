import itertools
import os
import subprocess
import sys

import numpy as np
import pytest

from ambulearn import _kernels_py as py
from ambulearn import kernels

try:
    from ambulearn import _kernels as cy
except ImportError:  # extension not built
    cy = None

needs_cy = pytest.mark.skipif(cy is None, reason="compiled extension not built")


def brute_assignment_value(w):
    n = len(w)
    return max(sum(w[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n)))


def test_python_assignment_is_optimal():
    rng = np.random.default_rng(0)
    for n in range(1, 7):
        w = rng.integers(-5, 6, size=(n, n)).astype(float)
        cols = py.max_weight_assignment(w)
        assert sorted(cols) == list(range(n))
        assert w[np.arange(n), cols].sum() == brute_assignment_value(w)


def test_haversine_known_distance():
    # one degree of latitude along a meridian
    assert py.haversine_km(0.0, 0.0, 1.0, 0.0) == pytest.approx(6371.0 * np.pi / 180, rel=1e-12)
    assert py.haversine_km(10.0, 20.0, 10.0, 20.0) == 0.0


@needs_cy
def test_backends_agree():
    rng = np.random.default_rng(1)
    for _ in range(50):
        a = np.column_stack([rng.uniform(-60, 60, 7), rng.uniform(-180, 180, 7)])
        b = np.column_stack([rng.uniform(-60, 60, 5), rng.uniform(-180, 180, 5)])
        assert np.allclose(cy.haversine_matrix(a, b), py.haversine_matrix(a, b), rtol=1e-12)
        n = int(rng.integers(1, 12))
        w = rng.normal(size=(n, n))
        cc, cp = cy.max_weight_assignment(w), py.max_weight_assignment(w)
        assert w[np.arange(n), cc].sum() == pytest.approx(w[np.arange(n), cp].sum(), abs=1e-12)
    p = (37.7, -122.4, 37.8, -122.5)
    assert cy.haversine_km(*p) == pytest.approx(py.haversine_km(*p), rel=1e-14)


def _backend(env_value):
    env = dict(os.environ)
    env.pop("AMBULEARN_PURE_PYTHON", None)
    if env_value is not None:
        env["AMBULEARN_PURE_PYTHON"] = env_value
    out = subprocess.run([sys.executable, "-c", "import ambulearn.kernels as k; print(k.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    return out.stdout.strip()


def test_fallback_forced_by_environment():
    assert _backend("1") == "python"
    assert _backend(None) == ("compiled" if cy is not None else "python")
    assert kernels.BACKEND in ("compiled", "python")
