"""Compiled and numpy kernel backends must agree."""

from __future__ import annotations

import os
import subprocess
import sys

import numpy as np
import pytest

from capfade import _kernels

BACKENDS = _kernels.backends()
needs_core = pytest.mark.skipif("cython" not in BACKENDS, reason="compiled core not built")


class TestSelection:
    def test_backend_named(self):
        assert _kernels.BACKEND in BACKENDS

    def test_env_forces_fallback(self):
        env = dict(os.environ, CAPFADE_PURE_PYTHON="1")
        out = subprocess.run(
            [sys.executable, "-c", "from capfade import _kernels; print(_kernels.BACKEND)"],
            capture_output=True, text=True, env=env, check=True,
        )
        assert out.stdout.strip() == "python"


@needs_core
class TestEquivalence:
    def test_knee_sse(self):
        rng = np.random.default_rng(0)
        for n in (6, 7, 50, 1500):
            x = np.arange(1.0, n + 1)
            y = 2.0 - np.cumsum(rng.uniform(0, 1e-3, n))
            a = _kernels.knee_sse(x, y, 3, impl=BACKENDS["python"])
            b = _kernels.knee_sse(x, y, 3, impl=BACKENDS["cython"])
            np.testing.assert_array_equal(np.isinf(a), np.isinf(b))
            np.testing.assert_allclose(a[np.isfinite(a)], b[np.isfinite(b)], rtol=1e-12, atol=1e-18)

    def test_knee_sse_too_short(self):
        for impl in BACKENDS.values():
            assert np.all(np.isinf(_kernels.knee_sse(np.arange(4.0), np.ones(4), 3, impl=impl)))

    @pytest.mark.parametrize("k", [1, 3, 5])
    def test_conv(self, k):
        rng = np.random.default_rng(k)
        x, w, b = rng.normal(size=(4, 3, 17)), rng.normal(size=(5, 3, k)), rng.normal(size=5)
        g = rng.normal(size=(4, 5, 17))
        py, cy = BACKENDS["python"], BACKENDS["cython"]
        np.testing.assert_allclose(_kernels.conv1d_forward(x, w, b, impl=py),
                                   _kernels.conv1d_forward(x, w, b, impl=cy), rtol=1e-12, atol=1e-13)
        for a, c in zip(_kernels.conv1d_backward(x, w, g, impl=py), _kernels.conv1d_backward(x, w, g, impl=cy)):
            np.testing.assert_allclose(a, c, rtol=1e-12, atol=1e-12)
