"""Parity between the compiled kernels and the numpy fallback."""

import os
import subprocess
import sys

import numpy as np
import pytest

import oracles
from kde_ood import _kernels_py, backend

try:
    from kde_ood import _kernels as _compiled
except ImportError:
    _compiled = None

needs_compiled = pytest.mark.skipif(_compiled is None,
                                    reason="compiled extension not built")


def _random_case(rng, n=23, m=17, c=6):
    x = rng.normal(size=(n, c))
    ref = rng.normal(size=(m, c))
    sigmas = rng.uniform(0.2, 2.0, size=m)
    return x, ref, sigmas


class TestPythonKernels:
    def test_cross_distances_match_oracle(self):
        rng = np.random.default_rng(0)
        x, ref, _ = _random_case(rng)
        for code, name in ((_kernels_py.METRIC_L1, "l1"), (_kernels_py.METRIC_L2, "l2")):
            got = _kernels_py.cross_distances(x, ref, code)
            for i in range(3):
                for j in range(3):
                    assert got[i, j] == pytest.approx(
                        oracles.vector_distance(x[i], ref[j], name), rel=1e-12)

    def test_pairwise_symmetric_zero_diagonal(self):
        rng = np.random.default_rng(1)
        ref = rng.normal(size=(14, 4))
        got = _kernels_py.pairwise_distances(ref, _kernels_py.METRIC_L1)
        assert (got == got.T).all()
        assert (np.diag(got) == 0).all()

    def test_kernel_sums_match_oracle(self):
        rng = np.random.default_rng(2)
        x, ref, sigmas = _random_case(rng, n=6, m=9, c=3)
        dists = _kernels_py.cross_distances(x, ref, _kernels_py.METRIC_L1)
        full = np.full(6, -1, dtype=np.int64)
        got = _kernels_py.kde_kernel_sums(dists, sigmas, full)
        for i in range(6):
            want = sum(oracles.gaussian_pdf(dists[i, j], sigmas[j]) for j in range(9))
            assert got[i] == pytest.approx(want, rel=1e-12)

    def test_kernel_sums_exclusion(self):
        rng = np.random.default_rng(3)
        x, ref, sigmas = _random_case(rng, n=4, m=7, c=2)
        dists = _kernels_py.cross_distances(x, ref, _kernels_py.METRIC_L2)
        excl = np.array([0, 3, 6, -1], dtype=np.int64)
        got = _kernels_py.kde_kernel_sums(dists, sigmas, excl)
        for i in range(4):
            want = sum(oracles.gaussian_pdf(dists[i, j], sigmas[j])
                       for j in range(7) if j != excl[i])
            assert got[i] == pytest.approx(want, rel=1e-12)

    def test_fnv_matches_reference(self):
        rng = np.random.default_rng(4)
        for size in (0, 1, 7, 256):
            data = bytes(rng.integers(0, 256, size=size, dtype=np.uint8))
            assert _kernels_py.fnv1a64(data) == oracles.fnv1a64(data)


@needs_compiled
class TestCompiledParity:
    def test_distances_bit_identical(self):
        rng = np.random.default_rng(5)
        x, ref, _ = _random_case(rng, n=31, m=29, c=8)
        for code in (_kernels_py.METRIC_L1, _kernels_py.METRIC_L2):
            a = _compiled.cross_distances(x, ref, code)
            b = _kernels_py.cross_distances(x, ref, code)
            assert (a == b).all()
            pa = _compiled.pairwise_distances(ref, code)
            pb = _kernels_py.pairwise_distances(ref, code)
            assert (pa == pb).all()

    def test_kernel_sums_close_and_deterministic(self):
        rng = np.random.default_rng(6)
        x, ref, sigmas = _random_case(rng, n=40, m=33, c=5)
        dists = _compiled.cross_distances(x, ref, _kernels_py.METRIC_L1)
        excl = np.full(40, -1, dtype=np.int64)
        a = _compiled.kde_kernel_sums(dists, sigmas, excl)
        b = _kernels_py.kde_kernel_sums(dists, sigmas, excl)
        # exp() may differ in the last ulp between libm and numpy
        assert a == pytest.approx(b, rel=1e-13)
        assert (_compiled.kde_kernel_sums(dists, sigmas, excl) == a).all()

    def test_fnv_bit_identical(self):
        rng = np.random.default_rng(7)
        data = bytes(rng.integers(0, 256, size=1024, dtype=np.uint8))
        assert _compiled.fnv1a64(data) == _kernels_py.fnv1a64(data)

    def test_accepts_read_only_arrays(self):
        rng = np.random.default_rng(8)
        x, ref, sigmas = _random_case(rng, n=5, m=6, c=3)
        for arr in (x, ref, sigmas):
            arr.setflags(write=False)
        dists = _compiled.cross_distances(x, ref, _kernels_py.METRIC_L1)
        _compiled.kde_kernel_sums(dists, sigmas, np.full(5, -1, dtype=np.int64))


class TestBackendSelection:
    def test_wrappers_delegate(self):
        rng = np.random.default_rng(9)
        ref = rng.normal(size=(8, 3))
        got = backend.pairwise_distances(ref.tolist(), backend.METRIC_L1)
        want = _kernels_py.pairwise_distances(np.ascontiguousarray(ref), 0)
        assert got == pytest.approx(want, rel=1e-15)

    def test_force_python_env(self):
        code = ("import kde_ood.backend as b; print(b.BACKEND_NAME)")
        env = dict(os.environ, KDE_OOD_FORCE_PYTHON="1")
        out = subprocess.run([sys.executable, "-c", code], env=env,
                             capture_output=True, text=True, check=True)
        assert out.stdout.strip() == "python"

    @needs_compiled
    def test_compiled_is_default(self):
        env = dict(os.environ)
        env.pop("KDE_OOD_FORCE_PYTHON", None)
        code = ("import kde_ood.backend as b; print(b.BACKEND_NAME)")
        out = subprocess.run([sys.executable, "-c", code], env=env,
                             capture_output=True, text=True, check=True)
        assert out.stdout.strip() == "compiled"
