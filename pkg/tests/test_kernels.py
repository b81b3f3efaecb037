"""Compiled kernels against the numpy fallback and against independent oracles."""

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gsmooth import _kernels_py, kernels
from oracles import tweedie_log_series

try:
   from gsmooth import _kernels
except ImportError:
   _kernels = None

BACKENDS = [pytest.param(_kernels_py, id="python"),
            pytest.param(_kernels, id="cython",
                         marks=pytest.mark.skipif(_kernels is None, reason="extension not built"))]


def spd(rng, p, rank=None):
   A = rng.normal(size=(p, rank or p))
   return A @ A.T


@pytest.mark.parametrize("impl", BACKENDS)
def test_pivoted_cholesky_reconstructs(impl):
   rng = np.random.default_rng(0)
   A = spd(rng, 8)
   R, piv, rank = impl.pivoted_cholesky(np.ascontiguousarray(A), 0.0)
   assert rank == 8
   assert np.allclose(R.T @ R, A[np.ix_(piv, piv)], atol=1e-12)
   assert np.all(np.diff(np.abs(np.diag(R))) <= 1e-12)


@pytest.mark.parametrize("impl", BACKENDS)
def test_pivoted_cholesky_detects_rank(impl):
   rng = np.random.default_rng(1)
   A = spd(rng, 9, rank=5)
   R, piv, rank = impl.pivoted_cholesky(np.ascontiguousarray(A), 1e-10 * np.trace(A))
   assert rank == 5
   Rk = R[:rank]
   assert np.allclose(Rk.T @ Rk, A[np.ix_(piv, piv)], atol=1e-9)


@pytest.mark.parametrize("impl", BACKENDS)
def test_chol_deriv_matches_finite_difference(impl):
   rng = np.random.default_rng(2)
   A = spd(rng, 7)
   dA = rng.normal(size=(7, 7))
   dA = dA + dA.T
   R = np.linalg.cholesky(A).T.copy()
   dR = impl.chol_deriv(R, np.ascontiguousarray(dA))
   h = 1e-6
   fd = (np.linalg.cholesky(A + h * dA).T - np.linalg.cholesky(A - h * dA).T) / (2 * h)
   assert np.max(np.abs(dR - fd)) < 1e-6 * np.max(np.abs(fd))
   assert np.allclose(np.tril(dR, -1), 0.0)


def test_backends_agree_on_random_inputs():
   if _kernels is None:
      pytest.skip("extension not built")
   rng = np.random.default_rng(3)
   for p in (3, 10, 25):
      A = spd(rng, p)
      a = _kernels.pivoted_cholesky(A, 0.0)
      b = _kernels_py.pivoted_cholesky(A, 0.0)
      assert np.array_equal(a[1], b[1]) and a[2] == b[2]
      assert np.allclose(a[0], b[0], rtol=1e-13, atol=1e-13)
      R = np.linalg.cholesky(A).T.copy()
      dA = spd(rng, p)
      assert np.allclose(_kernels.chol_deriv(R, dA), _kernels_py.chol_deriv(R, dA),
                         rtol=1e-12, atol=1e-12)
   y = rng.gamma(2.0, 1.0, 50)
   phi = rng.uniform(0.3, 3.0, 50)
   p = rng.uniform(1.05, 1.95, 50)
   a = _kernels.tweedie_series(y, phi, p, 37.0)
   b = _kernels_py.tweedie_series(y, phi, p, 37.0)
   assert np.allclose(a, b, rtol=1e-10, atol=1e-10)


@pytest.mark.parametrize("impl", BACKENDS)
def test_tweedie_series_reference_point(impl):
   # log of the series at y = phi = 1, p = 1.5 (the density normalizer times y)
   ref = float(mp.log(tweedie_log_series(1.0, 1.0, 1.5)))
   got = impl.tweedie_series(np.array([1.0]), np.array([1.0]), np.array([1.5]), 37.0)[0, 0]
   assert abs(got - ref) <= 1e-10 * abs(ref)


@pytest.mark.parametrize("impl", BACKENDS)
def test_tweedie_series_derivatives_match_oracle(impl):
   y, phi, p = 2.3, 0.8, 1.4
   out = impl.tweedie_series(np.array([y]), np.array([phi]), np.array([p]), 37.0)[0]
   h = mp.mpf(10)**-8

   def f(lphi, pp):
      return mp.log(tweedie_log_series(y, mp.exp(lphi), pp))

   lp = mp.log(mp.mpf(phi))
   pm = mp.mpf(p)
   d_r = (f(lp + h, pm) - f(lp - h, pm)) / (2 * h)
   d_p = (f(lp, pm + h) - f(lp, pm - h)) / (2 * h)
   d_rp = (f(lp + h, pm + h) - f(lp + h, pm - h) - f(lp - h, pm + h) + f(lp - h, pm - h)) / (4 * h * h)
   assert out[1] == pytest.approx(float(d_r), rel=1e-5)
   assert out[2] == pytest.approx(float(d_p), rel=1e-5)
   assert out[4] == pytest.approx(float(d_rp), rel=1e-5)


def test_dispatch_reports_backend():
   assert kernels.BACKEND in ("cython", "python")


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), p=st.integers(2, 12), r=st.integers(1, 12))
def test_pivoted_cholesky_properties(seed, p, r):
   r = min(r, p)
   A = spd(np.random.default_rng(seed), p, rank=r)
   R, piv, rank = kernels.pivoted_cholesky(A, 1e-9 * np.trace(A))
   assert rank == r
   assert sorted(piv) == list(range(p))
   assert np.allclose(R[:rank].T @ R[:rank], A[np.ix_(piv, piv)],
                      atol=1e-8 * max(1.0, np.abs(A).max()))
