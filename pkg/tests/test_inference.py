"""Covariance corrections, effective degrees of freedom and AIC."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gsmooth.api import build_design, fit, fit_problem
from gsmooth.inference import (compute_Vrho, intervals, outer_dropped, second_order_correction,
                               standard_errors)
from gsmooth.outer import Problem
from gsmooth.simulate import gu_wahba


def _sine(n=200, seed=3, sd=0.4):
   rng = np.random.default_rng(seed)
   x = rng.uniform(size=n)
   return {"x": x, "y": np.sin(2 * np.pi * x) + rng.normal(0, sd, n)}


def _fit_sine(k=10, **kw):
   d = _sine(**kw)
   cfg = {"family": "gaussian", "formulas": [{"response": "y", "smooths": [{"var": "x", "k": k}]}]}
   fam, design, blocks = build_design(cfg, d)
   pb = Problem(design, blocks, fam)
   res, state = fit_problem(pb, tol=1e-9)
   return pb, res, state, design


def test_Vrho_inverts_scalar_curvature():
   V = compute_Vrho(np.array([[-4.0]]))
   assert V[0, 0] == pytest.approx(0.25, rel=1e-15)


def test_Vrho_zero_for_dropped_parameters():
   H = -np.array([[2.0, 0.3, 0.0], [0.3, 1.0, 0.1], [0.0, 0.1, 5.0]])
   V = compute_Vrho(H, np.array([False, True, False]))
   assert np.all(V[1] == 0) and np.all(V[:, 1] == 0)
   sub = np.linalg.inv(-H[np.ix_([0, 2], [0, 2])])
   assert np.allclose(V[np.ix_([0, 2], [0, 2])], sub, rtol=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), rank=st.integers(0, 3))
def test_Vrho_positive_semidefinite(seed, rank):
   rng = np.random.default_rng(seed)
   A = rng.normal(size=(4, rank))
   H = -(A @ A.T) + 1e-3 * rng.normal(size=(4, 4))
   V = compute_Vrho(0.5 * (H + H.T))
   assert np.linalg.eigvalsh(V).min() >= -1e-10 * max(1.0, np.abs(V).max())


def test_outer_drop_set_includes_bound_and_flat_parameters():
   g = np.array([0.0, 1e-12, 0.5])
   H = -np.diag([1.0, 1e-12, 2.0])
   psi = np.array([35.0, 2.0, 1.0])
   out = outer_dropped(g, H, psi, 3, value=-100.0)
   assert out.tolist() == [True, True, False]


def test_zero_smoothing_uncertainty_gives_no_correction():
   rng = np.random.default_rng(0)
   A = rng.normal(size=(5, 5))
   Vb = A @ A.T + np.eye(5)
   dH = [np.eye(5), np.diag(np.arange(5.0))]
   out = second_order_correction(Vb, dH, np.zeros((2, 2)), np.ones(5, dtype=bool))
   assert np.all(out == 0)


def test_unpenalized_aic_counts_coefficients():
   d = gu_wahba(200, "poisson", seed=2)
   cfg = {"family": "poisson", "formulas": [{"response": "y", "linear": ["x0", "x1", "x2"]}]}
   m = fit(cfg, d)
   r = m.result
   assert r.edf0 == pytest.approx(4.0, abs=1e-8)
   assert r.aic == pytest.approx(-2 * r.loglik + 8.0, abs=1e-7)
   assert r.edf1 == pytest.approx(4.0, abs=1e-8)
   assert r.aic_corrected == pytest.approx(r.aic, abs=1e-7)
   assert np.allclose(r.Vc, r.Vb, atol=1e-14)


def test_covariance_chain_and_edf_ordering():
   pb, r, state, design = _fit_sine()
   for A in (r.Vb, r.V1, r.V2, r.Vc):
      assert np.linalg.eigvalsh(0.5 * (A + A.T)).min() >= -1e-10 * np.abs(r.Vc).max()
   assert r.edf0 <= r.edf1 + 1e-12
   assert r.edf0 <= r.edf + 1e-12
   # corrected intervals are never narrower
   X = np.column_stack(design.Xs)
   assert np.all(standard_errors(X, r.Vc) >= standard_errors(X, r.Vb) - 1e-12)


def test_first_order_covariance_is_sensitivity_sandwich():
   pb, r, state, design = _fit_sine()
   assert np.allclose(r.Vstar, r.Vb + r.J @ r.Vrho @ r.J.T, rtol=0, atol=1e-14 * np.abs(r.Vb).max())
   assert np.allclose(r.Vc, r.Vstar + r.V2, rtol=0, atol=1e-14 * np.abs(r.Vb).max())


def test_edf_identity_two_ways():
   pb, r, state, design = _fit_sine()
   X = np.column_stack(design.Xs)
   info = X.T @ X / r.phi
   assert r.edf0 == pytest.approx(np.trace(r.Vb @ info), abs=1e-10)
   assert r.edf == pytest.approx(np.trace(r.Vc @ info), abs=1e-10)
   F = r.Vb @ info
   assert r.edf1 == pytest.approx(np.trace(2 * F - F @ F), abs=1e-10)
   assert sum(r.term_edf.values()) == pytest.approx(r.edf0, abs=1e-10)


def test_edf_tends_to_null_space_dimension():
   d = _sine()
   cfg = {"family": "gaussian", "formulas": [{"response": "y", "smooths": [{"var": "x", "k": 10}]}]}
   fam, design, blocks = build_design(cfg, d)
   pb = Problem(design, blocks, fam)
   state = pb.fit(np.array([35.0, 0.0]))
   X = np.column_stack(pb.wdesign.Xs)
   F = state.inverse() @ (X.T @ X / pb.model.phi)
   assert np.trace(F) == pytest.approx(2.0, abs=1e-6)


def test_gaussian_bands_match_conjugate_posterior():
   pb, r, state, design = _fit_sine()
   X = np.column_stack(design.Xs)
   S = np.zeros((design.P, design.P))
   off, Sk = pb.structure0.blocks[0].offset, pb.structure0.blocks[0].matrices[0]
   S[off:off + Sk.shape[0], off:off + Sk.shape[0]] = np.exp(r.rho[0]) * Sk
   # conjugate posterior of a Gaussian model with known scale
   V = r.phi * np.linalg.inv(X.T @ X + S)
   assert np.max(np.abs(r.Vb - V)) < 1e-9 * np.abs(V).max()
   mean = V @ X.T @ np.array(_sine()["y"]) / r.phi
   assert np.max(np.abs(r.beta - mean)) < 1e-8 * np.abs(mean).max()
   fit_, lo, hi = intervals(X, r.beta, r.Vb, 0.95)
   assert np.allclose(hi - fit_, 1.959963984540054 * np.sqrt(np.einsum("ij,jk,ik->i", X, V, X)),
                      rtol=1e-8)


def test_dropped_coefficients_have_zero_standard_error():
   rng = np.random.default_rng(9)
   n = 150
   x = rng.uniform(size=n)
   d = {"x": x, "x2": 2.0 * x, "y": 1 + x + rng.normal(0, 0.3, n)}
   cfg = {"family": "gaussian", "formulas": [{"response": "y", "linear": ["x", "x2"]}]}
   m = fit(cfg, d)
   r = m.result
   assert len(r.dropped) == 1
   j = r.dropped[0]
   assert r.beta[j] == 0.0
   assert np.all(r.Vc[j] == 0) and np.all(r.Vb[:, j] == 0)


def _factor(V):
   return np.linalg.cholesky(V).T


def test_cholesky_correction_matches_finite_differences():
   pb, r, state, design = _fit_sine()
   X = np.column_stack(pb.wdesign.Xs)
   b = pb.structure.blocks[0]
   S = np.zeros((design.P, design.P))
   S[b.offset:b.offset + b.dim, b.offset:b.offset + b.dim] = b.matrices[0]
   phi, rho = pb.model.phi, r.rho_work[0]

   def R(t):
      return _factor(np.linalg.inv(X.T @ X / phi + np.exp(t) * S))

   h = 1e-5
   dR = (R(rho + h) - R(rho - h)) / (2 * h)
   ref = r.Vrho[0, 0] * dR.T @ dR
   V2 = pb.Ti @ r.V2 @ pb.Ti.T
   assert np.max(np.abs(V2 - ref)) < 1e-6 * np.abs(ref).max()


def test_cholesky_correction_is_mean_of_perturbed_factors():
   # averaging R(rho)'R(rho) over rho ~ N(rho_hat, Vrho), with R linearized in
   # rho, reproduces Vb + V'' ; checked by Monte Carlo in working coordinates
   pb, r, state, design = _fit_sine()
   X = np.column_stack(pb.wdesign.Xs)
   b = pb.structure.blocks[0]
   S = np.zeros((design.P, design.P))
   S[b.offset:b.offset + b.dim, b.offset:b.offset + b.dim] = b.matrices[0]
   phi, rho = pb.model.phi, r.rho_work[0]

   def R(t):
      return _factor(np.linalg.inv(X.T @ X / phi + np.exp(t) * S))

   h = 1e-5
   R0, dR = R(rho), (R(rho + h) - R(rho - h)) / (2 * h)
   # antithetic pairs cancel the first-order cross terms exactly
   half = np.random.default_rng(0).normal(0, np.sqrt(r.Vrho[0, 0]), 1000)
   delta = np.r_[half, -half]
   acc = np.zeros_like(R0)
   for e in delta:
      Re = R0 + e * dR
      acc += Re.T @ Re
   mc = acc / len(delta) - R0.T @ R0
   V2 = pb.Ti @ r.V2 @ pb.Ti.T
   assert np.linalg.norm(mc - V2) <= 0.1 * np.linalg.norm(V2)
