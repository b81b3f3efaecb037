"""Criterion derivatives and coefficient sensitivities against finite differences."""

import numpy as np
import pytest

from gsmooth.api import build_design
from gsmooth.inner import newton_fit
from gsmooth.outer import Problem
from gsmooth.penalty import RHO_MAX, assemble_S_lambda
from gsmooth.sensitivity import _component_matrix, laml_derivs, null_space_dim
from gsmooth.simulate import gu_wahba


def _problem(family="gaussian", n=200, seed=0, smooths=None, **kw):
   d = gu_wahba(n, family if family != "nb" else "poisson", seed=seed)
   if smooths is None:
      smooths = [{"var": "x0", "k": 8}, {"var": "x2", "k": 8}]
   cfg = {"family": family, "formulas": [{"response": "y", "smooths": smooths}]}
   fam, design, blocks = build_design(cfg, d)
   return Problem(design, blocks, fam, **kw)


def _tight(pb, psi):
   """Refit at ``psi`` to a tight inner tolerance so differences are clean."""
   rho, theta = pb.split(psi)
   pb.model.set_theta(theta)
   S = assemble_S_lambda(pb.structure, rho)
   st0 = pb.fit(psi)
   st = newton_fit(pb.model, S, st0.beta, rho, keep=st0.keep, tol=1e-13,
                   clamp=pb.kind == "extended")
   return st, laml_derivs(pb.model, pb.structure, st, rho, pb.theta_idx, 2, pb.log_scale)


CASES = [("gaussian", {}), ("poisson", {}), ("nb", {}), ("binomial", {})]


@pytest.mark.parametrize("family,kw", CASES)
def test_gradient_and_hessian_match_finite_differences(family, kw):
   pb = _problem(family, **kw)
   psi = np.r_[np.array([1.0, 2.5]), np.asarray(pb.model.theta)[pb.theta_idx]]
   _, d = _tight(pb, psi)
   h = 1e-4
   q = len(psi)
   g_fd = np.zeros(q)
   H_fd = np.zeros((q, q))
   for j in range(q):
      e = np.zeros(q)
      e[j] = h
      _, dp = _tight(pb, psi + e)
      _, dm = _tight(pb, psi - e)
      g_fd[j] = (dp.value - dm.value) / (2 * h)
      H_fd[:, j] = (dp.grad - dm.grad) / (2 * h)
   scale = max(1.0, np.max(np.abs(d.grad)))
   assert np.max(np.abs(d.grad - g_fd)) < 1e-5 * scale
   assert np.max(np.abs(d.hess - H_fd)) < 1e-4 * max(1.0, np.max(np.abs(d.hess)))
   assert np.allclose(d.hess, d.hess.T, atol=1e-10)


@pytest.mark.parametrize("family,kw", CASES)
def test_coefficient_sensitivities_match_finite_differences(family, kw):
   pb = _problem(family, **kw)
   psi = np.r_[np.array([0.5, 3.0]), np.asarray(pb.model.theta)[pb.theta_idx]]
   st, d = _tight(pb, psi)
   h = 1e-5
   for j in range(len(psi)):
      e = np.zeros(len(psi))
      e[j] = h
      sp, dp = _tight(pb, psi + e)
      sm, dm = _tight(pb, psi - e)
      fd = (sp.beta - sm.beta) / (2 * h)
      assert np.max(np.abs(d.dbeta[:, j] - fd)) < 1e-6 * max(1.0, np.max(np.abs(fd)))
      fd2 = (dp.dbeta - dm.dbeta) / (2 * h)
      assert np.max(np.abs(d.d2beta[:, :, j] - fd2)) < 1e-5 * max(1.0, np.max(np.abs(fd2)))


def test_gaussian_ridge_sensitivity_is_analytic():
   pb = _problem("gaussian", fixed_scale=True)
   rho = np.array([0.3, 1.7])
   st, d = _tight(pb, pb.psi_of(rho))
   X = np.column_stack(pb.wdesign.Xs)
   phi = pb.model.phi
   Sk = [_component_matrix(pb.structure, k, pb.P) for k in range(2)]
   A = X.T @ X / phi + sum(np.exp(r) * S for r, S in zip(rho, Sk))
   Ai = np.linalg.inv(A)
   for k in range(2):
      ref = -np.exp(rho[k]) * Ai @ Sk[k] @ st.beta
      assert np.max(np.abs(d.dbeta[:, k] - ref)) < 1e-9 * np.max(np.abs(ref))
      # second derivative: d/drho_k of -e^rho_k A^-1 S_k beta
      ref2 = ref - 2 * np.exp(rho[k]) * Ai @ Sk[k] @ ref
      assert np.max(np.abs(d.d2beta[:, k, k] - ref2)) < 1e-8 * np.max(np.abs(ref2))


def test_second_sensitivity_guard():
   # dropping the diagonal first-derivative term from the second derivative of
   # beta must be caught by the finite-difference comparison
   pb = _problem("binomial")
   psi = np.array([0.5, 3.0])
   _, d = _tight(pb, psi)
   h = 1e-5
   e = np.array([h, 0.0])
   fd = (_tight(pb, psi + e)[1].dbeta[:, 0] - _tight(pb, psi - e)[1].dbeta[:, 0]) / (2 * h)
   scale = np.max(np.abs(fd))
   assert np.max(np.abs(d.d2beta[:, 0, 0] - fd)) < 1e-4 * scale
   # the dropped term enters through the same solve, so it equals dbeta itself
   mutated = d.d2beta[:, 0, 0] - d.dbeta[:, 0]
   assert np.max(np.abs(mutated - fd)) > 1e-2 * scale


def test_null_space_coefficients_have_zero_sensitivity():
   # a response exactly linear in x0 is fitted entirely inside the penalty null space
   d = gu_wahba(150, seed=4)
   d["y"] = 1.0 + 2.0 * d["x0"]
   cfg = {"family": "gaussian", "formulas": [{"response": "y", "smooths": [{"var": "x0", "k": 8}]}]}
   fam, design, blocks = build_design(cfg, d)
   pb = Problem(design, blocks, fam, phi0=1.0, fixed_scale=True)
   st, D = _tight(pb, np.array([2.0]))
   assert np.max(np.abs(D.dbeta[:, 0])) < 1e-9


def test_sensitivities_do_not_mutate_the_state():
   pb = _problem("poisson")
   psi = np.array([1.0, 1.0])
   st, _ = _tight(pb, psi)
   before = (st.beta.copy(), st.H.copy(), st.R.copy())
   laml_derivs(pb.model, pb.structure, st, psi, pb.theta_idx, 2, pb.log_scale)
   laml_derivs(pb.model, pb.structure, st, psi, pb.theta_idx, 2, pb.log_scale)
   assert all(np.array_equal(a, b) for a, b in zip(before, (st.beta, st.H, st.R)))


def test_null_space_dimension_of_two_cr_smooths():
   pb = _problem("poisson")
   st = pb.fit(np.array([0.0, 0.0]))
   # intercept plus one linear direction per centered cubic spline
   assert null_space_dim(pb.structure, st) == 3


def test_criterion_finite_at_working_infinity():
   pb = _problem("gaussian")
   psi = np.r_[RHO_MAX, 0.0, np.asarray(pb.model.theta)[pb.theta_idx]]
   st, d = pb.derivs(psi)
   assert np.isfinite(d.value)
   assert np.all(np.isfinite(d.grad)) and np.all(np.isfinite(d.hess))


def test_unpenalized_model_has_no_smoothing_derivatives():
   d = gu_wahba(150, seed=2)
   cfg = {"family": "poisson", "formulas": [{"response": "y", "linear": ["x0", "x1"]}]}
   d["y"] = np.round(np.abs(d["y"]))
   fam, design, blocks = build_design(cfg, d)
   pb = Problem(design, blocks, fam)
   assert pb.M == 0 and pb.n_psi == 0
   st, der = pb.derivs(np.zeros(0))
   assert der.grad.shape == (0,) and der.hess.shape == (0, 0)
   ref = st.L - 0.5 * np.linalg.slogdet(st.H)[1] + 0.5 * pb.P * np.log(2 * np.pi) \
      + np.sum(pb.log_scale)
   assert der.value == pytest.approx(ref, rel=1e-12)


def test_criterion_invariant_to_penalty_scaling():
   # scaling a penalty matrix by c shifts its log smoothing parameter by -log c
   d = gu_wahba(200, seed=5)
   base = [{"var": "x0", "k": 8}, {"var": "x2", "k": 8}]
   cfg = {"family": "gaussian", "formulas": [{"response": "y", "smooths": base}]}
   fam, design, blocks = build_design(cfg, d)
   c = 37.0
   scaled = [(off, c * S, r) if i == 0 else (off, S, r) for i, (off, S, r) in enumerate(blocks)]
   a = Problem(design, blocks, fam, phi0=1.0)
   b = Problem(design, scaled, fam, phi0=1.0)
   psi = np.array([1.2, 0.4, 0.0])
   va = a.derivs(psi)[1]
   vb = b.derivs(psi - np.r_[np.log(c), 0.0, 0.0])[1]
   assert va.value == pytest.approx(vb.value, rel=1e-9, abs=1e-9)
   assert np.allclose(va.grad, vb.grad, atol=1e-7)
