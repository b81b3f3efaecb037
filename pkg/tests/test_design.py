"""Spline bases, centering constraints, Demmler-Reinsch basis and design assembly."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gsmooth.api import build_design
from gsmooth.design import (DesignError, Predictor, SmoothTerm, apply_centering, assemble_design,
                            build_basis, demmler_reinsch, diff_penalty, eval_term,
                            penalty_rank, predict_matrices)
from gsmooth.simulate import GW_SMOOTHS, gu_wahba


def uniform_data(n=200, seed=0, cols=("x0", "x1")):
   rng = np.random.default_rng(seed)
   d = {c: rng.uniform(size=n) for c in cols}
   d["y"] = rng.normal(size=n)
   return d


def test_two_smooth_column_count():
   d = uniform_data()
   preds = [Predictor(smooths=[SmoothTerm("x0", "cr", 10), SmoothTerm("x1", "cr", 10)])]
   design, blocks = assemble_design(preds, d, "y")
   assert design.P == 19
   assert [b[0] for b in blocks] == [1, 10]


def test_centering_removes_constant():
   x = np.random.default_rng(1).uniform(size=100)
   _, X, S, _ = build_basis(SmoothTerm("x", "ps", 5), x)
   Xc, Sc, Z = apply_centering(X, S)
   assert Xc.shape[1] == 4
   assert penalty_rank(Sc) == 3
   # no reduced coefficient vector reproduces a nonzero constant
   coef, *_ = np.linalg.lstsq(Xc, np.ones(100), rcond=None)
   assert np.max(np.abs(Xc @ coef)) < 1e-10


def test_centering_round_trip():
   rng = np.random.default_rng(2)
   x = rng.uniform(size=80)
   _, X, S, _ = build_basis(SmoothTerm("x", "cr", 8), x)
   Xc, _, Z = apply_centering(X, S)
   b = rng.normal(size=7)
   assert np.max(np.abs(X @ (Z @ b) - Xc @ b)) < 1e-12
   assert abs(np.sum(Xc @ b)) < 1e-10


def test_gu_wahba_block_ranks():
   d = gu_wahba(400, seed=3)
   cfg = {"family": "gaussian", "formulas": [{"response": "y",
          "smooths": [{"var": f"x{j}", "basis": "cr", "k": 10} for j in range(4)]}]}
   _, design, blocks = build_design(cfg, d)
   assert len(blocks) == 4
   for off, S, _ in blocks:
      ev = np.linalg.eigvalsh(S)
      assert int(np.sum(ev > 1e-10 * ev.max())) == 8


def test_ps_null_space_dimension():
   S = diff_penalty(8, 2)
   ev = np.linalg.eigvalsh(S)
   assert int(np.sum(ev < 1e-10 * ev.max())) == 2


def test_first_difference_penalty_annihilates_constants():
   S = diff_penalty(10, 1)
   assert penalty_rank(S) == 9
   assert np.all(S @ np.ones(10) == 0)


def test_second_difference_penalty_k5():
   D = np.array([[1.0, -2, 1, 0, 0], [0, 1, -2, 1, 0], [0, 0, 1, -2, 1]])
   S = diff_penalty(5, 2)
   assert np.array_equal(S, D.T @ D) and penalty_rank(S) == 3


def _cr_error(k, x):
   _, X, _, _ = build_basis(SmoothTerm("x", "cr", k), x)
   g = np.sin(2 * np.pi * x)
   coef = np.linalg.lstsq(X, g, rcond=None)[0]
   return np.max(np.abs(X @ coef - g))


def test_cubic_regression_spline_approximation_order():
   x = np.linspace(0, 1, 200)
   e10, e19 = _cr_error(10, x), _cr_error(19, x)
   assert e10 < 1e-3
   # halving the knot spacing: fourth-order convergence
   assert 10 < e10 / e19 < 25


def test_demmler_reinsch_properties():
   x = np.linspace(0, 1, 300)
   _, X, S, _ = build_basis(SmoothTerm("x", "ps", 8, 2), x)
   dr = demmler_reinsch(X, S)
   assert np.sum(dr.eigenvalues == 0) == 2
   assert np.all(np.diff(dr.eigenvalues) >= 0)
   Sd = dr.transform.T @ S @ dr.transform
   off = Sd - np.diag(np.diag(Sd))
   assert np.max(np.abs(off)) < 1e-10 * max(1.0, np.abs(Sd).max())
   assert np.allclose(np.mean(dr.X**2, axis=0), 1.0)


def _leading_efuns(k, x):
   _, X, S, _ = build_basis(SmoothTerm("x", "cr", k), x)
   dr = demmler_reinsch(X, S)
   F = dr.X[:, np.nonzero(dr.eigenvalues > 0)[0][:3]]
   return F * np.sign(F[0])


def test_demmler_reinsch_eigenfunctions_stabilize():
   x = np.linspace(0, 1, 1000)
   # fine-grid second-difference operator with free ends: first three
   # eigenvectors after the linear null space
   D = np.diff(np.eye(len(x)), 2, axis=0)
   _, U = np.linalg.eigh(D.T @ D)
   G = U[:, 2:5] * np.sqrt(len(x))
   G = G * np.sign(G[0])
   f8, f16 = _leading_efuns(8, x), _leading_efuns(16, x)
   assert np.all(np.sqrt(np.mean((f8 - f16)**2, axis=0)) < 0.05)
   assert np.all(np.sqrt(np.mean((f16 - G)**2, axis=0)) < 0.05)


def test_demmler_reinsch_rank_deficient_basis():
   X = np.ones((10, 3))
   with pytest.raises(DesignError, match="myterm"):
      demmler_reinsch(X, np.eye(3), name="myterm")


def test_design_errors():
   d = uniform_data()
   d["const"] = np.ones(200)
   with pytest.raises(DesignError, match="constant"):
      assemble_design([Predictor(smooths=[SmoothTerm("const", "cr", 5)])], d, "y")
   small = {"x": np.array([0.0, 1, 2, 0, 1, 2]), "y": np.zeros(6)}
   with pytest.raises(DesignError, match="exceeds"):
      assemble_design([Predictor(smooths=[SmoothTerm("x", "cr", 5)])], small, "y")
   with pytest.raises(DesignError, match="unknown column"):
      assemble_design([Predictor(smooths=[SmoothTerm("zz", "cr", 5)])], d, "y")
   with pytest.raises(DesignError, match="unknown basis"):
      assemble_design([Predictor(smooths=[SmoothTerm("x0", "tp", 5)])], d, "y")


def test_gaulss_two_predictors_disjoint():
   d = uniform_data()
   cfg = {"family": "gaulss", "formulas": [
      {"response": "y", "smooths": [{"var": "x0", "k": 8}]},
      {"smooths": [{"var": "x1", "k": 6}]}]}
   _, design, blocks = build_design(cfg, d)
   assert design.K == 2
   (a0, a1), (b0, b1) = design.col_ranges
   assert a1 == b0 and b1 == design.P
   spans = [(off, off + S.shape[0]) for off, S, _ in blocks]
   assert spans[0][1] <= spans[1][0]


def test_prediction_basis_matches_training():
   d = gu_wahba(300, seed=4)
   cfg = {"family": "gaussian", "formulas": [{"response": "y", "smooths": GW_SMOOTHS}]}
   _, design, _ = build_design(cfg, d)
   Xs, _ = predict_matrices(design, d)
   assert np.max(np.abs(Xs[0] - design.Xs[0])) < 1e-12


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), k=st.integers(4, 14), basis=st.sampled_from(["cr", "ps"]),
       m=st.integers(1, 2))
def test_basis_properties(seed, k, basis, m):
   x = np.random.default_rng(seed).uniform(size=60)
   t, X, S, rank = build_basis(SmoothTerm("x", basis, k, m), x)
   assert np.max(np.abs(S - S.T)) <= 1e-14 * max(1.0, np.abs(S).max())
   ev = np.linalg.eigvalsh(S)
   assert ev.min() > -1e-10 * ev.max()
   assert penalty_rank(S) == rank
   assert rank + int(np.sum(ev <= 1e-10 * ev.max())) == k
   # deterministic evaluation, also at new points
   t2 = t
   assert np.array_equal(eval_term(t2, x), eval_term(t, x))
   assert np.max(np.abs(eval_term(t, x) - X)) < 1e-12
