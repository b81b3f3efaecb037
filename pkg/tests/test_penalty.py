"""Block penalty algebra: log generalized determinants, transforms, assembly."""

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gsmooth.penalty import (RHO_MAX, PenaltyError, apply_Sk, assemble_S_lambda,
                             balanced_penalty, logdet_naive, logdet_splus, make_structure,
                             preprocess_blocks, reparameterize_type3)


def mp_logdet(mats, rho, dps=80):
   """Extended precision log determinant of ``sum exp(rho_j) S_j`` on its range."""
   with mp.workdps(dps):
      n = mats[0].shape[0]
      S = mp.matrix(n, n)
      for r, M in zip(rho, mats):
         lam = mp.exp(mp.mpf(float(r)))
         for i in range(n):
            for j in range(n):
               S[i, j] += lam * mp.mpf(float(M[i, j]))
      ev = mp.eigsy(S)[0]
      top = max(ev)
      return float(sum(mp.log(e) for e in ev if e > top * mp.mpf(10)**(-dps // 2)))


def overlapping_pair(seed):
   """A rank-2 term on a 3x3 sub-block overlapping a full-rank 3x3 term.

   Entries are multiples of 1/4 so the products are exact and the rank
   deficiency survives rounding.
   """
   rng = np.random.default_rng(seed)
   while True:
      C = rng.integers(-4, 5, (3, 2)) / 4.0
      D = rng.integers(-4, 5, (3, 3)) / 4.0
      if abs(np.linalg.det(D)) > 0.1 and np.linalg.matrix_rank(C) == 2:
         break
   S1 = np.zeros((5, 5))
   S1[:3, :3] = C @ C.T
   S2 = np.zeros((5, 5))
   S2[2:, 2:] = D @ D.T
   return S1, S2


def test_single_diag_block_logdet():
   stc = preprocess_blocks(make_structure([(0, np.diag([1.0, 1.0, 0.0]))], 3))
   v, g, h = logdet_splus(stc, np.array([3.0]))
   assert v == pytest.approx(6.0, abs=1e-14)
   assert g[0] == 2.0 and h[0, 0] == 0.0


def test_diag_block_rescaled_to_unit():
   stc = preprocess_blocks(make_structure([(0, np.diag([2.0, 2.0, 0.0]))], 3))
   b = stc.blocks[0]
   assert np.allclose(b.matrices[0], np.diag([1.0, 1.0, 0.0]))
   assert b.rank == 2


def test_dense_single_block_diagonalized():
   rng = np.random.default_rng(0)
   A = rng.normal(size=(6, 4))
   S = A @ A.T
   b = preprocess_blocks(make_structure([(0, S)], 6)).blocks[0]
   W = b.matrices[0]
   assert np.max(np.abs(W - np.diag(np.diag(W)))) < 1e-12
   assert np.allclose(np.sort(np.diag(W)), np.sort(np.linalg.eigvalsh(S)), atol=1e-10)
   assert b.rank == 4


def test_disjoint_blocks_have_no_cross_curvature():
   rng = np.random.default_rng(1)
   A = rng.normal(size=(4, 3))
   stc = preprocess_blocks(make_structure([(0, A @ A.T), (4, np.eye(3))], 7))
   v, g, h = logdet_splus(stc, np.array([0.7, -2.0]))
   assert h[0, 1] == 0.0 and h[1, 0] == 0.0
   assert np.array_equal(g, [3.0, 3.0])


def test_type3_rank_from_balanced_penalty():
   S1, S2 = overlapping_pair(0)
   stc = preprocess_blocks(make_structure([(0, [S1, S2])], 5))
   ev = np.linalg.eigvalsh(S1 + S2)
   assert stc.blocks[0].rank == int(np.sum(ev > 1e-10 * ev.max())) == 5


@pytest.mark.parametrize("seed", range(4))
def test_type3_logdet_matches_extended_precision(seed):
   S1, S2 = overlapping_pair(seed)
   stc = preprocess_blocks(make_structure([(0, [S1, S2])], 5))
   worst_naive = 0.0
   for r in (-12, -8, -4, 0, 4, 8, 10, 12):
      rho = np.array([r * np.log(10.0), 0.0])
      ref = mp_logdet([S1, S2], rho)
      v = logdet_splus(stc, rho)[0]
      assert abs(v - ref) <= 1e-6 * abs(ref)
      worst_naive = max(worst_naive, abs(logdet_naive([S1, S2], rho) - ref) / abs(ref))
   # plain eigenvalues lose the subdominant term at extreme ratios
   assert worst_naive > 1e-3


def test_type3_equal_lambdas_direct():
   S1, S2 = overlapping_pair(3)
   stc = preprocess_blocks(make_structure([(0, [S1, S2])], 5))
   rho = np.array([0.4, 0.4])
   direct = np.linalg.slogdet(np.exp(0.4) * (S1 + S2))[1]
   assert logdet_splus(stc, rho)[0] == pytest.approx(direct, abs=1e-10)


def test_type3_transform_round_trip():
   S1, S2 = overlapping_pair(2)
   St, mats, Q = reparameterize_type3([S1, S2], np.array([10 * np.log(10.0), 0.0]))
   v = np.random.default_rng(0).normal(size=5)
   assert np.max(np.abs(Q @ (Q.T @ v) - v)) < 1e-12
   # similarity preserves the determinant
   ref = mp_logdet([S1, S2], np.array([10 * np.log(10.0), 0.0]))
   assert np.linalg.slogdet(St)[1] == pytest.approx(ref, rel=1e-6)


def test_type3_derivatives_match_finite_differences():
   S1, S2 = overlapping_pair(1)
   stc = preprocess_blocks(make_structure([(0, [S1, S2])], 5))
   rho = np.array([3.0, -1.0])
   v, g, h = logdet_splus(stc, rho)
   eps = 1e-5
   for k in range(2):
      d = np.zeros(2)
      d[k] = eps
      vp, gp, _ = logdet_splus(stc, rho + d)
      vm, gm, _ = logdet_splus(stc, rho - d)
      assert g[k] == pytest.approx((vp - vm) / (2 * eps), rel=1e-8)
      assert np.allclose(h[k], (gp - gm) / (2 * eps), atol=1e-8)
   assert np.allclose(h, h.T)


def test_assembly_identities():
   rng = np.random.default_rng(2)
   A = rng.normal(size=(5, 3))
   S1, S2 = A @ A.T, np.diag([1.0, 2.0, 0.0])
   stc = make_structure([(1, S1), (6, S2)], 9)
   S0 = assemble_S_lambda(stc, np.zeros(2))
   tot = np.zeros((9, 9))
   tot[1:6, 1:6] += S1
   tot[6:9, 6:9] += S2
   assert np.allclose(S0, tot, atol=1e-14)
   rho = rng.normal(size=2)
   beta = rng.normal(size=9)
   q = beta @ assemble_S_lambda(stc, rho) @ beta
   parts = [beta @ apply_Sk(stc, k, beta) for k in range(2)]
   assert q == pytest.approx(np.exp(rho) @ parts, rel=1e-12)
   null = np.zeros(9)
   null[0] = 1.0
   null[8] = 1.0
   assert np.max(np.abs(assemble_S_lambda(stc, rho) @ null)) < 1e-12


def test_bad_structures_rejected():
   with pytest.raises(PenaltyError):
      make_structure([(0, np.eye(3)), (2, np.eye(2))], 5)
   with pytest.raises(PenaltyError):
      make_structure([(0, np.diag([1.0, -1.0]))], 2)
   with pytest.raises(PenaltyError):
      make_structure([(4, np.eye(3))], 5)


def random_structure(seed):
   rng = np.random.default_rng(seed)
   blocks, off = [], 0
   for kind in rng.permutation(["diag", "dense", "multi"]):
      d = int(rng.integers(2, 5))
      if kind == "diag":
         S = np.diag(np.r_[rng.uniform(0.5, 3, d - 1), 0.0])
      elif kind == "dense":
         A = rng.normal(size=(d, d - 1))
         S = A @ A.T
      else:
         A, B = rng.normal(size=(d, 1)), rng.normal(size=(d, d - 1))
         S = [A @ A.T, B @ B.T]
      blocks.append((off, S))
      off += d
   return make_structure(blocks, off)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), rho=st.lists(st.floats(-RHO_MAX, RHO_MAX), min_size=4,
                                                max_size=4))
def test_penalty_properties(seed, rho):
   raw = random_structure(seed)
   stc = preprocess_blocks(raw)
   rho = np.array(rho)
   v, g, h = logdet_splus(stc, rho)
   # invariant to the stored reparameterization
   v0 = logdet_splus(raw, rho)[0]
   assert abs(v - v0) <= 1e-8 * max(1.0, abs(v0))
   assert np.allclose(h, h.T, atol=1e-12)
   multi = np.zeros(stc.M, dtype=bool)
   for b in stc.blocks:
      if b.block_type == "multi_lambda":
         multi[b.sp_indices] = True
      else:
         assert g[b.sp_indices[0]] == b.rank
   assert np.all(h[~multi, :] == 0) and np.all(h[:, ~multi] == 0)
   S = assemble_S_lambda(stc, rho)
   ev = np.linalg.eigvalsh(S)
   assert ev.min() >= -1e-10 * max(ev.max(), 1.0)
   Sb = balanced_penalty(stc)
   assert np.allclose(Sb, Sb.T)
   for b in stc.blocks:
      assert b.rank + (b.dim - b.rank) == b.dim
      for M in b.matrices:
         assert np.max(np.abs(M - M.T)) <= 1e-14 * max(1.0, np.abs(M).max())
