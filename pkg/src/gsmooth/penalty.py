"""Block diagonal penalty algebra.

The total penalty ``S_lam = sum_j exp(rho_j) S_j`` is block diagonal.  A block
carrying one smoothing parameter has a log generalized determinant that is
linear in ``rho`` with slope equal to its rank, so it needs no numerical work
beyond a one-off eigen-decomposition.  Blocks shared by several smoothing
parameters are handled by a similarity transform that separates dominant from
subdominant components before the determinant is evaluated, which avoids the
cancellation a plain eigen-decomposition suffers when the ``lambda_j`` differ by
many orders of magnitude.
"""

from dataclasses import dataclass, field

import numpy as np

RHO_MAX = 35.0
RANK_TOL = 1e-10
DOMINANCE = 1e-5


class PenaltyError(ValueError):
   pass


@dataclass
class PenaltyBlock:
   offset: int
   dim: int
   matrices: list
   sp_indices: list
   rank: int = None
   block_type: str = None
   # original-coordinate coefficients are ``T @ working``
   transform: np.ndarray = None
   inverse: np.ndarray = None
   log_abs_det_T: float = 0.0
   log_det_base: float = 0.0
   n_penalized: int = None


@dataclass
class PenaltyStructure:
   blocks: list
   P: int
   M: int
   preprocessed: bool = False
   originals: list = field(default_factory=list)

   @property
   def Mp(self):
      return self.P - sum(b.rank for b in self.blocks)

   def transform(self):
      """Full P x P map from working to original coefficients."""
      T = np.eye(self.P)
      for b in self.blocks:
         if b.transform is not None:
            sl = slice(b.offset, b.offset + b.dim)
            T[sl, sl] = b.transform
      return T

   def inverse_transform(self):
      Ti = np.eye(self.P)
      for b in self.blocks:
         if b.inverse is not None:
            sl = slice(b.offset, b.offset + b.dim)
            Ti[sl, sl] = b.inverse
      return Ti


def _eig_rank(S):
   ev = np.linalg.eigvalsh(0.5 * (S + S.T))
   top = max(ev.max(), 0.0)
   if ev.min() < -1e-8 * max(top, 1e-300):
      raise PenaltyError("penalty matrix is indefinite")
   return ev, int(np.sum(ev > RANK_TOL * top)) if top > 0 else 0


def classify(matrices):
   if len(matrices) > 1:
      return "multi_lambda"
   S = matrices[0]
   off = S - np.diag(np.diag(S))
   return "diag_single" if not np.any(off) else "dense_single"


def make_structure(blocks, P):
   """``blocks`` is a list of ``(offset, S)`` or ``(offset, [S1, S2, ...])``.

   Smoothing-parameter indices are allocated in order of appearance.
   """
   out = []
   j = 0
   for item in blocks:
      offset, mats = item[0], item[1]
      if not isinstance(mats, (list, tuple)):
         mats = [mats]
      mats = [np.asarray(S, dtype=float) for S in mats]
      dim = mats[0].shape[0]
      if offset < 0 or offset + dim > P:
         raise PenaltyError("penalty block outside the coefficient vector")
      idx = list(range(j, j + len(mats)))
      j += len(mats)
      bt = classify(mats)
      if bt == "multi_lambda":
         tot = sum(S / np.linalg.norm(S) for S in mats)
         rank = _eig_rank(tot)[1]
      else:
         rank = _eig_rank(mats[0])[1]
      out.append(PenaltyBlock(offset=offset, dim=dim, matrices=mats, sp_indices=idx,
                              rank=rank, block_type=bt))
   _check_disjoint(out, P)
   return PenaltyStructure(blocks=out, P=P, M=j)


def _check_disjoint(blocks, P):
   used = np.zeros(P, dtype=bool)
   for b in blocks:
      sl = slice(b.offset, b.offset + b.dim)
      if np.any(used[sl]):
         raise PenaltyError("penalty blocks overlap")
      used[sl] = True


def preprocess_blocks(structure):
   """Reparameterize every block into its working coordinates.

   * diagonal single-parameter blocks are rescaled to a 0/1 diagonal;
   * dense single-parameter blocks are rotated onto their eigenvectors, which
     preserves the eigenvalues;
   * multi-parameter blocks are rotated so the leading coordinates span the
     range of the balanced penalty ``sum_j S_j / ||S_j||_F``.

   Returns a new structure; ``originals`` keeps the untransformed matrices.
   """
   blocks = []
   for b in structure.blocks:
      mats = b.matrices
      if b.block_type == "diag_single":
         d = np.diag(mats[0]).copy()
         if np.any(d < 0):
            raise PenaltyError("penalty matrix is indefinite")
         pos = d > RANK_TOL * max(d.max(), 1e-300)
         scale = np.ones(b.dim)
         scale[pos] = 1.0 / np.sqrt(d[pos])
         T = np.diag(scale)
         Ti = np.diag(1.0 / scale)
         Sw = np.diag(pos.astype(float))
         nb = PenaltyBlock(b.offset, b.dim, [Sw], b.sp_indices, int(pos.sum()), b.block_type,
                           T, Ti, float(np.sum(np.log(scale))), float(np.sum(np.log(d[pos]))),
                           int(pos.sum()))
      elif b.block_type == "dense_single":
         ev, U = np.linalg.eigh(_sym(mats[0]))
         if ev.min() < -1e-8 * max(ev.max(), 1e-300):
            raise PenaltyError("penalty matrix is indefinite")
         order = np.argsort(ev)[::-1]
         U = U[:, order]
         ev = ev[order]
         rank = int(np.sum(ev > RANK_TOL * max(ev[0], 1e-300)))
         ev[rank:] = 0.0
         Sw = np.diag(ev)
         nb = PenaltyBlock(b.offset, b.dim, [Sw], b.sp_indices, rank, b.block_type,
                           U, U.T.copy(), 0.0, float(np.sum(np.log(ev[:rank]))), rank)
      else:
         tot = sum(S / np.linalg.norm(S) for S in mats)
         ev, U = np.linalg.eigh(0.5 * (tot + tot.T))
         order = np.argsort(ev)[::-1]
         U = U[:, order]
         ev = ev[order]
         rank = int(np.sum(ev > RANK_TOL * ev[0]))
         Sw = []
         for S in mats:
            R = U.T @ S @ U
            R[rank:, :] = 0.0
            R[:, rank:] = 0.0
            Sw.append(0.5 * (R + R.T))
         nb = PenaltyBlock(b.offset, b.dim, Sw, b.sp_indices, rank, b.block_type,
                           U, U.T.copy(), 0.0, 0.0, rank)
      blocks.append(nb)
   return PenaltyStructure(blocks=blocks, P=structure.P, M=structure.M, preprocessed=True,
                           originals=structure.blocks)


# ---------------------------------------------------------------- multi-parameter blocks


def _sym(A):
   return 0.5 * (A + A.T)


def reparameterize_type3(matrices, rho, tol=RANK_TOL):
   """Similarity transform separating dominant and subdominant penalty terms.

   ``matrices`` are the ``q x q`` penalty components restricted to a block's
   penalized subspace (the summed penalty has full rank there).  Returns
   ``(S_tilde, mats, Q)`` with ``S_tilde = sum_j exp(rho_j) mats_j`` and
   ``mats_j = Q' S_j Q`` except that the components dominant at each stage are
   zeroed outside the rows and columns they own.
   """
   q = matrices[0].shape[0]
   mats = [_sym(np.array(S, dtype=float)) for S in matrices]
   lam = np.exp(np.clip(rho, -RHO_MAX - 5, RHO_MAX + 5))
   Q = np.eye(q)
   K = 0
   gamma = list(range(len(mats)))
   while gamma and K < q:
      free = slice(K, q)
      norms = np.array([np.linalg.norm(mats[i][free, free]) for i in gamma])
      live = norms > 0
      if not np.any(live):
         break
      logw = np.full(len(gamma), -np.inf)
      logw[live] = np.log(lam[gamma][live]) + np.log(norms[live])
      top = logw.max()
      alpha = [g for g, w in zip(gamma, logw) if w >= top + np.log(DOMINANCE)]
      rest = [g for g, w in zip(gamma, logw) if w < top + np.log(DOMINANCE)]
      Sa = sum(mats[i][free, free] / np.linalg.norm(mats[i][free, free]) for i in alpha)
      ev = np.linalg.eigvalsh(_sym(Sa))
      r = int(np.sum(ev > tol * ev.max()))
      if r == q - K:
         break
      Sl = sum(lam[i] * mats[i][free, free] for i in alpha)
      ev, U = np.linalg.eigh(_sym(Sl))
      U = U[:, np.argsort(ev)[::-1]]
      G = np.eye(q)
      G[free, free] = U
      Q = Q @ G
      for i in range(len(mats)):
         mats[i] = _sym(G.T @ mats[i] @ G)
      for i in alpha:
         mats[i][K + r:, :] = 0.0
         mats[i][:, K + r:] = 0.0
      K += r
      gamma = rest
   St = sum(lam[i] * mats[i] for i in range(len(mats)))
   return _sym(St), mats, Q


def _logdet_multi(mats, rho):
   """Log determinant of ``sum exp(rho_j) S_j`` on a full-rank subspace, with derivatives."""
   St, rmats, _ = reparameterize_type3(mats, rho)
   lam = np.exp(rho)
   d = np.sqrt(np.abs(np.diag(St)))
   d[d == 0] = 1.0
   L = np.linalg.cholesky(St / d[:, None] / d[None, :])
   value = 2.0 * np.sum(np.log(np.diag(L))) + 2.0 * np.sum(np.log(d))
   m = len(mats)
   A = []
   for j in range(m):
      Sj = lam[j] * rmats[j] / d[:, None] / d[None, :]
      X = np.linalg.solve(L, Sj)
      A.append(np.linalg.solve(L, X.T).T)
   grad = np.array([np.trace(Aj) for Aj in A])
   hess = np.zeros((m, m))
   for j in range(m):
      for k in range(j, m):
         hess[j, k] = hess[k, j] = -np.sum(A[j] * A[k].T)
      hess[j, j] += grad[j]
   return value, grad, hess


def logdet_splus(structure, rho):
   """``log|S_lam|_+`` with gradient and Hessian in ``rho``.

   Values refer to the original (untransformed) coefficients.  Single-parameter
   blocks contribute ``rank * rho + log|S|_+`` with zero curvature.
   """
   rho = np.clip(np.asarray(rho, dtype=float), -RHO_MAX, RHO_MAX)
   M = structure.M
   value = 0.0
   grad = np.zeros(M)
   hess = np.zeros((M, M))
   for b in structure.blocks:
      if b.block_type != "multi_lambda":
         j = b.sp_indices[0]
         base = b.log_det_base if structure.preprocessed else _single_base(b)
         value += b.rank * rho[j] + base
         grad[j] += b.rank
         continue
      if structure.preprocessed:
         r = b.n_penalized
         mats = [S[:r, :r] for S in b.matrices]
      else:
         mats = _penalized_part(b.matrices)
      idx = b.sp_indices
      v, g, h = _logdet_multi(mats, rho[idx])
      value += v
      grad[idx] += g
      hess[np.ix_(idx, idx)] += h
   return value, grad, hess


def _single_base(b):
   ev, rank = _eig_rank(b.matrices[0])
   ev = np.sort(ev)[::-1][:rank]
   return float(np.sum(np.log(ev)))


def _penalized_part(mats):
   tot = sum(S / np.linalg.norm(S) for S in mats)
   ev, U = np.linalg.eigh(_sym(tot))
   order = np.argsort(ev)[::-1]
   U = U[:, order]
   r = int(np.sum(ev > RANK_TOL * ev.max()))
   return [_sym(U[:, :r].T @ S @ U[:, :r]) for S in mats]


def logdet_naive(matrices, rho, tol=RANK_TOL):
   """Plain double precision ``log|sum exp(rho_j) S_j|_+`` via ``eigvalsh``.

   Kept as a baseline: it loses the small eigenvalues once the ``lambda_j``
   differ by more than about ``1/tol``.
   """
   S = sum(np.exp(r) * M for r, M in zip(rho, matrices))
   ev = np.linalg.eigvalsh(_sym(S))
   ev = ev[ev > tol * ev.max()]
   return float(np.sum(np.log(ev)))


# ---------------------------------------------------------------- assembly


def assemble_S_lambda(structure, rho):
   """Dense ``S_lam`` (P x P) for the (working) block matrices."""
   rho = np.clip(np.asarray(rho, dtype=float), -RHO_MAX, RHO_MAX)
   S = np.zeros((structure.P, structure.P))
   for b in structure.blocks:
      sl = slice(b.offset, b.offset + b.dim)
      for j, Sj in zip(b.sp_indices, b.matrices):
         S[sl, sl] += np.exp(rho[j]) * Sj
   return S


def apply_Sk(structure, k, v):
   """``S_k v`` for component ``k`` (unscaled by ``lambda_k``)."""
   out = np.zeros_like(v, dtype=float)
   for b in structure.blocks:
      if k in b.sp_indices:
         sl = slice(b.offset, b.offset + b.dim)
         out[sl] += b.matrices[b.sp_indices.index(k)] @ v[sl]
   return out


def component(structure, k):
   """``(slice, S_k)`` of smoothing parameter ``k``."""
   for b in structure.blocks:
      if k in b.sp_indices:
         return slice(b.offset, b.offset + b.dim), b.matrices[b.sp_indices.index(k)]
   raise IndexError(k)


def balanced_penalty(structure):
   """``sum_j S_j / ||S_j||_F`` as a P x P matrix."""
   S = np.zeros((structure.P, structure.P))
   for b in structure.blocks:
      sl = slice(b.offset, b.offset + b.dim)
      for Sj in b.matrices:
         nrm = np.linalg.norm(Sj)
         if nrm > 0:
            S[sl, sl] += Sj / nrm
   return S
