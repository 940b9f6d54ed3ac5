"""Reduced basis space, online solver and residual-based error estimator.

The basis is kept X-orthonormal.  Everything the online stage needs is
collected in :class:`OnlineData`, which holds no array whose size depends
on the truth dimension.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .fem import AffineModel, TruthSolution, check_parameter, truth_solve

__all__ = [
    "RedundantSnapshot",
    "RBSpace",
    "OnlineData",
    "RBSolution",
    "ErrorEstimate",
    "augment_basis",
    "rb_solve",
    "lift",
    "coercivity_lb",
    "error_estimate",
    "true_error",
    "rb_output",
    "solve_reduced",
    "estimate_batch",
    "sweep",
    "h1_norms",
    "REDUNDANCY_TOL",
]

log = logging.getLogger(__name__)

REDUNDANCY_TOL = 1e-10
DEFAULT_CHUNK = 2048
# directions of the representer factor below this relative size are dropped
FACTOR_DROP_TOL = 1e-13


class RedundantSnapshot(ValueError):
    """The snapshot is numerically contained in the current basis."""


def coercivity_lb(model: AffineModel, mu) -> np.ndarray | float:
    """Lower bound ``min_q theta_a^q(mu)`` for the coercivity constant.

    Valid when the X inner product is ``sum_q a^q`` with every ``a^q``
    positive semi-definite, as for the thermal block.  Accepts a single
    parameter or an ``(M, p)`` batch.
    """
    theta = model.theta_a(np.asarray(mu, dtype=float))
    alpha = theta.min(axis=-1)
    if np.any(alpha <= 0):
        raise ValueError("non-positive coercivity bound; parameter outside the box?")
    return alpha if alpha.ndim else float(alpha)


@dataclass(frozen=True)
class OnlineData:
    """Reduced quantities for a basis of size ``N``.

    ``gram_CL`` and ``gram_LL`` are flattened with index ``q * N + i``.
    ``residual_factor`` is ``R`` with ``R^T R`` equal to the Gram matrix of
    the representers ordered ``C^1..C^Qf, L_1^1..L_1^Qa, L_2^1, ...``; it
    lets the residual norm be evaluated without cancellation.
    """

    reduced_A: np.ndarray
    reduced_F: np.ndarray
    reduced_output: np.ndarray
    gram_CC: np.ndarray
    gram_CL: np.ndarray
    gram_LL: np.ndarray
    residual_factor: np.ndarray
    theta_a: Callable[[np.ndarray], np.ndarray]
    theta_f: Callable[[np.ndarray], np.ndarray]
    alpha_lb: Callable[[np.ndarray], np.ndarray]

    @property
    def N(self) -> int:
        return self.reduced_A.shape[1]

    def arrays(self) -> dict:
        return {k: getattr(self, k) for k in
                ("reduced_A", "reduced_F", "reduced_output", "gram_CC", "gram_CL", "gram_LL",
                 "residual_factor")}


class RBSpace:
    """X-orthonormal reduced basis together with its offline data.

    Attributes
    ----------
    basis : (N, dofs) array, rows are the orthonormal basis vectors
    snapshots : list of selected parameter vectors
    reduced_A : (Q_a, N, N) array, ``reduced_A[q, j, i] = xi_j^T A_q xi_i``
    reduced_F : (Q_f, N) array
    reduced_output : (N,) array
    riesz_C : (Q_f, dofs) Riesz representers of the load components
    riesz_L : (Q_a, N, dofs) Riesz representers of ``a^q(xi_i, .)``
    gram_CC : (Q_f, Q_f), gram_CL : (Q_f, Q_a, N), gram_LL : (Q_a, N, Q_a, N)
    residual_factor : (K, K) with K = Q_f + N Q_a, upper triangular coordinates
        of the representers in an X-orthonormal basis of their span
    """

    def __init__(self, model: AffineModel):
        self.model = model
        n, qa, qf = model.dof_count, model.Q_a, model.Q_f
        self.basis = np.zeros((0, n))
        self._Xbasis = np.zeros((0, n))
        self.snapshots: list[np.ndarray] = []
        self.reduced_A = np.zeros((qa, 0, 0))
        self.reduced_F = np.zeros((qf, 0))
        self.reduced_output = np.zeros(0)
        self.riesz_C = model.riesz(model.F.T).T.reshape(qf, n)
        self._XC = (model.X @ self.riesz_C.T).T
        self.riesz_L = np.zeros((qa, 0, n))
        self._XL = np.zeros((qa, 0, n))
        self.gram_CC = self.riesz_C @ self._XC.T
        self.gram_CC = 0.5 * (self.gram_CC + self.gram_CC.T)
        self.gram_CL = np.zeros((qf, qa, 0))
        self.gram_LL = np.zeros((qa, 0, qa, 0))
        self._Z = np.zeros((0, n))
        self._XZ = np.zeros((0, n))
        self.residual_factor = np.zeros((0, 0))
        self._row_used = np.zeros(0, dtype=bool)
        self._extend_factor(self.riesz_C)
        self._online: OnlineData | None = None

    @property
    def N(self) -> int:
        return self.basis.shape[0]

    def __len__(self) -> int:
        return self.N

    def orthogonalize(self, v: np.ndarray) -> np.ndarray:
        """X-orthogonalise ``v`` against the basis and normalise it.

        Modified Gram-Schmidt, applied twice.  Raises
        :class:`RedundantSnapshot` on relative norm loss below
        ``REDUNDANCY_TOL``.
        """
        X = self.model.X
        v = np.array(v, dtype=float)
        pre = np.sqrt(v @ (X @ v))
        for _ in range(2):
            for xi, Xxi in zip(self.basis, self._Xbasis):
                v -= (Xxi @ v) * xi
        post = np.sqrt(max(v @ (X @ v), 0.0))
        if not post > REDUNDANCY_TOL * pre:
            raise RedundantSnapshot(f"snapshot lost {post / pre if pre else 0:.1e} of its X-norm")
        return v / post

    def _extend_factor(self, vectors: np.ndarray):
        """Append columns for ``vectors`` to the representer factor."""
        X = self.model.X
        R = self.residual_factor
        for v in vectors:
            v = v.copy()
            pre = np.sqrt(max(v @ (X @ v), 0.0))
            coords = np.zeros(len(self._Z))
            for _ in range(2):  # classical Gram-Schmidt, twice is enough
                c = self._XZ @ v
                coords += c
                v -= c @ self._Z
            post = np.sqrt(max(v @ (X @ v), 0.0))
            coords = np.append(coords, 0.0)
            if post > FACTOR_DROP_TOL * pre:
                self._Z = np.vstack([self._Z, v / post])
                self._XZ = np.vstack([self._XZ, X @ (v / post)])
                coords[-1] = post
            # one row per column keeps R square; rows of dropped directions stay zero
            rows = np.flatnonzero(self._row_used)
            full = np.zeros(len(self._row_used) + 1)
            full[rows] = coords[:-1]
            full[-1] = coords[-1]
            self._row_used = np.append(self._row_used, coords[-1] != 0.0)
            R = np.pad(R, ((0, 1), (0, 1)))
            R[:, -1] = full
        self.residual_factor = R

    def augment(self, truth: TruthSolution) -> "RBSpace":
        """Add a snapshot in place, extending all offline blocks by one row/column."""
        model = self.model
        xi = self.orthogonalize(truth.coefficients)
        Xxi = model.X @ xi
        Axi = np.array([a @ xi for a in model.A])              # (Q_a, dofs)
        L_new = model.riesz(Axi.T).T.reshape(model.Q_a, -1)     # (Q_a, dofs)
        XL_new = (model.X @ L_new.T).T

        N = self.N
        red = np.zeros((model.Q_a, N + 1, N + 1))
        red[:, :N, :N] = self.reduced_A
        col = Axi @ self.basis.T                                # (Q_a, N)
        red[:, :N, N] = col
        red[:, N, :N] = col
        red[:, N, N] = Axi @ xi
        self.reduced_A = red
        self.reduced_F = np.column_stack([self.reduced_F, model.F @ xi])
        self.reduced_output = np.append(self.reduced_output, model.output_vector @ xi)

        self.gram_CL = np.concatenate([self.gram_CL, (self._XC @ L_new.T)[:, :, None]], axis=2)

        qa = model.Q_a
        LL = np.zeros((qa, N + 1, qa, N + 1))
        LL[:, :N, :, :N] = self.gram_LL
        cross = np.einsum("qd,pid->qpi", XL_new, self.riesz_L)   # (q_new, q_old, i_old)
        LL[:, N, :, :N] = cross
        LL[:, :N, :, N] = cross.transpose(1, 2, 0)
        diag = XL_new @ L_new.T
        LL[:, N, :, N] = 0.5 * (diag + diag.T)
        self.gram_LL = LL

        self.riesz_L = np.concatenate([self.riesz_L, L_new[:, None, :]], axis=1)
        self._XL = np.concatenate([self._XL, XL_new[:, None, :]], axis=1)
        self._extend_factor(L_new)
        self.basis = np.vstack([self.basis, xi])
        self._Xbasis = np.vstack([self._Xbasis, Xxi])
        self.snapshots.append(np.asarray(truth.parameter, dtype=float).copy())
        self._online = None
        return self

    @classmethod
    def rebuild(cls, model: AffineModel, parameters: Sequence) -> "RBSpace":
        """Build a space from scratch in one pass (no incremental updates)."""
        space = cls(model)
        truths = [truth_solve(model, mu) for mu in parameters]
        basis = []
        for t in truths:
            v = t.coefficients.copy()
            pre = np.sqrt(v @ (model.X @ v))
            for _ in range(2):
                for b in basis:
                    v -= (b @ (model.X @ v)) * b
            post = np.sqrt(v @ (model.X @ v))
            if not post > REDUNDANCY_TOL * pre:
                raise RedundantSnapshot("dependent snapshot in rebuild")
            basis.append(v / post)
        V = np.array(basis).reshape(len(basis), model.dof_count)
        AV = np.array([(a @ V.T).T for a in model.A])           # (Q_a, N, dofs)
        L = np.array([model.riesz(av.T).T for av in AV]).reshape(AV.shape)
        XL = np.array([(model.X @ l.T).T for l in L]).reshape(AV.shape)
        space.basis = V
        space._Xbasis = (model.X @ V.T).T
        space.snapshots = [np.asarray(t.parameter, dtype=float) for t in truths]
        space.reduced_A = np.einsum("qid,jd->qji", AV, V)
        space.reduced_F = model.F @ V.T
        space.reduced_output = V @ model.output_vector
        space.riesz_L = L
        space._XL = XL
        space.gram_CL = np.einsum("fd,qid->fqi", space._XC, L)
        space.gram_LL = np.einsum("qid,pjd->qipj", XL, L)
        space._extend_factor(L.transpose(1, 0, 2).reshape(-1, model.dof_count))
        return space

    def online(self) -> OnlineData:
        if self._online is None:
            qa, N = self.model.Q_a, self.N
            model = self.model
            self._online = OnlineData(
                reduced_A=self.reduced_A.copy(),
                reduced_F=self.reduced_F.copy(),
                reduced_output=self.reduced_output.copy(),
                gram_CC=self.gram_CC.copy(),
                gram_CL=self.gram_CL.reshape(model.Q_f, qa * N).copy(),
                gram_LL=np.ascontiguousarray(self.gram_LL.reshape(qa * N, qa * N)),
                residual_factor=self.residual_factor.copy(),
                theta_a=model.theta_a,
                theta_f=model.theta_f,
                alpha_lb=lambda mu: coercivity_lb(model, mu),
            )
        return self._online


def augment_basis(space: RBSpace, truth: TruthSolution, model: AffineModel | None = None) -> RBSpace:
    if model is not None and model is not space.model:
        raise ValueError("truth solution belongs to a different model")
    return space.augment(truth)


# ---- online stage --------------------------------------------------------

def solve_reduced(online: OnlineData, mus: np.ndarray) -> np.ndarray:
    """Reduced coefficients for an ``(M, p)`` batch of parameters."""
    mus = np.atleast_2d(mus)
    M, N = len(mus), online.N
    if N == 0:
        return np.zeros((M, 0))
    qa = online.reduced_A.shape[0]
    K = (online.theta_a(mus) @ online.reduced_A.reshape(qa, N * N)).reshape(M, N, N)
    rhs = online.theta_f(mus) @ online.reduced_F
    return np.linalg.solve(K, rhs[..., None])[..., 0]


def estimate_batch(online: OnlineData, mus: np.ndarray, coeffs: np.ndarray | None = None,
                   method: str = "factor"):
    """Return ``(delta, residual_dual_norm, alpha_lb)`` arrays for a batch.

    ``method="gram"`` evaluates the squared residual norm from the three
    Gram blocks and clamps negative round-off to zero.  Its absolute accuracy
    is about ``sqrt(eps)`` times the residual scale.  The default
    ``"factor"`` takes the Euclidean norm of the residual coordinates
    ``R c`` instead, which stays accurate down to ``eps``.
    """
    mus = np.atleast_2d(mus)
    if coeffs is None:
        coeffs = solve_reduced(online, mus)
    tf = online.theta_f(mus)
    ta = online.theta_a(mus)
    M, N = len(mus), online.N
    if method == "factor":
        R = online.residual_factor
        qf = tf.shape[1]
        rc = tf @ R[:, :qf].T
        if N:
            w = (coeffs[:, :, None] * ta[:, None, :]).reshape(M, -1)
            rc = rc - w @ R[:, qf:].T
        res = np.linalg.norm(rc, axis=1)
    elif method == "gram":
        sq = np.einsum("mf,fg,mg->m", tf, online.gram_CC, tf)
        if N:
            w = (ta[:, :, None] * coeffs[:, None, :]).reshape(M, -1)
            sq = sq + np.einsum("mk,mk->m", w @ online.gram_LL, w)
            sq = sq - 2.0 * np.einsum("mk,mk->m", tf @ online.gram_CL, w)
        neg = sq < 0
        if neg.any():
            scale = np.abs(online.gram_CC).max()
            worst = -sq[neg].min()
            if worst > 1e-8 * scale:
                log.warning("clamped negative squared residual norm %.3e (gram scale %.3e)", -worst, scale)
            sq = np.where(neg, 0.0, sq)
        res = np.sqrt(sq)
    else:
        raise ValueError(f"unknown estimator method {method!r}")
    alpha = online.alpha_lb(mus)
    return res / alpha, res, alpha


def _chunk_deltas(online, mus):
    return estimate_batch(online, mus)[0]


def sweep(online: OnlineData, mus: np.ndarray, chunk: int = DEFAULT_CHUNK, threads: int = 1) -> np.ndarray:
    """Error estimates over a parameter array, evaluated chunk-wise.

    With ``threads > 1`` chunks run on a thread pool; results are always
    concatenated in input order.
    """
    mus = np.atleast_2d(mus)
    if len(mus) == 0:
        return np.zeros(0)
    pieces = [mus[i:i + chunk] for i in range(0, len(mus), chunk)]
    if threads > 1 and len(pieces) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(lambda p: _chunk_deltas(online, p), pieces))
    else:
        out = [_chunk_deltas(online, p) for p in pieces]
    return np.concatenate(out)


# ---- single-parameter API ------------------------------------------------

@dataclass(frozen=True)
class RBSolution:
    coefficients: np.ndarray
    parameter: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.coefficients)


@dataclass(frozen=True)
class ErrorEstimate:
    value: float
    residual_dual_norm: float
    alpha_lb: float


def rb_solve(space: RBSpace, mu) -> RBSolution:
    if space.N == 0:
        raise ValueError("reduced solve needs at least one basis function")
    mu = check_parameter(space.model, mu)
    return RBSolution(solve_reduced(space.online(), mu[None])[0], mu)


def _check_dim(space: RBSpace, rbsol: RBSolution):
    if rbsol.dim != space.N:
        raise ValueError(f"reduced solution has {rbsol.dim} coefficients, space has N={space.N}")


def lift(space: RBSpace, rbsol) -> np.ndarray:
    c = rbsol.coefficients if isinstance(rbsol, RBSolution) else np.asarray(rbsol, dtype=float)
    if c.shape != (space.N,):
        raise ValueError(f"expected {space.N} coefficients, got shape {c.shape}")
    return c @ space.basis if space.N else np.zeros(space.model.dof_count)


def error_estimate(space: RBSpace, model: AffineModel, mu, rbsol: RBSolution | None = None) -> ErrorEstimate:
    """A posteriori bound for the X-norm error; ``rbsol`` may be omitted when N = 0."""
    mu = check_parameter(model, mu)
    online = space.online()
    if rbsol is None:
        coeffs = solve_reduced(online, mu[None])
    else:
        _check_dim(space, rbsol)
        coeffs = rbsol.coefficients[None]
    d, r, a = estimate_batch(online, mu[None], coeffs)
    return ErrorEstimate(float(d[0]), float(r[0]), float(a[0]))


def h1_norms(model: AffineModel, e: np.ndarray):
    """X-norm and H1 norm (X-norm plus L2 mass term) of truth vectors.

    ``e`` may be a single vector or an ``(M, dofs)`` array.
    """
    e = np.asarray(e, dtype=float)
    x2 = np.einsum("...d,...d->...", e, (model.X @ e.T).T)
    m2 = np.einsum("...d,...d->...", e, (model.mass @ e.T).T)
    x2 = np.maximum(x2, 0.0)
    return np.sqrt(x2), np.sqrt(x2 + np.maximum(m2, 0.0))


def true_error(space: RBSpace, model: AffineModel, mu, rbsol: RBSolution):
    """``(x_norm_error, h1_error)`` against a fresh truth solve (validation only)."""
    _check_dim(space, rbsol)
    truth = truth_solve(model, mu)
    x, h = h1_norms(model, truth.coefficients - lift(space, rbsol))
    return float(x), float(h)


def rb_output(space: RBSpace, rbsol: RBSolution) -> float:
    _check_dim(space, rbsol)
    return float(space.reduced_output @ rbsol.coefficients)
