"""P1 finite elements for the nine-block thermal problem.

The unit square is split into a 3x3 grid of blocks with conductivity
``mu[i]`` on block ``i + 1`` (blocks numbered row-wise from the bottom
left).  Homogeneous Dirichlet data is imposed on the top edge, a unit
heat flux enters through the bottom edge and the sides are insulated.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "Mesh",
    "AffineModel",
    "TruthSolution",
    "build_mesh",
    "assemble_stiffness",
    "assemble_mass",
    "assemble_affine_fom",
    "thermal_block",
    "check_parameter",
    "truth_solve",
    "output_functional",
    "x_inner",
    "x_norm",
    "SOLVER_RTOL",
]

SOLVER_RTOL = 1e-12
PARAMETER_BOX = (0.1, 10.0)
N_BLOCKS = 9


@dataclass(frozen=True)
class Mesh:
    """Structured triangulation of the unit square.

    Attributes
    ----------
    nodes : (n_nodes, 2) array
    triangles : (n_tri, 3) int array, counter-clockwise
    block_of_triangle : (n_tri,) int array with values in 1..9
    top, bottom, left, right : node index arrays for each side
    bottom_edges : (n, 2) int array of node pairs on the base edge
    """

    n_per_side: int
    nodes: np.ndarray
    triangles: np.ndarray
    block_of_triangle: np.ndarray
    top: np.ndarray
    bottom: np.ndarray
    left: np.ndarray
    right: np.ndarray
    bottom_edges: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def dirichlet(self) -> np.ndarray:
        return self.top

    @property
    def free(self) -> np.ndarray:
        mask = np.ones(self.n_nodes, dtype=bool)
        mask[self.top] = False
        return np.flatnonzero(mask)

    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def build_mesh(n_per_side: int = 21) -> Mesh:
    """Uniform grid with every cell cut into two triangles.

    Diagonals are mirrored about ``x = 1/2`` so the mesh is invariant under
    left-right reflection whenever ``n_per_side`` is even.
    """
    n = int(n_per_side)
    if n != n_per_side or n < 3 or n % 3:
        raise ValueError(f"n_per_side must be a positive multiple of 3, got {n_per_side!r}")

    m = n + 1
    xs = np.arange(m) / n
    X, Y = np.meshgrid(xs, xs)
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(n), np.arange(n))
    i, j = i.ravel(), j.ravel()
    v00 = j * m + i
    v10 = v00 + 1
    v01 = v00 + m
    v11 = v01 + 1
    left_half = 2 * i + 1 <= n
    # "/" diagonal on the left half, "\" on the right half
    t1 = np.where(left_half[:, None],
                  np.column_stack([v00, v10, v11]),
                  np.column_stack([v00, v10, v01]))
    t2 = np.where(left_half[:, None],
                  np.column_stack([v00, v11, v01]),
                  np.column_stack([v10, v11, v01]))
    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    triangles[0::2] = t1
    triangles[1::2] = t2

    centroids = nodes[triangles].mean(axis=1)
    bx = np.floor(3 * centroids[:, 0]).astype(np.int64)
    by = np.floor(3 * centroids[:, 1]).astype(np.int64)
    blocks = 3 * by + bx + 1

    idx = np.arange(m)
    bottom = idx
    top = n * m + idx
    left = idx * m
    right = idx * m + n
    bottom_edges = np.column_stack([bottom[:-1], bottom[1:]])
    return Mesh(n, nodes, triangles, blocks, top, bottom, left, right, bottom_edges)


def _p1_gradients(mesh: Mesh):
    p = mesh.nodes[mesh.triangles]
    area = mesh.signed_areas()
    # gradient of the barycentric coordinate of vertex k is rot90(opposite edge) / (2 area)
    e0 = p[:, 2] - p[:, 1]
    e1 = p[:, 0] - p[:, 2]
    e2 = p[:, 1] - p[:, 0]
    edges = np.stack([e0, e1, e2], axis=1)
    grads = np.stack([-edges[..., 1], edges[..., 0]], axis=-1) / (2 * area[:, None, None])
    return grads, area


def assemble_stiffness(mesh: Mesh, coefficient: np.ndarray) -> sp.csr_matrix:
    """Full (all nodes) P1 stiffness matrix for a piecewise-constant coefficient.

    ``coefficient`` holds one value per triangle.
    """
    grads, area = _p1_gradients(mesh)
    local = np.einsum("tid,tjd->tij", grads, grads) * (area * np.asarray(coefficient))[:, None, None]
    rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
    cols = np.tile(mesh.triangles, (1, 3)).ravel()
    K = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes))
    return K.tocsr()


def assemble_mass(mesh: Mesh) -> sp.csr_matrix:
    area = mesh.signed_areas()
    ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
    local = area[:, None, None] * ref[None]
    rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
    cols = np.tile(mesh.triangles, (1, 3)).ravel()
    M = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes))
    return M.tocsr()


def _bottom_edge_load(mesh: Mesh) -> np.ndarray:
    lengths = np.abs(np.diff(mesh.nodes[mesh.bottom_edges][:, :, 0], axis=1)).ravel()
    load = np.zeros(mesh.n_nodes)
    np.add.at(load, mesh.bottom_edges[:, 0], 0.5 * lengths)
    np.add.at(load, mesh.bottom_edges[:, 1], 0.5 * lengths)
    return load


def _identity_theta(mu: np.ndarray) -> np.ndarray:
    return np.asarray(mu, dtype=float)


def _unit_theta(mu: np.ndarray) -> np.ndarray:
    mu = np.asarray(mu, dtype=float)
    return np.ones(mu.shape[:-1] + (1,))


@dataclass
class AffineModel:
    """Truth model ``sum_q theta_a^q(mu) A_q u = sum_q theta_f^q(mu) F_q``.

    All matrices act on the free (non-Dirichlet) degrees of freedom.  The
    ``theta_*`` callables are vectorised: an ``(..., p)`` array of
    parameters maps to ``(..., Q)`` coefficients.
    """

    A: list
    F: np.ndarray
    theta_a: Callable[[np.ndarray], np.ndarray]
    theta_f: Callable[[np.ndarray], np.ndarray]
    X: sp.csr_matrix
    output_vector: np.ndarray
    parameter_box: np.ndarray
    mass: sp.csr_matrix | None = None
    mesh: Mesh | None = None
    dirichlet_coupling: sp.csr_matrix | None = None
    _A_data: np.ndarray = field(init=False, repr=False)
    _pattern: sp.csr_matrix = field(init=False, repr=False)
    _X_lu: object = field(init=False, repr=False)

    def __post_init__(self):
        self.F = np.atleast_2d(np.asarray(self.F, dtype=float))
        self.parameter_box = np.asarray(self.parameter_box, dtype=float)
        # common sparsity pattern so that A(mu) is a single matvec on the data arrays
        pattern = sum(abs(a) for a in self.A).tocsr()
        pattern.sort_indices()
        n = pattern.shape[1]
        rows = np.repeat(np.arange(pattern.shape[0]), np.diff(pattern.indptr))
        keys = rows * n + pattern.indices
        data = np.zeros((len(self.A), pattern.nnz))
        for q, a in enumerate(self.A):
            a = a.tocoo()
            data[q] = np.bincount(np.searchsorted(keys, a.row * n + a.col),
                                  weights=a.data, minlength=pattern.nnz)
        self._pattern = pattern
        self._A_data = data
        self._X_lu = spla.splu(self.X.tocsc())

    @property
    def dof_count(self) -> int:
        return self.X.shape[0]

    @property
    def n_parameters(self) -> int:
        return len(self.parameter_box)

    @property
    def Q_a(self) -> int:
        return len(self.A)

    @property
    def Q_f(self) -> int:
        return self.F.shape[0]

    def stiffness(self, mu) -> sp.csr_matrix:
        theta = self.theta_a(np.asarray(mu, dtype=float))
        K = self._pattern.copy()
        K.data = theta @ self._A_data
        return K

    def load(self, mu) -> np.ndarray:
        return self.theta_f(np.asarray(mu, dtype=float)) @ self.F

    def riesz(self, functional: np.ndarray) -> np.ndarray:
        """Solve ``X z = functional`` (columns of a 2D array are solved independently)."""
        return self._X_lu.solve(np.asarray(functional, dtype=float))


@dataclass(frozen=True)
class TruthSolution:
    coefficients: np.ndarray
    parameter: np.ndarray


def check_parameter(model: AffineModel, mu) -> np.ndarray:
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (model.n_parameters,):
        raise ValueError(f"expected a parameter vector of length {model.n_parameters}, got shape {mu.shape}")
    lo, hi = model.parameter_box[:, 0], model.parameter_box[:, 1]
    if np.any(mu < lo) or np.any(mu > hi) or not np.all(np.isfinite(mu)):
        raise ValueError(f"parameter {mu} outside the parameter box")
    return mu


def assemble_affine_fom(mesh: Mesh) -> AffineModel:
    """Affine decomposition of the thermal block problem on ``mesh``."""
    free = mesh.free
    A_full = [assemble_stiffness(mesh, (mesh.block_of_triangle == q).astype(float))
              for q in range(1, N_BLOCKS + 1)]
    A = [a[free][:, free].tocsr() for a in A_full]
    for a in A:
        a.eliminate_zeros()
    load = _bottom_edge_load(mesh)[free]
    X = sum(A).tocsr()
    coupling = sum(A_full).tocsr()[free][:, mesh.dirichlet]
    mass = assemble_mass(mesh)[free][:, free].tocsr()
    return AffineModel(
        A=A,
        F=load[None, :],
        theta_a=_identity_theta,
        theta_f=_unit_theta,
        X=X,
        output_vector=load.copy(),
        parameter_box=np.tile(PARAMETER_BOX, (N_BLOCKS, 1)),
        mass=mass,
        mesh=mesh,
        dirichlet_coupling=coupling,
    )


def thermal_block(n_per_side: int = 21) -> AffineModel:
    return assemble_affine_fom(build_mesh(n_per_side))


def truth_solve(model: AffineModel, mu) -> TruthSolution:
    mu = check_parameter(model, mu)
    K = model.stiffness(mu)
    rhs = model.load(mu)
    u = spla.spsolve(K.tocsc(), rhs)
    res = rhs - K @ u
    # residual and load measured in the dual X norm
    res_norm = np.sqrt(max(res @ model.riesz(res), 0.0))
    rhs_norm = np.sqrt(max(rhs @ model.riesz(rhs), 0.0))
    if not np.all(np.isfinite(u)) or res_norm > SOLVER_RTOL * max(rhs_norm, np.finfo(float).tiny):
        raise RuntimeError(f"truth solve failed at mu={mu} (relative residual {res_norm / rhs_norm:.2e})")
    return TruthSolution(u, mu)


def _as_vector(model: AffineModel, v) -> np.ndarray:
    v = v.coefficients if isinstance(v, TruthSolution) else np.asarray(v, dtype=float)
    if v.shape != (model.dof_count,):
        raise ValueError(f"expected a vector with {model.dof_count} entries, got shape {v.shape}")
    return v


def output_functional(model: AffineModel, sol) -> float:
    return float(model.output_vector @ _as_vector(model, sol))


def x_inner(model: AffineModel, v, w) -> float:
    return float(_as_vector(model, v) @ (model.X @ _as_vector(model, w)))


def x_norm(model: AffineModel, v) -> float:
    return float(np.sqrt(max(x_inner(model, v, v), 0.0)))
