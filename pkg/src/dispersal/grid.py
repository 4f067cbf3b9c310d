"""P1 finite elements on intervals and triangulated rectangles.

Nodal vectors pair with each other through plain dot products against
assembled loads; element vectors pair through ``sum_e |e| v_e . w_e``.
Integrals of pointwise nonlinearities use the lumped (nodal) mass.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .energy_laws import DomainError

SIDES_1D = ("left", "right")
SIDES_2D = ("left", "right", "bottom", "top")


@dataclass(frozen=True, eq=False)
class Mesh:
    points: np.ndarray        # (n_nodes, dim)
    cells: np.ndarray         # (n_cells, dim + 1) node indices
    volumes: np.ndarray       # (n_cells,)
    grad_basis: np.ndarray    # (n_cells, dim + 1, dim) gradients of the hat functions
    facets: np.ndarray        # (n_facets, dim) node indices
    facet_measures: np.ndarray
    facet_normals: np.ndarray  # (n_facets, dim)
    facet_sides: tuple
    cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def n_nodes(self) -> int:
        return self.points.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def n_facets(self) -> int:
        return self.facets.shape[0]

    @property
    def sides(self) -> tuple:
        return SIDES_1D if self.dim == 1 else SIDES_2D

    @cached_property
    def gradient_matrix(self) -> sp.csr_matrix:
        """Sparse map from nodal values to stacked cell gradients (cell-major)."""
        nc, k, d = self.grad_basis.shape
        rows = (np.arange(nc)[:, None, None] * d + np.arange(d)[None, None, :])
        rows = np.broadcast_to(rows, (nc, k, d))
        cols = np.broadcast_to(self.cells[:, :, None], (nc, k, d))
        return sp.csr_matrix(
            (self.grad_basis.ravel(), (rows.ravel(), cols.ravel())),
            shape=(nc * d, self.n_nodes),
        )

    @cached_property
    def lumped_mass(self) -> np.ndarray:
        m = np.zeros(self.n_nodes)
        np.add.at(m, self.cells, (self.volumes / (self.dim + 1))[:, None])
        return m

    def cell_average(self, u: np.ndarray) -> np.ndarray:
        return np.asarray(u)[..., self.cells].mean(axis=-1)

    def facets_on(self, side: str) -> np.ndarray:
        return np.flatnonzero(np.asarray(self.facet_sides) == side)


def build_interval_mesh(a: float, b: float, n_cells: int) -> Mesh:
    if int(n_cells) != n_cells or n_cells < 2:
        raise DomainError("interval mesh needs at least 2 cells")
    if not (np.isfinite(a) and np.isfinite(b)) or b <= a:
        raise DomainError("interval mesh needs finite bounds with b > a")
    n_cells = int(n_cells)
    x = np.linspace(a, b, n_cells + 1)
    cells = np.column_stack([np.arange(n_cells), np.arange(1, n_cells + 1)])
    h = np.diff(x)
    grad = np.stack([-1.0 / h, 1.0 / h], axis=1)[:, :, None]
    return Mesh(
        points=x[:, None],
        cells=cells,
        volumes=h,
        grad_basis=grad,
        facets=np.array([[0], [n_cells]]),
        facet_measures=np.ones(2),
        facet_normals=np.array([[-1.0], [1.0]]),
        facet_sides=SIDES_1D,
    )


def build_rect_mesh(bounds, nx: int, ny: int) -> Mesh:
    """Uniform rectangle grid, each square split along its rising diagonal."""
    (x0, x1), (y0, y1) = bounds
    if nx < 2 or ny < 2 or int(nx) != nx or int(ny) != ny:
        raise DomainError("rectangle mesh needs at least 2 cells per direction")
    if not (x1 > x0 and y1 > y0):
        raise DomainError("degenerate rectangle bounds")
    nx, ny = int(nx), int(ny)
    xs, ys = np.linspace(x0, x1, nx + 1), np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)  # node index j*(nx+1)+i
    pts = np.column_stack([X.ravel(), Y.ravel()])

    def node(i, j):
        return j * (nx + 1) + i

    I, J = np.meshgrid(np.arange(nx), np.arange(ny))
    I, J = I.ravel(), J.ravel()
    p00, p10, p11, p01 = node(I, J), node(I + 1, J), node(I + 1, J + 1), node(I, J + 1)
    cells = np.concatenate([np.column_stack([p00, p10, p11]), np.column_stack([p00, p11, p01])])

    v = pts[cells]                       # (nc, 3, 2)
    jac = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=2)  # columns are edge vectors
    det = np.linalg.det(jac)
    inv = np.linalg.inv(jac)             # rows give gradients of barycentric coords 1, 2
    g12 = inv
    g0 = -g12.sum(axis=1, keepdims=True)
    grad = np.concatenate([g0, g12], axis=1)

    facets, sides, normals = [], [], []
    for i in range(nx):
        facets.append((node(i, 0), node(i + 1, 0))); sides.append("bottom"); normals.append((0.0, -1.0))
        facets.append((node(i, ny), node(i + 1, ny))); sides.append("top"); normals.append((0.0, 1.0))
    for j in range(ny):
        facets.append((node(0, j), node(0, j + 1))); sides.append("left"); normals.append((-1.0, 0.0))
        facets.append((node(nx, j), node(nx, j + 1))); sides.append("right"); normals.append((1.0, 0.0))
    facets = np.array(facets)
    meas = np.linalg.norm(pts[facets[:, 1]] - pts[facets[:, 0]], axis=1)
    return Mesh(
        points=pts,
        cells=cells,
        volumes=0.5 * np.abs(det),
        grad_basis=grad,
        facets=facets,
        facet_measures=meas,
        facet_normals=np.array(normals),
        facet_sides=tuple(sides),
    )


@dataclass(frozen=True, eq=False)
class BoundarySplit:
    """Dirichlet/Neumann facet sets for one species."""

    mesh: Mesh
    dirichlet: np.ndarray
    neumann: np.ndarray

    def __post_init__(self):
        d = np.unique(np.asarray(self.dirichlet, dtype=int))
        n = np.unique(np.asarray(self.neumann, dtype=int))
        object.__setattr__(self, "dirichlet", d)
        object.__setattr__(self, "neumann", n)
        if d.size == 0:
            raise DomainError("each species needs a nonempty Dirichlet part")
        if np.intersect1d(d, n).size:
            raise DomainError("Dirichlet and Neumann facet sets overlap")
        if not np.array_equal(np.union1d(d, n), np.arange(self.mesh.n_facets)):
            raise DomainError("Dirichlet and Neumann facets must cover the boundary")

    @cached_property
    def dirichlet_nodes(self) -> np.ndarray:
        # corner nodes shared with Neumann facets count as Dirichlet
        return np.unique(self.mesh.facets[self.dirichlet].ravel())

    @cached_property
    def free_nodes(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.mesh.n_nodes), self.dirichlet_nodes)

    @cached_property
    def dirichlet_mask(self) -> np.ndarray:
        mask = np.zeros(self.mesh.n_nodes, dtype=bool)
        mask[self.dirichlet_nodes] = True
        return mask

    @property
    def key(self) -> tuple:
        return tuple(self.dirichlet.tolist())

    @classmethod
    def from_sides(cls, mesh: Mesh, tags: dict) -> "BoundarySplit":
        for side, kind in tags.items():
            if side not in mesh.sides:
                raise DomainError(f"unknown side {side!r}; expected one of {mesh.sides}")
            if kind not in ("dirichlet", "neumann"):
                raise DomainError(f"side {side!r} must be 'dirichlet' or 'neumann', got {kind!r}")
        missing = [s for s in mesh.sides if s not in tags]
        if missing:
            raise DomainError(f"boundary tags missing for sides {missing}")
        sides = np.asarray(mesh.facet_sides)
        dmask = np.isin(sides, [s for s, k in tags.items() if k == "dirichlet"])
        return cls(mesh, np.flatnonzero(dmask), np.flatnonzero(~dmask))


@dataclass(frozen=True, eq=False)
class BoundaryPartition:
    species: tuple  # (BoundarySplit, BoundarySplit)

    def __getitem__(self, k) -> BoundarySplit:
        return self.species[k]

    def __iter__(self):
        return iter(self.species)

    @classmethod
    def from_sides(cls, mesh: Mesh, tags1: dict, tags2: dict | None = None) -> "BoundaryPartition":
        tags2 = tags1 if tags2 is None else tags2
        return cls((BoundarySplit.from_sides(mesh, tags1), BoundarySplit.from_sides(mesh, tags2)))


@dataclass(frozen=True, eq=False)
class BoundaryData:
    """Dirichlet values ``g`` (nodal, shape (2, n_nodes)) and Neumann flux
    densities ``pi`` (per facet, shape (2, n_facets))."""

    g: np.ndarray
    pi: np.ndarray

    @classmethod
    def zeros(cls, mesh: Mesh) -> "BoundaryData":
        return cls(np.zeros((2, mesh.n_nodes)), np.zeros((2, mesh.n_facets)))


@dataclass(frozen=True, eq=False)
class SourceData:
    f0: np.ndarray    # (2, n_nodes)
    fbar: np.ndarray  # (2, n_cells, dim)

    @classmethod
    def zeros(cls, mesh: Mesh) -> "SourceData":
        return cls(np.zeros((2, mesh.n_nodes)), np.zeros((2, mesh.n_cells, mesh.dim)))


# -- operators ------------------------------------------------------------------

def _check_nodal(mesh: Mesh, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != mesh.n_nodes:
        raise DomainError(f"nodal field has {u.shape[-1]} entries, mesh has {mesh.n_nodes} nodes")
    return u


def _check_cellwise(mesh: Mesh, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape[-2:] != (mesh.n_cells, mesh.dim):
        raise DomainError(f"cell field has shape {v.shape}, expected (..., {mesh.n_cells}, {mesh.dim})")
    return v


def gradient(mesh: Mesh, u) -> np.ndarray:
    """Cellwise gradient of the P1 interpolant, shape (n_cells, dim)."""
    u = _check_nodal(mesh, u)
    return np.einsum("ckd,ck->cd", mesh.grad_basis, u[mesh.cells])


def divergence_adjoint(mesh: Mesh, v) -> np.ndarray:
    """Load vector ``xi -> sum_e |e| v_e . grad(xi)_e`` (weak minus-divergence)."""
    v = _check_cellwise(mesh, v)
    contrib = np.einsum("ckd,cd->ck", mesh.grad_basis, v) * mesh.volumes[:, None]
    out = np.zeros(mesh.n_nodes)
    np.add.at(out, mesh.cells, contrib)
    return out


def cell_pairing(mesh: Mesh, v, w) -> float:
    return float(np.sum(mesh.volumes[:, None] * v * w))


def _sigma_cells(mesh: Mesh, sigma) -> np.ndarray:
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (mesh.n_nodes,))
    if not np.all(np.isfinite(sigma)) or np.any(sigma <= 0):
        raise DomainError("diffusion weight sigma must be positive")
    return mesh.cell_average(sigma)


def assemble_stiffness(mesh: Mesh, sigma) -> sp.csr_matrix:
    """Matrix of ``(u, xi) -> int sigma grad u . grad xi`` with sigma nodal P1."""
    sc = _sigma_cells(mesh, sigma)
    G = mesh.gradient_matrix
    W = sp.diags(np.repeat(mesh.volumes * sc, mesh.dim))
    return (G.T @ W @ G).tocsr()


def assemble_mass(mesh: Mesh) -> sp.csr_matrix:
    """Consistent P1 mass matrix."""
    k = mesh.dim + 1
    local = (np.ones((k, k)) + np.eye(k)) / ((k) * (k + 1))
    vals = mesh.volumes[:, None, None] * local[None]
    rows = np.broadcast_to(mesh.cells[:, :, None], vals.shape)
    cols = np.broadcast_to(mesh.cells[:, None, :], vals.shape)
    return sp.csr_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(mesh.n_nodes,) * 2)


def neumann_load(mesh: Mesh, split: BoundarySplit, pi) -> np.ndarray:
    """Load of ``xi -> sum over Neumann facets of pi_f * int_f xi``."""
    pi = np.asarray(pi, dtype=float)
    if pi.shape != (mesh.n_facets,):
        raise DomainError(f"pi needs {mesh.n_facets} facet values")
    out = np.zeros(mesh.n_nodes)
    f = split.neumann
    share = (pi[f] * mesh.facet_measures[f] / mesh.dim)[:, None]
    np.add.at(out, mesh.facets[f], np.broadcast_to(share, mesh.facets[f].shape))
    return out


def _lift_one(mesh: Mesh, split: BoundarySplit, g, sigma) -> np.ndarray:
    g = _check_nodal(mesh, g)
    A = assemble_stiffness(mesh, sigma)
    fixed = np.zeros(mesh.n_nodes, dtype=bool)
    fixed[np.unique(mesh.facets.ravel())] = True   # every boundary node is prescribed
    out = np.zeros(mesh.n_nodes)
    out[split.dirichlet_nodes] = g[split.dirichlet_nodes]
    inner = np.flatnonzero(~fixed)
    if inner.size:
        A = A.tocsc()
        rhs = -A[inner][:, fixed] @ out[fixed]
        out[inner] = splu(A[inner][:, inner].tocsc()).solve(rhs)
    return out


def lift_dirichlet(mesh: Mesh, partition: BoundaryPartition, g, sigma) -> np.ndarray:
    """sigma-harmonic extension of the Dirichlet data, zero on Neumann nodes.

    Returns an array of shape (2, n_nodes).
    """
    g = np.asarray(g.g if isinstance(g, BoundaryData) else g, dtype=float)
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (2, mesh.n_nodes))
    return np.stack([_lift_one(mesh, partition[k], g[k], sigma[k]) for k in range(2)])
