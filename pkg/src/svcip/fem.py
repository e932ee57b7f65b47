"""Lagrange elements on triangles, quadrature rules, dof maps and interpolation.

The reference triangle has vertices (0, 0), (1, 0), (0, 1).  Barycentric
coordinates are ordered (1 - xi - eta, xi, eta).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

from .mesh import FaceSet, Mesh

MAX_DERIVATIVE_ORDER = 3
MAX_QUADRATURE_DEGREE = 12


def _multi_indices(degree: int) -> list[tuple[int, int, int]]:
    """Barycentric multi-indices ordered vertices, edges (edge i opposite vertex i), interior."""
    all_idx = [(degree - a - b, a, b) for b in range(degree + 1) for a in range(degree + 1 - b)]
    verts = [tuple(degree if i == j else 0 for j in range(3)) for i in range(3)]
    edges = []
    for i in range(3):
        j, l = (i + 1) % 3, (i + 2) % 3
        for s in range(1, degree):
            m = [0, 0, 0]
            m[j], m[l] = degree - s, s
            edges.append(tuple(m))
    interior = [m for m in all_idx if min(m) > 0]
    return verts + edges + interior


def _monomial_exponents(degree: int) -> np.ndarray:
    return np.array([(p, t - p) for t in range(degree + 1) for p in range(t, -1, -1)])


def _monomial_derivative_table(exps: np.ndarray, points: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """d^dx/dxi^dx d^dy/deta^dy of each monomial, shape points.shape[:-1] + (n_mono,)."""
    xi = points[..., 0][..., None]
    eta = points[..., 1][..., None]
    p, q = exps[:, 0], exps[:, 1]
    cx = np.ones(len(exps))
    cy = np.ones(len(exps))
    for r in range(dx):
        cx = cx * (p - r)
    for r in range(dy):
        cy = cy * (q - r)
    px = np.maximum(p - dx, 0)
    qy = np.maximum(q - dy, 0)
    return (cx * cy) * xi ** px * eta ** qy


@dataclass(frozen=True)
class ReferenceElement:
    """Nodal Lagrange element on the reference triangle with equispaced nodes."""

    degree: int
    continuity: str = "continuous"

    def __post_init__(self):
        if self.degree < 0:
            raise ValueError("degree must be non-negative")
        if self.continuity not in ("continuous", "discontinuous"):
            raise ValueError(f"unknown continuity {self.continuity!r}")

    @property
    def n_nodes(self) -> int:
        return (self.degree + 1) * (self.degree + 2) // 2

    @property
    def multi_indices(self) -> list[tuple[int, int, int]]:
        if self.degree == 0:
            return [(0, 0, 0)]
        return _multi_indices(self.degree)

    @property
    def node_coords(self) -> np.ndarray:
        """Barycentric coordinates of the nodes, shape (n_nodes, 3)."""
        if self.degree == 0:
            return np.full((1, 3), 1.0 / 3.0)
        return np.array(self.multi_indices, dtype=float) / self.degree

    @property
    def reference_nodes(self) -> np.ndarray:
        return self.node_coords[:, 1:]

    def _coefficients(self) -> tuple[np.ndarray, np.ndarray]:
        return _basis_coefficients(self.degree)

    def tabulate(self, points: np.ndarray, order: int = 0) -> list[np.ndarray]:
        """Reference-frame basis values and derivatives at ``points`` (..., 2).

        Returns a list ``[values, gradients, hessians, third]`` truncated to
        ``order + 1`` entries; entry n has shape ``points.shape[:-1] + (2,)*n + (n_nodes,)``.
        """
        if order > MAX_DERIVATIVE_ORDER or order < 0:
            raise ValueError(f"derivative order must be in 0..{MAX_DERIVATIVE_ORDER}")
        points = np.asarray(points, dtype=float)
        exps, coeffs = self._coefficients()
        out = []
        for n in range(order + 1):
            shape = points.shape[:-1] + (2,) * n + (self.n_nodes,)
            table = np.empty(shape)
            for combo in np.ndindex(*(2,) * n):
                dx = sum(1 for c in combo if c == 0)
                mono = _monomial_derivative_table(exps, points, dx, n - dx)
                table[(Ellipsis,) + combo + (slice(None),)] = mono @ coeffs
            out.append(table)
        return out


@lru_cache(maxsize=None)
def _basis_coefficients(degree: int) -> tuple[np.ndarray, np.ndarray]:
    exps = _monomial_exponents(degree)
    nodes = ReferenceElement(degree).reference_nodes
    vander = _monomial_derivative_table(exps, nodes, 0, 0)
    coeffs = np.linalg.inv(vander)
    for a in (exps, coeffs):
        a.setflags(write=False)
    return exps, coeffs


def push_forward(tables: list[np.ndarray], jinv: np.ndarray) -> list[np.ndarray]:
    """Map reference derivative tables to physical ones.

    ``tables`` entries have a leading cell axis (as produced by tabulating
    per-cell points); ``jinv`` is (nc, 2, 2) with d(ref)/d(phys).
    """
    out = [tables[0]]
    if len(tables) > 1:
        out.append(np.einsum("cpa,c...pn->c...an", jinv, tables[1]))
    if len(tables) > 2:
        out.append(np.einsum("cpa,cqb,c...pqn->c...abn", jinv, jinv, tables[2], optimize=True))
    if len(tables) > 3:
        out.append(np.einsum("cpa,cqb,crd,c...pqrn->c...abdn", jinv, jinv, jinv, tables[3],
                             optimize=True))
    return out


def eval_basis(elem: ReferenceElement, point, order: int = 0) -> list[np.ndarray]:
    """Basis values and reference-frame derivatives at one barycentric point."""
    point = np.asarray(point, dtype=float)
    if point.shape != (3,):
        raise ValueError("point must be given in barycentric coordinates")
    if np.any(point < -1e-12) or abs(point.sum() - 1) > 1e-12:
        raise ValueError("point outside the reference triangle")
    return elem.tabulate(point[1:], order)


@dataclass(frozen=True)
class QuadratureRule:
    """Rule on the reference triangle (``dim == 2``) or on [0, 1] (``dim == 1``)."""

    points: np.ndarray
    weights: np.ndarray
    exact_degree: int
    dim: int = 2

    @property
    def barycentric(self) -> np.ndarray:
        if self.dim == 2:
            return np.column_stack([1 - self.points.sum(axis=1), self.points])
        return np.column_stack([1 - self.points, self.points])


def _gauss_legendre01(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1), 0.5 * w


@lru_cache(maxsize=None)
def quadrature(target_degree: int) -> QuadratureRule:
    """Collapsed Gauss-Jacobi rule on the reference triangle, exact to ``target_degree``."""
    if not 1 <= target_degree <= MAX_QUADRATURE_DEGREE:
        raise ValueError(f"quadrature degree must be in 1..{MAX_QUADRATURE_DEGREE}")
    n = target_degree // 2 + 1
    xj, wj = roots_jacobi(n, 1.0, 0.0)
    s = 0.5 * (xj + 1)
    ws = 0.25 * wj
    t, wt = _gauss_legendre01(n)
    S, T = np.meshgrid(s, t, indexing="ij")
    W = np.outer(ws, wt)
    pts = np.column_stack([S.ravel(), ((1 - S) * T).ravel()])
    return QuadratureRule(pts, W.ravel(), 2 * n - 1, dim=2)


@lru_cache(maxsize=None)
def edge_quadrature(target_degree: int) -> QuadratureRule:
    """Gauss-Legendre rule on [0, 1]."""
    if not 1 <= target_degree <= 2 * MAX_QUADRATURE_DEGREE + 1:
        raise ValueError("unsupported edge quadrature degree")
    n = target_degree // 2 + 1
    t, w = _gauss_legendre01(n)
    return QuadratureRule(t[:, None], w, 2 * n - 1, dim=1)


@dataclass(frozen=True)
class CellGeometry:
    """Affine maps x = origin + jac @ xi for every cell."""

    origin: np.ndarray
    jac: np.ndarray
    jinv: np.ndarray
    det: np.ndarray

    @classmethod
    def from_mesh(cls, mesh: Mesh) -> "CellGeometry":
        p = mesh.vertices[mesh.cells]
        jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
        det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        jinv = np.empty_like(jac)
        jinv[:, 0, 0] = jac[:, 1, 1] / det
        jinv[:, 0, 1] = -jac[:, 0, 1] / det
        jinv[:, 1, 0] = -jac[:, 1, 0] / det
        jinv[:, 1, 1] = jac[:, 0, 0] / det
        return cls(p[:, 0].copy(), jac, jinv, det)

    def to_physical(self, ref_points: np.ndarray, cells=slice(None)) -> np.ndarray:
        """Map reference points (nq, 2) to physical points (nc, nq, 2)."""
        return self.origin[cells][:, None, :] + np.einsum("cij,qj->cqi", self.jac[cells], ref_points)

    def to_reference(self, points: np.ndarray, cells) -> np.ndarray:
        """Map physical points (nc, nq, 2) on the given cells to reference coordinates."""
        return np.einsum("cij,cqj->cqi", self.jinv[cells], points - self.origin[cells][:, None, :])


@dataclass(frozen=True)
class DofMap:
    """Global numbering of a scalar Lagrange space, optionally vector valued.

    Vector spaces use blocked numbering: component c of scalar dof s is
    ``c * n_scalar + s``.

    Attributes
    ----------
    element : ReferenceElement
    n_components : int
    cell_dofs : (nc, n_nodes) scalar dof indices
    n_scalar : int
    node_points : (n_scalar, 2) physical node positions
    boundary_scalar : sorted scalar dofs lying on the boundary (continuous spaces)
    """

    element: ReferenceElement
    n_components: int
    cell_dofs: np.ndarray
    n_scalar: int
    node_points: np.ndarray
    boundary_scalar: np.ndarray

    @property
    def degree(self) -> int:
        return self.element.degree

    @property
    def continuous(self) -> bool:
        return self.element.continuity == "continuous"

    @property
    def n_dofs(self) -> int:
        return self.n_components * self.n_scalar

    @property
    def n_local(self) -> int:
        return self.n_components * self.element.n_nodes

    def vector_cell_dofs(self) -> np.ndarray:
        """(nc, n_components * n_nodes) global dofs, component-major within a cell."""
        return np.concatenate([self.cell_dofs + c * self.n_scalar
                               for c in range(self.n_components)], axis=1)

    def boundary_dofs(self) -> np.ndarray:
        return np.concatenate([self.boundary_scalar + c * self.n_scalar
                               for c in range(self.n_components)])


def build_dofmap(mesh: Mesh, faces: FaceSet, kind: str, k: int) -> DofMap:
    """Dof map for ``kind`` in {"velocity", "pressure", "pressure-continuous"}.

    ``velocity`` is continuous vector P_k, ``pressure`` discontinuous P_{k-1},
    ``pressure-continuous`` continuous P_{k-1} (Taylor-Hood).
    """
    if k < 2:
        raise ValueError("degree k must be at least 2")
    if kind == "velocity":
        elem, ncomp = ReferenceElement(k, "continuous"), 2
    elif kind == "pressure":
        elem, ncomp = ReferenceElement(k - 1, "discontinuous"), 1
    elif kind == "pressure-continuous":
        elem, ncomp = ReferenceElement(k - 1, "continuous"), 1
    else:
        raise ValueError(f"unknown space kind {kind!r}")

    geom = CellGeometry.from_mesh(mesh)
    nc, nn = mesh.n_cells, elem.n_nodes
    phys = geom.to_physical(elem.reference_nodes)

    if elem.continuity == "discontinuous":
        cell_dofs = np.arange(nc * nn, dtype=np.int64).reshape(nc, nn)
        node_points = phys.reshape(-1, 2)
        boundary = np.empty(0, dtype=np.int64)
    else:
        cell_dofs, node_points = _number_continuous(mesh, elem, phys)
        boundary = _boundary_scalar_dofs(faces, elem, cell_dofs)

    for a in (cell_dofs, node_points, boundary):
        a.setflags(write=False)
    return DofMap(elem, ncomp, cell_dofs, len(node_points), node_points, boundary)


def _number_continuous(mesh: Mesh, elem: ReferenceElement, phys: np.ndarray):
    # a node is identified by its supporting vertices and their barycentric weights
    mis = elem.multi_indices
    index: dict[tuple, int] = {}
    cell_dofs = np.empty((mesh.n_cells, elem.n_nodes), dtype=np.int64)
    points = []
    for c, verts in enumerate(mesh.cells.tolist()):
        for i, mi in enumerate(mis):
            key = tuple(sorted((verts[j], mi[j]) for j in range(3) if mi[j] > 0))
            dof = index.get(key)
            if dof is None:
                dof = len(points)
                index[key] = dof
                points.append(phys[c, i])
            cell_dofs[c, i] = dof
    return cell_dofs, np.array(points)


def _boundary_scalar_dofs(faces: FaceSet, elem: ReferenceElement, cell_dofs: np.ndarray):
    mis = np.array(elem.multi_indices)
    on_edge = [np.flatnonzero(mis[:, e] == 0) for e in range(3)]
    bnd = faces.boundary
    dofs = [cell_dofs[c, on_edge[e]] for c, e in zip(faces.left[bnd], faces.left_local[bnd])]
    if not dofs:
        return np.empty(0, dtype=np.int64)
    return np.unique(np.concatenate(dofs))


def interpolate(field, dofmap: DofMap, t: float = 0.0) -> np.ndarray:
    """Nodal interpolant of ``field(x, y, t)``.

    Vector fields return the blocked coefficient vector of length 2 * n_scalar.
    """
    x, y = dofmap.node_points[:, 0], dofmap.node_points[:, 1]
    vals = np.asarray(field(x, y, t), dtype=float)
    vals = np.broadcast_to(vals, (dofmap.n_components, dofmap.n_scalar) if dofmap.n_components > 1
                           else (dofmap.n_scalar,))
    return np.array(vals, dtype=float).reshape(-1)


def evaluate(dofmap: DofMap, coeffs: np.ndarray, geom: CellGeometry, cells: np.ndarray,
             ref_points: np.ndarray, order: int = 0) -> list[np.ndarray]:
    """Evaluate a discrete field and its physical derivatives.

    ``ref_points`` is (nc, nq, 2), one row per entry of ``cells``.  Entry n of the
    result has shape (nc, nq, n_components) + (2,)*n.
    """
    tables = push_forward(dofmap.element.tabulate(ref_points, order), geom.jinv[cells])
    local = coeffs.reshape(dofmap.n_components, dofmap.n_scalar)[:, dofmap.cell_dofs[cells]]
    return [np.moveaxis(np.einsum("kcn,c...n->kc...", local, t), 0, 2) for t in tables]


def barycentric_monomial_integral(a: int, b: int, c: int, area: float = 0.5) -> float:
    """Exact integral of l0^a l1^b l2^c over a triangle of the given area."""
    return math.factorial(a) * math.factorial(b) * math.factorial(c) * 2 * area \
        / math.factorial(a + b + c + 2)
