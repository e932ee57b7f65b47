"""Operator assembly for the velocity/pressure pair.

All velocity-velocity matrices of one :class:`Discretization` share a single
CSR sparsity pattern (cell couplings plus, when interior-penalty terms are
enabled, couplings across interior faces), so they can be combined by adding
their ``data`` arrays.  Contributions are accumulated with ``np.bincount`` in a
fixed order, which makes assembly bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .fem import (MAX_QUADRATURE_DEGREE, CellGeometry, DofMap, build_dofmap, edge_quadrature,
                  push_forward, quadrature)
from .mesh import FaceSet, Mesh, build_face_topology


@dataclass(frozen=True)
class CIPParameters:
    """Weights of the three face terms and the floor used for the transport sup-norm.

    ``global_h`` switches the face weights from the local face length to the
    global mesh size.
    """

    delta1: float = 1e-2
    delta2: float = 1e-4
    delta3: float = 1e-3
    u_floor: float = 1e-8
    global_h: bool = False

    def __post_init__(self):
        deltas = (self.delta1, self.delta2, self.delta3)
        if not all(np.isfinite(d) and d >= 0 for d in deltas):
            raise ValueError("stabilization parameters must be finite and non-negative")
        if not (np.isfinite(self.u_floor) and self.u_floor > 0):
            raise ValueError("u_floor must be positive")

    @property
    def deltas(self) -> tuple[float, float, float]:
        return self.delta1, self.delta2, self.delta3


class _Pattern:
    """Shared CSR structure with scatter maps for blocks of local matrices."""

    def __init__(self, n: int, blocks: list[np.ndarray]):
        keys = []
        for dofs in blocks:
            nl = dofs.shape[1]
            rows = np.repeat(dofs, nl, axis=1)
            cols = np.tile(dofs, (1, nl))
            keys.append((rows * n + cols).ravel())
        sizes = [len(k) for k in keys]
        uniq, inverse = np.unique(np.concatenate(keys), return_inverse=True)
        self.n = n
        self.nnz = len(uniq)
        self.indices = (uniq % n).astype(np.int32)
        row = uniq // n
        self.indptr = np.searchsorted(row, np.arange(n + 1)).astype(np.int32)
        self.maps = np.split(inverse, np.cumsum(sizes)[:-1])

    def data(self, block: int, local: np.ndarray) -> np.ndarray:
        return np.bincount(self.maps[block], weights=local.ravel(), minlength=self.nnz)

    def matrix(self, data: np.ndarray) -> sp.csr_matrix:
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))


class Discretization:
    """Mesh, spaces, quadrature tables and sparsity pattern for one scheme.

    Parameters
    ----------
    mesh : Mesh
        Already refined if a Scott-Vogelius pair is wanted.
    k : int
        Velocity degree.
    pressure : {"discontinuous", "continuous"}
        Pressure space of degree k - 1.
    with_faces : bool
        Include interior-face couplings in the velocity pattern.
    cell_degree, face_degree : int, optional
        Quadrature exactness; defaults 2k+2 and 2k+3.

    The load vector uses its own, more accurate rule (default 2k+6, capped at
    the largest tabulated degree): a gradient body force must land in the range
    of the divergence transpose to near machine precision, otherwise the
    velocity picks up the quadrature error of a force it should not see.
    """

    def __init__(self, mesh: Mesh, k: int = 2, pressure: str = "discontinuous",
                 with_faces: bool = True, cell_degree: int | None = None,
                 face_degree: int | None = None, faces: FaceSet | None = None):
        self.mesh = mesh
        self.k = k
        self.faces = faces if faces is not None else build_face_topology(mesh)
        self.geom = CellGeometry.from_mesh(mesh)
        self.velocity = build_dofmap(mesh, self.faces, "velocity", k)
        kind = {"discontinuous": "pressure", "continuous": "pressure-continuous"}[pressure]
        self.pressure = build_dofmap(mesh, self.faces, kind, k)
        self.with_faces = with_faces
        self.cell_degree = cell_degree or 2 * k + 2
        self.face_degree = face_degree or 2 * k + 3
        self.load_degree = min(2 * k + 6, MAX_QUADRATURE_DEGREE)
        self.h = mesh.h
        self._rule_tables: dict[int, tuple] = {}

        free = np.ones(self.velocity.n_dofs, dtype=bool)
        free[self.velocity.boundary_dofs()] = False
        self.free_velocity = free

    # -- cell tables ---------------------------------------------------------
    @cached_property
    def cell_rule(self):
        return quadrature(self.cell_degree)

    @cached_property
    def cell_points(self) -> np.ndarray:
        return self.geom.to_physical(self.cell_rule.points)

    @cached_property
    def cell_weights(self) -> np.ndarray:
        return np.abs(self.geom.det)[:, None] * self.cell_rule.weights[None, :]

    @cached_property
    def _velocity_tables(self):
        ref = self.velocity.element.tabulate(self.cell_rule.points, 1)
        grad = np.einsum("cpa,qpn->cqan", self.geom.jinv, ref[1])
        return ref[0], grad

    @property
    def vel_values(self) -> np.ndarray:
        """(nq, nb) velocity scalar basis at cell quadrature points."""
        return self._velocity_tables[0]

    @property
    def vel_grads(self) -> np.ndarray:
        """(nc, nq, 2, nb) physical gradients of the velocity scalar basis."""
        return self._velocity_tables[1]

    def rule_tables(self, degree: int):
        """Physical points, weights and velocity basis values for a cell rule of ``degree``."""
        if degree not in self._rule_tables:
            rule = quadrature(degree)
            pts = self.geom.to_physical(rule.points)
            w = np.abs(self.geom.det)[:, None] * rule.weights[None, :]
            phi = self.velocity.element.tabulate(rule.points, 0)[0]
            self._rule_tables[degree] = (pts, w, phi)
        return self._rule_tables[degree]

    @cached_property
    def pres_values(self) -> np.ndarray:
        return self.pressure.element.tabulate(self.cell_rule.points, 0)[0]

    @cached_property
    def vel_cell_dofs(self) -> np.ndarray:
        return self.velocity.vector_cell_dofs()

    # -- face tables (interior faces only) -----------------------------------
    @cached_property
    def face_rule(self):
        return edge_quadrature(self.face_degree)

    @cached_property
    def face_data(self) -> dict:
        f = self.faces
        sl = f.interior
        t = self.face_rule.points[:, 0]
        p0 = self.mesh.vertices[f.vertices[sl, 0]]
        p1 = self.mesh.vertices[f.vertices[sl, 1]]
        pts = p0[:, None, :] + t[None, :, None] * (p1 - p0)[:, None, :]
        out = {"points": pts,
               "weights": f.lengths[sl, None] * self.face_rule.weights[None, :],
               "normals": f.normals[sl],
               "h": f.lengths[sl]}
        elem = self.velocity.element
        for side, cells in (("left", f.left[sl]), ("right", f.right[sl])):
            ref = self.geom.to_reference(pts, cells)
            tables = push_forward(elem.tabulate(ref, 3), self.geom.jinv[cells])
            out[side] = {"cells": cells, "tables": tables}
        dofs = np.concatenate([self.vel_cell_dofs[f.left[sl]], self.vel_cell_dofs[f.right[sl]]],
                              axis=1)
        out["dofs"] = dofs
        return out

    # -- sparsity ------------------------------------------------------------
    @cached_property
    def pattern(self) -> _Pattern:
        blocks = [self.vel_cell_dofs]
        if self.with_faces and self.faces.interior_count:
            blocks.append(self.face_data["dofs"])
        return _Pattern(self.velocity.n_dofs, blocks)

    def cell_matrix(self, local: np.ndarray) -> sp.csr_matrix:
        return self.pattern.matrix(self.pattern.data(0, local))

    def face_matrix(self, local: np.ndarray) -> sp.csr_matrix:
        if not self.with_faces:
            raise RuntimeError("discretization built without face couplings")
        return self.pattern.matrix(self.pattern.data(1, local))

    def zero_matrix(self) -> sp.csr_matrix:
        return self.pattern.matrix(np.zeros(self.pattern.nnz))

    # -- evaluation helpers --------------------------------------------------
    def velocity_at_cells(self, coeffs: np.ndarray, grad: bool = False):
        """Velocity (nc, nq, 2) at cell quadrature points, optionally with gradient (nc, nq, 2, 2)."""
        local = coeffs.reshape(2, -1)[:, self.velocity.cell_dofs]  # (2, nc, nb)
        vals = np.einsum("kcn,qn->cqk", local, self.vel_values)
        if not grad:
            return vals
        g = np.einsum("kcn,cqan->cqka", local, self.vel_grads)
        return vals, g

    def pressure_at_cells(self, coeffs: np.ndarray) -> np.ndarray:
        local = coeffs[self.pressure.cell_dofs]
        return np.einsum("cn,qn->cq", local, self.pres_values)


def _block_diag2(local: np.ndarray) -> np.ndarray:
    nc, nb, _ = local.shape
    out = np.zeros((nc, 2 * nb, 2 * nb))
    out[:, :nb, :nb] = local
    out[:, nb:, nb:] = local
    return out


def assemble_stokes_blocks(disc: Discretization, nu: float = 1.0) -> dict:
    """Mass ``M``, viscous stiffness ``A = nu (grad, grad)`` and divergence ``B``.

    ``B[i, j] = (div phi_j, q_i)`` maps velocity dofs to pressure dofs.  ``m``
    holds the pressure basis integrals used for the zero-mean constraint.
    """
    if not nu > 0:
        raise ValueError("viscosity must be positive")
    w = disc.cell_weights
    phi = disc.vel_values
    grad = disc.vel_grads
    mass = np.einsum("cq,qi,qj->cij", w, phi, phi)
    stiff = nu * np.einsum("cq,cqai,cqaj->cij", w, grad, grad)
    M = disc.cell_matrix(_block_diag2(mass))
    A = disc.cell_matrix(_block_diag2(stiff))

    psi = disc.pres_values
    nb = phi.shape[1]
    div = np.concatenate([grad[:, :, 0, :], grad[:, :, 1, :]], axis=2)  # (nc, nq, 2nb)
    bloc = np.einsum("cq,qi,cqj->cij", w, psi, div)
    pdofs = disc.pressure.cell_dofs
    vdofs = disc.vel_cell_dofs
    rows = np.repeat(pdofs, 2 * nb, axis=1).ravel()
    cols = np.tile(vdofs, (1, pdofs.shape[1])).ravel()
    B = sp.coo_matrix((bloc.ravel(), (rows, cols)),
                      shape=(disc.pressure.n_dofs, disc.velocity.n_dofs)).tocsr()
    B.sum_duplicates()
    m = np.bincount(pdofs.ravel(), weights=np.einsum("cq,qi->ci", w, psi).ravel(),
                    minlength=disc.pressure.n_dofs)
    return {"M": M, "A": A, "B": B, "m": m}


class TransportField:
    """Discrete velocity used as the convecting field, with its sampled sup-norm.

    The sup-norm is the largest Euclidean length over all velocity Lagrange
    nodes and interior-face quadrature points.
    """

    def __init__(self, disc: Discretization, coeffs: np.ndarray):
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (disc.velocity.n_dofs,):
            raise ValueError("transport coefficients do not match the velocity space")
        if not np.all(np.isfinite(coeffs)):
            raise FloatingPointError("non-finite transport coefficients")
        self.disc = disc
        self.coeffs = coeffs

    @cached_property
    def sup_norm(self) -> float:
        nodal = np.hypot(*self.coeffs.reshape(2, -1))
        sup = float(nodal.max()) if nodal.size else 0.0
        if self.disc.faces.interior_count:
            vals = self.on_face("left", 0)[0]
            sup = max(sup, float(np.hypot(vals[..., 0], vals[..., 1]).max()))
        return sup

    def on_face(self, side: str, order: int) -> list[np.ndarray]:
        """Values and derivatives on one side of the interior faces.

        Entry n has shape (F, Q, 2) + (2,)*n with the component axis first
        after (F, Q).
        """
        fd = self.disc.face_data[side]
        local = self.coeffs.reshape(2, -1)[:, self.disc.velocity.cell_dofs[fd["cells"]]]
        return [np.moveaxis(np.einsum("kfn,fq...n->kfq...", local, t), 0, 2)
                for t in fd["tables"][:order + 1]]


def assemble_convection(disc: Discretization, a: TransportField | np.ndarray) -> sp.csr_matrix:
    """``N[i, j] = ((a . grad) phi_j, phi_i)`` with the plain (non-skew) form."""
    coeffs = a.coeffs if isinstance(a, TransportField) else np.asarray(a)
    av = disc.velocity_at_cells(coeffs)
    adv = np.einsum("cqa,cqaj->cqj", av, disc.vel_grads)
    local = np.einsum("cq,qi,cqj->cij", disc.cell_weights, disc.vel_values, adv)
    return disc.cell_matrix(_block_diag2(local))


def _side_jumps(tables, a_vals, a_grad, a_hess, normals):
    """Per-side S1, S2, S3 quantities for every local vector basis function."""
    psi, g, H, T3 = tables
    # D = a_j d_j psi and its first two derivatives
    D = np.einsum("fqj,fqjn->fqn", a_vals, g)
    dD = np.einsum("fqjk,fqjn->fqkn", a_grad, g) + np.einsum("fqj,fqjkn->fqkn", a_vals, H)
    ddD = (np.einsum("fqjkl,fqjn->fqkln", a_hess, g)
           + np.einsum("fqjk,fqjln->fqkln", a_grad, H)
           + np.einsum("fqjl,fqjkn->fqkln", a_grad, H)
           + np.einsum("fqj,fqjkln->fqkln", a_vals, T3))
    n1 = normals[:, None, 0, None]
    n2 = normals[:, None, 1, None]
    # w = e_0 psi: (a.grad)w x n = D n2, curl = -d_y D ; w = e_1 psi: -D n1, curl = d_x D
    s1 = np.concatenate([D * n2, -D * n1], axis=-1)
    s2 = np.concatenate([-dD[:, :, 1], dD[:, :, 0]], axis=-1)
    s3 = np.concatenate([-ddD[:, :, :, 1], ddD[:, :, :, 0]], axis=-1)
    return s1, s2, s3


def cip_jump_vectors(disc: Discretization, a: TransportField):
    """Jump operators on interior faces.

    Returns (J1, J2, J3) of shapes (F, Q, 2m), (F, Q, 2m), (F, Q, 2, 2m) acting on
    the face-local velocity dofs ``disc.face_data["dofs"]`` (left cell then right).
    J1 is the tangential jump of the convective derivative, J2 the jump of its
    curl and J3 the jump of the curl's gradient.
    """
    fd = disc.face_data
    normals = fd["normals"]
    out = []
    for side in ("left", "right"):
        # a_grad[..., j, k] = d_k a_j, a_hess[..., j, k, l] = d_kl a_j
        vals, grad, hess = a.on_face(side, 2)
        out.append(_side_jumps(fd[side]["tables"], vals, grad, hess, normals))
    left, right = out
    return tuple(np.concatenate([l, -r], axis=-1) for l, r in zip(left, right))


def face_jumps(disc: Discretization, a: TransportField, w: np.ndarray):
    """Evaluate the three jump quantities of the field ``w`` at interior-face quadrature points."""
    dofs = disc.face_data["dofs"]
    wl = w[dofs]
    J1, J2, J3 = cip_jump_vectors(disc, a)
    return (np.einsum("fqn,fn->fq", J1, wl), np.einsum("fqn,fn->fq", J2, wl),
            np.einsum("fqln,fn->fql", J3, wl))


def cip_scale(a: TransportField, params: CIPParameters) -> float:
    return 1.0 / max(params.u_floor, a.sup_norm)


def assemble_cip(disc: Discretization, a: TransportField, params: CIPParameters,
                 terms: tuple[int, ...] = (1, 2, 3)) -> sp.csr_matrix:
    """Interior-penalty stabilization matrix ``S(a)``.

    ``S = max(u_floor, |a|_inf)^-1 * sum_j delta_j S_j`` with face weights
    h_F^2, h_F^4, h_F^6.  ``terms`` restricts the sum (used in tests).
    """
    if disc.faces.interior_count == 0:
        return disc.zero_matrix()
    fd = disc.face_data
    h = np.full(disc.faces.interior_count, disc.h) if params.global_h else fd["h"]
    J1, J2, J3 = cip_jump_vectors(disc, a)
    w = fd["weights"] * cip_scale(a, params)
    d1, d2, d3 = params.deltas
    # local = R^T R with R the square-root-weighted jump rows of the active terms
    rows = []
    if 1 in terms and d1:
        rows.append(np.sqrt(w * (d1 * h**2)[:, None])[..., None] * J1)
    if 2 in terms and d2:
        rows.append(np.sqrt(w * (d2 * h**4)[:, None])[..., None] * J2)
    if 3 in terms and d3:
        r3 = np.sqrt(w * (d3 * h**6)[:, None])[..., None, None] * J3
        rows.append(r3.reshape(len(J3), -1, J3.shape[-1]))
    if not rows:
        return disc.zero_matrix()
    R = np.concatenate(rows, axis=1)
    local = np.matmul(R.transpose(0, 2, 1), R)
    return disc.face_matrix(local)


def assemble_graddiv(disc: Discretization, gamma: float) -> sp.csr_matrix:
    """``G[i, j] = gamma (div phi_j, div phi_i)``."""
    if gamma < 0:
        raise ValueError("grad-div parameter must be non-negative")
    grad = disc.vel_grads
    div = np.concatenate([grad[:, :, 0, :], grad[:, :, 1, :]], axis=2)
    local = gamma * np.einsum("cq,cqi,cqj->cij", disc.cell_weights, div, div)
    return disc.cell_matrix(local)


def assemble_load(disc: Discretization, f, t: float = 0.0, degree: int | None = None) -> np.ndarray:
    """Load vector ``(f(., t), phi_i)`` for a vector field ``f(x, y, t) -> (2, ...)``.

    ``degree`` defaults to ``disc.load_degree``.
    """
    pts, w, phi = disc.rule_tables(degree or disc.load_degree)
    vals = np.asarray(f(pts[..., 0], pts[..., 1], t), dtype=float)
    vals = np.broadcast_to(vals, (2,) + pts.shape[:2])
    local = np.einsum("kcq,cq,qi->cki", vals, w, phi).reshape(len(pts), -1)
    return np.bincount(disc.vel_cell_dofs.ravel(), weights=local.ravel(),
                       minlength=disc.velocity.n_dofs)


def scalar_load(disc: Discretization, f, t: float = 0.0) -> np.ndarray:
    """``(f, q_i)`` for the pressure basis."""
    pts = disc.cell_points
    vals = np.broadcast_to(np.asarray(f(pts[..., 0], pts[..., 1], t), dtype=float), pts.shape[:2])
    local = np.einsum("cq,cq,qi->ci", vals, disc.cell_weights, disc.pres_values)
    return np.bincount(disc.pressure.cell_dofs.ravel(), weights=local.ravel(),
                       minlength=disc.pressure.n_dofs)


def gradient_load(disc: Discretization, grad_f, t: float = 0.0) -> np.ndarray:
    """``(grad u : grad_f)`` tested against every velocity basis function.

    ``grad_f(x, y, t)`` returns (2, 2, ...) with ``[i, j] = d u_i / d x_j``.
    """
    pts = disc.cell_points
    G = np.asarray(grad_f(pts[..., 0], pts[..., 1], t), dtype=float)
    local = np.einsum("kacq,cq,cqan->ckn", G, disc.cell_weights, disc.vel_grads)
    return np.bincount(disc.vel_cell_dofs.ravel(), weights=local.reshape(len(pts), -1).ravel(),
                       minlength=disc.velocity.n_dofs)


def build_discretization(N: int, k: int = 2, scheme: str = "sv-cip", **kwargs) -> Discretization:
    """Mesh and spaces for a scheme on the Alfeld-refined N x N unit square."""
    from .mesh import barycentric_refine, build_unit_square_mesh

    mesh = barycentric_refine(build_unit_square_mesh(N))
    pressure = "continuous" if scheme == "th-graddiv" else "discontinuous"
    return Discretization(mesh, k, pressure=pressure, with_faces=(scheme == "sv-cip"), **kwargs)
