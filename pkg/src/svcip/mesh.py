"""Structured triangulations of the unit square, Alfeld refinement and face topology."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_BOUNDARY_TOL = 1e-14


class MeshError(ValueError):
    """Raised for structurally invalid meshes."""


@dataclass(frozen=True)
class Mesh:
    """Triangulation with counterclockwise cells.

    Attributes
    ----------
    vertices : (nv, 2) float array
    cells : (nc, 3) int array, counterclockwise vertex indices
    boundary_flags : (nv,) bool array, True for vertices on the boundary
    """

    vertices: np.ndarray
    cells: np.ndarray
    boundary_flags: np.ndarray

    def __post_init__(self):
        for name in ("vertices", "cells", "boundary_flags"):
            getattr(self, name).setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.cells]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def cell_diameters(self) -> np.ndarray:
        p = self.vertices[self.cells]
        d = [np.linalg.norm(p[:, i] - p[:, (i + 1) % 3], axis=1) for i in range(3)]
        return np.max(d, axis=0)

    @property
    def h(self) -> float:
        """Maximum cell diameter."""
        return float(self.cell_diameters().max())

    def min_angle(self) -> float:
        p = self.vertices[self.cells]
        angles = []
        for i in range(3):
            a = p[:, (i + 1) % 3] - p[:, i]
            b = p[:, (i + 2) % 3] - p[:, i]
            cos = np.sum(a * b, axis=1) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            angles.append(np.arccos(np.clip(cos, -1.0, 1.0)))
        return float(np.min(angles))

    def validate(self) -> None:
        cells = self.cells
        if cells.ndim != 2 or cells.shape[1] != 3:
            raise MeshError("cells must be an (n, 3) array")
        if cells.min() < 0 or cells.max() >= self.n_vertices:
            raise MeshError("cell vertex index out of range")
        if np.any(cells[:, 0] == cells[:, 1]) or np.any(cells[:, 1] == cells[:, 2]) \
                or np.any(cells[:, 0] == cells[:, 2]):
            raise MeshError("cell with repeated vertex")
        if np.any(self.signed_areas() <= 0):
            raise MeshError("cell with non-positive signed area")
        v = self.vertices
        if np.any(v < -_BOUNDARY_TOL) or np.any(v > 1 + _BOUNDARY_TOL):
            raise MeshError("vertex outside the unit square")


def _on_boundary(points: np.ndarray) -> np.ndarray:
    x, y = points[:, 0], points[:, 1]
    return (
        (np.abs(x) < _BOUNDARY_TOL) | (np.abs(x - 1) < _BOUNDARY_TOL)
        | (np.abs(y) < _BOUNDARY_TOL) | (np.abs(y - 1) < _BOUNDARY_TOL)
    )


def build_unit_square_mesh(N: int, diagonal: str = "SW-NE") -> Mesh:
    """Uniform N x N grid of the unit square, each square cut along its SW-NE diagonal."""
    if diagonal != "SW-NE":
        raise ValueError(f"unsupported diagonal orientation {diagonal!r}")
    if int(N) != N or N < 1:
        raise ValueError(f"N must be a positive integer, got {N!r}")
    N = int(N)
    t = np.arange(N + 1) / N
    X, Y = np.meshgrid(t, t, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(N), np.arange(N), indexing="xy")
    v00 = (i + j * (N + 1)).ravel()
    v10 = v00 + 1
    v01 = v00 + N + 1
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    cells = np.empty((2 * N * N, 3), dtype=np.int64)
    cells[0::2] = lower
    cells[1::2] = upper

    mesh = Mesh(vertices, cells, _on_boundary(vertices))
    mesh.validate()
    return mesh


def barycentric_refine(mesh: Mesh) -> Mesh:
    """Split every triangle into three by joining its barycenter to its vertices."""
    mesh.validate()
    nv, nc = mesh.n_vertices, mesh.n_cells
    bary = mesh.vertices[mesh.cells].mean(axis=1)
    vertices = np.vstack([mesh.vertices, bary])
    m = nv + np.arange(nc)
    a, b, c = mesh.cells.T
    cells = np.empty((3 * nc, 3), dtype=np.int64)
    cells[0::3] = np.column_stack([a, b, m])
    cells[1::3] = np.column_stack([b, c, m])
    cells[2::3] = np.column_stack([c, a, m])
    flags = np.concatenate([mesh.boundary_flags, np.zeros(nc, dtype=bool)])
    refined = Mesh(vertices, cells, flags)
    refined.validate()
    return refined


@dataclass(frozen=True)
class FaceSet:
    """Edges of a triangulation.

    ``left`` is the lower-indexed adjacent cell and ``normals`` point out of it.
    ``right`` is -1 on boundary faces.  ``left_local``/``right_local`` give the
    local edge index in the adjacent cell (edge i is opposite local vertex i).
    Interior faces come first, ``interior_count`` of them.
    """

    vertices: np.ndarray
    left: np.ndarray
    right: np.ndarray
    left_local: np.ndarray
    right_local: np.ndarray
    normals: np.ndarray
    lengths: np.ndarray
    interior_count: int

    @property
    def n_faces(self) -> int:
        return len(self.left)

    @property
    def interior(self) -> slice:
        return slice(0, self.interior_count)

    @property
    def boundary(self) -> slice:
        return slice(self.interior_count, self.n_faces)


def build_face_topology(mesh: Mesh) -> FaceSet:
    cells = mesh.cells
    nc = mesh.n_cells
    # local edge i joins local vertices i+1 and i+2
    ev = np.stack([cells[:, [1, 2]], cells[:, [2, 0]], cells[:, [0, 1]]], axis=1)
    ev = ev.reshape(-1, 2)
    owner = np.repeat(np.arange(nc), 3)
    local = np.tile(np.arange(3), nc)
    key_pairs = np.sort(ev, axis=1)
    keys = key_pairs[:, 0] * mesh.n_vertices + key_pairs[:, 1]

    order = np.lexsort((owner, keys))
    keys_s = keys[order]
    uniq, start, counts = np.unique(keys_s, return_index=True, return_counts=True)
    if np.any(counts > 2):
        raise MeshError("non-manifold edge shared by more than two cells")

    first = order[start]
    has_second = counts == 2
    second = np.full(len(uniq), -1, dtype=np.int64)
    second[has_second] = order[start[has_second] + 1]

    left = owner[first]
    left_local = local[first]
    right = np.where(has_second, owner[np.maximum(second, 0)], -1)
    right_local = np.where(has_second, local[np.maximum(second, 0)], -1)
    fverts = ev[first]  # orientation as seen from the left cell (counterclockwise)

    # interior faces first, each group ordered by edge key
    perm = np.concatenate([np.flatnonzero(has_second), np.flatnonzero(~has_second)])
    left, right = left[perm], right[perm]
    left_local, right_local = left_local[perm], right_local[perm]
    fverts = fverts[perm]

    p0 = mesh.vertices[fverts[:, 0]]
    p1 = mesh.vertices[fverts[:, 1]]
    t = p1 - p0
    lengths = np.linalg.norm(t, axis=1)
    # counterclockwise traversal of the left cell: outward normal is the tangent rotated clockwise
    normals = np.column_stack([t[:, 1], -t[:, 0]]) / lengths[:, None]

    for arr in (fverts, left, right, left_local, right_local, normals, lengths):
        arr.setflags(write=False)
    return FaceSet(fverts, left, right, left_local, right_local, normals, lengths,
                   int(has_second.sum()))


def write_vtk(path, mesh: Mesh, point_data: dict | None = None, cell_data: dict | None = None,
              title: str = "svcip mesh") -> None:
    """Write a legacy-VTK ASCII unstructured grid of linear triangles.

    ``point_data`` maps names to (nv,) scalars or (nv, 2) vectors at the mesh vertices.
    """
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID"]
    lines.append(f"POINTS {mesh.n_vertices} double")
    lines.extend(f"{x:.17g} {y:.17g} 0" for x, y in mesh.vertices)
    lines.append(f"CELLS {mesh.n_cells} {4 * mesh.n_cells}")
    lines.extend(f"3 {a} {b} {c}" for a, b, c in mesh.cells)
    lines.append(f"CELL_TYPES {mesh.n_cells}")
    lines.extend(["5"] * mesh.n_cells)
    for header, count, data in (("POINT_DATA", mesh.n_vertices, point_data),
                                ("CELL_DATA", mesh.n_cells, cell_data)):
        if not data:
            continue
        lines.append(f"{header} {count}")
        for name, values in data.items():
            values = np.asarray(values, dtype=float)
            if values.ndim == 1:
                lines.append(f"SCALARS {name} double 1")
                lines.append("LOOKUP_TABLE default")
                lines.extend(f"{v:.17g}" for v in values)
            else:
                lines.append(f"VECTORS {name} double")
                lines.extend(f"{v[0]:.17g} {v[1]:.17g} 0" for v in values)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
