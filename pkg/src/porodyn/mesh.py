"""Axis-aligned quadrilateral meshes with face connectivity and boundary tags.

Two generators are provided: the unit square for convergence studies and
an L-shaped domain (unit square with a rectangular notch removed) for the
loaded-wall benchmark.  Only axis-aligned rectangular cells are supported,
so every element map is affine with a diagonal Jacobian.

Boundary faces carry one displacement tag and one pressure tag each:

* ``u_dirichlet`` / ``u_neumann`` / ``u_roller`` (normal displacement
  blocked, tangential traction free),
* ``p_dirichlet`` / ``p_neumann``.

Faces on the goal segment of the benchmark additionally carry
``is_goal_segment``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

INTERIOR = "interior"
U_DIRICHLET = "u_dirichlet"
U_NEUMANN = "u_neumann"
U_ROLLER = "u_roller"
P_DIRICHLET = "p_dirichlet"
P_NEUMANN = "p_neumann"

U_TAGS = (U_DIRICHLET, U_NEUMANN, U_ROLLER)
P_TAGS = (P_DIRICHLET, P_NEUMANN)

_GEOM_TOL = 1e-12


@dataclass(frozen=True)
class Face:
    """A mesh edge with owner/neighbor cells and boundary metadata.

    ``normal`` points from the owner cell into the neighbor, outward on
    the boundary.  Three local scales are carried, each averaging the
    two adjacent cells (single cell on the boundary): ``h_f`` from cell
    areas, ``h_len`` from cell diagonals, and ``h_perp`` from the cell
    extents normal to the face.
    """

    vertices: tuple[int, int]
    owner: int
    neighbor: int  # -1 on the boundary
    normal: np.ndarray
    measure: float
    h_f: float
    h_len: float
    h_perp: float
    midpoint: np.ndarray
    tag_u: str = INTERIOR
    tag_p: str = INTERIOR
    is_goal_segment: bool = False

    @property
    def is_boundary(self) -> bool:
        return self.neighbor < 0

    @property
    def axis(self) -> int:
        """0 for a vertical face (normal along x), 1 for horizontal."""
        return 0 if abs(self.normal[0]) > 0.5 else 1


@dataclass(frozen=True)
class Mesh:
    """Immutable axis-aligned quadrilateral mesh."""

    vertices: np.ndarray          # (nv, 2)
    cells: np.ndarray             # (nc, 4) CCW vertex indices, SW first
    faces: tuple[Face, ...] = field(default=())
    refinement_level: int = 0

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def cell_origin(self) -> np.ndarray:
        """South-west corner of every cell, shape (nc, 2)."""
        return self.vertices[self.cells[:, 0]]

    @property
    def cell_size(self) -> np.ndarray:
        """(dx, dy) of every cell, shape (nc, 2)."""
        return self.vertices[self.cells[:, 2]] - self.vertices[self.cells[:, 0]]

    @property
    def cell_areas(self) -> np.ndarray:
        size = self.cell_size
        return size[:, 0] * size[:, 1]

    @property
    def mesh_size(self) -> float:
        """Largest cell diagonal."""
        return float(np.max(np.hypot(*self.cell_size.T)))

    def boundary_faces(self, tag_u: str | None = None, tag_p: str | None = None):
        """Boundary faces, optionally filtered by one or both tags."""
        out = []
        for f in self.faces:
            if not f.is_boundary:
                continue
            if tag_u is not None and f.tag_u != tag_u:
                continue
            if tag_p is not None and f.tag_p != tag_p:
                continue
            out.append(f)
        return out

    def interior_faces(self):
        return [f for f in self.faces if not f.is_boundary]

    def goal_faces(self):
        return [f for f in self.faces if f.is_goal_segment]


def _build_faces(vertices, cells, tagger):
    """Derive the face list from cells; classify boundaries via ``tagger``.

    ``tagger(midpoint, normal) -> (tag_u, tag_p, is_goal)`` is called for
    boundary faces only.
    """
    edge_cells: dict[tuple[int, int], list[int]] = {}
    # local edges in CCW order: bottom, right, top, left
    local_edges = ((0, 1), (1, 2), (2, 3), (3, 0))
    for c, cell in enumerate(cells):
        for a, b in local_edges:
            key = (min(cell[a], cell[b]), max(cell[a], cell[b]))
            edge_cells.setdefault(key, []).append(c)

    sizes = vertices[cells[:, 2]] - vertices[cells[:, 0]]
    areas = sizes[:, 0] * sizes[:, 1]
    diams = np.hypot(sizes[:, 0], sizes[:, 1])
    centers = vertices[cells[:, 0]] + 0.5 * sizes

    faces = []
    for (v0, v1), touching in sorted(edge_cells.items()):
        if len(touching) > 2:
            raise ValueError(f"edge {(v0, v1)} shared by more than two cells")
        owner = touching[0]
        neighbor = touching[1] if len(touching) == 2 else -1
        p0, p1 = vertices[v0], vertices[v1]
        tangent = p1 - p0
        measure = float(np.hypot(*tangent))
        normal = np.array([tangent[1], -tangent[0]]) / measure
        midpoint = 0.5 * (p0 + p1)
        # orient away from the owner cell center
        if np.dot(normal, midpoint - centers[owner]) < 0:
            normal = -normal
        axis = 0 if abs(normal[0]) > 0.5 else 1
        if neighbor >= 0:
            h_f = 0.5 * (areas[owner] + areas[neighbor])
            h_len = 0.5 * (diams[owner] + diams[neighbor])
            h_perp = 0.5 * (sizes[owner, axis] + sizes[neighbor, axis])
            tag_u = tag_p = INTERIOR
            goal = False
        else:
            h_f = float(areas[owner])
            h_len = float(diams[owner])
            h_perp = float(sizes[owner, axis])
            tag_u, tag_p, goal = tagger(midpoint, normal)
        faces.append(Face((v0, v1), owner, neighbor, normal, measure,
                          float(h_f), float(h_len), float(h_perp), midpoint,
                          tag_u, tag_p, goal))
    return tuple(faces)


def _grid_mesh(keep_cell, nx, ny, x0=0.0, y0=0.0, dx=1.0, dy=1.0, tagger=None,
               level=0):
    """Structured (nx, ny) grid of dx-by-dy cells filtered by ``keep_cell``."""
    vid = -np.ones((nx + 1, ny + 1), dtype=int)
    cells = []
    for j in range(ny):
        for i in range(nx):
            if keep_cell(i, j):
                for di, dj in ((0, 0), (1, 0), (1, 1), (0, 1)):
                    vid[i + di, j + dj] = 0
    count = 0
    coords = []
    for j in range(ny + 1):
        for i in range(nx + 1):
            if vid[i, j] == 0:
                vid[i, j] = count
                coords.append((x0 + i * dx, y0 + j * dy))
                count += 1
    for j in range(ny):
        for i in range(nx):
            if keep_cell(i, j):
                cells.append((vid[i, j], vid[i + 1, j], vid[i + 1, j + 1], vid[i, j + 1]))
    vertices = np.array(coords, dtype=float)
    cells = np.array(cells, dtype=int)
    if tagger is None:
        tagger = lambda mid, nrm: (U_DIRICHLET, P_DIRICHLET, False)
    faces = _build_faces(vertices, cells, tagger)
    return Mesh(vertices, cells, faces, refinement_level=level)


def unit_square_mesh(n_cells_per_side: int, tagger=None) -> Mesh:
    """Uniform n-by-n mesh of (0,1)^2.

    By default every boundary face is tagged Dirichlet for both fields;
    pass a ``tagger`` for anything else.
    """
    n = n_cells_per_side
    if n < 1:
        raise ValueError(f"need at least one cell per side, got {n}")
    return _grid_mesh(lambda i, j: True, n, n, dx=1.0 / n, dy=1.0 / n, tagger=tagger)


@dataclass(frozen=True)
class LShapeGeometry:
    """Configurable description of the benchmark domain and its tags.

    The domain is (0,1)^2 minus the axis-aligned ``notch`` rectangle
    (x0, x1, y0, y1).  Rollers (normal displacement blocked) sit on the
    outer sides listed in ``roller_sides``; every other boundary face is
    a displacement Neumann face.  The pressure Dirichlet part is the top
    segment x <= ``p_dirichlet_xmax``; the goal segment is the vertical
    wall x = ``goal_x``, y <= ``goal_ymax``.
    """

    notch: tuple[float, float, float, float] = (0.75, 1.0, 0.0, 0.5)
    roller_sides: tuple[str, ...] = ("bottom", "left")
    p_dirichlet_xmax: float = 0.5
    goal_x: float = 0.75
    goal_ymax: float = 0.5

    def tagger(self, midpoint, normal):
        x, y = midpoint
        on_bottom = abs(y) < _GEOM_TOL
        on_left = abs(x) < _GEOM_TOL
        on_top = abs(y - 1.0) < _GEOM_TOL
        on_right = abs(x - 1.0) < _GEOM_TOL
        tag_u = U_NEUMANN
        if (on_bottom and "bottom" in self.roller_sides) or \
           (on_left and "left" in self.roller_sides) or \
           (on_top and "top" in self.roller_sides) or \
           (on_right and "right" in self.roller_sides):
            tag_u = U_ROLLER
        tag_p = P_DIRICHLET if (on_top and x <= self.p_dirichlet_xmax + _GEOM_TOL) \
            else P_NEUMANN
        goal = (abs(x - self.goal_x) < _GEOM_TOL
                and y <= self.goal_ymax + _GEOM_TOL and not on_bottom)
        return tag_u, tag_p, goal


def l_shaped_mesh(level: int, geometry: LShapeGeometry | None = None) -> Mesh:
    """Benchmark L-shaped domain, uniformly refined ``level`` times.

    Level 0 is the coarse quadrilateralization into congruent 0.25-sized
    cells of (0,1)^2 minus the notch.
    """
    if level < 0:
        raise ValueError("refinement level must be non-negative")
    geo = geometry if geometry is not None else LShapeGeometry()
    nx0 = 4
    d = 0.25
    x0n, x1n, y0n, y1n = geo.notch

    def keep(i, j):
        cx, cy = (i + 0.5) * d, (j + 0.5) * d
        return not (x0n < cx < x1n and y0n < cy < y1n)

    mesh = _grid_mesh(keep, nx0, nx0, dx=d, dy=d, tagger=geo.tagger)
    for _ in range(level):
        mesh = refine_uniform(mesh)
    return mesh


def refine_uniform(mesh: Mesh) -> Mesh:
    """Split every cell into four congruent children.

    Boundary tags are inherited from the parent boundary face containing
    each child face.
    """
    old_v = mesh.vertices
    key_of = {}
    coords = []

    def vertex(p):
        key = (round(p[0], 14), round(p[1], 14))
        if key not in key_of:
            key_of[key] = len(coords)
            coords.append(p)
        return key_of[key]

    cells = []
    for cell in mesh.cells:
        x0, y0 = old_v[cell[0]]
        x1, y1 = old_v[cell[2]]
        xm, ym = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
        xs = (x0, xm, x1)
        ys = (y0, ym, y1)
        for j in range(2):
            for i in range(2):
                cells.append((vertex((xs[i], ys[j])), vertex((xs[i + 1], ys[j])),
                              vertex((xs[i + 1], ys[j + 1])), vertex((xs[i], ys[j + 1]))))
    vertices = np.array(coords, dtype=float)
    cells = np.array(cells, dtype=int)

    # index parent boundary faces by their carrying line for tag lookup
    lines: dict[tuple[int, float], list] = {}
    for f in mesh.faces:
        if not f.is_boundary:
            continue
        p0, p1 = old_v[f.vertices[0]], old_v[f.vertices[1]]
        axis = f.axis  # 0: face on a vertical line x=const
        line = round(f.midpoint[axis], 12)
        lo, hi = sorted((p0[1 - axis], p1[1 - axis]))
        lines.setdefault((axis, line), []).append((lo, hi, f))

    def tagger(midpoint, normal):
        axis = 0 if abs(normal[0]) > 0.5 else 1
        line = round(midpoint[axis], 12)
        s = midpoint[1 - axis]
        for lo, hi, parent in lines.get((axis, line), ()):
            if lo - _GEOM_TOL <= s <= hi + _GEOM_TOL:
                return parent.tag_u, parent.tag_p, parent.is_goal_segment
        raise ValueError(f"no parent boundary face found for child at {midpoint}")

    faces = _build_faces(vertices, cells, tagger)
    return Mesh(vertices, cells, faces, refinement_level=mesh.refinement_level + 1)


def write_mesh_text(mesh: Mesh, path) -> None:
    """Plain-text dump: vertices, cells, and tagged boundary faces."""
    with open(path, "w") as fh:
        for x, y in mesh.vertices:
            fh.write(f"v {x!r} {y!r}\n")
        for cell in mesh.cells:
            fh.write(f"c {cell[0]} {cell[1]} {cell[2]} {cell[3]}\n")
        for f in mesh.faces:
            if f.is_boundary:
                fh.write(f"f {f.vertices[0]} {f.vertices[1]} {f.tag_u} {f.tag_p}\n")
