"""Reference elements and global DOF management.

Two element families are used:

* ``LagrangeQ``: continuous tensor-product Lagrange polynomials of degree
  r on the reference square, with a Gauss--Lobatto node layout.  Global
  continuity comes from sharing vertex and edge nodes between cells.
* ``BrokenP``: discontinuous total-degree polynomials spanned by
  L2-orthonormal Legendre products on the reference square; no DOF is
  shared between cells.

Scalar basis tables are the common currency: vector-valued spaces reuse
the scalar tables with interleaved (node-major, component-fastest) DOF
numbering.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import Mesh, U_ROLLER
from .quadrature import gauss_legendre, gauss_lobatto


def legendre_table(max_degree: int, x: np.ndarray):
    """Values and derivatives of P_0..P_max at the points ``x``.

    Returns two arrays of shape (max_degree + 1, len(x)).
    """
    x = np.asarray(x, dtype=float)
    vals = np.zeros((max_degree + 1, x.size))
    ders = np.zeros_like(vals)
    vals[0] = 1.0
    if max_degree >= 1:
        vals[1] = x
        ders[1] = 1.0
    for m in range(2, max_degree + 1):
        vals[m] = ((2 * m - 1) * x * vals[m - 1] - (m - 1) * vals[m - 2]) / m
        ders[m] = ders[m - 2] + (2 * m - 1) * vals[m - 1]
    return vals, ders


class Lagrange1D:
    """1D Lagrange basis on Gauss--Lobatto nodes, degree r.

    Each basis polynomial is stored by its Legendre coefficients, which
    keeps evaluation and differentiation stable for the moderate degrees
    used here.
    """

    def __init__(self, degree: int):
        self.degree = degree
        self.nodes = gauss_lobatto(degree + 1).points
        vander, _ = legendre_table(degree, self.nodes)
        # column j holds the Legendre coefficients of basis function j
        self.coeffs = np.linalg.solve(vander.T, np.eye(degree + 1))

    def tabulate(self, x: np.ndarray):
        """Values and derivatives of all basis functions at ``x``.

        Returns arrays of shape (r + 1, len(x)).
        """
        vals, ders = legendre_table(self.degree, x)
        return self.coeffs.T @ vals, self.coeffs.T @ ders


@dataclass(frozen=True)
class ReferenceElement:
    """Scalar basis on the reference square [-1, 1]^2."""

    family: str           # "TensorLagrangeQ" or "BrokenP"
    degree: int
    ndofs_local: int

    def tabulate(self, points: np.ndarray):
        """Values (n_loc, m) and reference gradients (n_loc, m, 2)."""
        raise NotImplementedError


class LagrangeQ(ReferenceElement):
    def __init__(self, degree: int):
        object.__setattr__(self, "family", "TensorLagrangeQ")
        object.__setattr__(self, "degree", degree)
        object.__setattr__(self, "ndofs_local", (degree + 1) ** 2)
        object.__setattr__(self, "_basis1d", Lagrange1D(degree))
        nodes = self._basis1d.nodes
        xi, eta = np.meshgrid(nodes, nodes, indexing="xy")
        object.__setattr__(self, "node_coords",
                           np.column_stack([xi.ravel(), eta.ravel()]))

    def tabulate(self, points: np.ndarray):
        points = _check_ref_points(points)
        vx, dx = self._basis1d.tabulate(points[:, 0])
        vy, dy = self._basis1d.tabulate(points[:, 1])
        r1 = self.degree + 1
        m = points.shape[0]
        vals = np.empty((r1 * r1, m))
        grads = np.empty((r1 * r1, m, 2))
        for j in range(r1):
            for i in range(r1):
                n = j * r1 + i
                vals[n] = vx[i] * vy[j]
                grads[n, :, 0] = dx[i] * vy[j]
                grads[n, :, 1] = vx[i] * dy[j]
        return vals, grads


class BrokenP(ReferenceElement):
    def __init__(self, degree: int):
        object.__setattr__(self, "family", "BrokenP")
        object.__setattr__(self, "degree", degree)
        modes = [(i, j) for total in range(degree + 1)
                 for i, j in [(total - jj, jj) for jj in range(total + 1)]]
        object.__setattr__(self, "modes", tuple(modes))
        object.__setattr__(self, "ndofs_local", len(modes))
        # orthonormal scaling on [-1, 1]
        object.__setattr__(self, "_scale",
                           np.sqrt((2 * np.arange(degree + 1) + 1) / 2.0))

    def tabulate(self, points: np.ndarray):
        points = _check_ref_points(points)
        vx, dx = legendre_table(self.degree, points[:, 0])
        vy, dy = legendre_table(self.degree, points[:, 1])
        s = self._scale
        m = points.shape[0]
        vals = np.empty((self.ndofs_local, m))
        grads = np.empty((self.ndofs_local, m, 2))
        for n, (i, j) in enumerate(self.modes):
            sij = s[i] * s[j]
            vals[n] = sij * vx[i] * vy[j]
            grads[n, :, 0] = sij * dx[i] * vy[j]
            grads[n, :, 1] = sij * vx[i] * dy[j]
        return vals, grads


def _check_ref_points(points):
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] != 2:
        raise ValueError("reference points must have shape (m, 2)")
    if np.any(np.abs(points) > 1.0 + 1e-12):
        raise ValueError("reference points outside [-1, 1]^2")
    return points


@dataclass(frozen=True)
class FunctionSpace:
    """Global finite element space over a mesh.

    ``cell_nodes`` maps each cell to its scalar node/mode indices.  For
    vector spaces the global DOF of (node n, component c) is
    ``ncomp * n + c``; ``cell_dofs`` carries that expansion.
    """

    mesh: Mesh
    element: ReferenceElement
    ncomp: int
    cell_nodes: np.ndarray       # (nc, n_loc) scalar node indices
    num_nodes: int
    node_coords: np.ndarray | None = None   # Q spaces only

    @property
    def ndofs(self) -> int:
        return self.ncomp * self.num_nodes

    @property
    def cell_dofs(self) -> np.ndarray:
        if self.ncomp == 1:
            return self.cell_nodes
        nodes = self.cell_nodes
        dofs = np.empty((nodes.shape[0], nodes.shape[1] * self.ncomp), dtype=int)
        for c in range(self.ncomp):
            dofs[:, c::self.ncomp] = self.ncomp * nodes + c
        return dofs

    @property
    def is_continuous(self) -> bool:
        return self.element.family == "TensorLagrangeQ"


@dataclass
class FEFunction:
    """Coefficient vector attached to a space."""

    space: FunctionSpace
    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.shape != (self.space.ndofs,):
            raise ValueError("coefficient vector length does not match the space")

    def eval_cell(self, cell: int, ref_points: np.ndarray) -> np.ndarray:
        """Values at reference points of one cell: (m,) or (m, ncomp)."""
        vals, _ = self.space.element.tabulate(ref_points)
        dofs = self.space.cell_dofs[cell]
        if self.space.ncomp == 1:
            return self.coefficients[dofs] @ vals
        out = np.empty((vals.shape[1], self.space.ncomp))
        for c in range(self.space.ncomp):
            out[:, c] = self.coefficients[dofs[c::self.space.ncomp]] @ vals
        return out

    def eval(self, points: np.ndarray) -> np.ndarray:
        """Point evaluation with a linear cell search (test utility)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        origin = self.space.mesh.cell_origin
        size = self.space.mesh.cell_size
        shape = (points.shape[0],) if self.space.ncomp == 1 \
            else (points.shape[0], self.space.ncomp)
        out = np.empty(shape)
        for k, p in enumerate(points):
            inside = np.all((p >= origin - 1e-12) & (p <= origin + size + 1e-12),
                            axis=1)
            cells = np.nonzero(inside)[0]
            if cells.size == 0:
                raise ValueError(f"point {p} outside the mesh")
            c = cells[0]
            ref = 2.0 * (p - origin[c]) / size[c] - 1.0
            out[k] = self.eval_cell(int(c), ref[None, :])[0]
        return out


def build_q_space(mesh: Mesh, r: int, components: int = 1) -> FunctionSpace:
    """Globally continuous Q_r space (scalar or 2-vector)."""
    if r < 2:
        raise ValueError(f"tensor Lagrange degree must be at least 2, got {r}")
    if components not in (1, 2):
        raise ValueError("components must be 1 or 2")
    element = LagrangeQ(r)
    nv = mesh.num_vertices
    nc = mesh.num_cells

    edge_ids: dict[tuple[int, int], int] = {}
    for cell in mesh.cells:
        for a, b in ((0, 1), (1, 2), (2, 3), (3, 0)):
            key = (min(cell[a], cell[b]), max(cell[a], cell[b]))
            if key not in edge_ids:
                edge_ids[key] = len(edge_ids)
    ne = len(edge_ids)
    n_int = (r - 1) ** 2
    num_nodes = nv + ne * (r - 1) + nc * n_int

    def edge_slot(base_edge, lower_first, s):
        """Node id on an edge; ``s`` counts 1..r-1 from the cell's traversal."""
        slot = (s - 1) if lower_first else (r - 1 - s)
        return nv + base_edge * (r - 1) + slot

    cell_nodes = np.empty((nc, (r + 1) ** 2), dtype=int)
    for c, cell in enumerate(mesh.cells):
        edges = {}
        for name, (a, b) in (("bottom", (0, 1)), ("right", (1, 2)),
                             ("top", (3, 2)), ("left", (0, 3))):
            key = (min(cell[a], cell[b]), max(cell[a], cell[b]))
            edges[name] = (edge_ids[key], cell[a] < cell[b])
        for j in range(r + 1):
            for i in range(r + 1):
                n = j * (r + 1) + i
                if j == 0 and i == 0:
                    g = cell[0]
                elif j == 0 and i == r:
                    g = cell[1]
                elif j == r and i == r:
                    g = cell[2]
                elif j == r and i == 0:
                    g = cell[3]
                elif j == 0:
                    g = edge_slot(*edges["bottom"], i)
                elif j == r:
                    g = edge_slot(*edges["top"], i)
                elif i == 0:
                    g = edge_slot(*edges["left"], j)
                elif i == r:
                    g = edge_slot(*edges["right"], j)
                else:
                    g = nv + ne * (r - 1) + c * n_int + (j - 1) * (r - 1) + (i - 1)
                cell_nodes[c, n] = g

    node_coords = np.empty((num_nodes, 2))
    origin = mesh.cell_origin
    size = mesh.cell_size
    ref = element.node_coords
    for c in range(nc):
        phys = origin[c] + 0.5 * (ref + 1.0) * size[c]
        node_coords[cell_nodes[c]] = phys

    return FunctionSpace(mesh, element, components, cell_nodes, num_nodes,
                         node_coords)


def build_p_disc_space(mesh: Mesh, degree: int) -> FunctionSpace:
    """Cellwise total-degree polynomial space without continuity."""
    if degree < 1:
        raise ValueError(f"broken polynomial degree must be at least 1, got {degree}")
    element = BrokenP(degree)
    nloc = element.ndofs_local
    nc = mesh.num_cells
    cell_nodes = (np.arange(nc)[:, None] * nloc + np.arange(nloc)[None, :])
    return FunctionSpace(mesh, element, 1, cell_nodes, nc * nloc, None)


def eval_basis(space: FunctionSpace, cell: int, ref_points: np.ndarray):
    """Scalar basis values and physical gradients on one cell.

    Returns (values (n_loc, m), grads (n_loc, m, 2)); the gradient is in
    physical coordinates via the affine cell map.
    """
    vals, grads = space.element.tabulate(ref_points)
    size = space.mesh.cell_size[cell]
    phys = grads.copy()
    phys[:, :, 0] *= 2.0 / size[0]
    phys[:, :, 1] *= 2.0 / size[1]
    return vals, phys


def interpolate(space: FunctionSpace, f) -> FEFunction:
    """Nodal interpolation (Q spaces) or cellwise L2 projection (broken P).

    ``f`` maps an (m, 2) array of points to (m,) scalar values or
    (m, ncomp) vectors.
    """
    if space.is_continuous:
        vals = np.asarray(f(space.node_coords), dtype=float)
        if space.ncomp == 1:
            coefs = vals
        else:
            if vals.shape != (space.num_nodes, space.ncomp):
                raise ValueError("field returned wrong shape for vector interpolation")
            coefs = vals.reshape(-1)
        return FEFunction(space, coefs)

    rule = gauss_legendre(space.element.degree + 2)
    xi, eta = np.meshgrid(rule.points, rule.points, indexing="xy")
    pts = np.column_stack([xi.ravel(), eta.ravel()])
    w2 = np.outer(rule.weights, rule.weights).ravel()
    vals, _ = space.element.tabulate(pts)
    origin = space.mesh.cell_origin
    size = space.mesh.cell_size
    coefs = np.empty(space.ndofs)
    for c in range(space.mesh.num_cells):
        phys = origin[c] + 0.5 * (pts + 1.0) * size[c]
        fq = np.asarray(f(phys), dtype=float)
        # basis is orthonormal w.r.t. the reference measure
        coefs[space.cell_nodes[c]] = vals @ (w2 * fq)
    return FEFunction(space, coefs)


def mark_directional_constraints(space: FunctionSpace,
                                 tag: str = U_ROLLER) -> dict[int, float]:
    """Zero normal-displacement constraints on axis-aligned roller faces.

    For faces with normal along x the x-component DOFs on the face are
    fixed to zero, and likewise for y.  The tangential condition is
    natural and needs no constraint.
    """
    if space.ncomp != 2:
        raise ValueError("directional constraints apply to vector spaces")
    constraints: dict[int, float] = {}
    coords = space.node_coords
    for face in space.mesh.boundary_faces(tag_u=tag):
        n = face.normal
        if not (abs(abs(n[0]) - 1.0) < 1e-12 or abs(abs(n[1]) - 1.0) < 1e-12):
            raise ValueError(f"roller face at {face.midpoint} is not axis-aligned")
        comp = 0 if abs(n[0]) > 0.5 else 1
        axis = comp
        p0 = space.mesh.vertices[face.vertices[0]]
        p1 = space.mesh.vertices[face.vertices[1]]
        lo, hi = sorted((p0[1 - axis], p1[1 - axis]))
        line = p0[axis]
        on_face = (np.abs(coords[:, axis] - line) < 1e-10) \
            & (coords[:, 1 - axis] >= lo - 1e-10) \
            & (coords[:, 1 - axis] <= hi + 1e-10)
        for node in np.nonzero(on_face)[0]:
            constraints[2 * int(node) + comp] = 0.0
    return constraints
