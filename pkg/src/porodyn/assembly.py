"""Assembly of the spatial operators and load vectors.

The two-field formulation couples a continuous vector Lagrange space for
displacement/velocity with a broken polynomial space for pressure:

* ``A``: linear elasticity with symmetric Nitsche terms on displacement
  Dirichlet faces (consistency, symmetry, penalty),
* ``C``: pressure-displacement coupling with its Dirichlet boundary
  correction,
* ``B``: symmetric interior penalty (SIPG) discretization of the
  pressure diffusion, with weak Dirichlet faces and natural Neumann
  faces,
* weighted mass matrices for both fields,
* the right-hand-side functionals collecting volume sources, tractions,
  and all weak Dirichlet data terms.

Volume integrals use tensor Gauss--Legendre rules with ``r + 1`` points
per direction, faces the 1D rule with ``r + 1`` points; on affine
rectangular cells this integrates every arising polynomial exactly.

The face penalty scale is configurable: ``"extent"`` (default) uses the
mean adjacent cell size normal to the face, ``"area"`` the mean adjacent
cell area, ``"diameter"`` the mean adjacent cell diagonal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .mesh import (Mesh, Face, U_DIRICHLET, U_NEUMANN, U_ROLLER,
                   P_DIRICHLET, P_NEUMANN)
from .quadrature import gauss_legendre
from .spaces import FunctionSpace

PENALTY_SCALES = ("extent", "area", "diameter")


class MissingDataError(ValueError):
    """A tagged boundary portion has no data function attached."""


@dataclass
class MaterialParams:
    """Constant-in-space-and-time material data and penalty parameters.

    When left as None, ``gamma_a`` defaults to 5e4*r*(r+1) for
    displacement degree r and ``gamma_b`` to d*(d+1) for pressure degree
    d.  Together with the default ``extent`` face scale (adjacent cell
    size normal to the face) these defaults reproduce the reference
    computations; both stay configurable.
    """

    rho: float = 1.0
    alpha: float = 0.9
    c0: float = 0.01
    permeability: np.ndarray = field(default_factory=lambda: np.eye(2))
    lam: float = 1.0
    mu: float = 1.0
    gamma_a: float | None = None
    gamma_b: float | None = None

    def __post_init__(self):
        self.permeability = np.asarray(self.permeability, dtype=float)
        if self.rho <= 0 or self.alpha <= 0 or self.c0 <= 0:
            raise ValueError("rho, alpha and c0 must be positive")
        if self.mu <= 0 or self.lam < 0:
            raise ValueError("need mu > 0 and lam >= 0")
        K = self.permeability
        if K.shape != (2, 2) or not np.allclose(K, K.T):
            raise ValueError("permeability must be a symmetric 2x2 tensor")
        if np.any(np.linalg.eigvalsh(K) <= 0):
            raise ValueError("permeability must be positive definite")

    def nitsche_penalty(self, r: int) -> float:
        return self.gamma_a if self.gamma_a is not None else 5.0e4 * r * (r + 1)

    def sipg_penalty(self, pressure_degree: int) -> float:
        d = pressure_degree
        gb = self.gamma_b if self.gamma_b is not None else float(d * (d + 1))
        if gb <= 0:
            raise ValueError(f"SIPG penalty must be positive, got {gb}")
        return gb


def lame_from_E_nu(E: float, nu: float) -> tuple[float, float]:
    """Lame parameters from Young's modulus and Poisson ratio (3D/plane strain)."""
    if E <= 0:
        raise ValueError("Young's modulus must be positive")
    if not 0.0 <= nu < 0.5:
        raise ValueError(f"Poisson ratio must lie in [0, 0.5), got {nu}")
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    mu = E / (2.0 * (1.0 + nu))
    return lam, mu


@dataclass
class ProblemData:
    """Data functions of the evolution problem.

    Every callable is vectorized: it takes points of shape (m, 2) and a
    time and returns (m,) for scalars or (m, 2) for vectors.  A missing
    function for a boundary portion that the mesh actually carries is an
    error; use :meth:`zeros` as a starting point.
    ``traction_breakpoints_x`` lists x-values at which face quadrature
    for the traction is split (kinks of piecewise-defined data).
    """

    f: object = None
    g: object = None
    u_dirichlet: object = None
    v_dirichlet: object = None
    traction: object = None
    p_dirichlet: object = None
    p_neumann: object = None
    traction_breakpoints_x: tuple = ()

    @staticmethod
    def zeros() -> "ProblemData":
        zv = lambda x, t: np.zeros((np.atleast_2d(x).shape[0], 2))
        zs = lambda x, t: np.zeros(np.atleast_2d(x).shape[0])
        return ProblemData(f=zv, g=zs, u_dirichlet=zv, v_dirichlet=zv,
                           traction=zv, p_dirichlet=zs, p_neumann=zs)

    def validate(self, mesh: Mesh) -> None:
        required = [("f", True), ("g", True)]
        tags = {f.tag_u for f in mesh.faces} | {f.tag_p for f in mesh.faces}
        required += [("u_dirichlet", U_DIRICHLET in tags),
                     ("v_dirichlet", U_DIRICHLET in tags),
                     ("traction", U_NEUMANN in tags),
                     ("p_dirichlet", P_DIRICHLET in tags),
                     ("p_neumann", P_NEUMANN in tags)]
        missing = [name for name, needed in required
                   if needed and getattr(self, name) is None]
        if missing:
            raise MissingDataError(
                "missing data functions for tagged boundary portions: "
                + ", ".join(missing))


# ---------------------------------------------------------------------------
# quadrature helpers

def _volume_rule(n: int):
    rule = gauss_legendre(n)
    xi, eta = np.meshgrid(rule.points, rule.points, indexing="xy")
    pts = np.column_stack([xi.ravel(), eta.ravel()])
    wts = np.outer(rule.weights, rule.weights).ravel()
    return pts, wts


def _face_geometry(mesh: Mesh, face: Face, cell: int, s_points: np.ndarray):
    """Physical points on the face and their reference coords in ``cell``.

    ``s_points`` are tangential coordinates in the face's own interval
    (along x for horizontal faces, along y for vertical ones).
    """
    axis = face.axis          # normal direction
    tang = 1 - axis
    phys = np.empty((s_points.size, 2))
    phys[:, axis] = face.midpoint[axis]
    phys[:, tang] = s_points
    origin = mesh.cell_origin[cell]
    size = mesh.cell_size[cell]
    ref = 2.0 * (phys - origin) / size - 1.0
    return phys, np.clip(ref, -1.0, 1.0)


def _face_segments(face: Face, mesh: Mesh, breakpoints=()):
    """Tangential interval(s) of a face, split at interior breakpoints."""
    p0 = mesh.vertices[face.vertices[0]]
    p1 = mesh.vertices[face.vertices[1]]
    tang = 1 - face.axis
    lo, hi = sorted((p0[tang], p1[tang]))
    cuts = sorted(b for b in breakpoints if lo + 1e-14 < b < hi - 1e-14)
    edges = [lo] + cuts + [hi]
    return list(zip(edges[:-1], edges[1:]))


def _face_hscale(face: Face, penalty_scale: str) -> float:
    if penalty_scale == "extent":
        return face.h_perp
    if penalty_scale == "area":
        return face.h_f
    if penalty_scale == "diameter":
        return face.h_len
    raise ValueError(f"penalty_scale must be one of {PENALTY_SCALES}")


def _scatter(rows, cols, data, shape):
    return sp.coo_matrix((np.asarray(data).ravel(),
                          (np.asarray(rows).ravel(), np.asarray(cols).ravel())),
                         shape=shape).tocsr()


def _cell_groups(mesh: Mesh):
    """Cells grouped by identical (dx, dy); one local matrix per group."""
    size = np.round(mesh.cell_size, 12)
    groups: dict[tuple, list[int]] = {}
    for c, (dx, dy) in enumerate(size):
        groups.setdefault((dx, dy), []).append(c)
    return [(np.array(cells), dx, dy) for (dx, dy), cells in groups.items()]


def _tile_local(space_rows, space_cols, cells, local):
    rows = np.repeat(space_rows[cells], local.shape[1], axis=1)
    cols = np.tile(space_cols[cells], (1, local.shape[0]))
    data = np.broadcast_to(local.ravel(), (cells.size, local.size))
    return rows, cols, data


# ---------------------------------------------------------------------------
# strain helpers for the vector Lagrange space

def _vector_tractions(grads_phys, normal, lam, mu):
    """Boundary tractions of all vector basis functions.

    ``grads_phys``: scalar basis gradients (n, q, 2).  Returns an array
    T of shape (2*n, q, 2): T[2*j + b, q, a] is component a of
    sigma(phi_j e_b) n at quadrature point q.
    """
    gx = grads_phys[:, :, 0]
    gy = grads_phys[:, :, 1]
    n1, n2 = normal
    n, q = gx.shape
    T = np.empty((2 * n, q, 2))
    # basis (j, 0): eps = [[gx, gy/2], [gy/2, 0]]
    T[0::2, :, 0] = (2 * mu + lam) * gx * n1 + mu * gy * n2
    T[0::2, :, 1] = mu * gy * n1 + lam * gx * n2
    # basis (j, 1): eps = [[0, gx/2], [gx/2, gy]]
    T[1::2, :, 0] = lam * gy * n1 + mu * gx * n2
    T[1::2, :, 1] = mu * gx * n1 + (2 * mu + lam) * gy * n2
    return T


def _vector_values(vals):
    """Scalar traces (n, q) -> vector basis values (2*n, q, 2)."""
    n, q = vals.shape
    V = np.zeros((2 * n, q, 2))
    V[0::2, :, 0] = vals
    V[1::2, :, 1] = vals
    return V


# ---------------------------------------------------------------------------
# operators

def assemble_mass(space: FunctionSpace, weight: float = 1.0) -> sp.csr_matrix:
    """Weighted L2 mass matrix of a (scalar or vector) space."""
    pts, wts = _volume_rule(max(space.element.degree + 1, 2))
    vals, _ = space.element.tabulate(pts)
    rows, cols, data = [], [], []
    dofs = space.cell_dofs
    for cells, dx, dy in _cell_groups(space.mesh):
        jac = 0.25 * dx * dy
        m_scalar = weight * jac * np.einsum("iq,jq,q->ij", vals, vals, wts)
        if space.ncomp == 2:
            nloc = vals.shape[0]
            m_loc = np.zeros((2 * nloc, 2 * nloc))
            m_loc[0::2, 0::2] = m_scalar
            m_loc[1::2, 1::2] = m_scalar
        else:
            m_loc = m_scalar
        r, c, d = _tile_local(dofs[:, :, None], dofs[:, None, :], cells, m_loc)
        rows.append(r)
        cols.append(c)
        data.append(d)
    return _scatter(np.concatenate([r.ravel() for r in rows]),
                    np.concatenate([c.ravel() for c in cols]),
                    np.concatenate([d.ravel() for d in data]),
                    (space.ndofs, space.ndofs))


def assemble_elasticity(vspace: FunctionSpace, params: MaterialParams,
                        dirichlet_faces=None, penalty_scale: str = "extent",
                        quad_points: int | None = None) -> sp.csr_matrix:
    """Elasticity operator with symmetric Nitsche terms on Dirichlet faces."""
    if vspace.ncomp != 2:
        raise ValueError("elasticity needs the 2-component displacement space")
    r = vspace.element.degree
    nq = quad_points if quad_points is not None else r + 1
    if 2 * nq - 1 < 2 * r:
        raise ValueError(f"{nq} quadrature points cannot integrate degree {2 * r}")
    mesh = vspace.mesh
    if dirichlet_faces is None:
        dirichlet_faces = mesh.boundary_faces(tag_u=U_DIRICHLET)
    lam, mu = params.lam, params.mu
    gamma = params.nitsche_penalty(r)

    pts, wts = _volume_rule(nq)
    vals, grads = vspace.element.tabulate(pts)
    dofs = vspace.cell_dofs
    cvoigt = np.array([[2 * mu + lam, lam, 0.0],
                       [lam, 2 * mu + lam, 0.0],
                       [0.0, 0.0, mu]])
    rows, cols, data = [], [], []
    for cells, dx, dy in _cell_groups(mesh):
        jac = 0.25 * dx * dy
        gx = grads[:, :, 0] * (2.0 / dx)
        gy = grads[:, :, 1] * (2.0 / dy)
        nloc = vals.shape[0]
        B = np.zeros((3, 2 * nloc, pts.shape[0]))
        B[0, 0::2] = gx
        B[1, 1::2] = gy
        B[2, 0::2] = gy
        B[2, 1::2] = gx
        a_loc = jac * np.einsum("vkq,vw,wlq,q->kl", B, cvoigt, B, wts)
        rr, cc, dd = _tile_local(dofs[:, :, None], dofs[:, None, :], cells, a_loc)
        rows.append(rr.ravel())
        cols.append(cc.ravel())
        data.append(dd.ravel())

    rule1d = gauss_legendre(nq)
    for face in dirichlet_faces:
        h = _face_hscale(face, penalty_scale)
        cell = face.owner
        size = mesh.cell_size[cell]
        for a, b in _face_segments(face, mesh):
            s = 0.5 * (a + b) + 0.5 * (b - a) * rule1d.points
            w = 0.5 * (b - a) * rule1d.weights
            _, ref = _face_geometry(mesh, face, cell, s)
            fvals, fgrads = vspace.element.tabulate(ref)
            fgrads = fgrads.copy()
            fgrads[:, :, 0] *= 2.0 / size[0]
            fgrads[:, :, 1] *= 2.0 / size[1]
            T = _vector_tractions(fgrads, face.normal, lam, mu)
            V = _vector_values(fvals)
            m1 = np.einsum("iqa,jqa,q->ij", V, T, w)     # <sigma(w) n, chi>
            mf = np.einsum("iqa,jqa,q->ij", V, V, w)
            a_face = -m1 - m1.T + (gamma / h) * mf
            cd = dofs[cell]
            rows.append(np.repeat(cd, cd.size))
            cols.append(np.tile(cd, cd.size))
            data.append(a_face.ravel())

    A = _scatter(np.concatenate(rows), np.concatenate(cols),
                 np.concatenate(data), (vspace.ndofs, vspace.ndofs))
    # enforce exact symmetry against summation-order roundoff
    return (0.5 * (A + A.T)).tocsr()


def assemble_coupling(vspace: FunctionSpace, pspace: FunctionSpace,
                      params: MaterialParams, dirichlet_faces=None,
                      quad_points: int | None = None) -> sp.csr_matrix:
    """Coupling form: -alpha <div chi, q> + alpha <chi . n, q> on Dirichlet faces.

    Rows are vector DOFs, columns pressure DOFs.
    """
    if vspace.mesh is not pspace.mesh:
        raise ValueError("vector and pressure spaces live on different meshes")
    mesh = vspace.mesh
    if dirichlet_faces is None:
        dirichlet_faces = mesh.boundary_faces(tag_u=U_DIRICHLET)
    alpha = params.alpha
    nq = quad_points if quad_points is not None else vspace.element.degree + 1

    pts, wts = _volume_rule(nq)
    uvals, ugrads = vspace.element.tabulate(pts)
    pvals, _ = pspace.element.tabulate(pts)
    udofs = vspace.cell_dofs
    pdofs = pspace.cell_dofs
    rows, cols, data = [], [], []
    for cells, dx, dy in _cell_groups(mesh):
        jac = 0.25 * dx * dy
        gx = ugrads[:, :, 0] * (2.0 / dx)
        gy = ugrads[:, :, 1] * (2.0 / dy)
        nloc = uvals.shape[0]
        div = np.zeros((2 * nloc, pts.shape[0]))
        div[0::2] = gx
        div[1::2] = gy
        c_loc = -alpha * jac * np.einsum("kq,mq,q->km", div, pvals, wts)
        rr = np.repeat(udofs[cells][:, :, None], c_loc.shape[1], axis=2)
        cc = np.repeat(pdofs[cells][:, None, :], c_loc.shape[0], axis=1)
        rows.append(rr.ravel())
        cols.append(cc.ravel())
        data.append(np.broadcast_to(c_loc.ravel(), (cells.size, c_loc.size)).ravel())

    rule1d = gauss_legendre(nq)
    for face in dirichlet_faces:
        cell = face.owner
        for a, b in _face_segments(face, mesh):
            s = 0.5 * (a + b) + 0.5 * (b - a) * rule1d.points
            w = 0.5 * (b - a) * rule1d.weights
            _, ref = _face_geometry(mesh, face, cell, s)
            fvals, _ = vspace.element.tabulate(ref)
            pv, _ = pspace.element.tabulate(ref)
            V = _vector_values(fvals)
            vn = V[:, :, 0] * face.normal[0] + V[:, :, 1] * face.normal[1]
            c_face = alpha * np.einsum("kq,mq,q->km", vn, pv, w)
            rd, cd = udofs[cell], pdofs[cell]
            rows.append(np.repeat(rd, cd.size))
            cols.append(np.tile(cd, rd.size))
            data.append(c_face.ravel())

    return _scatter(np.concatenate(rows), np.concatenate(cols),
                    np.concatenate(data), (vspace.ndofs, pspace.ndofs))


def assemble_pressure_sipg(pspace: FunctionSpace, params: MaterialParams,
                           dirichlet_faces=None, penalty_scale: str = "extent",
                           quad_points: int | None = None) -> sp.csr_matrix:
    """SIPG diffusion operator on the broken pressure space.

    Face terms act on interior faces and the given Dirichlet faces;
    Neumann faces contribute nothing (natural condition).
    """
    mesh = pspace.mesh
    if dirichlet_faces is None:
        dirichlet_faces = mesh.boundary_faces(tag_p=P_DIRICHLET)
    d = pspace.element.degree
    gamma = params.sipg_penalty(d)
    K = params.permeability
    nq = quad_points if quad_points is not None else d + 2

    pts, wts = _volume_rule(nq)
    vals, grads = pspace.element.tabulate(pts)
    dofs = pspace.cell_dofs
    rows, cols, data = [], [], []
    for cells, dx, dy in _cell_groups(mesh):
        jac = 0.25 * dx * dy
        g = np.empty_like(grads)
        g[:, :, 0] = grads[:, :, 0] * (2.0 / dx)
        g[:, :, 1] = grads[:, :, 1] * (2.0 / dy)
        kg = np.einsum("ab,jqb->jqa", K, g)
        b_loc = jac * np.einsum("iqa,jqa,q->ij", g, kg, wts)
        rr, cc, dd = _tile_local(dofs[:, :, None], dofs[:, None, :], cells, b_loc)
        rows.append(rr.ravel())
        cols.append(cc.ravel())
        data.append(dd.ravel())

    rule1d = gauss_legendre(nq)

    def traces(face, cell, s):
        size = mesh.cell_size[cell]
        _, ref = _face_geometry(mesh, face, cell, s)
        v, g = pspace.element.tabulate(ref)
        g = g.copy()
        g[:, :, 0] *= 2.0 / size[0]
        g[:, :, 1] *= 2.0 / size[1]
        flux = np.einsum("a,ab,jqb->jq", face.normal, K, g)
        return v, flux

    for face in mesh.interior_faces():
        h = _face_hscale(face, penalty_scale)
        for a, b in _face_segments(face, mesh):
            s = 0.5 * (a + b) + 0.5 * (b - a) * rule1d.points
            w = 0.5 * (b - a) * rule1d.weights
            sides = {+1: traces(face, face.owner, s),
                     -1: traces(face, face.neighbor, s)}
            dmap = {+1: dofs[face.owner], -1: dofs[face.neighbor]}
            for s_t, (v_t, _) in sides.items():       # test
                for s_r, (v_r, f_r) in sides.items():  # trial
                    _, f_t = sides[s_t]
                    blk = np.einsum("iq,jq,q->ij",
                                    -0.5 * s_t * v_t, f_r, w) \
                        + np.einsum("iq,jq,q->ij", f_t, -0.5 * s_r * v_r, w) \
                        + (gamma / h) * np.einsum("iq,jq,q->ij",
                                                  s_t * v_t, s_r * v_r, w)
                    rows.append(np.repeat(dmap[s_t], dmap[s_r].size))
                    cols.append(np.tile(dmap[s_r], dmap[s_t].size))
                    data.append(blk.ravel())

    for face in dirichlet_faces:
        h = _face_hscale(face, penalty_scale)
        cell = face.owner
        for a, b in _face_segments(face, mesh):
            s = 0.5 * (a + b) + 0.5 * (b - a) * rule1d.points
            w = 0.5 * (b - a) * rule1d.weights
            v, flux = traces(face, cell, s)
            blk = -np.einsum("iq,jq,q->ij", v, flux, w) \
                - np.einsum("iq,jq,q->ij", flux, v, w) \
                + (gamma / h) * np.einsum("iq,jq,q->ij", v, v, w)
            cd = dofs[cell]
            rows.append(np.repeat(cd, cd.size))
            cols.append(np.tile(cd, cd.size))
            data.append(blk.ravel())

    B = _scatter(np.concatenate(rows), np.concatenate(cols),
                 np.concatenate(data), (pspace.ndofs, pspace.ndofs))
    return (0.5 * (B + B.T)).tocsr()


# ---------------------------------------------------------------------------
# load functionals

class LoadAssembler:
    """Assembles the two load vectors at arbitrary times.

    Geometry, basis tables, and face bookkeeping are prepared once so a
    time-stepping loop only evaluates the data functions.
    """

    def __init__(self, vspace: FunctionSpace, pspace: FunctionSpace,
                 params: MaterialParams, data: ProblemData,
                 penalty_scale: str = "extent",
                 quad_points: int | None = None):
        data.validate(vspace.mesh)
        self.vspace = vspace
        self.pspace = pspace
        self.params = params
        self.data = data
        mesh = vspace.mesh
        r = vspace.element.degree
        nq = quad_points if quad_points is not None else r + 1
        self.gamma_a = params.nitsche_penalty(r)
        self.gamma_b = params.sipg_penalty(pspace.element.degree)

        pts, wts = _volume_rule(nq)
        self._uvals, _ = vspace.element.tabulate(pts)
        self._pvals, _ = pspace.element.tabulate(pts)
        origin = mesh.cell_origin
        size = mesh.cell_size
        self._cell_pts = origin[:, None, :] + 0.5 * (pts[None, :, :] + 1.0) * size[:, None, :]
        self._cell_wts = 0.25 * size[:, 0] * size[:, 1]
        self._wts = wts

        rule1d = gauss_legendre(nq)
        self._neumann_u = self._face_batches(
            mesh.boundary_faces(tag_u=U_NEUMANN), rule1d,
            breakpoints=data.traction_breakpoints_x)
        self._dirichlet_u = self._face_batches(
            mesh.boundary_faces(tag_u=U_DIRICHLET), rule1d)
        self._dirichlet_p = self._face_batches(
            mesh.boundary_faces(tag_p=P_DIRICHLET), rule1d)
        self._neumann_p = self._face_batches(
            mesh.boundary_faces(tag_p=P_NEUMANN), rule1d)
        self._penalty_scale = penalty_scale

    def _face_batches(self, faces, rule1d, breakpoints=()):
        """Precompute quadrature and basis traces for a list of faces."""
        mesh = self.vspace.mesh
        batches = []
        for face in faces:
            cell = face.owner
            size = mesh.cell_size[cell]
            for a, b in _face_segments(face, mesh, breakpoints):
                s = 0.5 * (a + b) + 0.5 * (b - a) * rule1d.points
                w = 0.5 * (b - a) * rule1d.weights
                phys, ref = _face_geometry(mesh, face, cell, s)
                uv, ug = self.vspace.element.tabulate(ref)
                ug = ug.copy()
                ug[:, :, 0] *= 2.0 / size[0]
                ug[:, :, 1] *= 2.0 / size[1]
                pv, pg = self.pspace.element.tabulate(ref)
                pg = pg.copy()
                pg[:, :, 0] *= 2.0 / size[0]
                pg[:, :, 1] *= 2.0 / size[1]
                pflux = np.einsum("a,ab,jqb->jq", face.normal,
                                  self.params.permeability, pg)
                batches.append({"face": face, "phys": phys, "w": w,
                                "uvals": uv, "ugrads": ug,
                                "pvals": pv, "pflux": pflux})
        return batches

    def __call__(self, t: float):
        vspace, pspace = self.vspace, self.pspace
        params, data = self.params, self.data
        F = np.zeros(vspace.ndofs)
        G = np.zeros(pspace.ndofs)

        # volume sources
        nc, nqp, _ = self._cell_pts.shape
        flat = self._cell_pts.reshape(-1, 2)
        fv = np.asarray(data.f(flat, t), dtype=float).reshape(nc, nqp, 2)
        gv = np.asarray(data.g(flat, t), dtype=float).reshape(nc, nqp)
        wq = self._wts[None, :] * self._cell_wts[:, None]
        fx = np.einsum("cq,iq->ci", fv[:, :, 0] * wq, self._uvals)
        fy = np.einsum("cq,iq->ci", fv[:, :, 1] * wq, self._uvals)
        udofs = vspace.cell_dofs
        np.add.at(F, udofs[:, 0::2], fx)
        np.add.at(F, udofs[:, 1::2], fy)
        gq = np.einsum("cq,iq->ci", gv * wq, self._pvals)
        np.add.at(G, pspace.cell_dofs, gq)

        # traction on displacement Neumann faces
        for batch in self._neumann_u:
            tN = np.asarray(data.traction(batch["phys"], t), dtype=float)
            V = _vector_values(batch["uvals"])
            contrib = -np.einsum("kqa,qa,q->k", V, tN, batch["w"])
            np.add.at(F, udofs[batch["face"].owner], contrib)

        # Nitsche data terms on displacement Dirichlet faces
        for batch in self._dirichlet_u:
            face = batch["face"]
            h = _face_hscale(face, self._penalty_scale)
            uD = np.asarray(data.u_dirichlet(batch["phys"], t), dtype=float)
            T = _vector_tractions(batch["ugrads"], face.normal,
                                  params.lam, params.mu)
            V = _vector_values(batch["uvals"])
            contrib = -np.einsum("kqa,qa,q->k", T, uD, batch["w"]) \
                + (self.gamma_a / h) * np.einsum("kqa,qa,q->k", V, uD, batch["w"])
            np.add.at(F, udofs[face.owner], contrib)
            # consistency of the coupling form: moving boundary data
            vD = np.asarray(data.v_dirichlet(batch["phys"], t), dtype=float)
            vDn = vD @ face.normal
            gcontrib = -params.alpha * np.einsum("q,iq,q->i", vDn,
                                                 batch["pvals"], batch["w"])
            np.add.at(G, pspace.cell_dofs[face.owner], gcontrib)

        # weak pressure Dirichlet data
        for batch in self._dirichlet_p:
            face = batch["face"]
            h = _face_hscale(face, self._penalty_scale)
            pD = np.asarray(data.p_dirichlet(batch["phys"], t), dtype=float)
            contrib = -np.einsum("q,iq,q->i", pD, batch["pflux"], batch["w"]) \
                + (self.gamma_b / h) * np.einsum("q,iq,q->i", pD,
                                                 batch["pvals"], batch["w"])
            np.add.at(G, pspace.cell_dofs[face.owner], contrib)

        # natural pressure flux data
        for batch in self._neumann_p:
            face = batch["face"]
            pN = np.asarray(data.p_neumann(batch["phys"], t), dtype=float)
            contrib = -np.einsum("q,iq,q->i", pN, batch["pvals"], batch["w"])
            np.add.at(G, pspace.cell_dofs[face.owner], contrib)

        return F, G


def assemble_loads(vspace: FunctionSpace, pspace: FunctionSpace,
                   params: MaterialParams, data: ProblemData, t: float,
                   penalty_scale: str = "extent"):
    """One-shot load assembly; use :class:`LoadAssembler` inside loops."""
    return LoadAssembler(vspace, pspace, params, data, penalty_scale)(t)


# ---------------------------------------------------------------------------
# bundled system

@dataclass(frozen=True)
class SystemMatrices:
    """All spatial operators of the coupled system (CSR blocks).

    ``mass_u``/``mass_p`` carry the rho and c0 weights; the plain
    (unweighted) vector mass is kept as well because the kinematic
    identity couples displacement and velocity without any weight.
    """

    mass_u: sp.csr_matrix
    mass_p: sp.csr_matrix
    mass_u_plain: sp.csr_matrix
    mass_p_plain: sp.csr_matrix
    elasticity: sp.csr_matrix
    coupling: sp.csr_matrix
    pressure: sp.csr_matrix
    params: MaterialParams


def build_system(vspace: FunctionSpace, pspace: FunctionSpace,
                 params: MaterialParams, penalty_scale: str = "extent",
                 neumann_pressure_coupling: bool = False) -> SystemMatrices:
    """Assemble every operator of the coupled problem.

    ``neumann_pressure_coupling`` optionally extends the coupling-form
    boundary term to displacement Neumann faces (off by default; the
    printed formulation is consistent without it).
    """
    mesh = vspace.mesh
    cfaces = mesh.boundary_faces(tag_u=U_DIRICHLET)
    if neumann_pressure_coupling:
        cfaces = cfaces + mesh.boundary_faces(tag_u=U_NEUMANN)
    m_plain = assemble_mass(vspace, 1.0)
    mp_plain = assemble_mass(pspace, 1.0)
    return SystemMatrices(
        mass_u=(params.rho * m_plain).tocsr(),
        mass_p=(params.c0 * mp_plain).tocsr(),
        mass_u_plain=m_plain,
        mass_p_plain=mp_plain,
        elasticity=assemble_elasticity(vspace, params,
                                       penalty_scale=penalty_scale),
        coupling=assemble_coupling(vspace, pspace, params, cfaces),
        pressure=assemble_pressure_sipg(pspace, params,
                                        penalty_scale=penalty_scale),
        params=params)


def write_matrix_coo(matrix, path) -> None:
    """Debug dump: one ``row col value`` line per stored entry."""
    coo = sp.coo_matrix(matrix)
    with open(path, "w") as fh:
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r} {c} {v!r}\n")
