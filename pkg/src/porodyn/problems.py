"""The two executable studies: convergence test and loaded-wall benchmark.

The convergence study prescribes a smooth space-time solution on the
unit square, derives the matching volume sources in closed form, and
measures L2(L2) errors of the displacement gradient, the velocity, and
the pressure under simultaneous space-time refinement.

The benchmark drives the L-shaped domain with a pulsating surface
traction on part of the top boundary and extracts two goal quantities on
the notch wall: the integrated normal displacement and the integrated
pressure.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .assembly import (LoadAssembler, MaterialParams, ProblemData,
                       build_system, lame_from_E_nu)
from .mesh import LShapeGeometry, Mesh, l_shaped_mesh, unit_square_mesh
from .quadrature import gauss_legendre
from .spaces import (FEFunction, FunctionSpace, build_p_disc_space,
                     build_q_space, interpolate, mark_directional_constraints)
from .timeslab import (SchemeConfig, SlabState, Trajectory, _Lagrange1D,
                       advance)


# ---------------------------------------------------------------------------
# manufactured solution on the unit square

@dataclass(frozen=True)
class ManufacturedCase:
    """Prescribed-solution study with its physical parameter defaults."""

    omega1: float = np.pi
    omega2: float = np.pi
    rho: float = 1.0
    alpha: float = 0.9
    c0: float = 0.01
    E: float = 100.0
    nu: float = 0.35
    t_final: float = 2.0
    tau0: float = 0.1
    n0: int = 4               # cells per side at level 0

    def params(self) -> MaterialParams:
        lam, mu = lame_from_E_nu(self.E, self.nu)
        return MaterialParams(rho=self.rho, alpha=self.alpha, c0=self.c0,
                              permeability=np.eye(2), lam=lam, mu=mu)

    def mesh(self, level: int) -> Mesh:
        return unit_square_mesh(self.n0 * 2 ** level)

    def _parts(self, x, t):
        x = np.atleast_2d(x)
        w1, w2 = self.omega1, self.omega2
        T = np.sin(w1 * t * t)
        dT = 2.0 * w1 * t * np.cos(w1 * t * t)
        s1, c1 = np.sin(w2 * x[:, 0]), np.cos(w2 * x[:, 0])
        s2, c2 = np.sin(w2 * x[:, 1]), np.cos(w2 * x[:, 1])
        return T, dT, s1, c1, s2, c2

    def exact_u(self, x, t):
        T, _, s1, _, s2, _ = self._parts(x, t)
        phi = T * s1 * s2
        return np.column_stack([phi, phi])

    def exact_v(self, x, t):
        _, dT, s1, _, s2, _ = self._parts(x, t)
        dphi = dT * s1 * s2
        return np.column_stack([dphi, dphi])

    def exact_p(self, x, t):
        T, _, s1, _, s2, _ = self._parts(x, t)
        return T * s1 * s2

    def exact_grad_u(self, x, t):
        T, _, s1, c1, s2, c2 = self._parts(x, t)
        w2 = self.omega2
        g = np.empty((np.atleast_2d(x).shape[0], 2, 2))
        g[:, 0, 0] = g[:, 1, 0] = w2 * T * c1 * s2
        g[:, 0, 1] = g[:, 1, 1] = w2 * T * s1 * c2
        return g

    def sources(self, x, t):
        """Closed-form volume sources matching the prescribed solution."""
        T, dT, s1, c1, s2, c2 = self._parts(x, t)
        w1, w2 = self.omega1, self.omega2
        params = self.params()
        lam, mu = params.lam, params.mu
        phi = T * s1 * s2
        ddT = 2.0 * w1 * np.cos(w1 * t * t) - 4.0 * w1 * w1 * t * t * np.sin(w1 * t * t)
        # div(C eps(u)) for u = (phi, phi)
        div_sig = -(3.0 * mu + lam) * w2 * w2 * phi \
            + (lam + mu) * w2 * w2 * T * c1 * c2
        f1 = ddT * s1 * s2 + (-div_sig + self.alpha * w2 * T * c1 * s2) / self.rho
        f2 = ddT * s1 * s2 + (-div_sig + self.alpha * w2 * T * s1 * c2) / self.rho
        K = params.permeability
        lap_p = -(K[0, 0] + K[1, 1]) * w2 * w2 * phi \
            + (K[0, 1] + K[1, 0]) * w2 * w2 * T * c1 * c2
        g = self.c0 * dT * s1 * s2 \
            + self.alpha * w2 * dT * (c1 * s2 + s1 * c2) - lap_p
        return np.column_stack([f1, f2]), g

    def data(self) -> ProblemData:
        """Data functions; the momentum source carries the density weight."""
        rho = self.rho

        def f(x, t):
            return rho * self.sources(x, t)[0]

        def g(x, t):
            return self.sources(x, t)[1]

        return ProblemData(
            f=f, g=g,
            u_dirichlet=self.exact_u, v_dirichlet=self.exact_v,
            traction=lambda x, t: np.zeros((np.atleast_2d(x).shape[0], 2)),
            p_dirichlet=self.exact_p,
            p_neumann=lambda x, t: np.zeros(np.atleast_2d(x).shape[0]))

    def initial_state(self, vspace, pspace) -> SlabState:
        u0 = interpolate(vspace, lambda x: self.exact_u(x, 0.0)).coefficients
        v0 = interpolate(vspace, lambda x: self.exact_v(x, 0.0)).coefficients
        p0 = interpolate(pspace, lambda x: self.exact_p(x, 0.0)).coefficients
        return SlabState(u0, v0, p0)


# ---------------------------------------------------------------------------
# space-time error norms

def l2l2_error(trajectory: Trajectory, space: FunctionSpace, fld: str,
               exact, kind: str = "l2", time_points: int | None = None,
               space_points: int | None = None) -> float:
    """L2-in-time, L2-in-space error of one trajectory field.

    ``exact(x, t)`` returns values matching the field: (m,) scalars,
    (m, 2) vectors, or (m, 2, 2) gradients for ``kind="grad"``.
    """
    cfg = trajectory.config
    ntime = time_points if time_points is not None else cfg.k + 3
    trule = gauss_legendre(max(ntime, 2))
    deg = space.element.degree
    nsp = space_points if space_points is not None else deg + 2
    srule = gauss_legendre(nsp)
    xi, eta = np.meshgrid(srule.points, srule.points, indexing="xy")
    pts = np.column_stack([xi.ravel(), eta.ravel()])
    wts = np.outer(srule.weights, srule.weights).ravel()

    mesh = space.mesh
    vals, grads = space.element.tabulate(pts)
    origin = mesh.cell_origin
    size = mesh.cell_size
    phys = origin[:, None, :] + 0.5 * (pts[None, :, :] + 1.0) * size[:, None, :]
    flat = phys.reshape(-1, 2)
    cell_w = 0.25 * size[:, 0] * size[:, 1]
    dofs = space.cell_dofs

    if kind not in ("l2", "grad"):
        raise ValueError("kind must be 'l2' or 'grad'")
    if kind == "grad":
        gphys = np.empty((mesh.num_cells,) + grads.shape)
        gphys[:] = grads[None]
        gphys[:, :, :, 0] *= (2.0 / size[:, 0])[:, None, None]
        gphys[:, :, :, 1] *= (2.0 / size[:, 1])[:, None, None]

    total = 0.0
    arrname = {"u": "U", "v": "V", "p": "P"}[fld]
    for slab in trajectory.slabs:
        half = 0.5 * (slab.t_end - slab.t_start)
        times = slab.t_start + half * (trule.points + 1.0)
        tw = half * trule.weights
        ebasis = _Lagrange1D(slab.nodes_ref).eval(trule.points)  # (k+1, nt)
        modes = getattr(slab, arrname)
        coefs_t = ebasis.T @ modes                                # (nt, ndofs)
        for ti, t in enumerate(times):
            coefs = coefs_t[ti]
            ex = np.asarray(exact(flat, t))
            if kind == "grad":
                # vector field gradient, Frobenius norm
                cc = coefs[dofs]
                gx = np.einsum("cl,clqd->cqd", cc[:, 0::2], gphys)
                gy = np.einsum("cl,clqd->cqd", cc[:, 1::2], gphys)
                gh = np.stack([gx, gy], axis=2)        # (nc, q, 2, 2)
                diff = gh - ex.reshape(mesh.num_cells, -1, 2, 2)
                sq = np.einsum("cqab,cqab->cq", diff, diff)
            elif space.ncomp == 2:
                cc = coefs[dofs]
                fx = np.einsum("cl,lq->cq", cc[:, 0::2], vals)
                fy = np.einsum("cl,lq->cq", cc[:, 1::2], vals)
                exv = ex.reshape(mesh.num_cells, -1, 2)
                sq = (fx - exv[:, :, 0]) ** 2 + (fy - exv[:, :, 1]) ** 2
            else:
                fh = np.einsum("cl,lq->cq", coefs[dofs], vals)
                sq = (fh - ex.reshape(mesh.num_cells, -1)) ** 2
            total += tw[ti] * float(np.dot(cell_w, sq @ wts))
    return float(np.sqrt(total))


def eoc(errors) -> list:
    """Orders log2(e_coarse / e_fine) between halved-mesh levels."""
    errors = [float(e) for e in errors]
    if len(errors) < 2:
        raise ValueError("need at least two error values")
    if any(e <= 0 for e in errors):
        raise ValueError("errors must be positive")
    return [float(np.log2(errors[i - 1] / errors[i]))
            for i in range(1, len(errors))]


@dataclass
class ErrorReport:
    """Per-level errors of the convergence study, with computed orders."""

    levels: list
    h: list
    tau: list
    errors: dict                      # keys: grad_u, v, p
    scheme: str = ""
    k: int = 0
    r: int = 0

    def eocs(self) -> dict:
        return {key: eoc(vals) if len(vals) > 1 else []
                for key, vals in self.errors.items()}

    def rows(self):
        """One row per level: (level, h, tau, err/eoc interleaved)."""
        eo = self.eocs()
        out = []
        for i, lvl in enumerate(self.levels):
            row = [lvl, self.h[i], self.tau[i]]
            for key in ("grad_u", "v", "p"):
                row.append(self.errors[key][i])
                row.append(eo[key][i - 1] if i > 0 else None)
            out.append(row)
        return out


def run_convergence(case: ManufacturedCase, scheme: str, k: int, r: int,
                    levels, solver: str = "direct", rel_tol: float = 1e-10,
                    penalty_scale: str = "extent", logger=None) -> ErrorReport:
    """Solve the manufactured problem on a sequence of refined meshes."""
    report = ErrorReport(list(levels), [], [], {"grad_u": [], "v": [], "p": []},
                         scheme=scheme, k=k, r=r)
    for level in levels:
        err = run_single(case, scheme, k, r, level, solver=solver,
                         rel_tol=rel_tol, penalty_scale=penalty_scale,
                         logger=logger)
        report.h.append(err["h"])
        report.tau.append(err["tau"])
        for key in ("grad_u", "v", "p"):
            report.errors[key].append(err[key])
    return report


def run_single(case: ManufacturedCase, scheme: str, k: int, r: int,
               level: int, solver: str = "direct", rel_tol: float = 1e-10,
               penalty_scale: str = "extent", logger=None) -> dict:
    """One manufactured-solution run; returns the three error norms."""
    mesh = case.mesh(level)
    vspace = build_q_space(mesh, r, 2)
    pspace = build_p_disc_space(mesh, r - 1)
    params = case.params()
    mats = build_system(vspace, pspace, params, penalty_scale=penalty_scale)
    loads = LoadAssembler(vspace, pspace, params, case.data(),
                          penalty_scale=penalty_scale)
    tau = case.tau0 / 2 ** level
    nslabs = int(round(case.t_final / tau))
    cfg = SchemeConfig(scheme, k, nslabs, case.t_final)
    if logger is not None:
        logger.info("level %d: mesh %d cells, %d+%d dofs, %d slabs",
                    level, mesh.num_cells, vspace.ndofs, pspace.ndofs, nslabs)
    traj = advance(cfg, mats, loads, case.initial_state(vspace, pspace),
                   solver=solver, rel_tol=rel_tol, logger=logger)
    return {
        "h": mesh.mesh_size,
        "tau": tau,
        "grad_u": l2l2_error(traj, vspace, "u", case.exact_grad_u, kind="grad"),
        "v": l2l2_error(traj, vspace, "v", case.exact_v),
        "p": l2l2_error(traj, pspace, "p", case.exact_p),
        "slab_stats": traj.slab_stats,
    }


# ---------------------------------------------------------------------------
# benchmark on the L-shaped domain

def traction_profile(x):
    """Spatial bump of the surface load on [0, 0.5]; peaks at 1."""
    x = np.asarray(x, dtype=float)
    if np.any(x < -1e-12) or np.any(x > 0.5 + 1e-12):
        raise ValueError("traction profile is defined on [0, 0.5] only")
    left = -64.0 * x**2 * (16.0 * x - 3.0)
    right = (16.0 / 27.0) * (2.0 * x - 1.0) ** 2 * (16.0 * x + 1.0)
    return np.where(x <= 0.125, left, right)


def traction(x, t: float):
    """Time-modulated load on the segment coordinate x in [0, 0.5]."""
    q = traction_profile(x) * np.sin(8.0 * np.pi * t)
    return np.column_stack([np.zeros_like(q), q])


@dataclass(frozen=True)
class BenchmarkCase:
    """Loaded L-shaped domain with pulsating traction, homogeneous start."""

    rho: float = 1.0
    alpha: float = 0.9
    c0: float = 0.01
    E: float = 20000.0
    nu: float = 0.3
    t_final: float = 8.0
    tau0: float = 0.1
    geometry: LShapeGeometry = field(default_factory=LShapeGeometry)
    load_xmax: float = 0.5
    load_direction: str = "vertical"    # or "normal"

    def params(self) -> MaterialParams:
        lam, mu = lame_from_E_nu(self.E, self.nu)
        return MaterialParams(rho=self.rho, alpha=self.alpha, c0=self.c0,
                              permeability=np.eye(2), lam=lam, mu=mu)

    def mesh(self, level: int) -> Mesh:
        return l_shaped_mesh(level, self.geometry)

    def data(self) -> ProblemData:
        zero_v = lambda x, t: np.zeros((np.atleast_2d(x).shape[0], 2))
        zero_s = lambda x, t: np.zeros(np.atleast_2d(x).shape[0])

        def t_N(x, t):
            x = np.atleast_2d(x)
            out = np.zeros((x.shape[0], 2))
            on_load = (np.abs(x[:, 1] - 1.0) < 1e-12) \
                & (x[:, 0] <= self.load_xmax + 1e-12)
            if np.any(on_load):
                out[on_load] = traction(x[on_load, 0], t)
            return out

        return ProblemData(f=zero_v, g=zero_s, traction=t_N,
                           p_dirichlet=zero_s, p_neumann=zero_s,
                           u_dirichlet=zero_v, v_dirichlet=zero_v,
                           traction_breakpoints_x=(0.125, self.load_xmax))

    def initial_state(self, vspace, pspace) -> SlabState:
        return SlabState(np.zeros(vspace.ndofs), np.zeros(vspace.ndofs),
                         np.zeros(pspace.ndofs))


# ---------------------------------------------------------------------------
# goal quantities

def goal_vectors(vspace: FunctionSpace, pspace: FunctionSpace):
    """Extraction vectors of the two goal functionals on the goal segment.

    G_u = integral of u . n, G_p = integral of p, both over the tagged
    wall; returns (g_u, g_p) so that G = g . coefficients.
    """
    mesh = vspace.mesh
    faces = mesh.goal_faces()
    if not faces:
        raise ValueError("mesh carries no goal-segment faces")
    rule = gauss_legendre(vspace.element.degree + 1)
    g_u = np.zeros(vspace.ndofs)
    g_p = np.zeros(pspace.ndofs)
    from .assembly import _face_geometry, _face_segments, _vector_values
    for face in faces:
        cell = face.owner
        for a, b in _face_segments(face, mesh):
            s = 0.5 * (a + b) + 0.5 * (b - a) * rule.points
            w = 0.5 * (b - a) * rule.weights
            _, ref = _face_geometry(mesh, face, cell, s)
            uv, _ = vspace.element.tabulate(ref)
            V = _vector_values(uv)
            vn = V[:, :, 0] * face.normal[0] + V[:, :, 1] * face.normal[1]
            np.add.at(g_u, vspace.cell_dofs[cell], vn @ w)
            pv, _ = pspace.element.tabulate(ref)
            np.add.at(g_p, pspace.cell_dofs[cell], pv @ w)
    return g_u, g_p


def goal_quantities(u_fun: FEFunction, p_fun: FEFunction):
    """Goal functionals of a single displacement/pressure snapshot."""
    g_u, g_p = goal_vectors(u_fun.space, p_fun.space)
    return float(g_u @ u_fun.coefficients), float(g_p @ p_fun.coefficients)


@dataclass
class GoalSeries:
    """Time-stamped goal samples with window extrema."""

    times: np.ndarray
    g_u: np.ndarray
    g_p: np.ndarray

    def characteristics(self, window=(7.0, 8.0)):
        return goal_characteristics(self, window)


def goal_characteristics(series: GoalSeries, window=(7.0, 8.0)):
    """(min G_p, max G_p, min G_u, max G_u) over the window."""
    t0, t1 = window
    t = series.times
    if t[0] > t0 + 1e-9 or t[-1] < t1 - 1e-9:
        raise ValueError(f"series [{t[0]}, {t[-1]}] does not cover {window}")
    sel = (t >= t0 - 1e-12) & (t <= t1 + 1e-12)
    gp = series.g_p[sel]
    gu = series.g_u[sel]
    return (float(gp.min()), float(gp.max()), float(gu.min()), float(gu.max()))


def dominant_period(series: GoalSeries, field_values=None, window=None):
    """Dominant oscillation period found by the autocorrelation peak."""
    t = series.times
    y = series.g_u if field_values is None else field_values
    if window is not None:
        sel = (t >= window[0]) & (t <= window[1])
        t, y = t[sel], y[sel]
    dt = np.diff(t)
    if dt.size == 0 or np.max(np.abs(dt - dt[0])) > 1e-9 * dt[0]:
        raise ValueError("period detection needs uniform sampling")
    dt = float(dt[0])
    y = y - np.mean(y)
    ac = np.correlate(y, y, mode="full")[y.size - 1:]
    # strongest peak past the zero-lag bump, at most half the window
    lag_min = max(2, int(round(0.05 / dt)))
    lag_max = max(lag_min + 2, ac.size // 2)
    best = lag_min + int(np.argmax(ac[lag_min:lag_max]))
    if best <= lag_min or best >= lag_max - 1:
        raise ValueError("no interior autocorrelation peak found")
    # refine by parabolic interpolation
    num = ac[best - 1] - ac[best + 1]
    den = ac[best - 1] - 2 * ac[best] + ac[best + 1]
    shift = 0.5 * num / den if den != 0 else 0.0
    return float((best + shift) * dt)


def goal_series_sampler(vspace, pspace, samples_per_slab: int = 8):
    """Observer for :func:`advance` accumulating the goal series."""
    g_u, g_p = goal_vectors(vspace, pspace)
    times, gu_vals, gp_vals = [], [], []
    cache = {}

    def on_slab(slab):
        key = (slab.scheme, len(slab.nodes_ref), slab.t_end - slab.t_start)
        if key not in cache:
            s_ref = np.linspace(-1.0, 1.0, samples_per_slab + 1)
            cache[key] = (_Lagrange1D(slab.nodes_ref).eval(s_ref), s_ref)
        ebasis, s_ref = cache[key]
        half = 0.5 * (slab.t_end - slab.t_start)
        ts = slab.t_start + half * (s_ref + 1.0)
        Ut = ebasis.T @ slab.U
        Pt = ebasis.T @ slab.P
        # skip the slab-start sample: it belongs to the previous slab
        # (or to the initial data), keeping the time stamps strictly
        # increasing with uniform spacing tau / samples_per_slab
        times.extend(ts[1:])
        gu_vals.extend(Ut[1:] @ g_u)
        gp_vals.extend(Pt[1:] @ g_p)

    def result() -> GoalSeries:
        return GoalSeries(np.array(times), np.array(gu_vals), np.array(gp_vals))

    return on_slab, result


def run_benchmark(case: BenchmarkCase, scheme: str, k: int, r: int,
                  level: int, solver: str = "direct", rel_tol: float = 1e-10,
                  penalty_scale: str = "extent", samples_per_slab: int = 8,
                  t_final: float | None = None, tau: float | None = None,
                  logger=None):
    """Run the benchmark at one refinement level; returns the goal series."""
    mesh = case.mesh(level)
    vspace = build_q_space(mesh, r, 2)
    pspace = build_p_disc_space(mesh, r - 1)
    params = case.params()
    mats = build_system(vspace, pspace, params, penalty_scale=penalty_scale)
    constraints = mark_directional_constraints(vspace)
    loads = LoadAssembler(vspace, pspace, params, case.data(),
                          penalty_scale=penalty_scale)
    T = t_final if t_final is not None else case.t_final
    tau_val = tau if tau is not None else case.tau0 / 2 ** level
    nslabs = int(round(T / tau_val))
    cfg = SchemeConfig(scheme, k, nslabs, T)
    if logger is not None:
        logger.info("benchmark level %d: %d cells, %d+%d dofs, %d slabs",
                    level, mesh.num_cells, vspace.ndofs, pspace.ndofs, nslabs)
    on_slab, result = goal_series_sampler(vspace, pspace, samples_per_slab)
    # the series starts at t=0 with the (zero) initial goal values
    initial = case.initial_state(vspace, pspace)
    traj = advance(cfg, mats, loads, initial, constraints=constraints,
                   solver=solver, rel_tol=rel_tol, store=False,
                   on_slab=on_slab, logger=logger)
    series = result()
    series.times = np.concatenate([[0.0], series.times])
    g_u, g_p = goal_vectors(vspace, pspace)
    series.g_u = np.concatenate([[initial.u @ g_u], series.g_u])
    series.g_p = np.concatenate([[initial.p @ g_p], series.g_p])
    return series, traj
