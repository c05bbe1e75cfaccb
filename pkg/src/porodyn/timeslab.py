"""Per-interval space-time systems and the time marching driver.

Each time slab carries polynomial-in-time coefficient fields for
displacement, velocity, and pressure.  Two couplings across slab
boundaries are supported:

* dG(k): discontinuous trial/test spaces of degree k; the temporal
  quadrature is the right-sided (k+1)-point Gauss--Radau rule and slab
  coupling happens through upwinded jump terms at the slab start.
* cG(k): continuous trial functions of degree k pinned to the incoming
  value at the slab start (so the algebraic system is condensed to k
  modes per field) tested against degree k-1; the temporal quadrature is
  the (k+1)-point Gauss--Lobatto rule.

Trial bases are Lagrange polynomials at the quadrature points, so
quadrature-point evaluation is coefficient read-off and the load
functionals are sampled exactly at the quadrature times.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .assembly import SystemMatrices
from .linalg import (BlockSystem, SolveStats, equilibrated_ilu0, lu_factor,
                     solve_gmres)
from .quadrature import gauss_lobatto, gauss_radau_right
from .spaces import legendre_table

FIELDS = ("u", "v", "p")


class SlabSolveError(RuntimeError):
    def __init__(self, slab_index: int, t_end: float, cause: Exception):
        super().__init__(f"slab {slab_index} (up to t={t_end:g}) failed: {cause}")
        self.slab_index = slab_index
        self.cause = cause


@dataclass(frozen=True)
class SchemeConfig:
    """Time discretization choice: scheme family, degree, and mesh."""

    scheme: str              # "dG" or "cG"
    k: int
    num_slabs: int
    t_final: float

    def __post_init__(self):
        if self.scheme not in ("dG", "cG"):
            raise ValueError(f"scheme must be 'dG' or 'cG', got {self.scheme!r}")
        if self.scheme == "dG" and self.k < 0:
            raise ValueError("dG needs k >= 0")
        if self.scheme == "cG" and self.k < 1:
            raise ValueError("cG needs k >= 1")
        if self.num_slabs < 1 or self.t_final <= 0:
            raise ValueError("need at least one slab and a positive final time")

    @property
    def tau(self) -> float:
        return self.t_final / self.num_slabs


class _Lagrange1D:
    """Lagrange basis at arbitrary distinct nodes, degree len(nodes)-1."""

    def __init__(self, nodes: np.ndarray):
        self.nodes = np.asarray(nodes, dtype=float)
        deg = self.nodes.size - 1
        vander, _ = legendre_table(deg, self.nodes)
        self._coeffs = np.linalg.solve(vander.T, np.eye(deg + 1))
        self._deg = deg

    def eval(self, s) -> np.ndarray:
        """Basis values at points ``s``: shape (n_basis, len(s))."""
        vals, _ = legendre_table(self._deg, np.atleast_1d(np.asarray(s, float)))
        return self._coeffs.T @ vals

    def diff_at_nodes(self) -> np.ndarray:
        """D[i, j] = l_j'(node_i)."""
        _, ders = legendre_table(self._deg, self.nodes)
        return (self._coeffs.T @ ders).T


@dataclass(frozen=True)
class SlabSolution:
    """Temporal Lagrange coefficients of one slab, all three fields.

    Mode 0..k corresponds to the quadrature nodes mapped to the slab;
    for cG mode 0 sits at the slab start and equals the incoming state.
    """

    t_start: float
    t_end: float
    scheme: str
    nodes_ref: np.ndarray
    U: np.ndarray            # (k+1, ndofs_u)
    V: np.ndarray
    P: np.ndarray

    def _basis_at(self, t):
        s = 2.0 * (np.atleast_1d(t) - self.t_start) / (self.t_end - self.t_start) - 1.0
        return _Lagrange1D(self.nodes_ref).eval(s)

    def eval(self, t, fld: str) -> np.ndarray:
        """Field coefficients at time(s) t; (ndofs,) for scalar t."""
        arr = {"u": self.U, "v": self.V, "p": self.P}[fld]
        out = self._basis_at(t).T @ arr
        return out[0] if np.isscalar(t) else out

    def start_value(self, fld: str) -> np.ndarray:
        """One-sided limit from inside the slab at its start."""
        return self.eval(self.t_start, fld)

    def end_value(self, fld: str) -> np.ndarray:
        arr = {"u": self.U, "v": self.V, "p": self.P}[fld]
        return arr[-1]


@dataclass
class SlabState:
    u: np.ndarray
    v: np.ndarray
    p: np.ndarray

    def copy(self) -> "SlabState":
        return SlabState(self.u.copy(), self.v.copy(), self.p.copy())


# ---------------------------------------------------------------------------
# temporal operators

def dg_temporal_operators(k: int):
    """Reference-interval pieces of the dG(k) system.

    Returns (nodes, weights, Khat, e) where Khat combines the weighted
    differentiation matrix with the start-of-slab jump and e holds the
    trial basis values at the slab start.
    """
    rule = gauss_radau_right(k + 1)
    basis = _Lagrange1D(rule.points)
    D = basis.diff_at_nodes()
    e = basis.eval(np.array([-1.0]))[:, 0]
    Khat = rule.weights[:, None] * D + np.outer(e, e)
    return rule.points, rule.weights, Khat, e


def cg_temporal_operators(k: int):
    """Reference-interval pieces of the condensed cG(k) system.

    Test functions are the Lagrange basis at the Lobatto nodes excluding
    the slab start.  Returns (nodes, weights, Ktilde, etilde) with
    Ktilde of shape (k, k+1); the first column multiplies the known
    incoming value.
    """
    rule = gauss_lobatto(k + 1)
    trial = _Lagrange1D(rule.points)
    D = trial.diff_at_nodes()           # (k+1, k+1)
    test = _Lagrange1D(rule.points[1:])
    etil = test.eval(np.array([-1.0]))[:, 0]     # (k,)
    w = rule.weights
    Ktil = w[1:, None] * D[1:, :] + w[0] * np.outer(etil, D[0, :])
    return rule.points, w, Ktil, etil


# ---------------------------------------------------------------------------
# slab operator

class SlabOperator:
    """Constant-in-time part of the slab systems for a uniform time mesh.

    The monolithic matrix (all temporal modes, fields blocked u, v, p)
    is assembled once; every slab then only needs a new right-hand side.
    """

    def __init__(self, scheme: str, k: int, tau: float,
                 matrices: SystemMatrices, constraints=None):
        self.scheme = scheme
        self.k = k
        self.tau = tau
        self.mat = matrices
        self.nu = matrices.mass_u_plain.shape[0]
        self.np_ = matrices.mass_p_plain.shape[0]
        params = matrices.params
        M = matrices.mass_u_plain
        Mp = matrices.mass_p_plain
        A = matrices.elasticity
        C = matrices.coupling
        B = matrices.pressure
        CT = C.T.tocsr()
        half_tau = 0.5 * tau

        if scheme == "dG":
            self.nodes, self.weights, Khat, self.e_left = dg_temporal_operators(k)
            nmodes = k + 1
            mode_of = lambda mu: mu
            Kfull = Khat
        else:
            self.nodes, self.weights, Ktil, self.e_test = cg_temporal_operators(k)
            nmodes = k
            mode_of = lambda mu: mu + 1   # unknown modes sit at nodes 1..k
            Kfull = Ktil
            self._Ktil = Ktil
        self.nmodes = nmodes
        self._mode_of = mode_of

        def diagw(mu):
            return half_tau * self.weights[mode_of(mu)]

        grid = [[None] * (3 * nmodes) for _ in range(3 * nmodes)]
        for nu_ in range(nmodes):
            row_u, row_v, row_p = nu_, nmodes + nu_, 2 * nmodes + nu_
            for mu in range(nmodes):
                kval = Kfull[nu_, mode_of(mu)]
                col_u, col_v, col_p = mu, nmodes + mu, 2 * nmodes + mu
                if kval != 0.0:
                    grid[row_u][col_u] = kval * M
                    grid[row_v][col_v] = params.rho * kval * M
                    grid[row_p][col_p] = params.c0 * kval * Mp
                if mu == nu_:
                    w = diagw(mu)
                    _add(grid, row_u, col_v, -w * M)
                    _add(grid, row_v, col_u, w * A)
                    _add(grid, row_v, col_p, w * C)
                    _add(grid, row_p, col_p, w * B)
                    _add(grid, row_p, col_v, -w * CT)
        self.block_system = BlockSystem(grid)
        matrix = self.block_system.tocsr()

        self.constrained = np.array(sorted(constraints) if constraints else [],
                                    dtype=int)
        if self.constrained.size:
            full_idx = []
            for f in (0, 1):       # u and v blocks
                for mu in range(nmodes):
                    off = (f * nmodes + mu) * self.nu
                    full_idx.append(off + self.constrained)
            idx = np.concatenate(full_idx)
            mask = np.ones(matrix.shape[0])
            mask[idx] = 0.0
            D = sp.diags(mask)
            keep = sp.coo_matrix((np.ones(idx.size), (idx, idx)),
                                 shape=matrix.shape)
            matrix = (D @ matrix @ D + keep).tocsr()
            matrix.eliminate_zeros()
            self._slab_constrained = idx
        else:
            self._slab_constrained = np.empty(0, dtype=int)
        self.matrix = matrix
        self._solver = None

    def quadrature_times(self, t_start: float) -> np.ndarray:
        return t_start + 0.5 * self.tau * (self.nodes + 1.0)

    def rhs(self, state: SlabState, F_samples, G_samples) -> np.ndarray:
        """Right-hand side from the incoming state and load samples.

        ``F_samples``/``G_samples`` hold the load vectors at all k+1
        quadrature times of the slab (including the slab start for cG).
        """
        m = self.mat
        params = m.params
        nu, npp = self.nu, self.np_
        nmodes = self.nmodes
        half_tau = 0.5 * self.tau
        out = np.zeros(2 * nmodes * nu + nmodes * npp)
        Mu0 = m.mass_u_plain @ state.u
        Mv0 = m.mass_u_plain @ state.v
        Mp0 = m.mass_p_plain @ state.p
        if self.scheme == "dG":
            for nu_ in range(nmodes):
                e = self.e_left[nu_]
                w = half_tau * self.weights[nu_]
                out[nu_ * nu:(nu_ + 1) * nu] = e * Mu0
                off = (nmodes + nu_) * nu
                out[off:off + nu] = w * F_samples[nu_] + params.rho * e * Mv0
                off = 2 * nmodes * nu + nu_ * npp
                out[off:off + npp] = w * G_samples[nu_] + params.c0 * e * Mp0
        else:
            Au0 = m.elasticity @ state.u
            Cp0 = m.coupling @ state.p
            Bp0 = m.pressure @ state.p
            CTv0 = m.coupling.T @ state.v
            w_all = self.weights
            w0 = w_all[0]
            for nu_ in range(nmodes):
                node = nu_ + 1
                wn = half_tau * w_all[node]
                we = half_tau * w0 * self.e_test[nu_]
                k0 = self._Ktil[nu_, 0]
                out[nu_ * nu:(nu_ + 1) * nu] = -k0 * Mu0 + we * Mv0
                off = (nmodes + nu_) * nu
                out[off:off + nu] = (wn * F_samples[node] + we * F_samples[0]
                                     - params.rho * k0 * Mv0 - we * (Au0 + Cp0))
                off = 2 * nmodes * nu + nu_ * npp
                out[off:off + npp] = (wn * G_samples[node] + we * G_samples[0]
                                      - params.c0 * k0 * Mp0 - we * (Bp0 - CTv0))
        if self._slab_constrained.size:
            out[self._slab_constrained] = 0.0
        return out

    def prepare_solver(self, solver: str, rel_tol: float = 1e-10,
                       restart: int = 100, max_iter: int = 20000):
        if solver == "direct":
            lu = lu_factor(self.matrix)
            A = self.matrix

            def run(rhs):
                x = lu.solve(rhs)
                x += lu.solve(rhs - A @ x)
                res = np.linalg.norm(rhs - A @ x)
                scale = np.linalg.norm(rhs)
                st = SolveStats(1, res / scale if scale > 0 else 0.0, True)
                return x, st
        elif solver == "gmres":
            precon = equilibrated_ilu0(self.matrix)
            A = self.matrix

            def run(rhs):
                return solve_gmres(A, rhs, preconditioner=precon,
                                   rel_tol=rel_tol, max_iter=max_iter,
                                   restart=restart)
        else:
            raise ValueError(f"unknown solver {solver!r}")
        self._solver = run
        return run

    def solve_slab(self, state: SlabState, F_samples, G_samples):
        if self._solver is None:
            self.prepare_solver("direct")
        x, stats = self._solver(self.rhs(state, F_samples, G_samples))
        return self.unpack(x, state), stats

    def unpack(self, x: np.ndarray, state: SlabState):
        """Split a slab solution vector into per-mode field arrays."""
        nmodes, nu, npp = self.nmodes, self.nu, self.np_
        k1 = self.k + 1
        U = np.empty((k1, nu))
        V = np.empty((k1, nu))
        P = np.empty((k1, npp))
        if self.scheme == "dG":
            for mu in range(nmodes):
                U[mu] = x[mu * nu:(mu + 1) * nu]
                V[mu] = x[(nmodes + mu) * nu:(nmodes + mu + 1) * nu]
                off = 2 * nmodes * nu + mu * npp
                P[mu] = x[off:off + npp]
        else:
            U[0], V[0], P[0] = state.u, state.v, state.p
            for mu in range(nmodes):
                U[mu + 1] = x[mu * nu:(mu + 1) * nu]
                V[mu + 1] = x[(nmodes + mu) * nu:(nmodes + mu + 1) * nu]
                off = 2 * nmodes * nu + mu * npp
                P[mu + 1] = x[off:off + npp]
        return U, V, P


def _add(grid, i, j, block):
    grid[i][j] = block if grid[i][j] is None else (grid[i][j] + block).tocsr()


def build_dg_slab(state: SlabState, matrices: SystemMatrices, loads, k: int,
                  interval: tuple[float, float], constraints=None):
    """One dG(k) slab system: (BlockSystem, rhs)."""
    t0, t1 = interval
    op = SlabOperator("dG", k, t1 - t0, matrices, constraints)
    times = op.quadrature_times(t0)
    F, G = zip(*(loads(t) for t in times))
    return op.block_system, op.rhs(state, list(F), list(G))


def build_cg_slab(state: SlabState, matrices: SystemMatrices, loads, k: int,
                  interval: tuple[float, float], constraints=None):
    """One condensed cG(k) slab system: (BlockSystem, rhs)."""
    t0, t1 = interval
    op = SlabOperator("cG", k, t1 - t0, matrices, constraints)
    times = op.quadrature_times(t0)
    F, G = zip(*(loads(t) for t in times))
    return op.block_system, op.rhs(state, list(F), list(G))


# ---------------------------------------------------------------------------
# trajectory and time marching

@dataclass
class Trajectory:
    config: SchemeConfig
    initial: SlabState
    slabs: list = field(default_factory=list)
    end_state: SlabState | None = None
    slab_stats: list = field(default_factory=list)

    @property
    def slab_ends(self) -> np.ndarray:
        return np.array([s.t_end for s in self.slabs])

    def evaluate(self, t: float, fld: str, side: str = "left") -> np.ndarray:
        return evaluate_at_time(self, t, fld, side)


def evaluate_at_time(trajectory: Trajectory, t: float, fld: str,
                     side: str = "left") -> np.ndarray:
    """Evaluate the trajectory at time t.

    ``side="left"`` gives the value of the slab containing t in its
    half-open interval (t_{n-1}, t_n]; ``side="right"`` gives the limit
    from above, which for dG differs at slab boundaries by the jump.
    """
    cfg = trajectory.config
    if t < -1e-12 or t > cfg.t_final + 1e-12:
        raise ValueError(f"time {t} outside [0, {cfg.t_final}]")
    if side not in ("left", "right"):
        raise ValueError("side must be 'left' or 'right'")
    tau = cfg.tau
    eps = 1e-12 * max(1.0, cfg.t_final)
    if side == "left":
        if t <= eps:
            return getattr(trajectory.initial, fld).copy()
        n = int(np.ceil((t - eps) / tau)) - 1
    else:
        if t >= cfg.t_final - eps:
            return trajectory.slabs[-1].end_value(fld)
        n = int(np.floor((t + eps) / tau))
    n = min(max(n, 0), len(trajectory.slabs) - 1)
    return trajectory.slabs[n].eval(t, fld)


def advance(config: SchemeConfig, matrices: SystemMatrices, loads,
            initial: SlabState, constraints=None, solver: str = "direct",
            rel_tol: float = 1e-10, store: bool = True, on_slab=None,
            logger=None, checkpoint_dir=None, checkpoint_meta=None) -> Trajectory:
    """March the coupled system over the uniform time mesh.

    ``loads`` maps a time to the pair of load vectors.  ``on_slab`` is
    called with each finished :class:`SlabSolution` (useful to stream
    goal functionals without storing the trajectory).  The first failing
    slab aborts with its index and the solver diagnostics.
    """
    op = SlabOperator(config.scheme, config.k, config.tau, matrices, constraints)
    op.prepare_solver(solver, rel_tol=rel_tol)
    state = initial.copy()
    if op.constrained.size:
        for arr in (state.u, state.v):
            arr[op.constrained] = 0.0
    traj = Trajectory(config, state.copy())
    for n in range(config.num_slabs):
        t0 = n * config.tau
        t1 = (n + 1) * config.tau
        times = op.quadrature_times(t0)
        tic = _time.perf_counter()
        F, G = zip(*(loads(t) for t in times))
        try:
            (U, V, P), stats = op.solve_slab(state, list(F), list(G))
        except Exception as exc:
            raise SlabSolveError(n + 1, t1, exc) from exc
        wall = _time.perf_counter() - tic
        slab = SlabSolution(t0, t1, config.scheme, op.nodes, U, V, P)
        state = SlabState(U[-1].copy(), V[-1].copy(), P[-1].copy())
        traj.slab_stats.append({"slab": n + 1, "t_end": t1,
                                "iterations": stats.iterations,
                                "residual": stats.residual, "wall_time": wall})
        if logger is not None:
            logger.info("slab %d/%d t=%.6g iters=%d residual=%.3e wall=%.3fs",
                        n + 1, config.num_slabs, t1, stats.iterations,
                        stats.residual, wall)
        if checkpoint_dir is not None:
            _write_checkpoint(checkpoint_dir, checkpoint_meta or {}, config,
                              n + 1, slab)
        if on_slab is not None:
            on_slab(slab)
        if store:
            traj.slabs.append(slab)
    traj.end_state = state
    return traj


def _write_checkpoint(directory, meta, config, index, slab: SlabSolution):
    import os
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, f"slab_{index:05d}.txt")
    with open(path, "w") as fh:
        fh.write(f"# scheme={config.scheme} k={config.k}"
                 f" r={meta.get('r', '?')} slab={index} t_end={slab.t_end!r}\n")
        for name, arr in (("u", slab.U), ("v", slab.V), ("p", slab.P)):
            fh.write(f"# field {name} modes={arr.shape[0]} ndofs={arr.shape[1]}\n")
            np.savetxt(fh, arr)


def energy(matrices: SystemMatrices, state: SlabState) -> float:
    """Discrete energy: kinetic + elastic + pressure storage."""
    params = matrices.params
    kin = params.rho * (state.v @ (matrices.mass_u_plain @ state.v))
    ela = state.u @ (matrices.elasticity @ state.u)
    sto = params.c0 * (state.p @ (matrices.mass_p_plain @ state.p))
    return 0.5 * (kin + ela + sto)
