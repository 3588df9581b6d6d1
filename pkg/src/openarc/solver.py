"""Reduced single-density system, GMRES and density recovery.

With ``R = [[R1, R3], [R2, R4]]`` per vertex (identity off Gamma*) the
transformed density ``x`` solves

    (I* + A°(R2 - (R4 - R2 R1^{-1} R3) B° R1) + R1^{-1} R3 B° R1) x = g

where ``A°, B°`` are the operators with their Gamma* blocks removed and
``I*`` is the identity restricted to Gamma*. The change of variables
``rho1~ = x + R1^{-1} R3 B° R1 x``, ``rho2~ = -B° R1 x`` satisfies the second
block row of the compressed 2x2 system identically.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .geometry import Geometry, PanelMesh
from .quadrature import OperatorSet, assemble
from .rcip import CompressedInverse, RCache, block_partition, build_R

BCS = ("dirichlet", "neumann")


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class ProblemSpec:
    """Boundary condition, wavenumber and boundary data.

    Either ``theta`` (incident plane wave ``exp(ik(x cos t + y sin t))`` with
    vanishing total field / normal derivative) or ``data``, a callable
    ``g(z, normal)`` or a list of such per edge.
    """

    bc: str
    k: float
    theta: float | None = None
    data: Callable | list | None = None

    def __post_init__(self):
        if self.bc not in BCS:
            raise ValueError(f"bc must be one of {BCS}")
        if not self.k > 0:
            raise ValueError("k must be positive")
        if (self.theta is None) == (self.data is None):
            raise ValueError("give exactly one of theta and data")
        if self.theta is not None and not -np.pi < self.theta <= np.pi:
            raise ValueError("theta must lie in (-pi, pi]")


def incident_field(z, k, theta):
    d = np.exp(1j * theta)
    return np.exp(1j * k * (np.real(z) * d.real + np.imag(z) * d.imag))


def incident_normal_derivative(z, normal, k, theta):
    d = np.exp(1j * theta)
    ndd = (normal * np.conj(d)).real
    return 1j * k * ndd * incident_field(z, k, theta)


def boundary_data(problem: ProblemSpec, mesh: PanelMesh) -> np.ndarray:
    if problem.theta is not None:
        if problem.bc == "dirichlet":
            return -incident_field(mesh.z, problem.k, problem.theta)
        return -incident_normal_derivative(mesh.z, mesh.normal, problem.k, problem.theta)
    g = np.empty(mesh.n_nodes, dtype=complex)
    nodes_edge = np.repeat(mesh.edge_of, 16)
    for eid in np.unique(nodes_edge):
        f = problem.data[eid] if isinstance(problem.data, (list, tuple)) else problem.data
        m = nodes_edge == eid
        g[m] = f(mesh.z[m], mesh.normal[m])
    return g


def select_operators(bc: str) -> tuple[str, str]:
    """(A, B) of the block system: Dirichlet (S, T), Neumann (T, S)."""
    bc = bc.lower()
    if bc == "dirichlet":
        return ("S", "T")
    if bc == "neumann":
        return ("T", "S")
    raise ValueError(f"unknown boundary condition {bc!r}")


# ---------------------------------------------------------------------------
# discretized system
# ---------------------------------------------------------------------------

@dataclass
class System:
    problem: ProblemSpec
    geometry: Geometry
    mesh: PanelMesh
    n_sub: int
    A: OperatorSet
    B: OperatorSet
    Rs: dict
    t_build: float = 0.0

    @property
    def n(self) -> int:
        return self.mesh.n_nodes

    @property
    def star(self) -> np.ndarray:
        idx = [R.nodes for R in self.Rs.values()]
        return np.concatenate(idx) if idx else np.zeros(0, dtype=int)

    def _blocks(self):
        if not hasattr(self, "_cached_blocks"):
            self._cached_blocks = {vid: block_partition(R) for vid, R in self.Rs.items()}
        return self._cached_blocks

    # R-block actions on full coarse vectors (identity / zero off Gamma*)
    def R1(self, x):
        y = x.copy()
        for vid, (r1, _, _, _) in self._blocks().items():
            i = self.Rs[vid].nodes
            y[i] = r1 @ x[i]
        return y

    def R2(self, x):
        y = np.zeros_like(x)
        for vid, (_, r2, _, _) in self._blocks().items():
            i = self.Rs[vid].nodes
            y[i] = r2 @ x[i]
        return y

    def R3(self, x):
        y = np.zeros_like(x)
        for vid, (_, _, r3, _) in self._blocks().items():
            i = self.Rs[vid].nodes
            y[i] = r3 @ x[i]
        return y

    def R4(self, x):
        y = x.copy()
        for vid, (_, _, _, r4) in self._blocks().items():
            i = self.Rs[vid].nodes
            y[i] = r4 @ x[i]
        return y

    def R1_solve(self, x):
        y = x.copy()
        for vid, R in self.Rs.items():
            i = R.nodes
            y[i] = sla.lu_solve(R.r1_lu(), x[i])
        return y

    def I_star(self, x):
        y = np.zeros_like(x)
        s = self.star
        y[s] = x[s]
        return y


def setup(problem: ProblemSpec, geometry: Geometry, mesh: PanelMesh, n_sub: int,
          cache: RCache | None = None, retain: bool = True) -> System:
    t0 = time.perf_counter()
    ops = select_operators(problem.bc)
    A = assemble(ops[0], mesh, problem.k, geometry.vertices)
    B = assemble(ops[1], mesh, problem.k, geometry.vertices)
    Rs = {}
    for vid in mesh.gamma_star:
        stars = None
        if n_sub == 0:
            stars = (A.star_block(vid), B.star_block(vid))
        Rs[vid] = build_R(mesh, geometry.vertices, vid, problem.k, n_sub, ops,
                          retain=retain, cache=cache, star_blocks=stars)
    for R in Rs.values():
        R.r1_lu()
    return System(problem, geometry, mesh, n_sub, A, B, Rs, time.perf_counter() - t0)


def _parts(system: System, x):
    y1 = system.R1(x)
    y2 = system.B.circ_matvec(y1)
    y3 = system.R4(y2) - system.R2(system.R1_solve(system.R3(y2)))
    y4 = system.R2(x)
    return y1, y2, y3, y4


def reduced_matvec(system: System, x):
    """Apply the reduced single-density operator to ``x``."""
    x = np.asarray(x, dtype=complex)
    _, y2, y3, y4 = _parts(system, x)
    return (system.I_star(x) + system.A.circ_matvec(y4 - y3)
            + system.R1_solve(system.R3(y2)))


def recover(system: System, x):
    """(rho1~, rho2~, rho1^, rho2^) from the transformed density ``x``."""
    y1, y2, y3, y4 = _parts(system, x)
    rho1t = x + system.R1_solve(system.R3(y2))
    rho2t = -y2
    return rho1t, rho2t, y1, y4 - y3


def expanded_matrix(system: System) -> np.ndarray:
    """Dense ``I + G° R`` of the compressed 2x2 system (small problems only)."""
    n = system.n
    I = np.eye(n)
    istar = np.zeros(n)
    istar[system.star] = 1.0
    Acirc = system.A.full() - system.A.star.toarray()
    Bcirc = system.B.full() - system.B.star.toarray()
    Gc = np.block([[-(I - np.diag(istar)), Acirc], [Bcirc, np.zeros((n, n))]])
    R = np.eye(2 * n, dtype=complex)
    for Rv in system.Rs.values():
        i = Rv.nodes
        ii = np.concatenate([i, n + i])
        R[np.ix_(ii, ii)] = Rv.R
    return np.eye(2 * n) + Gc @ R


def expanded_solve(system: System, g):
    """Direct solve of the compressed 2x2 system; returns (rho1~, rho2~)."""
    n = system.n
    sol = np.linalg.solve(expanded_matrix(system), np.concatenate([g, np.zeros(n)]))
    return sol[:n], sol[n:]


def plain_solve(system: System, g):
    """Direct solve of the uncompressed coarse system [[0, A], [B, I]]."""
    n = system.n
    M = np.block([[np.zeros((n, n)), system.A.full()], [system.B.full(), np.eye(n)]])
    sol = np.linalg.solve(M, np.concatenate([g, np.zeros(n)]))
    return sol[:n], sol[n:]


# ---------------------------------------------------------------------------
# GMRES
# ---------------------------------------------------------------------------

@dataclass
class GMRESResult:
    x: np.ndarray
    iterations: int
    residuals: list  # Arnoldi estimates of the relative residual
    true_residual: float
    status: str  # converged | max_iter | stagnated | breakdown
    tol: float = 0.0

    @property
    def converged(self) -> bool:
        # a breakdown solves the system only when it is consistent; the
        # Arnoldi estimate cannot tell, the true residual can
        return self.status == "converged" or (
            self.status == "breakdown"
            and self.true_residual <= max(self.tol, 100 * np.finfo(float).eps))


def gmres_solve(matvec, rhs, tol: float = 1e-12, max_iter: int | None = None,
                stagnation_window: int = 10, stagnation_ratio: float = 0.9,
                stagnation_floor: float = 1e-3) -> GMRESResult:
    """Full GMRES with modified Gram-Schmidt and Givens rotations.

    Stops when the estimated relative residual drops to ``tol``, at
    ``max_iter``, or when the estimate improves by less than 10% over
    ``stagnation_window`` iterations. The stagnation test is armed only once
    the residual is below ``stagnation_floor``: plateaus before the first
    real drop are ordinary GMRES behaviour on multi-edge geometries.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    b = np.asarray(rhs, dtype=complex)
    n = b.size
    max_iter = min(n, 500) if max_iter is None else int(max_iter)
    beta = np.linalg.norm(b)
    if beta == 0:
        return GMRESResult(np.zeros(n, dtype=complex), 0, [0.0], 0.0, "converged", tol)
    Q = np.zeros((max_iter + 1, n), dtype=complex)
    H = np.zeros((max_iter + 1, max_iter), dtype=complex)
    cs = np.zeros(max_iter, dtype=complex)
    sn = np.zeros(max_iter, dtype=complex)
    e = np.zeros(max_iter + 1, dtype=complex)
    e[0] = beta
    Q[0] = b / beta
    res = [1.0]
    status = "max_iter"
    j = 0
    for j in range(max_iter):
        w = np.asarray(matvec(Q[j]), dtype=complex)
        norm0 = np.linalg.norm(w)
        for _ in range(2):
            for i in range(j + 1):
                h = np.vdot(Q[i], w)
                H[i, j] += h
                w = w - h * Q[i]
            if np.linalg.norm(w) >= 0.7 * norm0:
                break
            norm0 = np.linalg.norm(w)
        hn = np.linalg.norm(w)
        H[j + 1, j] = hn
        for i in range(j):
            t = np.conj(cs[i]) * H[i, j] + np.conj(sn[i]) * H[i + 1, j]
            H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
            H[i, j] = t
        a, c = H[j, j], H[j + 1, j]
        r = np.sqrt(abs(a) ** 2 + abs(c) ** 2)
        cs[j], sn[j] = (a / r, c / r) if r > 0 else (1.0, 0.0)
        H[j, j] = r
        H[j + 1, j] = 0.0
        e[j + 1] = -sn[j] * e[j]
        e[j] = np.conj(cs[j]) * e[j]
        res.append(abs(e[j + 1]) / beta)
        if hn <= 1e-14 * norm0 or hn == 0:
            status = "breakdown"
            break
        Q[j + 1] = w / hn
        if res[-1] <= tol:
            status = "converged"
            break
        if (j + 1 >= stagnation_window and res[-1 - stagnation_window] < stagnation_floor
                and res[-1] > stagnation_ratio * res[-1 - stagnation_window]):
            status = "stagnated"
            break
    m = j + 1
    Hm = H[:m, :m]
    if np.all(np.abs(np.diag(Hm)) > 0):
        y = sla.solve_triangular(Hm, e[:m])
    else:  # breakdown on a singular operator
        y = np.linalg.lstsq(Hm, e[:m], rcond=None)[0]
    x = Q[:m].T @ y
    true = np.linalg.norm(b - matvec(x)) / beta
    return GMRESResult(x, m, res, float(true), status, tol)


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

@dataclass
class Solution:
    problem: ProblemSpec
    system: System
    rho_tilde: np.ndarray
    rho1_tilde: np.ndarray
    rho2_tilde: np.ndarray
    rho1_hat: np.ndarray
    rho2_hat: np.ndarray
    gmres: GMRESResult
    timings: dict = field(default_factory=dict)

    @property
    def iterations(self) -> int:
        return self.gmres.iterations

    @property
    def converged(self) -> bool:
        return self.gmres.converged

    @property
    def n(self) -> int:
        return self.system.n

    def fine_density(self, vid):
        """(fine mesh, fine [rho1; rho2]) near vertex ``vid``."""
        from .rcip import reconstruct_fine_density

        R = self.system.Rs[vid]
        i = R.nodes
        v = np.concatenate([self.rho1_tilde[i], self.rho2_tilde[i]])
        return R.fine_mesh, reconstruct_fine_density(R, v)


def solve(problem: ProblemSpec, geometry: Geometry, mesh: PanelMesh, n_sub: int,
          tol: float = 1e-12, max_iter: int | None = None,
          cache: RCache | None = None, system: System | None = None) -> Solution:
    if system is None:
        system = setup(problem, geometry, mesh, n_sub, cache=cache)
    t0 = time.perf_counter()
    g = boundary_data(problem, system.mesh)
    t1 = time.perf_counter()
    res = gmres_solve(lambda v: reduced_matvec(system, v), g, tol, max_iter)
    t2 = time.perf_counter()
    r1t, r2t, r1h, r2h = recover(system, res.x)
    timings = {"T_build": system.t_build, "T_solve": t2 - t1,
               "T_total": system.t_build + (time.perf_counter() - t0)}
    return Solution(problem, system, res.x, r1t, r2t, r1h, r2h, res, timings)
