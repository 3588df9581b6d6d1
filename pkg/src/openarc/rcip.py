"""Compressed inverses for the 2x2 block system near singular points.

On Gamma* of a vertex the local operator is ``I + G*`` with
``G* = [[-I, A*], [B*, 0]]``, i.e. ``I + G* = [[0, A*], [B*, I]]``. The
compressed inverse ``R = P_W^T (I + G*_fine)^{-1} P`` is built by a forward
recursion over dyadic levels. Level ``i`` works on the type-b grid of
Gamma*_i (three panels per edge end, relative widths 1/2, 1/4, 1/4); its two
inner panels are the type-a grid of level ``i - 1``, whose block of the
system is replaced by ``R_{i-1}^{-1}``. Inverses are formed through the Schur
complement of that block, so ``R_{i-1}`` itself is never inverted.

Local systems correct only near-zone pairs, like the global system. Product
weights for well-separated pairs are no better than plain Gauss-Legendre and
carry the rounding of the monomial moment solve, which the recursion would
otherwise accumulate level by level.
"""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .geometry import PanelMesh, _panel_at, end_frame, local_gamma_star_mesh
from .quadrature import assemble
from .specfun import interp_matrix

COND_LIMIT = 1e15


class RCIPError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# prolongation
# ---------------------------------------------------------------------------

def prolongation(mesh_a: PanelMesh, mesh_b: PanelMesh) -> np.ndarray:
    """Panelwise polynomial prolongation from type-a nodes to type-b nodes."""
    P = np.zeros((mesh_b.n_nodes, mesh_a.n_nodes))
    for pb in range(mesh_b.n_panels):
        e, sa, sb = mesh_b.edge_of[pb], mesh_b.sa[pb], mesh_b.sb[pb]
        span = sb - sa
        cand = [pa for pa in range(mesh_a.n_panels)
                if mesh_a.edge_of[pa] == e
                and mesh_a.sa[pa] <= sa + 1e-12 * span and mesh_a.sb[pa] >= sb - 1e-12 * span]
        if not cand:
            raise RCIPError("type-b panel not covered by a type-a panel")
        pa = cand[0]
        rows, cols = mesh_b.panel_nodes(pb), mesh_a.panel_nodes(pa)
        if mesh_a.sa[pa] == sa and mesh_a.sb[pa] == sb:
            P[rows, cols] = np.eye(16)
            continue
        mid = 0.5 * (mesh_a.sa[pa] + mesh_a.sb[pa])
        half = 0.5 * (mesh_a.sb[pa] - mesh_a.sa[pa])
        P[rows, cols] = interp_matrix((mesh_a.s[cols] - mid) / half,
                                      (mesh_b.s[rows] - mid) / half)
    return P


def weighted_prolongation(P, mesh_a: PanelMesh, mesh_b: PanelMesh) -> np.ndarray:
    """``P_W = W_b P W_a^{-1}`` with parameter-space Gauss-Legendre weights.

    Products of two degree-15 interpolants are integrated exactly, so
    ``P_W^T P = I`` holds on curved edges too. The speed ``|r'|`` rides along
    with the kernel, which is equally smooth.
    """
    return mesh_b.wgl[:, None] * P / mesh_a.wgl[None, :]


def _blockdiag2(M):
    z = np.zeros_like(M)
    return np.block([[M, z], [z, M]])


# ---------------------------------------------------------------------------
# compressed inverse
# ---------------------------------------------------------------------------

@dataclass
class _Level:
    R_prev: np.ndarray | None  # R_{i-1}; None on level 1
    U: np.ndarray | None
    V: np.ndarray | None
    S_lu: tuple | None
    full_lu: tuple | None  # level-1 system factorization
    P: np.ndarray
    inner: np.ndarray
    outer: np.ndarray
    mesh_b: PanelMesh


@dataclass
class CompressedInverse:
    """R on the Gamma* coarse nodes of one vertex, block order [rho1; rho2]."""

    vertex: int
    nodes: np.ndarray  # global coarse node indices of Gamma*
    R: np.ndarray
    k: float
    n_sub: int
    ops: tuple
    levels: list | None = None
    fine_mesh: PanelMesh | None = None
    signature: str = ""
    _r1_lu: tuple | None = field(default=None, repr=False)

    @property
    def q(self) -> int:
        return self.nodes.size

    def blocks(self):
        return block_partition(self)

    def r1_lu(self):
        if self._r1_lu is None:
            R1 = self.R[: self.q, : self.q]
            self._r1_lu = _factor(R1, self.vertex, "R1")
        return self._r1_lu

    def r4_deviation(self) -> tuple[float, float]:
        """(max |R4 - I|, max |R4|) on Gamma*. The exact inverse of
        [[0, A], [B, I]] has a zero lower-right block, so R4 vanishes on
        Gamma* and the identity lives only off Gamma*."""
        R4 = self.R[self.q:, self.q:]
        return float(np.max(np.abs(R4 - np.eye(self.q)))), float(np.max(np.abs(R4)))


def block_partition(R: CompressedInverse):
    """(R1, R2, R3, R4) with ``R = [[R1, R3], [R2, R4]]`` in block order
    [rho1; rho2]: R2 maps rho1 into the rho2 rows, R3 rho2 into rho1."""
    q = R.q
    M = R.R
    return M[:q, :q], M[q:, :q], M[:q, q:], M[q:, q:]


def _factor(M, vid, where):
    if not np.all(np.isfinite(M)):
        raise RCIPError(f"non-finite local system at vertex {vid}, {where}")
    # S-type rows scale like the panel size and T-type rows like its inverse,
    # so pivots are judged after row equilibration
    scale = np.max(np.abs(M), axis=1)
    singular = np.any(scale == 0)
    lu, piv = sla.lu_factor(M, check_finite=False)
    if not singular:
        d = np.abs(np.diag(sla.lu_factor(M / scale[:, None], check_finite=False)[0]))
        singular = np.min(d) == 0 or np.max(d) / np.min(d) > COND_LIMIT
    if singular:
        raise RCIPError(f"singular local system at vertex {vid}, {where}: "
                        "refine the coarse mesh or check for a resonant local scale")
    return lu, piv


def _local_system(mesh_b, k, ops, correct_all=False, override=None):
    """``I + G*`` on a local grid, block order [rho1; rho2]."""
    if override is not None:
        A, B = override
    else:
        A = assemble(ops[0], mesh_b, k, correct_all=correct_all).full()
        B = assemble(ops[1], mesh_b, k, correct_all=correct_all).full()
    n = mesh_b.n_nodes
    return np.block([[np.zeros((n, n), dtype=complex), A], [B, np.eye(n)]])


def local_signature(mesh, vertices, vid, k, n_sub, ops) -> str:
    """Hash of the vertex-relative Gamma* geometry, k, n_sub and operators."""
    loc = local_gamma_star_mesh(mesh, vertices, vid, n_sub, n_sub, "a")
    scale = np.max(np.abs(loc.z))
    rel = np.round(loc.z / scale, 11)
    nrm = np.round(loc.normal, 11)
    h = hashlib.sha256()
    for arr in (rel.real, rel.imag, nrm.real, nrm.imag, np.array([scale, k, n_sub])):
        h.update(np.ascontiguousarray(arr + 0.0).tobytes())
    h.update(repr(tuple(ops)).encode())
    return h.hexdigest()


class RCache:
    """Thread-safe cache of compressed inverses keyed by local signature."""

    def __init__(self):
        self._store = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def get(self, key):
        with self._lock:
            val = self._store.get(key)
            if val is None:
                self.misses += 1
            else:
                self.hits += 1
            return val

    def put(self, key, value):
        with self._lock:
            self._store.setdefault(key, value)


def build_R(mesh: PanelMesh, vertices, vid: int, k: float, n_sub: int,
            ops=("S", "T"), *, retain: bool = True, cache: RCache | None = None,
            star_blocks=None) -> CompressedInverse:
    """Compressed inverse for vertex ``vid`` after ``n_sub`` dyadic levels.

    ``star_blocks`` optionally supplies the coarse (A*, B*) blocks used when
    ``n_sub == 0``, making the compressed system identical to the plain one.
    """
    if n_sub < 0:
        raise ValueError("n_sub must be non-negative")
    nodes = mesh.star_nodes(vid)
    sig = local_signature(mesh, vertices, vid, k, n_sub, ops)
    if cache is not None:
        hit = cache.get(sig)
        if hit is not None and (hit.levels is not None or not retain):
            fine = (_fine_mesh(mesh, vertices, vid, n_sub) if n_sub
                    else local_gamma_star_mesh(mesh, vertices, vid, 0, 0, "a"))
            return CompressedInverse(vid, nodes, hit.R, k, n_sub, tuple(ops), hit.levels,
                                     fine, sig)
    if n_sub == 0:
        mesh_a = local_gamma_star_mesh(mesh, vertices, vid, 0, 0, "a")
        M = _local_system(mesh_a, k, ops, correct_all=False, override=star_blocks)
        lu = _factor(M, vid, "level 0")
        R = sla.lu_solve(lu, np.eye(M.shape[0]))
        levels, fine = None, mesh_a
    else:
        R, levels, fine = _forward(mesh, vertices, vid, k, n_sub, ops)
    out = CompressedInverse(vid, nodes, R, k, n_sub, tuple(ops),
                            levels if retain else None, fine, sig)
    if cache is not None:
        cache.put(sig, out)
    return out


def _forward(mesh, vertices, vid, k, n_sub, ops):
    levels = []
    R = None
    for i in range(1, n_sub + 1):
        mesh_a = local_gamma_star_mesh(mesh, vertices, vid, i, n_sub, "a")
        mesh_b = local_gamma_star_mesh(mesh, vertices, vid, i, n_sub, "b")
        P = prolongation(mesh_a, mesh_b)
        P2, PW2 = _blockdiag2(P), _blockdiag2(weighted_prolongation(P, mesh_a, mesh_b))
        M = _local_system(mesh_b, k, ops)
        nb = mesh_b.n_nodes
        inner1 = np.concatenate([e * 48 + np.arange(16, 48) for e in range(nb // 48)])
        inner = np.concatenate([inner1, nb + inner1])
        outer = np.setdiff1d(np.arange(2 * nb), inner)
        if R is None:
            lu = _factor(M, vid, f"level {i}")
            Minv_P = sla.lu_solve(lu, P2)
            lev = _Level(None, None, None, None, lu, P2, inner, outer, mesh_b)
        else:
            U = M[np.ix_(inner, outer)]
            V = M[np.ix_(outer, inner)]
            D = M[np.ix_(outer, outer)]
            s_lu = _factor(D - V @ (R @ U), vid, f"level {i}")
            # M^{-1} P via the Schur complement of the embedded R^{-1} block
            RPin = R @ P2[inner]
            yout = sla.lu_solve(s_lu, P2[outer] - V @ RPin)
            Minv_P = np.empty(P2.shape, dtype=complex)
            Minv_P[inner] = RPin - R @ (U @ yout)
            Minv_P[outer] = yout
            lev = _Level(R, U, V, s_lu, None, P2, inner, outer, mesh_b)
        R = PW2.T @ Minv_P
        levels.append(lev)
    return R, levels, _fine_mesh(mesh, vertices, vid, n_sub)


def _fine_mesh(mesh, vertices, vid, n_sub) -> PanelMesh:
    """All fine panels of Gamma* per edge end, outermost first."""
    plist = []
    for eid, sv, sign, width in end_frame(mesh, vid, vertices):
        for i in range(n_sub, 0, -1):
            wi = width * 2.0 ** (i - n_sub)
            plist.append(_panel_at(eid, sv, sign, 0.5 * wi, wi, True))
        w1 = width * 2.0 ** (1 - n_sub)
        plist.append(_panel_at(eid, sv, sign, 0.25 * w1, 0.5 * w1, True))
        plist.append(_panel_at(eid, sv, sign, 0.0, 0.25 * w1, True))
    return PanelMesh(mesh.edges, plist, origin=vertices[vid].location)


def reconstruct_fine_density(R: CompressedInverse, rho_tilde):
    """Fine-grid [rho1; rho2] on ``R.fine_mesh`` from the transformed coarse
    density on Gamma* (block order [rho1; rho2], length 2q).

    For ``n_sub = 0`` this is the weight-corrected density ``R rho_tilde``.
    """
    rho_tilde = np.asarray(rho_tilde, dtype=complex)
    if rho_tilde.size != 2 * R.q:
        raise ValueError("expected the two Gamma* components of the coarse density")
    if R.n_sub == 0:
        return R.R @ rho_tilde
    if R.levels is None:
        raise RCIPError("per-level factorizations were not retained; "
                        "rebuild the compressed inverse with retain=True")
    nends = R.q // 32
    n_fine = R.fine_mesh.n_nodes  # per component
    per_end = n_fine // nends
    fine = np.zeros(2 * n_fine, dtype=complex)
    v = rho_tilde
    for i in range(R.n_sub, 0, -1):
        lev = R.levels[i - 1]
        x = lev.P @ v
        if lev.full_lu is not None:
            nb = lev.mesh_b.n_nodes
            y = sla.lu_solve(lev.full_lu, x)
            for c in range(2):
                for e in range(nends):
                    dst = c * n_fine + e * per_end + (per_end - 48)
                    fine[dst:dst + 48] = y[c * nb + e * 48: c * nb + e * 48 + 48]
            break
        xin, xout = x[lev.inner], x[lev.outer]
        yout = sla.lu_solve(lev.S_lu, xout - lev.V @ (lev.R_prev @ xin))
        # outer indices, per component, are the outermost panel of each end
        j = R.n_sub - i
        for c in range(2):
            for e in range(nends):
                dst = c * n_fine + e * per_end + 16 * j
                src = (c * nends + e) * 16
                fine[dst:dst + 16] = yout[src:src + 16]
        v = xin - lev.U @ yout
    return fine
