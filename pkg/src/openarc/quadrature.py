"""Nystrom assembly with panelwise kernel-split product integration.

Each source panel is mapped to the local complex coordinate
``t = (tau - c) / h`` with ``c, h`` the chord midpoint and half chord, so the
panel runs from ``t = -1`` to ``t = 1`` along a (slightly) curved path. For a
target ``z'`` in the same coordinate the monomial moments

    mu_m = int t^m / (t - z') dt,   nu_m = int t^m / (t - z')^2 dt,
    I_m  = int t^m log(t - z') dt

along the panel path are computed and turned into interpolatory weights by a
transposed Vandermonde solve. Cauchy moments use the upward recursion
``mu_m = z' mu_{m-1} + (1 - (-1)^m) / m``; when ``z'`` lies between the
panel and its chord, ``mu_0`` picks up a residue ``-+2 pi i``. Targets on the
panel itself get principal values and Hadamard finite parts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.spatial import cKDTree

from . import kernels
from .specfun import gauss_legendre, gauss_legendre_16

NP = 16
NEAR_FACTOR = 1.2
RECURSION_DISTANCE = 0.5


class QuadratureError(ValueError):
    pass


# ---------------------------------------------------------------------------
# local panel and product weights
# ---------------------------------------------------------------------------

class LocalPanel:
    """A panel in its local coordinate, given by its 16 mapped nodes."""

    def __init__(self, t):
        t = np.asarray(t, dtype=complex)
        if t.shape != (NP,):
            raise QuadratureError("a panel carries exactly 16 nodes")
        self.t = t
        vt = np.vander(t, NP, increasing=True).T  # V^T, V_jm = t_j^m
        self._lu = sla.lu_factor(vt)
        # chord-to-curve profile y(x), used to locate targets between the two
        self._bow = np.polynomial.Polynomial.fit(t.real, t.imag, NP - 1, domain=[-1, 1])
        self.bowed = np.max(np.abs(t.imag)) > 1e-14

    def solve(self, moments):
        """Interpolatory weights from moments of shape (M, 16)."""
        return sla.lu_solve(self._lu, np.asarray(moments).T).T

    def plain_weights(self):
        m = np.arange(NP)
        return self.solve(((1 - (-1.0) ** (m + 1)) / (m + 1))[None, :])[0]

    def bow_side(self, z):
        """+1 / -1 for targets inside the region between a panel bulging
        up / down and its chord, 0 elsewhere."""
        z = np.asarray(z, dtype=complex)
        out = np.zeros(z.shape, dtype=int)
        if not self.bowed:
            return out
        inside = np.abs(z.real) < 1.0
        y = np.where(inside, self._bow(np.clip(z.real, -1, 1)), 0.0)
        up = inside & (y > 0) & (z.imag >= 0) & (z.imag < y)
        down = inside & (y < 0) & (z.imag < 0) & (z.imag > y)
        out[up] = 1
        out[down] = -1
        return out

    def _mu0(self, z, tangent):
        """int dt / (t - z) along the panel (principal value on the panel)."""
        mu0 = np.log(1 - z) - np.log(-1 - z)
        chord = (z.imag == 0) & (np.abs(z.real) < 1)
        if np.any(chord):  # limit from above
            zr = z.real[chord]
            mu0[chord] = np.log(1 - zr) - np.log(1 + zr) + 1j * np.pi
        mu0 = mu0 - 2j * np.pi * self.bow_side(z)
        on = tangent != 0
        if np.any(on):
            zo, to = z[on], tangent[on]
            mu0[on] = (np.log(np.abs(1 - zo)) - np.log(np.abs(1 + zo))
                       + 1j * (np.angle((1 - zo) / to) + np.angle(-to / (-1 - zo))))
        return mu0

    def moments(self, z, tangent=None):
        """(mu, nu, I) with shapes (M, 17), (M, 16), (M, 16)."""
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        tangent = (np.zeros_like(z) if tangent is None
                   else np.broadcast_to(np.asarray(tangent, dtype=complex), z.shape))
        node_hit = np.min(np.abs(z[:, None] - self.t[None, :]), axis=1) == 0
        if np.any(node_hit & (tangent == 0)):
            raise QuadratureError("target coincides with a panel node; "
                                  "use the on-panel path with its tangent")
        m = z.size
        mu = np.empty((m, NP + 1), dtype=complex)
        nu = np.empty((m, NP), dtype=complex)
        lm = np.empty((m, NP), dtype=complex)
        dist = np.where(np.abs(z.real) <= 1, np.abs(z.imag),
                        np.minimum(np.abs(z - 1), np.abs(z + 1)))
        rec = (dist < RECURSION_DISTANCE) | (tangent != 0) | (self.bow_side(z) != 0)
        if np.any(rec):
            zr, tr = z[rec], tangent[rec]
            mur = np.empty((zr.size, NP + 1), dtype=complex)
            mur[:, 0] = self._mu0(zr, tr)
            for j in range(1, NP + 1):
                mur[:, j] = zr * mur[:, j - 1] + (1 - (-1) ** j) / j
            nur = np.empty((zr.size, NP), dtype=complex)
            nur[:, 0] = -1 / (1 - zr) - 1 / (1 + zr)
            for j in range(1, NP):
                nur[:, j] = mur[:, j - 1] + zr * nur[:, j - 1]
            l1 = np.log(1 - zr)
            lm1 = l1 - mur[:, 0]
            j = np.arange(NP)
            lmr = ((l1[:, None] - (-1.0) ** (j + 1) * lm1[:, None]) / (j + 1)
                   - mur[:, 1:] / (j + 1))
            mu[rec], nu[rec], lm[rec] = mur, nur, lmr
        far = ~rec
        if np.any(far):
            x, w = _gl64()
            zf = z[far]
            pw = x[None, :] ** np.arange(NP + 1)[:, None]  # (17, 64)
            inv = 1.0 / (x[None, :] - zf[:, None])
            mu[far] = (inv * w) @ pw.T
            nu[far] = (inv * inv * w) @ pw[:NP].T
            lm[far] = (np.log(x[None, :] - zf[:, None]) * w) @ pw[:NP].T
        return mu, nu, lm

    def weights(self, z, tangent=None):
        """Complex weights (log, Cauchy, hypersingular), each of shape (M, 16)."""
        mu, nu, lm = self.moments(z, tangent)
        return self.solve(lm), self.solve(mu[:, :NP]), self.solve(nu)


_GL64 = None


def _gl64():
    global _GL64
    if _GL64 is None:
        r = gauss_legendre(64)
        _GL64 = (r.nodes, r.weights)
    return _GL64


def _as_panel(panel):
    return panel if isinstance(panel, LocalPanel) else LocalPanel(panel)


def product_weights_log(panel, z, tangent=None):
    """Weights for ``int f(t) log(t - z) dt`` along the panel.

    ``panel`` is a LocalPanel or its 16 local nodes. For real ``f`` on a
    straight panel the real part gives ``int f log|t - z| dt``. Targets on the
    panel pass their tangent direction.
    """
    return _as_panel(panel).weights(z, tangent)[0]


def product_weights_cauchy(panel, z, tangent=None):
    """Weights for ``int f(t) / (t - z) dt`` (principal value on the panel)."""
    return _as_panel(panel).weights(z, tangent)[1]


def product_weights_hyper(panel, z, tangent=None):
    """Weights for ``int f(t) / (t - z)^2 dt`` (finite part on the panel)."""
    return _as_panel(panel).weights(z, tangent)[2]


# ---------------------------------------------------------------------------
# near zone
# ---------------------------------------------------------------------------

def near_targets(mesh, targets, factor: float = NEAR_FACTOR):
    """For each source panel, the indices of ``targets`` inside its near zone.

    Returns a list indexed by panel. The zone is a disc about the panel
    midpoint with radius ``factor`` times the panel arclength.
    """
    targets = np.atleast_1d(np.asarray(targets, dtype=complex))
    if targets.size == 0:
        return [np.zeros(0, dtype=int) for _ in range(mesh.n_panels)]
    tree = cKDTree(np.column_stack([targets.real, targets.imag]))
    centers = np.column_stack([mesh.zmid.real, mesh.zmid.imag])
    hits = tree.query_ball_point(centers, factor * mesh.panel_length)
    return [np.array(sorted(h), dtype=int) for h in hits]


def near_panels(mesh, targets, factor: float = NEAR_FACTOR):
    """Per target, the list of source panels whose near zone contains it."""
    per_panel = near_targets(mesh, targets, factor)
    out = [[] for _ in range(np.size(targets))]
    for p, idx in enumerate(per_panel):
        for i in idx:
            out[i].append(p)
    return out


def _mesh_pairs(mesh, factor, correct_all):
    """Target node indices to correct for each source panel of the mesh."""
    n = mesh.n_nodes
    if correct_all:
        return [np.arange(n)] * mesh.n_panels
    zone = near_targets(mesh, mesh.z, factor)
    out = []
    for p in range(mesh.n_panels):
        extra = [np.arange(16 * q, 16 * q + 16) for q in [p] + mesh.neighbors(p)]
        out.append(np.union1d(zone[p], np.concatenate(extra)))
    return out


# ---------------------------------------------------------------------------
# panel corrections
# ---------------------------------------------------------------------------

def local_panel(mesh, p) -> tuple[LocalPanel, complex, complex]:
    sl = mesh.panel_nodes(p)
    c = 0.5 * (mesh.za[p] + mesh.zb[p])
    h = 0.5 * (mesh.zb[p] - mesh.za[p])
    return LocalPanel((mesh.z[sl] - c) / h), c, h


def panel_correction(op, mesh, p, k, z, nz=None, self_index=None, tangent=None,
                     lp=None):
    """Correction block (targets x 16 sources of panel ``p``).

    The block is the corrected kernel-split entry minus the plain
    Gauss-Legendre entry ``G(z, tau_j) wl_j``. ``self_index[i]`` is the
    local node index when target ``i`` is node of panel ``p`` (else -1);
    those entries return the full diagonal value, as the plain rule has no
    diagonal. ``tangent`` marks other on-panel targets (zero elsewhere).
    """
    sl = mesh.panel_nodes(p)
    tau, dtau, ntau = mesh.z[sl], mesh.dz[sl], mesh.normal[sl]
    wl, wgl = mesh.wl[sl], mesh.wgl[sl]
    if lp is None:
        lp, c, h = local_panel(mesh, p)
    else:
        lp, c, h = lp
    z = np.asarray(z, dtype=complex)
    m = z.size
    tan_local = np.zeros(m, dtype=complex)
    if self_index is not None:
        on = self_index >= 0
        tan_local[on] = dtau[self_index[on]] / h
    else:
        self_index = np.full(m, -1)
    if tangent is not None:
        tg = np.asarray(tangent, dtype=complex)
        tan_local = np.where(tg != 0, tg / h, tan_local)
    tz = (z - c) / h
    wlog, wc, wh = lp.weights(tz, tan_local)
    w0 = lp.plain_weights()
    zz = z[:, None]
    nzz = None if nz is None else np.asarray(nz)[:, None]
    diag = np.zeros((m, NP), dtype=bool)
    rows = np.flatnonzero(self_index >= 0)
    diag[rows, self_index[rows]] = True
    d = zz - tau[None, :]
    r = np.where(diag, 1.0, np.abs(d))
    # log channel
    gl = kernels.log_coefficient(op, zz, tau[None, :], ntau[None, :], k, nzz)
    unit = np.abs(dtau) / dtau
    eff_log = (h * (np.log(h) * w0[None, :] + wlog) * unit[None, :]).real
    plain_log = np.where(diag, 0.0, np.log(r) * wl[None, :])
    out = gl * (eff_log - plain_log)
    # Cauchy channel
    gc = kernels.cauchy_factor(op, tau[None, :], ntau[None, :], nzz)
    dd = np.where(diag, 1.0, d)
    if gc is not None:
        eff = (gc * wc / 1j).real
        plain = np.where(diag, 0.0, (gc * dtau[None, :] * wgl[None, :] / (1j * (-dd))).real)
        out = out + eff - plain
    gh = kernels.hyper_factor(op, nzz)
    if gh is not None:
        eff = (gh * wh / (1j * h)).real
        plain = np.where(diag, 0.0, (gh * dtau[None, :] * wgl[None, :] / (1j * dd * dd)).real)
        out = out + eff - plain
    if rows.size:
        out[diag] += kernels.diagonal_g0(op, k) * wl[self_index[rows]]
    return out


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------

@dataclass
class OperatorSet:
    """One layer operator on a mesh: smooth + qc is the full Nystrom matrix.

    ``star`` holds the fully corrected entries between Gamma* nodes of each
    vertex; ``circ = smooth + qc - star``.
    """

    op: str
    k: float
    smooth: np.ndarray
    qc: sp.csr_matrix
    star: sp.csr_matrix
    star_index: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.smooth.shape[0]

    def full(self) -> np.ndarray:
        return self.smooth + self.qc.toarray()

    def matvec(self, x):
        return self.smooth @ x + self.qc @ x

    def circ_matvec(self, x):
        return self.smooth @ x + self.qc @ x - self.star @ x

    def star_block(self, vid) -> np.ndarray:
        idx = self.star_index[vid]
        return self.star[idx][:, idx].toarray()


def smooth_matrix(op, mesh, k, targets=None, nz=None):
    """Plain Gauss-Legendre kernel matrix (targets x nodes); zero diagonal on
    the mesh itself."""
    self_targets = targets is None
    if self_targets:
        targets, nz = mesh.z, mesh.normal
    targets = np.asarray(targets, dtype=complex)
    out = np.zeros((targets.size, mesh.n_nodes), dtype=complex)
    nzz = None if nz is None else np.asarray(nz)[:, None]
    tau, ntau = mesh.z[None, :], mesh.normal[None, :]
    chunk = max(1, 2_000_000 // max(1, mesh.n_nodes))
    for a in range(0, targets.size, chunk):
        b = min(targets.size, a + chunk)
        zz = targets[a:b, None]
        d = np.abs(zz - tau)
        coincide = d == 0
        if np.any(coincide) and not self_targets:
            raise QuadratureError("target coincides with a mesh node")
        zs = np.where(coincide, zz + 1.0, zz)
        vals = kernels.kernel(op, zs, tau, ntau, k, None if nzz is None else nzz[a:b])
        out[a:b] = np.where(coincide, 0.0, vals * mesh.wl[None, :])
    return out


def assemble(op, mesh, k, vertices=None, *, near_factor=NEAR_FACTOR,
             correct_all=False) -> OperatorSet:
    """Assemble ``op`` on ``mesh`` as an OperatorSet.

    ``correct_all`` applies product integration to every target-panel pair
    (used on the small local grids of the compressed-inverse recursion).
    """
    if op not in kernels.OPS:
        raise QuadratureError(f"unknown operator {op!r}")
    n = mesh.n_nodes
    smooth = smooth_matrix(op, mesh, k)
    rows, cols, vals = [], [], []
    for p, tgt in enumerate(_mesh_pairs(mesh, near_factor, correct_all)):
        if tgt.size == 0:
            continue
        self_index = np.where(mesh.panel_of[tgt] == p, tgt - 16 * p, -1)
        blk = panel_correction(op, mesh, p, k, mesh.z[tgt], mesh.normal[tgt], self_index)
        rows.append(np.repeat(tgt, NP))
        cols.append(np.tile(np.arange(16 * p, 16 * p + 16), tgt.size))
        vals.append(blk.ravel())
    if rows:
        qc = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                           shape=(n, n))
    else:
        qc = sp.csr_matrix((n, n), dtype=complex)
    star_index = {vid: mesh.star_nodes(vid) for vid in mesh.gamma_star}
    srows, scols, svals = [], [], []
    for vid, idx in star_index.items():
        blk = smooth[np.ix_(idx, idx)] + qc[idx][:, idx].toarray()
        srows.append(np.repeat(idx, idx.size))
        scols.append(np.tile(idx, idx.size))
        svals.append(blk.ravel())
    if srows:
        star = sp.csr_matrix((np.concatenate(svals), (np.concatenate(srows), np.concatenate(scols))),
                             shape=(n, n))
    else:
        star = sp.csr_matrix((n, n), dtype=complex)
    return OperatorSet(op, k, smooth, qc, star, star_index)


def assemble_dense(op, mesh, k, **kw) -> np.ndarray:
    return assemble(op, mesh, k, **kw).full()


# ---------------------------------------------------------------------------
# off-surface potentials
# ---------------------------------------------------------------------------

def potential(op, mesh, k, targets, density, *, near_factor=NEAR_FACTOR,
              on_panel=None, on_tangent=None):
    """Layer potential ``op`` (S or K) of ``density`` at off-surface targets.

    Targets lying on the curve pass ``on_panel`` (panel index, -1 elsewhere)
    and the curve tangent ``on_tangent`` there; they are treated with the
    on-panel limits of the panel they sit on.
    """
    if op not in ("S", "K"):
        raise QuadratureError("off-surface evaluation supports S and K")
    targets = np.atleast_1d(np.asarray(targets, dtype=complex))
    density = np.asarray(density, dtype=complex)
    out = smooth_matrix(op, mesh, k, targets) @ density
    if on_panel is None:
        on_panel = np.full(targets.size, -1)
        on_tangent = np.zeros(targets.size, dtype=complex)
    zone = near_targets(mesh, targets, near_factor)
    for p in range(mesh.n_panels):
        idx = np.union1d(zone[p], np.flatnonzero(on_panel == p))
        if idx.size == 0:
            continue
        tg = np.where(on_panel[idx] == p, on_tangent[idx], 0.0)
        blk = panel_correction(op, mesh, p, k, targets[idx], tangent=tg)
        out[idx] += blk @ density[mesh.panel_nodes(p)]
    return out
