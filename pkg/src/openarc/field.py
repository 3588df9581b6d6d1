"""Scattered and total fields off (and on) the curve, field grids and errors.

The Dirichlet field is ``u = S rho2`` and the Neumann field ``u = K rho2``.
Away from singular points the weight-corrected density on the coarse mesh is
used with the ordinary near-zone correction stencils. Targets within the
Gamma* disc of a vertex instead see the Gamma* part of the curve through the
density reconstructed on the fine local mesh, whose panels are small enough
for the stencils to resolve the endpoint singularity.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .quadrature import NEAR_FACTOR, near_targets, potential
from .solver import Solution, incident_field

BAND = 1e-3
CHUNK = 1024
_POLY = 64


class FieldError(ValueError):
    pass


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    bbox: tuple  # (xmin, xmax, ymin, ymax)
    nx: int
    ny: int
    band: float = BAND

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise FieldError("grid needs nx, ny >= 1")
        xmin, xmax, ymin, ymax = self.bbox
        if not (xmax >= xmin and ymax >= ymin):
            raise FieldError("bounding box must be (xmin, xmax, ymin, ymax)")

    def points(self) -> np.ndarray:
        """Complex grid points, shape (ny, nx), row-major with y outermost."""
        xmin, xmax, ymin, ymax = self.bbox
        x = np.linspace(xmin, xmax, self.nx)
        y = np.linspace(ymin, ymax, self.ny)
        return x[None, :] + 1j * y[:, None]


@dataclass
class FieldGrid:
    bbox: tuple
    nx: int
    ny: int
    values: np.ndarray  # (ny, nx) complex, NaN where masked
    mask: np.ndarray  # (ny, nx) bool, True inside the exclusion band

    def same_shape(self, other) -> bool:
        return (self.nx, self.ny) == (other.nx, other.ny) and np.allclose(self.bbox, other.bbox,
                                                                          rtol=0, atol=0)


@dataclass
class ErrorGrid:
    bbox: tuple
    nx: int
    ny: int
    values: np.ndarray  # (ny, nx) real, NaN where masked
    mask: np.ndarray
    E2: float

    @property
    def max_error(self) -> float:
        return float(np.nanmax(self.values)) if np.any(~self.mask) else 0.0


# ---------------------------------------------------------------------------
# exclusion band
# ---------------------------------------------------------------------------

def _polyline(mesh, p):
    e = mesh.edges[mesh.edge_of[p]]
    s = np.linspace(mesh.sa[p], mesh.sb[p], _POLY + 1)
    return e.z(s)


def _segment_distance(z, a, b):
    """Distance from points ``z`` (m,) to segments ``a -> b`` (n,), minimum over n."""
    d = b - a
    dd = np.maximum(np.abs(d) ** 2, 1e-300)
    t = np.clip(((z[:, None] - a[None, :]) * np.conj(d[None, :])).real / dd[None, :], 0, 1)
    return np.min(np.abs(z[:, None] - a[None, :] - t * d[None, :]), axis=1)


def curve_mask(mesh, targets, band: float = BAND) -> np.ndarray:
    """True where a target lies within ``band`` local panel arclengths of the curve."""
    targets = np.asarray(targets, dtype=complex)
    flat = targets.ravel()
    mask = np.zeros(flat.size, dtype=bool)
    if band <= 0 or flat.size == 0:
        return mask.reshape(targets.shape)
    # a target within band*L of panel p is inside its near zone (band < 1)
    zone = near_targets(mesh, flat, NEAR_FACTOR)
    for p, idx in enumerate(zone):
        idx = idx[~mask[idx]]
        if idx.size == 0:
            continue
        poly = _polyline(mesh, p)
        dist = _segment_distance(flat[idx], poly[:-1], poly[1:])
        mask[idx[dist < band * mesh.panel_length[p]]] = True
    return mask.reshape(targets.shape)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def _field_op(solution: Solution) -> str:
    return "S" if solution.problem.bc == "dirichlet" else "K"


class _Evaluator:
    """Holds the per-vertex fine densities of one solution."""

    def __init__(self, solution: Solution, near_factor=NEAR_FACTOR):
        self.sol = solution
        self.mesh = solution.system.mesh
        self.k = solution.problem.k
        self.op = _field_op(solution)
        self.near_factor = near_factor
        self.vertices = solution.system.geometry.vertices
        self.fine = {}
        self.radius = {}
        for vid in self.mesh.gamma_star:
            loc = self.vertices[vid].location
            ends = []
            for outer, inner in self.mesh.gamma_star[vid]:
                ends += [self.mesh.za[outer], self.mesh.zb[outer],
                         self.mesh.za[inner], self.mesh.zb[inner]]
            self.radius[vid] = float(np.max(np.abs(np.array(ends) - loc)))
        self.star_panels = {vid: {p for pair in self.mesh.gamma_star[vid] for p in pair}
                            for vid in self.mesh.gamma_star}

    def fine_density(self, vid):
        if vid not in self.fine:
            fm, rho = self.sol.fine_density(vid)
            self.fine[vid] = (fm, rho[fm.n_nodes:])
        return self.fine[vid]

    def near_vertices(self, targets, on_panel):
        """Per target, the tuple of vertices whose fine density it needs."""
        out = [[] for _ in range(targets.size)]
        for vid, rad in self.radius.items():
            loc = self.vertices[vid].location
            hit = np.abs(targets - loc) < rad
            if on_panel is not None:
                hit |= np.isin(on_panel, list(self.star_panels[vid]))
            for i in np.flatnonzero(hit):
                out[i].append(vid)
        return [tuple(v) for v in out]

    def _fine_on_curve(self, vid, fm, on_edge, on_s):
        """Fine panel index and tangent for on-curve targets (edge, parameter)."""
        pan = np.full(on_edge.size, -1)
        tan = np.zeros(on_edge.size, dtype=complex)
        for j, (e, s) in enumerate(zip(on_edge, on_s)):
            if e < 0:
                continue
            for q, p in enumerate(fm.panels):
                if p.edge == e and p.sa <= s - p.anchor <= p.sb:
                    pan[j] = q
                    dz = fm.edges[e].dz(s)
                    tan[j] = dz / abs(dz)
                    break
        return pan, tan

    def evaluate(self, targets, on=None):
        """Field at ``targets``. ``on`` optionally gives per-target
        (coarse panel, edge, parameter, tangent) for points on the curve,
        with panel -1 for points off it."""
        rho = self.sol.rho2_hat
        out = np.zeros(targets.size, dtype=complex)
        on_panel = None if on is None else on[0]
        groups = {}
        for i, key in enumerate(self.near_vertices(targets, on_panel)):
            groups.setdefault(key, []).append(i)
        for key, idx in groups.items():
            idx = np.array(idx)
            dens = rho.copy()
            for vid in key:
                dens[self.mesh.star_nodes(vid)] = 0.0
            kw = {}
            if on is not None:
                pan = on[0][idx].copy()
                for vid in key:
                    pan[np.isin(pan, list(self.star_panels[vid]))] = -1
                kw = {"on_panel": pan, "on_tangent": on[3][idx]}
            out[idx] = potential(self.op, self.mesh, self.k, targets[idx], dens,
                                 near_factor=self.near_factor, **kw)
            for vid in key:
                fm, frho = self.fine_density(vid)
                kw = {}
                if on is not None:
                    pan, tan = self._fine_on_curve(vid, fm, on[1][idx], on[2][idx])
                    kw = {"on_panel": pan, "on_tangent": tan}
                out[idx] += potential(self.op, fm, self.k, targets[idx] - fm.origin, frho,
                                      near_factor=self.near_factor, **kw)
        return out


def eval_field(targets, solution: Solution, *, band: float = BAND,
               near_factor: float = NEAR_FACTOR, workers: int = 1,
               require_converged: bool = True) -> np.ndarray:
    """Scattered field at off-curve ``targets`` (any shape).

    Targets within the exclusion band of the curve come back as NaN.
    """
    if require_converged and not solution.converged:
        raise FieldError("solution did not converge; pass require_converged=False to override")
    targets = np.asarray(targets, dtype=complex)
    flat = targets.ravel()
    mask = curve_mask(solution.system.mesh, flat, band)
    out = np.full(flat.size, np.nan + 0j)
    ev = _Evaluator(solution, near_factor)
    live = np.flatnonzero(~mask)
    chunks = [live[i:i + CHUNK] for i in range(0, live.size, CHUNK)]
    # fine densities are filled before threads share the evaluator
    for vid in ev.radius:
        ev.fine_density(vid)

    def run(c):
        out[c] = ev.evaluate(flat[c])

    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(run, chunks))
    else:
        for c in chunks:
            run(c)
    return out.reshape(targets.shape)


def eval_total_field(targets, solution: Solution, **kw) -> np.ndarray:
    """Incident plane wave plus scattered field."""
    theta = solution.problem.theta
    if theta is None:
        raise FieldError("total field needs an incident plane wave")
    targets = np.asarray(targets, dtype=complex)
    return incident_field(targets, solution.problem.k, theta) + eval_field(targets, solution, **kw)


def boundary_samples(mesh, per_panel: int = 1):
    """Points on the curve between Gauss nodes: (z, coarse panel, edge, parameter,
    unit tangent). The sample sits midway between the middle two nodes of each
    of ``per_panel`` equal sub-intervals of every panel."""
    from .specfun import gauss_legendre_16

    t = gauss_legendre_16().nodes
    mids = 0.5 * (t[:-1] + t[1:])
    pick = mids[np.linspace(0, mids.size - 1, per_panel + 2).round().astype(int)[1:-1]]
    zs, pans, eids, ss, tans = [], [], [], [], []
    for p in range(mesh.n_panels):
        e = mesh.edges[mesh.edge_of[p]]
        s = 0.5 * (mesh.sa[p] + mesh.sb[p]) + 0.5 * (mesh.sb[p] - mesh.sa[p]) * pick
        dz = e.dz(s)
        zs.append(e.z(s))
        tans.append(dz / np.abs(dz))
        pans.append(np.full(s.size, p))
        eids.append(np.full(s.size, mesh.edge_of[p]))
        ss.append(s)
    return tuple(np.concatenate(a) for a in (zs, pans, eids, ss, tans))


def eval_on_curve(solution: Solution, samples, total: bool = False) -> np.ndarray:
    """Field on the curve at ``samples`` from :func:`boundary_samples`.

    For the Dirichlet single-layer representation this is the continuous
    boundary trace; for the Neumann representation it is the principal value.
    """
    z, pan, eid, s, tan = samples
    ev = _Evaluator(solution)
    u = ev.evaluate(np.asarray(z, dtype=complex), on=(np.asarray(pan), np.asarray(eid),
                                                      np.asarray(s), np.asarray(tan)))
    if total:
        u = u + incident_field(z, solution.problem.k, solution.problem.theta)
    return u


def field_grid(solution: Solution, spec: GridSpec, total: bool = False,
               workers: int = 1, **kw) -> FieldGrid:
    pts = spec.points()
    fn = eval_total_field if total else eval_field
    vals = fn(pts, solution, band=spec.band, workers=workers, **kw)
    return FieldGrid(tuple(spec.bbox), spec.nx, spec.ny, vals, np.isnan(vals))


def compare_grids(grid: FieldGrid, ref: FieldGrid) -> ErrorGrid:
    if not grid.same_shape(ref):
        raise FieldError("field grids differ in shape or bounding box")
    mask = grid.mask | ref.mask
    err = np.where(mask, np.nan, np.abs(grid.values - ref.values))
    live = ~mask
    den = np.linalg.norm(ref.values[live])
    num = np.linalg.norm((grid.values - ref.values)[live])
    e2 = float(num / den) if den > 0 else float(num)
    return ErrorGrid(grid.bbox, grid.nx, grid.ny, err, mask, e2)


def error_grid(sol: Solution, refsol: Solution, spec: GridSpec, total: bool = False,
               workers: int = 1) -> ErrorGrid:
    """Pointwise |u - u_ref| and the relative l2 error E2 on a grid."""
    if sol.problem.k != refsol.problem.k:
        raise FieldError("solutions are for different wavenumbers")
    return compare_grids(field_grid(sol, spec, total, workers), field_grid(refsol, spec, total, workers))

