"""Edge curves, singular-point registry and composite panel meshes.

Points in the plane are stored as complex numbers ``x + iy``. Every edge
carries its own parameter ``s``; the unit normal is the unit tangent rotated
by -pi/2, i.e. ``n = -i * z'(s) / |z'(s)|``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .specfun import gauss_legendre_16

# k values pinned for the reduced-scale field images
K_EIGHT_CORNER = 83.58017152213590
K_SEVEN_BRANCH = 13.57645917713826

MERGE_TOL = 1e-10
MISMATCH_TOL = 1e-6


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class EdgeCurve:
    """One smooth parametrised arc.

    ``kind`` selects the base curve ``w(u)``; ``scale``/``shift`` apply the
    similarity ``z = scale * w + shift``; ``reversed`` runs the parameter
    backwards so that ``s = a`` maps to ``u = b``.
    """

    kind: str
    params: tuple = ()
    interval: tuple = (0.0, 1.0)
    reversed: bool = False
    scale: complex = 1.0
    shift: complex = 0.0
    closed: bool = False

    def _u(self, s):
        a, b = self.interval
        return a + b - s if self.reversed else s

    def _base(self, u):
        k = self.kind
        if k == "line":
            p, d = self.params
            return p + d * u, d * np.ones_like(u)
        if k == "parabola":
            return u + 1j * u * u, 1.0 + 2j * u
        if k == "cosine-arc":
            h = 0.5 * np.pi
            return h * u + 1j * np.cos(h * u), h - 1j * h * np.sin(h * u)
        if k == "log-spiral":
            (c,) = self.params
            e = np.exp(c * u)
            return e, c * e
        if k == "circle":
            (radius,) = self.params
            e = np.exp(1j * u)
            return radius * e, 1j * radius * e
        raise GeometryError(f"unknown edge kind {k!r}")

    def z(self, s):
        w, _ = self._base(self._u(np.asarray(s, dtype=float)))
        return self.scale * w + self.shift

    def dz(self, s):
        _, dw = self._base(self._u(np.asarray(s, dtype=float)))
        return (-1.0 if self.reversed else 1.0) * self.scale * dw

    def normal(self, s):
        d = self.dz(s)
        return -1j * d / np.abs(d)

    def displacement(self, s0: float, sigma):
        """``z(s0 + sigma) - z(s0)`` accurate relative to ``|sigma|``.

        Integrates ``z'`` over ``[0, sigma]`` so that offsets far below the
        resolution of ``s0`` itself are kept.
        """
        sigma = np.asarray(sigma, dtype=float)
        if self.kind == "line":
            return sigma * self.dz(s0)
        x, w = _gl_disp()
        u = 0.5 * sigma[..., None] * (1.0 + x)
        return 0.5 * sigma * np.sum(w * self.dz(s0 + u), axis=-1)

    def end_point(self, end: int) -> complex:
        return complex(self.z(self.interval[end]))

    def flipped(self) -> "EdgeCurve":
        return EdgeCurve(self.kind, self.params, self.interval, not self.reversed,
                         self.scale, self.shift, self.closed)


@dataclass(frozen=True)
class SingularPoint:
    location: complex
    kind: str  # endpoint | corner | branch
    ends: tuple  # ((edge id, 0 for start / 1 for end), ...)

    @property
    def degree(self) -> int:
        return len(self.ends)


@dataclass
class Geometry:
    edges: list
    vertices: list
    name: str = "custom"

    @property
    def length(self) -> float:
        return sum(arc_length(e) for e in self.edges)


_GL_DISP = None


def _gl_disp():
    global _GL_DISP
    if _GL_DISP is None:
        _GL_DISP = np.polynomial.legendre.leggauss(32)
    return _GL_DISP


def arc_length(edge: EdgeCurve, s0: float | None = None, s1: float | None = None) -> float:
    a, b = edge.interval
    s0 = a if s0 is None else s0
    s1 = b if s1 is None else s1
    val, _ = integrate.quad(lambda s: abs(complex(edge.dz(s))), s0, s1,
                            epsabs=0.0, epsrel=1e-13, limit=200)
    return val


def _register_vertices(edges) -> list:
    pts = []
    for eid, e in enumerate(edges):
        if e.closed:
            continue
        for end in (0, 1):
            pts.append((e.end_point(end), (eid, end)))
    groups: list = []
    for z, tag in pts:
        for g in groups:
            d = abs(z - g[0])
            if d <= MERGE_TOL:
                g[1].append(tag)
                break
            if d <= MISMATCH_TOL:
                raise GeometryError(
                    f"edge ends {g[1][0]} and {tag} nearly meet ({d:.3e} apart)")
        else:
            groups.append((z, [tag]))
    verts = []
    for z, tags in groups:
        kind = {1: "endpoint", 2: "corner"}.get(len(tags), "branch")
        verts.append(SingularPoint(z, kind, tuple(tags)))
    return verts


def _line(z0: complex, z1: complex) -> EdgeCurve:
    return EdgeCurve("line", (complex(z0), complex(z1 - z0)), (0.0, 1.0))


def _corner_edges(shift: complex = 0.0):
    return [EdgeCurve("parabola", (), (0.0, 1.0), shift=shift),
            EdgeCurve("cosine-arc", (), (0.0, 1.0), shift=1.0 + shift)]


def _tree_edges(depth: int, stem=10.0, arm=8.0, opening=0.5 * np.pi,
                length_factor=0.8, angle_divisor=1.1):
    edges = [_line(0.0, 1j * stem)]
    tips = [(1j * stem, 0.5 * np.pi)]
    length, half = arm, 0.5 * opening
    for _ in range(depth):
        new = []
        for z0, heading in tips:
            for sgn in (-1.0, 1.0):
                h = heading + sgn * half
                z1 = z0 + length * np.exp(1j * h)
                edges.append(_line(z0, z1))
                new.append((z1, h))
        tips = new
        length *= length_factor
        half /= angle_divisor
    return edges


PRESETS = {
    "segment": "straight segment r(s) = (s, -0.2), s in [-1, 1]",
    "spiral": "logarithmic spiral r(s) = e^s (cos 5s, sin 5s), s in [-1, 1]",
    "corner": "parabola (s, s^2) joined at (1, 1) to a cosine arc",
    "corner-tiled": "the corner curve tiled horizontally (param tiles, default 4)",
    "y-shape": "three segments of lengths 10, 8, 8 with opening pi/2",
    "tree": "recursive tree, lengths x0.8 and opening /1.1 per level (param depth, default 3)",
    "circle": "closed circle of given radius (param radius, default 1)",
    "polylines": "network of polylines given as lists of points",
}


def build_geometry(spec) -> Geometry:
    """Build edges and the vertex registry from a description.

    ``spec`` is a preset name or a mapping ``{"shape": name, ...params}``;
    ``{"shape": "polylines", "polylines": [[[x, y], ...], ...]}`` gives an
    arbitrary straight-edge network.
    """
    if isinstance(spec, str):
        spec = {"shape": spec}
    shape = spec.get("shape")
    if shape == "segment":
        edges = [EdgeCurve("line", (-0.2j, 1.0 + 0j), (-1.0, 1.0))]
    elif shape == "spiral":
        edges = [EdgeCurve("log-spiral", (1.0 + 5.0j,), (-1.0, 1.0))]
    elif shape == "corner":
        edges = _corner_edges()
    elif shape == "corner-tiled":
        period = 1.0 + 0.5 * np.pi
        edges = []
        for i in range(int(spec.get("tiles", 4))):
            edges += _corner_edges(i * period)
    elif shape == "y-shape":
        edges = _tree_edges(1)
    elif shape == "tree":
        edges = _tree_edges(int(spec.get("depth", 3)))
    elif shape == "circle":
        edges = [EdgeCurve("circle", (float(spec.get("radius", 1.0)),),
                           (0.0, 2 * np.pi), closed=True)]
    elif shape == "polylines":
        edges = []
        for line in spec["polylines"]:
            zs = [complex(x, y) for x, y in line]
            edges += [_line(a, b) for a, b in zip(zs[:-1], zs[1:])]
    else:
        raise GeometryError(f"unknown geometry {shape!r}")
    for i in spec.get("flip_edges", ()):
        edges[i] = edges[i].flipped()
    return Geometry(edges, _register_vertices(edges), shape)


# ---------------------------------------------------------------------------
# panel meshes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Panel:
    """Parameter interval ``[sa, sb]`` on one edge. With ``anchor`` set the
    interval is an offset from the edge parameter ``anchor``."""

    edge: int
    sa: float
    sb: float
    anchor: float | None = None


class PanelMesh:
    """Composite 16-point Gauss-Legendre discretisation of a list of panels.

    Nodes are stored panel by panel, increasing in the edge parameter within
    each panel. ``gamma_star`` maps a vertex id to its Gamma* panels, one
    ``(outer, inner)`` pair per incident edge end.

    Meshes of anchored panels hold coordinates relative to ``origin``: node
    positions are displacements from the anchor point of their edge, which
    keeps dyadically small panels near a vertex exact.
    """

    def __init__(self, edges, panels, gamma_star=None, origin: complex = 0.0):
        self.edges = list(edges)
        self.panels = list(panels)
        self.gamma_star = dict(gamma_star or {})
        self.origin = complex(origin)
        rule = gauss_legendre_16()
        npan = len(self.panels)
        self.edge_of = np.array([p.edge for p in self.panels], dtype=int)
        self.sa = np.array([p.sa for p in self.panels], dtype=float)
        self.sb = np.array([p.sb for p in self.panels], dtype=float)
        half = 0.5 * (self.sb - self.sa)
        mid = 0.5 * (self.sb + self.sa)
        self.s = (mid[:, None] + half[:, None] * rule.nodes[None, :]).ravel()
        self.wgl = (half[:, None] * rule.weights[None, :]).ravel()
        self.panel_of = np.repeat(np.arange(npan), 16)
        self.z = np.empty(16 * npan, dtype=complex)
        self.dz = np.empty(16 * npan, dtype=complex)
        self.za = np.empty(npan, dtype=complex)
        self.zb = np.empty(npan, dtype=complex)
        self.zmid = np.empty(npan, dtype=complex)
        anchors = np.array([np.nan if p.anchor is None else p.anchor for p in self.panels])
        keys = {(p.edge, p.anchor) for p in self.panels}
        for eid, anchor in sorted(keys, key=lambda t: (t[0], -np.inf if t[1] is None else t[1])):
            e = self.edges[eid]
            if anchor is None:
                pm = (self.edge_of == eid) & np.isnan(anchors)
                nm = np.repeat(pm, 16)
                self.z[nm] = e.z(self.s[nm])
                self.dz[nm] = e.dz(self.s[nm])
                self.za[pm] = e.z(self.sa[pm])
                self.zb[pm] = e.z(self.sb[pm])
                self.zmid[pm] = e.z(mid[pm])
            else:
                pm = (self.edge_of == eid) & (anchors == anchor)
                nm = np.repeat(pm, 16)
                self.z[nm] = e.displacement(anchor, self.s[nm])
                self.dz[nm] = e.dz(anchor + self.s[nm])
                self.za[pm] = e.displacement(anchor, self.sa[pm])
                self.zb[pm] = e.displacement(anchor, self.sb[pm])
                self.zmid[pm] = e.displacement(anchor, mid[pm])
        self.speed = np.abs(self.dz)
        self.normal = -1j * self.dz / self.speed
        self.wl = self.speed * self.wgl
        self.panel_length = self.wl.reshape(npan, 16).sum(axis=1)

    @property
    def n_nodes(self) -> int:
        return self.z.size

    @property
    def n_panels(self) -> int:
        return len(self.panels)

    def panel_nodes(self, p: int) -> slice:
        return slice(16 * p, 16 * p + 16)

    def neighbors(self, p: int) -> list:
        """Panels on the same edge sharing an end with panel ``p``."""
        e = self.edge_of[p]
        anc = self.panels[p].anchor
        same = [q for q in np.flatnonzero(self.edge_of == e) if self.panels[q].anchor == anc]
        out = []
        for q in same:
            if q == p:
                continue
            if self.sa[q] == self.sb[p] or self.sb[q] == self.sa[p]:
                out.append(int(q))
            elif self.edges[e].closed:
                a, b = self.edges[e].interval
                if (self.sa[p] == a and self.sb[q] == b) or (self.sb[p] == b and self.sa[q] == a):
                    out.append(int(q))
        return out

    def star_nodes(self, vid) -> np.ndarray:
        """Global node indices of the Gamma* panels of vertex ``vid``."""
        idx = []
        for outer, inner in self.gamma_star[vid]:
            idx.extend(range(16 * outer, 16 * outer + 16))
            idx.extend(range(16 * inner, 16 * inner + 16))
        return np.array(idx, dtype=int)

    @property
    def total_length(self) -> float:
        return float(self.wl.sum())


def _breakpoints(edge: EdgeCurve, n: int, arclength: bool) -> np.ndarray:
    a, b = edge.interval
    if not arclength:
        return np.linspace(a, b, n + 1)
    from scipy.optimize import brentq

    total = arc_length(edge)
    bp = [a]
    for j in range(1, n):
        target = total * j / n
        bp.append(brentq(lambda s: arc_length(edge, a, s) - target, bp[-1], b, xtol=1e-15))
    bp.append(b)
    bp = np.array(bp)
    # the two panels nearest each end get equal parameter width
    bp[1] = 0.5 * (bp[0] + bp[2])
    bp[-2] = 0.5 * (bp[-3] + bp[-1])
    return bp


def build_coarse_mesh(geom: Geometry, k: float | None = None, *, panels=None,
                      points_per_wavelength: float | None = None,
                      arclength: bool = False, min_panels: int = 4) -> PanelMesh:
    """Coarse mesh with explicit panel counts or a points-per-wavelength rule.

    ``panels`` is an int (applied to every edge) or a sequence with one count
    per edge. Otherwise each edge gets ``round(ppw * L_e / lambda / 16)``
    panels, at least ``min_panels``.
    """
    nedge = len(geom.edges)
    if panels is not None:
        counts = [int(panels)] * nedge if np.isscalar(panels) else [int(c) for c in panels]
    else:
        if k is None or points_per_wavelength is None:
            raise GeometryError("need explicit panel counts or k and points_per_wavelength")
        lam = 2 * np.pi / k
        counts = [max(min_panels, int(round(points_per_wavelength * arc_length(e) / lam / 16)))
                  for e in geom.edges]
    plist = []
    for eid, (e, n) in enumerate(zip(geom.edges, counts)):
        if not e.closed and n < 4:
            raise GeometryError(f"edge {eid} has {n} panels; at least 4 are needed "
                                "so that both ends own two Gamma* panels")
        bp = _breakpoints(e, n, arclength)
        plist += [Panel(eid, float(bp[j]), float(bp[j + 1])) for j in range(n)]
    gs = {}
    first = {}
    last = {}
    for i, p in enumerate(plist):
        first.setdefault(p.edge, i)
        last[p.edge] = i
    for vid, v in enumerate(geom.vertices):
        pairs = []
        for eid, end in v.ends:
            if end == 0:
                pairs.append((first[eid] + 1, first[eid]))
            else:
                pairs.append((last[eid] - 1, last[eid]))
        gs[vid] = pairs
    return PanelMesh(geom.edges, plist, gs)


def end_frame(mesh: PanelMesh, vid: int, vertices) -> list:
    """Per incident edge end: (edge id, vertex parameter, inward sign, Gamma* width)."""
    out = []
    for (eid, end), (outer, inner) in zip(vertices[vid].ends, mesh.gamma_star[vid]):
        e = mesh.edges[eid]
        sv = e.interval[end]
        sign = 1.0 if end == 0 else -1.0
        width = abs(mesh.sb[inner] - mesh.sa[inner]) + abs(mesh.sb[outer] - mesh.sa[outer])
        out.append((eid, sv, sign, width))
    return out


def _panel_at(eid, sv, sign, d0, d1, anchored: bool = False) -> Panel:
    """Panel at parameter distances ``d0..d1`` from ``sv`` into the edge."""
    if anchored:
        a, b = sign * d0, sign * d1
        return Panel(eid, min(a, b), max(a, b), sv)
    a, b = sv + sign * d0, sv + sign * d1
    return Panel(eid, min(a, b), max(a, b))


def refine_toward(mesh: PanelMesh, vertices, vid: int, n_sub: int) -> PanelMesh:
    """Split the innermost panel at each end of ``vid`` dyadically ``n_sub`` times."""
    if n_sub == 0:
        return mesh
    frames = end_frame(mesh, vid, vertices)
    inner_ids = {inner for _, inner in mesh.gamma_star[vid]}
    repl = {}
    for (eid, sv, sign, width), (_, inner) in zip(frames, mesh.gamma_star[vid]):
        w = 0.5 * width
        new = [_panel_at(eid, sv, sign, w / 2 ** (j + 1), w / 2 ** j) for j in range(n_sub)]
        new.append(_panel_at(eid, sv, sign, 0.0, w / 2 ** n_sub))
        repl[inner] = sorted(new, key=lambda p: p.sa)
    plist = []
    for i, p in enumerate(mesh.panels):
        plist += repl[i] if i in inner_ids else [p]
    return PanelMesh(mesh.edges, plist)


def local_gamma_star_mesh(mesh: PanelMesh, vertices, vid: int, level: int, n_sub: int,
                          variant: str) -> PanelMesh:
    """Type-a (two panels) or type-b (three panels) grid per end on Gamma*_level.

    Gamma*_level spans parameter distance ``2**(level - n_sub) * width`` from
    the vertex on every incident edge. Panels are listed per edge end from
    the outermost to the innermost. Coordinates are relative to the vertex.
    """
    if not 0 <= level <= n_sub:
        raise ValueError("level must lie in [0, n_sub]")
    fractions = {"a": [(0.5, 1.0), (0.0, 0.5)],
                 "b": [(0.5, 1.0), (0.25, 0.5), (0.0, 0.25)]}[variant.removeprefix("type-")]
    plist = []
    for eid, sv, sign, width in end_frame(mesh, vid, vertices):
        wi = width * 2.0 ** (level - n_sub)
        plist += [_panel_at(eid, sv, sign, f0 * wi, f1 * wi, True) for f0, f1 in fractions]
    return PanelMesh(mesh.edges, plist, origin=vertices[vid].location)
