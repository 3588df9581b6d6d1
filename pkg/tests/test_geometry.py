import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
import mpmath as mp

from openarc.geometry import (PRESETS, GeometryError, arc_length, build_coarse_mesh,
                              build_geometry, local_gamma_star_mesh, refine_toward)


def vid_of(geom, kind):
    return next(i for i, v in enumerate(geom.vertices) if v.kind == kind)


def test_segment_registry():
    g = build_geometry("segment")
    assert len(g.edges) == 1
    assert sorted(v.kind for v in g.vertices) == ["endpoint", "endpoint"]
    assert abs(g.length - 2.0) <= 1e-14


def test_y_shape_registry():
    g = build_geometry("y-shape")
    kinds = sorted(v.kind for v in g.vertices)
    assert len(g.edges) == 3
    assert kinds == ["branch"] + ["endpoint"] * 3
    assert g.vertices[vid_of(g, "branch")].degree == 3
    assert abs(g.length - 26.0) <= 1e-12


def test_corner_registry():
    g = build_geometry("corner")
    assert len(g.edges) == 2
    c = g.vertices[vid_of(g, "corner")]
    assert abs(c.location - (1 + 1j)) <= 1e-14
    assert sum(v.kind == "endpoint" for v in g.vertices) == 2


def test_tree_registry():
    g = build_geometry("tree")
    assert len(g.edges) == 15
    assert sum(v.kind == "branch" for v in g.vertices) == 7
    assert sum(v.kind == "endpoint" for v in g.vertices) == 9


def test_corner_tiling_joins():
    g = build_geometry("corner-tiled")
    assert len(g.edges) == 8
    assert sum(v.kind == "corner" for v in g.vertices) == 7


def test_mismatched_polylines_rejected():
    with pytest.raises(GeometryError):
        build_geometry("no-such-shape")


def test_arc_lengths():
    assert abs(arc_length(build_geometry("segment").edges[0]) - 2.0) <= 1e-14
    spiral = build_geometry("spiral")
    ref = np.sqrt(26) * (np.e - 1 / np.e)
    assert abs(arc_length(spiral.edges[0]) / ref - 1) <= 1e-12
    corner = build_geometry("corner")
    for e in corner.edges:
        a, b = e.interval
        speed = lambda s: abs(e.dz(np.array([float(s)]))[0])
        oracle = float(mp.quad(speed, np.linspace(a, b, 9).tolist()))
        assert abs(arc_length(e) / oracle - 1) <= 1e-12


def test_mesh_node_counts(segment):
    assert build_coarse_mesh(segment, panels=6).n_nodes == 96
    k = 2 * np.pi * 50 / 2.0
    m = build_coarse_mesh(segment, k, points_per_wavelength=8)
    assert (m.n_panels, m.n_nodes) == (25, 400)


@pytest.mark.parametrize("name", ["segment", "spiral", "corner", "y-shape", "tree"])
def test_mesh_weights_sum_to_length(name):
    g = build_geometry(name)
    m = build_coarse_mesh(g, panels=7)
    assert abs(m.wl.sum() / g.length - 1) <= 1e-12


@pytest.mark.parametrize("name", ["spiral", "corner", "y-shape"])
def test_normals(name):
    m = build_coarse_mesh(build_geometry(name), panels=6)
    tangent = m.dz / np.abs(m.dz)
    assert np.max(np.abs((m.normal * np.conj(tangent)).real)) <= 1e-13
    assert np.max(np.abs(np.abs(m.normal) - 1)) <= 1e-14
    # tangent rotated by -pi/2
    assert np.max(np.abs(m.normal - (-1j) * tangent)) <= 1e-14


def test_too_few_panels_names_edge(segment):
    with pytest.raises(GeometryError, match="edge 0"):
        build_coarse_mesh(segment, panels=3)


@pytest.mark.parametrize("name,sizes", [("segment", [2, 2]), ("corner", [2, 4, 2]),
                                        ("y-shape", [6, 2, 2, 2])])
def test_gamma_star_sizes(name, sizes):
    g = build_geometry(name)
    m = build_coarse_mesh(g, panels=6)
    got = sorted((2 * len(m.gamma_star[v]) for v in range(len(g.vertices))), reverse=True)
    assert got == sorted(sizes, reverse=True)


def test_refine_toward(segment, segment_mesh):
    assert refine_toward(segment_mesh, segment.vertices, 0, 0) is segment_mesh
    fine = refine_toward(segment_mesh, segment.vertices, 0, 3)
    assert fine.n_panels == 9
    fine = refine_toward(segment_mesh, segment.vertices, 0, 10)
    inner = segment_mesh.gamma_star[0][0][1]
    w0 = segment_mesh.sb[inner] - segment_mesh.sa[inner]
    widths = fine.sb - fine.sa
    assert abs(widths.min() / w0 - 2.0**-10) <= 1e-14


def test_refine_then_merge_recovers_breakpoints(segment, segment_mesh):
    fine = refine_toward(segment_mesh, segment.vertices, 1, 7)
    coarse_bp = set(np.concatenate([segment_mesh.sa, segment_mesh.sb]).tolist())
    fine_bp = set(np.concatenate([fine.sa, fine.sb]).tolist())
    assert coarse_bp <= fine_bp
    # merging the new panels back gives exactly the coarse breakpoints
    kept = {b for b in fine_bp if b in coarse_bp}
    assert kept == coarse_bp


def test_local_mesh_sizes():
    g = build_geometry("corner")
    m = build_coarse_mesh(g, panels=6)
    vc = vid_of(g, "corner")
    assert local_gamma_star_mesh(m, g.vertices, vc, 3, 5, "b").n_nodes == 96
    assert local_gamma_star_mesh(m, g.vertices, vc, 3, 5, "a").n_nodes == 64
    y = build_geometry("y-shape")
    my = build_coarse_mesh(y, panels=6)
    b = local_gamma_star_mesh(my, y.vertices, vid_of(y, "branch"), 2, 4, "b")
    assert (b.n_panels, b.n_nodes) == (9, 144)


def test_local_meshes_share_outer_panel():
    g = build_geometry("corner")
    m = build_coarse_mesh(g, panels=6)
    vc = vid_of(g, "corner")
    a = local_gamma_star_mesh(m, g.vertices, vc, 4, 6, "a")
    b = local_gamma_star_mesh(m, g.vertices, vc, 4, 6, "b")
    for e in range(2):
        assert a.panels[2 * e] == b.panels[3 * e]
    # type-b splits the inner type-a panel in half
    assert abs((b.sb[2] - b.sa[2]) - 0.5 * (a.sb[1] - a.sa[1])) <= 1e-15


def test_local_mesh_scales_dyadically():
    g = build_geometry("corner")
    m = build_coarse_mesh(g, panels=6)
    vc = vid_of(g, "corner")
    top = local_gamma_star_mesh(m, g.vertices, vc, 8, 8, "a")
    low = local_gamma_star_mesh(m, g.vertices, vc, 5, 8, "a")
    w_top = (top.sb - top.sa).sum()
    w_low = (low.sb - low.sa).sum()
    assert abs(w_low / w_top - 2.0**-3) <= 1e-14


def test_deterministic():
    a = build_coarse_mesh(build_geometry("tree"), 10.0, points_per_wavelength=16)
    b = build_coarse_mesh(build_geometry("tree"), 10.0, points_per_wavelength=16)
    assert np.array_equal(a.z, b.z) and np.array_equal(a.wl, b.wl)


def test_presets_listed():
    for name in ("segment", "spiral", "corner", "corner-tiled", "y-shape", "tree"):
        assert name in PRESETS


@settings(max_examples=20, deadline=None)
@given(st.integers(4, 30), st.booleans())
def test_panel_count_property(n, arclength):
    m = build_coarse_mesh(build_geometry("spiral"), panels=n, arclength=arclength)
    assert m.n_panels == n
    assert np.all(m.sb > m.sa)
    assert abs(m.wl.sum() / build_geometry("spiral").length - 1) <= 1e-12
