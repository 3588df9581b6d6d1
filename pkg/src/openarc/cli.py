"""Command-line driver: problem files in, solutions, grids and sweep tables out.

    openarc solve problem.yaml --out runs/golden
    openarc sweep-nsub problem.yaml --range 1:60
    openarc sweep-wavelength problem.yaml --ratios 50,100,200
    openarc emit-grid runs/golden/field.grid --format pgm
    openarc presets

Exit codes: 0 success, 1 internal error, 2 invalid problem file or
arguments, 3 GMRES did not converge (artifacts are still written).
"""

from __future__ import annotations

import argparse
import json
import math
import struct
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml
from jsonschema import Draft202012Validator
from threadpoolctl import threadpool_info, threadpool_limits

from . import field as fieldmod
from .geometry import PRESETS, GeometryError, arc_length, build_coarse_mesh, build_geometry
from .rcip import RCIPError
from .solver import ProblemSpec, SolverError, solve

EXIT_OK, EXIT_INTERNAL, EXIT_SCHEMA, EXIT_NONCONVERGED = 0, 1, 2, 3
SCHEMA_VERSION = 1
GRID_MAGIC = b"HELMGRD1"

# named experiment setups; constants pinned here
EXPERIMENTS = {
    "golden": {"geometry": {"shape": "segment"}, "k": 3.0, "n_sub": 40,
               "mesh": {"panels": 6}, "reference": [0.02788626934981090, -0.75932847390327920]},
    "eight-corner": {"geometry": {"shape": "corner-tiled", "tiles": 4}, "k": 83.58017152213590,
                     "theta_dirichlet": math.pi / 4, "theta_neumann": -math.pi / 4,
                     "bbox": [-3, 15, -8, 9]},
    "seven-branch": {"geometry": {"shape": "tree", "depth": 3}, "k": 13.57645917713826,
                     "theta_dirichlet": -2 * math.pi / 3, "theta_neumann": math.pi / 3,
                     "bbox": [-25, 25, -12, 38]},
}

_NUM = {"type": "number"}
_POINT = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["version", "geometry", "bc"],
    "properties": {
        "version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "geometry": {
            "type": "object",
            "additionalProperties": False,
            "required": ["shape"],
            "properties": {
                "shape": {"enum": sorted(PRESETS)},
                "tiles": {"type": "integer", "minimum": 1},
                "depth": {"type": "integer", "minimum": 0},
                "radius": {"type": "number", "exclusiveMinimum": 0},
                "polylines": {"type": "array", "items": {"type": "array", "items": _POINT,
                                                         "minItems": 2}},
                "flip_edges": {"type": "array", "items": {"type": "integer", "minimum": 0}},
            },
        },
        "bc": {"enum": ["dirichlet", "neumann"]},
        "k": {"type": "number", "exclusiveMinimum": 0},
        "L_over_lambda": {"type": "number", "exclusiveMinimum": 0},
        "theta": _NUM,
        "data": {
            "type": "object",
            "additionalProperties": False,
            "required": ["poly_x"],
            "properties": {"poly_x": {"type": "array", "items": _NUM, "minItems": 1}},
        },
        "mesh": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "panels": {"oneOf": [{"type": "integer", "minimum": 4},
                                     {"type": "array", "items": {"type": "integer", "minimum": 4}}]},
                "points_per_wavelength": {"type": "number", "exclusiveMinimum": 0},
                "arclength": {"type": "boolean"},
                "min_panels": {"type": "integer", "minimum": 4},
            },
        },
        "n_sub": {"type": "integer", "minimum": 0},
        "gmres": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"tol": {"type": "number", "exclusiveMinimum": 0},
                           "max_iter": {"type": "integer", "minimum": 1}},
        },
        "targets": {"type": "array", "items": _POINT},
        "reference": {"type": "object", "additionalProperties": False,
                      "properties": {"value": _POINT, "refine": {"type": "number", "minimum": 1}}},
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "required": ["bbox", "nx", "ny"],
            "properties": {
                "bbox": {"type": "array", "items": _NUM, "minItems": 4, "maxItems": 4},
                "nx": {"type": "integer", "minimum": 1},
                "ny": {"type": "integer", "minimum": 1},
                "band": {"type": "number", "minimum": 0},
                "total": {"type": "boolean"},
                "error": {"type": "boolean"},
            },
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_sub": {"oneOf": [
                    {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
                    {"type": "string", "pattern": r"^\d+:\d+$"}]},
                "L_over_lambda": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                                  "minItems": 1},
            },
        },
        "output": {"type": "string"},
    },
    "allOf": [
        {"not": {"required": ["k", "L_over_lambda"]}},
        {"not": {"required": ["theta", "data"]}},
        {"anyOf": [{"required": ["theta"]}, {"required": ["data"]}]},
    ],
}


class SchemaError(ValueError):
    pass


# ---------------------------------------------------------------------------
# problem files
# ---------------------------------------------------------------------------

@dataclass
class ProblemFile:
    geometry: dict
    bc: str
    k: float | None = None
    L_over_lambda: float | None = None
    theta: float | None = None
    poly_x: list | None = None
    mesh: dict = field(default_factory=lambda: {"panels": 6})
    n_sub: int = 40
    tol: float = 1e-12
    max_iter: int | None = None
    targets: list = field(default_factory=list)
    reference_value: complex | None = None
    reference_refine: float = 1.5
    grid: dict | None = None
    sweep_nsub: list | None = None
    sweep_ratios: list | None = None
    output: str = "out"
    name: str = "problem"

    def build_geometry(self):
        return build_geometry(self.geometry)

    def wavenumber(self, geom=None, ratio=None) -> float:
        """k from the file, or from an L/lambda target and the curve length."""
        ratio = ratio if ratio is not None else self.L_over_lambda
        if ratio is None:
            if self.k is None:
                raise SchemaError("give k or L_over_lambda")
            return float(self.k)
        geom = geom or self.build_geometry()
        return 2 * math.pi * ratio / geom.length

    def spec(self, k: float) -> ProblemSpec:
        if self.poly_x is not None:
            coef = np.array(self.poly_x, dtype=float)
            return ProblemSpec(self.bc, k, data=lambda z, n: np.polynomial.polynomial.polyval(
                np.real(z), coef) + 0j)
        return ProblemSpec(self.bc, k, theta=self.theta)

    def build_mesh(self, geom, k: float, refine: float = 1.0):
        m = dict(self.mesh)
        arcl = bool(m.get("arclength", False))
        if "points_per_wavelength" in m:
            return build_coarse_mesh(geom, k, points_per_wavelength=refine * m["points_per_wavelength"],
                                     arclength=arcl, min_panels=int(m.get("min_panels", 4)))
        panels = m.get("panels", 6)
        if refine != 1.0:
            panels = ([int(math.ceil(refine * p)) for p in panels] if isinstance(panels, list)
                      else int(math.ceil(refine * panels)))
        return build_coarse_mesh(geom, panels=panels, arclength=arcl)

    def grid_spec(self):
        if self.grid is None:
            return None
        return fieldmod.GridSpec(tuple(float(v) for v in self.grid["bbox"]), int(self.grid["nx"]),
                                 int(self.grid["ny"]), float(self.grid.get("band", fieldmod.BAND)))


def validate(doc) -> None:
    errors = sorted(Draft202012Validator(SCHEMA).iter_errors(doc), key=lambda e: list(e.path))
    if errors:
        lines = [f"{'/'.join(map(str, e.path)) or '<root>'}: {e.message}" for e in errors]
        raise SchemaError("invalid problem file:\n  " + "\n  ".join(lines))


def parse_problem(doc: dict) -> ProblemFile:
    validate(doc)
    if "k" not in doc and "L_over_lambda" not in doc:
        raise SchemaError("invalid problem file: give k or L_over_lambda")
    gm = doc.get("gmres", {})
    ref = doc.get("reference", {})
    sw = doc.get("sweep", {})
    val = ref.get("value")
    return ProblemFile(
        geometry=dict(doc["geometry"]), bc=doc["bc"], k=doc.get("k"),
        L_over_lambda=doc.get("L_over_lambda"), theta=doc.get("theta"),
        poly_x=doc.get("data", {}).get("poly_x"), mesh=dict(doc.get("mesh", {"panels": 6})),
        n_sub=int(doc.get("n_sub", 40)), tol=float(gm.get("tol", 1e-12)),
        max_iter=gm.get("max_iter"), targets=[complex(x, y) for x, y in doc.get("targets", [])],
        reference_value=None if val is None else complex(*val),
        reference_refine=float(ref.get("refine", 1.5)), grid=doc.get("grid"),
        sweep_nsub=(_int_range(sw["n_sub"]) if isinstance(sw.get("n_sub"), str)
                    else sw.get("n_sub")), sweep_ratios=sw.get("L_over_lambda"),
        output=doc.get("output", "out"), name=doc.get("name", "problem"))


def load_problem(path) -> ProblemFile:
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise SchemaError(f"cannot parse {path}: {exc}") from exc
    except OSError as exc:
        raise SchemaError(f"cannot read {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: top level must be a mapping")
    return parse_problem(doc)


# ---------------------------------------------------------------------------
# grid files
# ---------------------------------------------------------------------------

def write_raw(path, grid: fieldmod.FieldGrid) -> None:
    """Magic, uint64 nx and ny, four float64 bbox values, then row-major
    interleaved re/im float64 (all little-endian). Masked points are NaN."""
    vals = np.asarray(grid.values, dtype="<c16").reshape(grid.ny, grid.nx)
    with open(path, "wb") as fh:
        fh.write(GRID_MAGIC)
        fh.write(struct.pack("<QQ", grid.nx, grid.ny))
        fh.write(struct.pack("<4d", *grid.bbox))
        fh.write(np.ascontiguousarray(vals).tobytes())


def read_raw(path) -> fieldmod.FieldGrid:
    data = Path(path).read_bytes()
    if data[:8] != GRID_MAGIC:
        raise ValueError(f"{path}: not a grid file")
    nx, ny = struct.unpack_from("<QQ", data, 8)
    bbox = struct.unpack_from("<4d", data, 24)
    vals = np.frombuffer(data, dtype="<c16", offset=56)
    if vals.size != nx * ny:
        raise ValueError(f"{path}: truncated grid file")
    vals = vals.reshape(ny, nx).astype(complex)
    return fieldmod.FieldGrid(tuple(bbox), int(nx), int(ny), vals, np.isnan(vals))


def write_text(path, grid: fieldmod.FieldGrid) -> None:
    xmin, xmax, ymin, ymax = (float(v) for v in grid.bbox)
    x = np.linspace(xmin, xmax, grid.nx).tolist()
    y = np.linspace(ymin, ymax, grid.ny).tolist()
    with open(path, "w") as fh:
        fh.write(f"# nx={grid.nx} ny={grid.ny} bbox={xmin!r},{xmax!r},{ymin!r},{ymax!r}\n")
        fh.write("x,y,re,im\n")
        for j in range(grid.ny):
            for i in range(grid.nx):
                v = complex(grid.values[j, i])
                fh.write(f"{x[i]!r},{y[j]!r},{v.real!r},{v.imag!r}\n")


def read_text(path) -> fieldmod.FieldGrid:
    lines = Path(path).read_text().splitlines()
    head = dict(kv.split("=", 1) for kv in lines[0].lstrip("# ").split())
    nx, ny = int(head["nx"]), int(head["ny"])
    bbox = tuple(float(v) for v in head["bbox"].split(","))
    rows = np.array([[float(v) for v in ln.split(",")[2:]] for ln in lines[2:]])
    vals = (rows[:, 0] + 1j * rows[:, 1]).reshape(ny, nx)
    return fieldmod.FieldGrid(bbox, nx, ny, vals, np.isnan(vals))


def write_pgm(path, grid: fieldmod.FieldGrid, clamp: float | None = None) -> None:
    """8-bit |u| image, linear in [0, clamp]; north up, masked points black."""
    mag = np.abs(grid.values)
    mag = np.where(np.isnan(mag), 0.0, mag)
    top = clamp if clamp is not None else (float(mag.max()) or 1.0)
    img = np.clip(np.round(255 * mag / top), 0, 255).astype(np.uint8)[::-1]
    with open(path, "wb") as fh:
        fh.write(f"P5\n{grid.nx} {grid.ny}\n255\n".encode())
        fh.write(img.tobytes())


def read_grid(path) -> fieldmod.FieldGrid:
    with open(path, "rb") as fh:
        magic = fh.read(8)
    return read_raw(path) if magic == GRID_MAGIC else read_text(path)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def solve_problem(pf: ProblemFile, geom, k, n_sub=None, refine=1.0):
    mesh = pf.build_mesh(geom, k, refine)
    n_sub = pf.n_sub if n_sub is None else n_sub
    return solve(pf.spec(k), geom, mesh, n_sub, tol=pf.tol, max_iter=pf.max_iter)


def reference_solution(pf: ProblemFile, geom, k):
    """Overresolved reference: about 50% more points and a deeper n_sub."""
    r = pf.reference_refine
    return solve_problem(pf, geom, k, int(math.ceil(r * max(pf.n_sub, 1))), refine=r)


def _meta(pf, sol, k, extra=None):
    out = {"name": pf.name, "bc": pf.bc, "k": k, "n_sub": sol.system.n_sub, "N": sol.n,
           "iterations": sol.iterations, "converged": bool(sol.converged),
           "status": sol.gmres.status, "true_residual": sol.gmres.true_residual,
           "residuals": [float(r) for r in sol.gmres.residuals],
           "timings": {key: float(v) for key, v in sol.timings.items()}}
    out.update(extra or {})
    return out


def _pairs(vals):
    return [[float(v.real), float(v.imag)] for v in np.atleast_1d(vals)]


def cmd_solve(pf: ProblemFile, out: Path, workers: int = 1) -> int:
    out.mkdir(parents=True, exist_ok=True)
    geom = pf.build_geometry()
    k = pf.wavenumber(geom)
    sol = solve_problem(pf, geom, k)
    extra = {}
    if pf.targets:
        u = fieldmod.eval_field(np.array(pf.targets), sol, require_converged=False)
        extra["targets"] = _pairs(np.array(pf.targets))
        extra["u"] = _pairs(u)
        if pf.reference_value is not None:
            extra["abs_error"] = float(abs(u[0] - pf.reference_value))
    spec = pf.grid_spec()
    if spec is not None:
        g = fieldmod.field_grid(sol, spec, workers=workers, require_converged=False)
        write_raw(out / "field.grid", g)
        if pf.grid.get("total") and pf.theta is not None:
            write_raw(out / "total.grid",
                      fieldmod.field_grid(sol, spec, total=True, workers=workers,
                                          require_converged=False))
        if pf.grid.get("error"):
            ref = reference_solution(pf, geom, k)
            err = fieldmod.compare_grids(g, fieldmod.field_grid(ref, spec, workers=workers,
                                                                require_converged=False))
            write_raw(out / "error.grid", replace(g, values=err.values.astype(complex)))
            extra["E2"] = err.E2
            extra["max_error"] = err.max_error
    meta = _meta(pf, sol, k, extra)
    (out / "metadata.json").write_text(json.dumps(meta, indent=2) + "\n")
    print(json.dumps({key: meta[key] for key in ("N", "iterations", "converged")} |
                     {key: extra[key] for key in ("u", "abs_error", "E2") if key in extra}))
    return EXIT_OK if sol.converged else EXIT_NONCONVERGED


def _write_table(out: Path, name: str, header, rows):
    out.mkdir(parents=True, exist_ok=True)
    lines = ["\t".join(header)] + ["\t".join(_fmt(v) for v in r) for r in rows]
    (out / name).write_text("\n".join(lines) + "\n")
    print("\n".join(lines))


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6e}"
    return str(v)


def cmd_sweep_nsub(pf: ProblemFile, out: Path, values) -> int:
    """Error of the first target value against the reference value, or against
    the largest-n_sub run when the file gives none."""
    if not pf.targets:
        raise SchemaError("sweep-nsub needs at least one target")
    values = sorted(set(values))
    geom = pf.build_geometry()
    k = pf.wavenumber(geom)
    runs = []
    ok = True
    for ns in values:
        sol = solve_problem(pf, geom, k, n_sub=ns)
        u = fieldmod.eval_field(np.array(pf.targets[:1]), sol, require_converged=False)[0]
        runs.append((ns, u, sol))
        ok &= sol.converged
    ref = pf.reference_value if pf.reference_value is not None else runs[-1][1]
    rows = [(ns, float(abs(u - ref)), sol.iterations, sol.timings["T_build"],
             sol.timings["T_solve"], sol.timings["T_total"], sol.n) for ns, u, sol in runs]
    _write_table(out, "sweep_nsub.tsv",
                 ("n_sub", "error", "iterations", "T_build", "T_solve", "T_total", "N"), rows)
    return EXIT_OK if ok else EXIT_NONCONVERGED


def sweep_wavelength_rows(pf: ProblemFile, ratios, workers: int = 1):
    geom = pf.build_geometry()
    spec = pf.grid_spec()
    rows = []
    for ratio in sorted(ratios):
        k = pf.wavenumber(geom, ratio)
        sol = solve_problem(pf, geom, k)
        e2 = float("nan")
        if spec is not None:
            ref = reference_solution(pf, geom, k)
            e2 = fieldmod.error_grid(sol, ref, spec, workers=workers).E2
        rows.append((float(ratio), e2, sol.iterations, sol.timings["T_build"],
                     sol.timings["T_solve"], sol.timings["T_total"], sol.n, sol.converged))
    return rows


def cmd_sweep_wavelength(pf: ProblemFile, out: Path, ratios, workers: int = 1) -> int:
    rows = sweep_wavelength_rows(pf, ratios, workers)
    _write_table(out, "sweep_wavelength.tsv",
                 ("L_over_lambda", "E2", "iterations", "T_build", "T_solve", "T_total", "N"),
                 [r[:-1] for r in rows])
    return EXIT_OK if all(r[-1] for r in rows) else EXIT_NONCONVERGED


def cmd_emit_grid(src: Path, fmt: str, dst: Path | None, clamp: float | None) -> int:
    grid = read_grid(src)
    writers = {"raw": (write_raw, ".grid"), "text": (write_text, ".csv"), "pgm": (write_pgm, ".pgm")}
    if fmt not in writers:
        raise SchemaError(f"unknown grid format {fmt!r}")
    fn, ext = writers[fmt]
    dst = dst or src.with_suffix(ext)
    if fmt == "pgm":
        fn(dst, grid, clamp)
    else:
        fn(dst, grid)
    print(dst)
    return EXIT_OK


def cmd_presets() -> int:
    for name, desc in sorted(PRESETS.items()):
        print(f"{name:14s} {desc}")
    print()
    for name, cfg in EXPERIMENTS.items():
        geom = build_geometry(cfg["geometry"])
        length = sum(arc_length(e) for e in geom.edges)
        print(f"{name:14s} k = {cfg['k']!r}, curve length {length:.6f}, "
              f"L/lambda = {cfg['k'] * length / (2 * math.pi):.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _int_range(text: str):
    out = []
    for part in text.split(","):
        if ":" in part:
            a, b = part.split(":")
            out += list(range(int(a), int(b) + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError("empty range")
    return out


def _float_list(text: str):
    vals = [float(v) for v in text.split(",") if v]
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_SCHEMA)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None, help="BLAS and evaluation threads")
    common.add_argument("--tol", type=float, default=None, help="override the GMRES tolerance")
    common.add_argument("--nsub", type=int, default=None, help="override n_sub")
    common.add_argument("--out", type=Path, default=None, help="output directory or file")

    p = _Parser(prog="openarc", description="Helmholtz problems on open curves")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    s = sub.add_parser("solve", parents=[common], help="solve one problem file")
    s.add_argument("problem", type=Path)
    s = sub.add_parser("sweep-nsub", parents=[common], help="target error against n_sub")
    s.add_argument("problem", type=Path)
    s.add_argument("--range", type=_int_range, default=None, help="e.g. 1:60 or 10,20,40")
    s = sub.add_parser("sweep-wavelength", parents=[common], help="iterations and E2 against L/lambda")
    s.add_argument("problem", type=Path)
    s.add_argument("--ratios", type=_float_list, default=None, help="e.g. 50,100,200")
    s = sub.add_parser("emit-grid", parents=[common], help="convert a grid file")
    s.add_argument("grid", type=Path)
    s.add_argument("--format", choices=["raw", "text", "pgm"], default="text")
    s.add_argument("--clamp", type=float, default=None, help="pgm: |u| mapped to white")
    sub.add_parser("presets", parents=[common], help="list built-in geometries and experiments")
    return p


def _apply_overrides(pf: ProblemFile, args) -> ProblemFile:
    if args.tol is not None:
        pf.tol = args.tol
    if args.nsub is not None:
        pf.n_sub = args.nsub
    return pf


def run(args) -> int:
    if args.command == "presets":
        return cmd_presets()
    if args.command == "emit-grid":
        return cmd_emit_grid(args.grid, args.format, args.out, args.clamp)
    pf = _apply_overrides(load_problem(args.problem), args)
    out = args.out or Path(pf.output)
    workers = args.threads or 1
    if args.command == "solve":
        return cmd_solve(pf, out, workers)
    if args.command == "sweep-nsub":
        vals = args.range or pf.sweep_nsub or [pf.n_sub]
        return cmd_sweep_nsub(pf, out, vals)
    ratios = args.ratios or pf.sweep_ratios or ([pf.L_over_lambda] if pf.L_over_lambda else None)
    if not ratios:
        raise SchemaError("sweep-wavelength needs L/lambda values")
    return cmd_sweep_wavelength(pf, out, ratios, workers)


def _blas_threads(requested: int) -> int:
    # OpenBLAS sizes its buffers at load time; raising the count past that crashes
    loaded = [lib["num_threads"] for lib in threadpool_info()]
    return max(1, min([requested] + loaded))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.threads:
            with threadpool_limits(limits=_blas_threads(args.threads)):
                return run(args)
        return run(args)
    except SchemaError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_SCHEMA
    except GeometryError as exc:
        print(f"invalid geometry: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (SolverError, RCIPError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
