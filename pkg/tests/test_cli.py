import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from openarc import cli
from openarc.field import FieldGrid

ROOT = Path(__file__).resolve().parents[1]
PROBLEMS = ROOT / "problems"

SMALL = {
    "version": 1,
    "name": "small",
    "geometry": {"shape": "corner"},
    "bc": "dirichlet",
    "k": 4.0,
    "theta": 0.5,
    "mesh": {"panels": 6},
    "n_sub": 12,
    "gmres": {"tol": 1e-12},
    "grid": {"bbox": [-1, 3, -1, 3], "nx": 12, "ny": 10, "total": True},
}


def write(tmp_path, doc, name="p.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(doc))
    return p


def grid(values, bbox=(-1.0, 1.0, -2.0, 2.0)):
    ny, nx = values.shape
    return FieldGrid(bbox, nx, ny, values, np.isnan(values))


@pytest.mark.parametrize("path", sorted(PROBLEMS.glob("*.yaml")), ids=lambda p: p.stem)
def test_checked_in_problems_validate(path):
    pf = cli.load_problem(path)
    assert pf.name


@pytest.mark.parametrize("patch", [
    {"version": 2},
    {"unknown_key": 1},
    {"bc": "robin"},
    {"k": -1.0},
    {"theta": None},
    {"L_over_lambda": 3.0},
    {"mesh": {"panels": 2}},
    {"grid": {"bbox": [0, 1], "nx": 5, "ny": 5}},
])
def test_schema_errors_exit_2(tmp_path, patch):
    doc = dict(SMALL)
    for key, val in patch.items():
        if val is None:
            doc.pop(key)
        else:
            doc[key] = val
    assert cli.main(["solve", str(write(tmp_path, doc)), "--out", str(tmp_path / "o")]) == 2


def test_bad_arguments_exit_2(tmp_path):
    with pytest.raises(SystemExit) as exc:
        cli.main(["solve"])
    assert exc.value.code == 2


def test_too_few_panels_is_schema_error(tmp_path):
    doc = dict(SMALL, mesh={"panels": [6, 3]})
    assert cli.main(["solve", str(write(tmp_path, doc)), "--out", str(tmp_path / "o")]) == 2


def test_nonconvergence_exit_3(tmp_path):
    doc = dict(SMALL, gmres={"tol": 1e-15, "max_iter": 2})
    doc.pop("grid")
    assert cli.main(["solve", str(write(tmp_path, doc)), "--out", str(tmp_path / "o")]) == 3


def test_golden_solve(tmp_path, capsys):
    code = cli.main(["solve", str(PROBLEMS / "golden_segment.yaml"), "--out", str(tmp_path)])
    assert code == 0
    out = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert out["abs_error"] <= 2e-14
    meta = json.loads((tmp_path / "metadata.json").read_text())
    assert set(meta["timings"]) >= {"T_build", "T_solve", "T_total"}


def test_solve_outputs_are_reproducible(tmp_path):
    p = write(tmp_path, SMALL)
    for d in ("a", "b"):
        assert cli.main(["solve", str(p), "--out", str(tmp_path / d)]) == 0
    for name in ("field.grid", "total.grid"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_thread_count_flag(tmp_path):
    # more threads than BLAS was loaded with must not crash; values agree to rounding
    p = write(tmp_path, SMALL)
    assert cli.main(["solve", str(p), "--out", str(tmp_path / "a"), "--threads", "1"]) == 0
    assert cli.main(["solve", str(p), "--out", str(tmp_path / "c"), "--threads", "64"]) == 0
    a = cli.read_raw(tmp_path / "a" / "field.grid").values
    c = cli.read_raw(tmp_path / "c" / "field.grid").values
    assert np.allclose(a, c, rtol=1e-12, atol=0, equal_nan=True)


def test_raw_text_round_trip(tmp_path, rng):
    v = rng.normal(size=(4, 5)) + 1j * rng.normal(size=(4, 5))
    v[1, 2] = np.nan
    g = grid(v)
    cli.write_raw(tmp_path / "g.grid", g)
    assert cli.main(["emit-grid", str(tmp_path / "g.grid"), "--format", "text",
                     "--out", str(tmp_path / "g.csv")]) == 0
    assert cli.main(["emit-grid", str(tmp_path / "g.csv"), "--format", "raw",
                     "--out", str(tmp_path / "h.grid")]) == 0
    back = cli.read_raw(tmp_path / "h.grid")
    assert back.bbox == g.bbox and (back.nx, back.ny) == (5, 4)
    assert np.array_equal(back.values, v, equal_nan=True)
    assert (tmp_path / "g.grid").read_bytes() == (tmp_path / "h.grid").read_bytes()


def test_raw_header_layout(tmp_path):
    g = grid(np.array([[1 + 2j, 3 - 4j]]))
    cli.write_raw(tmp_path / "g.grid", g)
    b = (tmp_path / "g.grid").read_bytes()
    assert b[:8] == b"HELMGRD1"
    assert np.frombuffer(b[8:24], "<u8").tolist() == [2, 1]
    assert np.frombuffer(b[24:56], "<f8").tolist() == [-1.0, 1.0, -2.0, 2.0]
    assert np.frombuffer(b[56:], "<f8").tolist() == [1, 2, 3, -4]


def read_pgm(path):
    data = path.read_bytes()
    head = data.split(b"\n", 3)
    assert head[0] == b"P5"
    w, h = map(int, head[1].split())
    assert int(head[2]) == 255
    return np.frombuffer(head[3], np.uint8).reshape(h, w)


def test_pgm_zero_field_is_black(tmp_path):
    cli.write_pgm(tmp_path / "z.pgm", grid(np.zeros((3, 7), dtype=complex)), clamp=1.0)
    img = read_pgm(tmp_path / "z.pgm")
    assert img.shape == (3, 7) and not img.any()


def test_pgm_scaling_and_orientation(tmp_path):
    v = np.zeros((2, 2), dtype=complex)
    v[1, 0] = 2.0  # top row in the image (largest y)
    v[0, 1] = 0.5
    cli.write_pgm(tmp_path / "s.pgm", grid(v), clamp=1.0)
    img = read_pgm(tmp_path / "s.pgm")
    assert img[0, 0] == 255 and img[1, 1] == 128


def test_unknown_grid_file(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"garbage")
    assert cli.main(["emit-grid", str(tmp_path / "x.bin"), "--format", "text"]) != 0


def test_presets(capsys):
    assert cli.main(["presets"]) == 0
    text = capsys.readouterr().out
    for name in ("segment", "spiral", "corner", "y-shape", "tree", "eight-corner", "seven-branch"):
        assert name in text
    assert "83.5801715221359" in text and "13.57645917713826" in text


def test_sweep_nsub_single_value(tmp_path):
    code = cli.main(["sweep-nsub", str(PROBLEMS / "golden_segment.yaml"), "--range", "40",
                     "--out", str(tmp_path)])
    assert code == 0
    rows = (tmp_path / "sweep_nsub.tsv").read_text().splitlines()
    assert rows[0].split("\t")[:2] == ["n_sub", "error"]
    assert len(rows) == 2 and float(rows[1].split("\t")[1]) <= 2e-14


def test_sweep_wavelength_table(tmp_path):
    doc = dict(SMALL, geometry={"shape": "segment"}, mesh={"points_per_wavelength": 8},
               grid={"bbox": [-1.3, 1.3, -1.5, 1.1], "nx": 20, "ny": 20})
    doc.pop("k")
    doc["L_over_lambda"] = 5.0
    doc["gmres"] = {"tol": 1e-6}
    code = cli.main(["sweep-wavelength", str(write(tmp_path, doc)), "--ratios", "5,10",
                     "--out", str(tmp_path)])
    assert code == 0
    rows = (tmp_path / "sweep_wavelength.tsv").read_text().splitlines()
    assert len(rows) == 3
    assert [float(r.split("\t")[0]) for r in rows[1:]] == [5.0, 10.0]
