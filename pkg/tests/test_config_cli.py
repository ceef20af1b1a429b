import json

import numpy as np
import pytest

import cellhom as ch
from cellhom.cell import voxel_text
from cellhom.cli import main, run
from cellhom.config import ParseError, RunConfig, ValidationError, parse_config
from cellhom.microstructures import homogeneous_cell, laminate_cell, random_two_phase_cell


def test_parse_minimal_defaults():
    cfg = parse_config("voxel_path = cell.vox\n")
    assert cfg.task == "homogenize"
    assert cfg.formulation == "displacement"
    assert cfg.tol == 1e-9 and cfg.max_iter == 10000
    assert cfg.uzawa_step == "auto" and cfg.seed == 0
    assert cfg.output_dir == "."
    np.testing.assert_array_equal(cfg.lattice, np.eye(3).ravel())


def test_parse_comments_and_blank_lines():
    cfg = parse_config("""
# run configuration
voxel_path = cell.vox   # trailing comment
task = verify

tol = 1e-7
""")
    assert cfg.task == "verify" and cfg.tol == 1e-7


def test_parse_solve_fields():
    cfg = parse_config("""
voxel_path = cell.vox
task = solve
macro_kind = stress
macro_value = 1 0 0 0 0 0.5
uzawa_step = AUTO
seed = 3
""")
    assert cfg.macro_kind == "stress"
    np.testing.assert_allclose(cfg.macro_value, [1, 0, 0, 0, 0, 0.5])
    assert cfg.uzawa_step == "auto" and cfg.seed == 3


@pytest.mark.parametrize("text, exc, needle", [
    ("voxel_path = a\ntol = -1\n", ValidationError, "tol"),
    ("voxel_path = a\ntol = many\n", ValidationError, "tol"),
    ("voxel_path = a\nmax_iter = 0\n", ValidationError, "max_iter"),
    ("voxel_path = a\nuzawa_step = -2\n", ValidationError, "uzawa_step"),
    ("voxel_path = a\ntask = fly\n", ValidationError, "task"),
    ("voxel_path = a\nlattice = 1 2 3\n", ValidationError, "lattice"),
    ("voxel_path = a\ntask = solve\n", ValidationError, "macro_kind"),
    ("voxel_path = a\nmacro_value = 1 2 3 4 5 6\n", ValidationError, "macro_value"),
    ("task = homogenize\n", ValidationError, "voxel_path"),
    ("voxel_path = a\ntask = solve\nmacro_kind = strain\n"
     "macro_value = 1 0 0 0 0 0\nformulation = stress-uzawa\n",
     ValidationError, "macro_kind"),
])
def test_validation_errors(text, exc, needle):
    with pytest.raises(exc, match=needle):
        parse_config(text)


def test_parse_errors_carry_line_numbers():
    with pytest.raises(ParseError) as err:
        parse_config("voxel_path = a\nnot a pair\n")
    assert err.value.line == 2
    with pytest.raises(ParseError, match="unknown key"):
        parse_config("voxel_path = a\ncolor = blue\n")
    with pytest.raises(ParseError, match="duplicate"):
        parse_config("voxel_path = a\nvoxel_path = b\n")


def _write_inputs(tmp_path, cell, extra=""):
    vox = tmp_path / "cell.vox"
    vox.write_text(voxel_text(cell), encoding="utf-8")
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        f"voxel_path = {vox}\noutput_dir = {tmp_path / 'out'}\n" + extra,
        encoding="utf-8")
    return cfg


def test_run_homogeneous_exit0(tmp_path):
    cell = homogeneous_cell(dims=(2, 2, 2))
    cfg = _write_inputs(tmp_path, cell, "task = homogenize\n")
    assert main([str(cfg), "--quiet"]) == 0
    ch_rows = (tmp_path / "out" / "CH.txt").read_text().strip().splitlines()
    got = np.array([[float(v) for v in row.split()] for row in ch_rows])
    assert np.abs(got - cell.phases[0]).max() <= 1e-10
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["checks_failed"] == []
    assert "wall_time_s" in report
    csv = (tmp_path / "out" / "convergence.csv").read_text().splitlines()
    assert csv[0] == "label,iteration,residual,gap"
    assert len(csv) > 6


def test_run_exit2_on_iteration_budget(tmp_path):
    cfg = _write_inputs(tmp_path, laminate_cell(),
                        "task = homogenize\nmax_iter = 1\ntol = 1e-14\n")
    assert main([str(cfg), "--quiet"]) == 2
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert "error" in report and report["solves"]


def test_run_verify_lists_arrows(tmp_path):
    cfg = _write_inputs(tmp_path, random_two_phase_cell(), "task = verify\n")
    code = main([str(cfg), "--quiet"])
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert code == 0
    assert report["arrows"] and all(a["passed"] for a in report["arrows"])
    assert "dual_consistency" in report["checks"]


def test_run_solve_strain(tmp_path):
    cfg = _write_inputs(
        tmp_path, random_two_phase_cell(),
        "task = solve\nmacro_kind = strain\nmacro_value = 1 0 0 0 0 0\n")
    assert main([str(cfg), "--quiet"]) == 0
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert "mean_stress" in report
    assert not (tmp_path / "out" / "CH.txt").exists()


def test_run_solve_uzawa(tmp_path):
    cfg = _write_inputs(
        tmp_path, random_two_phase_cell(),
        "task = solve\nformulation = stress-uzawa\nmacro_kind = stress\n"
        "macro_value = 1 0.2 0 0 0 0\ntol = 1e-8\n")
    assert main([str(cfg), "--quiet"]) == 0
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["solves"][0]["label"] == "uzawa"
    assert report["solves"][0]["final_gap"] <= 1e-8 * abs(
        report["solves"][0]["final_energy"]) * 10


def test_run_homogenize_uzawa_formulation(tmp_path):
    cell = random_two_phase_cell()
    cfg = _write_inputs(tmp_path, cell,
                        "task = homogenize\nformulation = stress-uzawa\n")
    assert main([str(cfg), "--quiet"]) == 0
    got = np.loadtxt(tmp_path / "out" / "CH.txt")
    expect = ch.homogenize(cell).CH
    assert np.abs(got - expect).max() <= 1e-6 * np.linalg.norm(expect)


def test_run_missing_voxel_is_io_error(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("voxel_path = /nonexistent/cell.vox\n", encoding="utf-8")
    assert main([str(cfg), "--quiet"]) == 1


def test_main_config_errors(tmp_path):
    assert main([str(tmp_path / "missing.cfg")]) == 1
    bad = tmp_path / "bad.cfg"
    bad.write_text("voxel_path = a\ntol = -3\n", encoding="utf-8")
    assert main([str(bad), "--quiet"]) == 1
    good = tmp_path / "good.cfg"
    good.write_text("voxel_path = a\n", encoding="utf-8")
    assert main([str(good), "--threads", "0"]) == 1


def test_run_custom_lattice(tmp_path):
    cell = homogeneous_cell(dims=(2, 2, 2))
    vox = tmp_path / "cell.vox"
    vox.write_text(voxel_text(cell), encoding="utf-8")
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        f"voxel_path = {vox}\noutput_dir = {tmp_path / 'out'}\n"
        "lattice = 2 0 0 0 1 0 0 0 0.5\n", encoding="utf-8")
    assert main([str(cfg), "--quiet"]) == 0
    got = np.loadtxt(tmp_path / "out" / "CH.txt")
    assert np.abs(got - cell.phases[0]).max() <= 1e-10


def test_byte_identical_reruns(tmp_path):
    cell = random_two_phase_cell()
    outs = []
    for threads, sub in ((1, "one"), (8, "eight")):
        vox = tmp_path / sub / "cell.vox"
        vox.parent.mkdir()
        vox.write_text(voxel_text(cell), encoding="utf-8")
        cfg = tmp_path / sub / "run.cfg"
        cfg.write_text(
            f"voxel_path = {vox}\noutput_dir = {tmp_path / sub / 'out'}\n",
            encoding="utf-8")
        assert main([str(cfg), "--threads", str(threads), "--quiet"]) == 0
        outs.append((tmp_path / sub / "out"))
    ch_1 = (outs[0] / "CH.txt").read_bytes()
    ch_8 = (outs[1] / "CH.txt").read_bytes()
    assert ch_1 == ch_8
    conv_1 = (outs[0] / "convergence.csv").read_bytes()
    conv_8 = (outs[1] / "convergence.csv").read_bytes()
    assert conv_1 == conv_8
    r1 = json.loads((outs[0] / "report.json").read_text())
    r8 = json.loads((outs[1] / "report.json").read_text())
    for r in (r1, r8):
        r.pop("wall_time_s")
        r.pop("voxel_path")
        r["params"].pop("threads")
    assert r1 == r8


def test_run_exit3_on_check_failure(tmp_path, monkeypatch):
    # force the energy-consistency threshold to an unreachable value so the
    # check-failure exit path is exercised without a synthetic solver bug
    import cellhom.cli as cli

    monkeypatch.setattr(cli, "ENERGY_CHECK_LIMIT", -1.0)
    cfg = _write_inputs(tmp_path, random_two_phase_cell(), "task = homogenize\n")
    assert main([str(cfg), "--quiet"]) == 3
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert "energy_check_max" in report["checks_failed"]
    assert (tmp_path / "out" / "CH.txt").exists()


def test_run_config_dataclass_roundtrip(tmp_path):
    cell = homogeneous_cell(dims=(2, 2, 2))
    vox = tmp_path / "cell.vox"
    vox.write_text(voxel_text(cell), encoding="utf-8")
    cfg = RunConfig(voxel_path=str(vox), task="homogenize",
                    output_dir=str(tmp_path / "out"))
    assert run(cfg, quiet=True) == 0
