import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from mather_lab.cli import (
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_SOLVER,
    EXIT_VERIFY,
    ConfigError,
    export_artifact,
    load_config,
    main,
)

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
FREE = CONFIGS / "free.ini"


def write_ini(tmp_path, text, name="c.ini"):
    path = tmp_path / name
    path.write_text(text)
    return path


def tree(root: Path) -> dict:
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file() and p.name != "timings.json"}


@pytest.mark.parametrize("text", [
    "[experiment]\nspec = free\ncolour = red\n",
    "[experiment]\ngrid = 4x16\n",
    "[experiment]\nspec = nonsense\n",
    "[plotting]\ndpi = 3\n",
    "[parameters]\nmass = 2\n",
    "[experiment]\neps = 0.1, -0.2\n",
])
def test_bad_configs_exit_2(tmp_path, text):
    cfg = write_ini(tmp_path, text)
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_bad_arguments_exit_2(tmp_path):
    assert main(["sweep", "--grid", "banana", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["frobnicate"]) == EXIT_CONFIG


def test_config_digest_ignores_output_dir_and_tracks_values():
    a = load_config(FREE)
    b = load_config(FREE, {"experiment": {"grid": "32x16"}})
    assert a.digest() == load_config(FREE).digest()
    assert a.digest() != b.digest()
    with pytest.raises(ConfigError):
        load_config(FREE, {"experiment": {"grid": "16"}})


@pytest.fixture(scope="module")
def free_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("runs")
    codes = [main(["run", "--config", str(FREE), "--out", str(root / k)]) for k in ("a", "b")]
    return codes, root / "a", root / "b"


def test_free_run_passes(free_runs):
    codes, a, _ = free_runs
    assert codes == [EXIT_OK, EXIT_OK]
    manifest = json.loads((a / "manifest.json").read_text())
    assert manifest["exit_code"] == 0 and manifest["failures"] == []
    assert manifest["wall_times"] == "timings.json"
    assert "seconds" not in json.dumps(manifest)
    report = json.loads((a / "report.json").read_text())
    assert report["passed"]
    for name in manifest["artifacts"]:
        assert (a / name).is_file()


def test_rerun_is_byte_identical(free_runs):
    _, a, b = free_runs
    ta, tb = tree(a), tree(b)
    assert ta.keys() == tb.keys()
    assert [k for k in ta if ta[k] != tb[k]] == []
    assert (a / "timings.json").is_file()


def test_sweep_csv_header_and_rows(free_runs):
    _, a, _ = free_runs
    with (a / "sweep.csv").open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["P", "eps", "hbar", "p_sup", "residual_rms", "periods", "status"]
    assert len(rows) == 1 + 2 * 3
    for r in rows[1:]:
        assert float(r[2]) == pytest.approx(0.125, abs=1e-10)
        assert r[-1] == "ok"


def test_particle_dump_header(free_runs):
    _, a, _ = free_runs
    first = (a / "particles" / "mu_P0.5_eps0.05.csv").read_text().splitlines()[0]
    assert first == "x,t,p,w"


def test_export_round_trip(free_runs, tmp_path):
    _, a, _ = free_runs
    js = export_artifact(a / "sweep.csv", "json", tmp_path / "sweep.json")
    table = json.loads(js.read_text())
    assert table["columns"][0] == "P" and len(table["rows"]) == 6
    back = export_artifact(js, "csv", tmp_path / "sweep.csv")
    assert back.read_text() == (a / "sweep.csv").read_text()
    rep = export_artifact(a / "report.json", "csv", tmp_path / "report.csv")
    assert rep.read_text().splitlines()[0].startswith("check,name,lhs,rhs")


def test_export_errors(tmp_path):
    assert main(["export", str(tmp_path / "missing.csv"), "--format", "json"]) == EXIT_CONFIG
    src = write_ini(tmp_path, "a,b\n1,2\n", "t.csv")
    with pytest.raises(ConfigError):
        export_artifact(src, "csv")


def test_command_line_overrides(tmp_path):
    out = tmp_path / "o"
    code = main(["sweep", "--config", str(FREE), "--P", "0.25", "--eps", "0.1", "--out", str(out)])
    assert code == EXIT_OK
    rows = (out / "sweep.csv").read_text().splitlines()
    assert len(rows) == 2 and rows[1].startswith("0.25,0.10000000000000001,0.03125")


def test_solver_failure_exit_3(tmp_path):
    cfg = write_ini(tmp_path, "[experiment]\nspec = pendulum\nP = 0\neps = 0.1\ngrid = 16x16\n"
                              "[solver]\nmax_periods = 2\n")
    out = tmp_path / "o"
    assert main(["sweep", "--config", str(cfg), "--out", str(out)]) == EXIT_SOLVER
    rows = (out / "sweep.csv").read_text().splitlines()
    assert rows[1].split(",")[2] == "nan" and rows[1].endswith(",NonConvergence")


def test_verification_failure_exit_1(tmp_path):
    # the pendulum's viscous values approach 1, so their distance to 0 is not decreasing
    cfg = write_ini(tmp_path, "[experiment]\nspec = pendulum\nP = 0\neps = 0.2, 0.1, 0.05\n"
                              "grid = 16x16\ninviscid_hbar = 0\n[sde]\nenabled = false\n")
    out = tmp_path / "o"
    assert main(["verify", "--config", str(cfg), "--out", str(out)]) == EXIT_VERIFY
    rows = json.loads((out / "report.json").read_text())["rows"]
    gap = [r for r in rows if r["name"] == "hbar_gap_monotone"]
    assert len(gap) == 1 and not gap[0]["passed"]


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "mather_lab", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "export" in res.stdout
