import json

import numpy as np
import pytest

from cvrspline.cli import EXIT_INTERNAL, EXIT_OK, EXIT_USER, RunConfig, main, run
from cvrspline.fitting import TriMesh, franke, write_obj
from cvrspline.mesh import HierarchicalTMesh


def call(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, json.loads(out.out), out.err


@pytest.fixture
def tensor_file(tmp_path):
    p = tmp_path / "m.json"
    p.write_text(HierarchicalTMesh.tensor(range(4), range(5)).to_json())
    return str(p)


def test_dim_with_oracle(capsys, tensor_file):
    code, rep, err = call(capsys, "dim", "--mesh", tensor_file, "--oracle", "--no-hbc")
    assert code == EXIT_OK
    assert rep["result"]["dim"] == rep["result"]["dim_oracle"] == 5 * 6
    assert "PASS" in err
    assert rep["config"]["hbc"] is False


def test_random_mesh_is_reproducible(capsys, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for p in (a, b):
        assert call(capsys, "random-mesh", "--seed", "5", "--out", str(p))[0] == EXIT_OK
    assert a.read_text() == b.read_text()


def test_basis_check(capsys, tmp_path):
    p = tmp_path / "m.json"
    p.write_text(HierarchicalTMesh.tensor(range(3), range(3)).subdivide("L0:(1,1)").to_json())
    out = tmp_path / "basis.json"
    code, rep, err = call(capsys, "basis", "--mesh", str(p), "--no-hbc", "--check", "--out", str(out))
    assert code == EXIT_OK
    assert rep["result"]["check"]["partition_of_unity"]["ok"]
    assert "FAIL" not in err
    assert len(json.loads(out.read_text())["functions"]) == rep["result"]["dim"]


def test_simplify_and_cvr(capsys, tmp_path, fig15):
    p = tmp_path / "m.json"
    p.write_text(fig15.to_json())
    code, rep, _ = call(capsys, "simplify", "--mesh", str(p), "--oracle", "--out", str(tmp_path / "s.json"))
    assert code == EXIT_OK and rep["result"]["removed_edges"] == 3
    assert rep["result"]["dim_oracle"] == rep["result"]["dim_oracle_simplified"]
    code, rep, _ = call(capsys, "cvr", "--mesh", str(p), "--out", str(tmp_path / "g.json"))
    graph = json.loads((tmp_path / "g.json").read_text())
    assert code == EXIT_OK and len(graph["gcells"]) == rep["result"]["dim"]


def test_fit_from_obj(capsys, tmp_path):
    t = TriMesh.grid(franke, 15)
    write_obj(tmp_path / "s.obj", t.vertices, t.triangles)
    code, rep, _ = call(
        capsys, "fit", "--in", str(tmp_path / "s.obj"), "--tol", "0.05", "--max-iter", "3",
        "--out", str(tmp_path / "r.json"), "--surface", str(tmp_path / "o.obj"), "--res", "5",
    )
    assert code == EXIT_OK
    saved = json.loads((tmp_path / "r.json").read_text())
    rows = saved["iterations"]
    assert rows and all({"n", "dim", "max_error", "seconds"} <= set(r) for r in rows)
    errs = [r["max_error"] for r in rows]
    assert errs == sorted(errs, reverse=True) or saved["warnings"]
    assert len((tmp_path / "o.obj").read_text().splitlines()) == 25 + 32


def test_user_errors(capsys, tmp_path):
    assert call(capsys, "dim", "--mesh", str(tmp_path / "missing.json"))[0] == EXIT_USER
    bad = tmp_path / "bad.json"
    bad.write_text("{}")
    assert call(capsys, "dim", "--mesh", str(bad))[0] == EXIT_USER
    assert call(capsys, "fit", "--tol", "-1")[0] == EXIT_USER


def test_consistency_failure_code(monkeypatch, tensor_file):
    import cvrspline.cli as cli

    monkeypatch.setattr(cli, "dim_bruteforce", lambda mesh, hbc: -1)
    code, rep = run(RunConfig("dim", mesh=tensor_file, oracle=True))
    assert code == EXIT_INTERNAL and "error" in rep
