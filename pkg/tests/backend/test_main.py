import json

import pytest

from backend.main import EXIT_INVALID, EXIT_OK, EXIT_USAGE, run_cli

LAB_YAML = """\
grid: {size: 2, lo: 0.25, hi: 0.75}
marked: [[0, 0], [1, 1]]
endpoints:
  - {basepoint: a, edges: [[a, b, 1.0]]}
  - {basepoint: c, edges: [[c, l1, 1.0], [c, l2, 1.0], [c, l3, 1.0]]}
m: 2
eps: 0.25
depth: 4
"""


def write_tree(path, nodes, edges):
    path.write_text(
        json.dumps(
            {
                "nodes": [{"id": n} for n in nodes],
                "edges": [{"a": a, "b": b, "len": w} for a, b, w in edges],
            }
        )
    )
    return str(path)


@pytest.fixture
def two_points(tmp_path):
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    a.write_text("x,y\n0,1\n1,0\n")
    b.write_text("x,y\n0,2\n2,0\n")
    return str(a), str(b)


def test_gh_exact_prints_the_value(two_points, capsys):
    assert run_cli(["gh", "exact", *two_points]) == EXIT_OK
    assert capsys.readouterr().out.strip() == "0.5"


def test_gh_exact_with_witness(two_points, capsys):
    assert run_cli(["gh", "exact", *two_points, "--witness"]) == EXIT_OK
    result = json.loads(capsys.readouterr().out)
    assert result["gh"] == 0.5
    assert len(result["witness"]) >= 2


def test_gh_bounds_bracket_the_value(two_points, capsys):
    assert run_cli(["gh", "bounds", *two_points]) == EXIT_OK
    result = json.loads(capsys.readouterr().out)
    assert result["lower"] <= 0.5 <= result["upper"]


def test_unknown_subcommand_is_a_usage_error(capsys):
    assert run_cli(["tree", "bogus"]) == EXIT_USAGE
    assert run_cli([]) == EXIT_USAGE


def test_validate_reports_cycles(tmp_path, capsys):
    path = write_tree(tmp_path / "loop.json", ["a", "b", "c"], [("a", "b", 1), ("b", "c", 1), ("c", "a", 1)])
    assert run_cli(["tree", "validate", path]) == EXIT_INVALID
    assert "Cycle" in capsys.readouterr().err


def test_validate_accepts_trees(tmp_path, capsys):
    path = write_tree(tmp_path / "path.json", ["a", "b", "c"], [("a", "b", 1), ("b", "c", 2)])
    assert run_cli(["tree", "validate", path]) == EXIT_OK
    result = json.loads(capsys.readouterr().out)
    assert result["ok"] is True
    assert result["four_point_defect"] == 0


def test_validate_rejects_bad_matrices(tmp_path, capsys):
    path = tmp_path / "bad.csv"
    path.write_text("a,b,c\n0,1,3\n1,0,1\n3,1,0\n")
    assert run_cli(["tree", "validate", str(path)]) == EXIT_INVALID
    assert json.loads(capsys.readouterr().out)["kind"] == "triangle"


def test_tree_comb(capsys):
    assert run_cli(["tree", "comb", "--s", "0.5", "--depth", "1"]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert len(doc["nodes"]) == 6
    assert len(doc["edges"]) == 5


def test_tree_star_branch_mismatch(capsys):
    assert run_cli(["tree", "star", "--a", "0.3", "0.1", "--branches", "3"]) == EXIT_INVALID
    assert run_cli(["tree", "star", "--a", "0.9"]) == EXIT_INVALID


def test_tree_wedge_and_replace(tmp_path, capsys):
    seg = write_tree(tmp_path / "seg.json", ["a", "b"], [("a", "b", 1)])
    assert run_cli(["tree", "wedge", f"{seg}@a", f"{seg}@b"]) == EXIT_OK
    assert len(json.loads(capsys.readouterr().out)["nodes"]) == 3
    assert run_cli(["tree", "replace", seg, "--s", "0.5", "--depth", "1"]) == EXIT_OK
    assert len(json.loads(capsys.readouterr().out)["nodes"]) == 6
    assert run_cli(["tree", "replace", seg]) == EXIT_USAGE


def test_out_is_resolved_against_output_dir(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("TREELAB_OUTPUT_DIR", str(tmp_path / "reports"))
    assert run_cli(["tree", "comb", "--s", "0", "--out", "comb.json"]) == EXIT_OK
    written = tmp_path / "reports" / "comb.json"
    assert json.loads(written.read_text())["nodes"][0]["id"] == "spine:0"
    assert "Wrote" in capsys.readouterr().err


def test_lab_embed(tmp_path, capsys):
    cfg = tmp_path / "lab.yaml"
    cfg.write_text(LAB_YAML)
    assert run_cli(["lab", "embed", "--config", str(cfg), "--u", "0", "--k", "1"]) == EXIT_OK
    ids = {node["id"] for node in json.loads(capsys.readouterr().out)["nodes"]}
    assert "S/branch:0:0" in ids
    assert run_cli(["lab", "embed", "--config", str(cfg), "--coords", "0.3", "0.3"]) == EXIT_INVALID


def test_lab_scan_injectivity(tmp_path, capsys):
    cfg = tmp_path / "lab.yaml"
    cfg.write_text(LAB_YAML)
    assert run_cli(["lab", "scan-injectivity", "--config", str(cfg)]) == EXIT_OK
    captured = capsys.readouterr()
    assert json.loads(captured.out)["k_star"] == 1
    assert "Starting 8 cell tasks" in captured.err


def test_lab_check(capsys):
    assert run_cli(["lab", "check", "--draws", "2", "--seed", "7"]) == EXIT_OK
    result = json.loads(capsys.readouterr().out)
    assert result["ok"] is True
    assert result["checks"]["gh/two_point"]["runs"] == 2
    for name in ("tree_validity/build_F", "build_F/fingerprint", "comb/continuity"):
        assert result["checks"][name] == {"runs": 2, "failures": 0, "worst": 0.0}
