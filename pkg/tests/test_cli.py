import json

import numpy as np
import pytest

from conftest import random_indexed_mesh, random_soup, soup_to_stl_binary
from ioskit.cli import main
from ioskit.meshio import save_mesh
from ioskit.pcformat import file_size, load_pointcloud


@pytest.fixture
def mesh_file(tmp_path):
    p = tmp_path / "scan.stl"
    p.write_bytes(soup_to_stl_binary(random_soup(0, n_faces=40)))
    return p


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    captured = capsys.readouterr()
    return code, captured.out, captured.err


# ----------------------------------------------------------------- convert

def test_convert_single_file(tmp_path, mesh_file, capsys):
    out = tmp_path / "out"
    code, stdout, _ = run(
        capsys, "convert", mesh_file, "--points", "50", "--seed", "3",
        "--out-dir", out,
    )
    assert code == 0
    target = out / "scan.iospc"
    assert target.exists()
    assert target.stat().st_size == file_size(50)
    cloud = load_pointcloud(target)
    assert cloud.n_points == 50 and cloud.seed == 3
    assert "ok" in stdout and "converted 1/1" in stdout


def test_convert_is_deterministic(tmp_path, mesh_file, capsys):
    out = tmp_path / "out"
    run(capsys, "convert", mesh_file, "--points", "40", "--seed", "9",
        "--out-dir", out)
    first = (out / "scan.iospc").read_bytes()
    run(capsys, "convert", mesh_file, "--points", "40", "--seed", "9",
        "--out-dir", out)
    assert (out / "scan.iospc").read_bytes() == first


def test_convert_defaults_to_seed_zero_with_note(tmp_path, mesh_file, capsys):
    out = tmp_path / "out"
    code, stdout, _ = run(capsys, "convert", mesh_file, "--points", "10",
                          "--out-dir", out)
    assert code == 0
    assert "seed 0" in stdout or "using seed 0" in stdout
    explicit = tmp_path / "explicit"
    run(capsys, "convert", mesh_file, "--points", "10", "--seed", "0",
        "--out-dir", explicit)
    assert (out / "scan.iospc").read_bytes() == (explicit / "scan.iospc").read_bytes()


def test_convert_directory_recursive(tmp_path, capsys):
    tree = tmp_path / "meshes"
    (tree / "sub").mkdir(parents=True)
    for i, where in enumerate([tree, tree / "sub"]):
        (where / f"m{i}.stl").write_bytes(
            soup_to_stl_binary(random_soup(i, n_faces=12))
        )
    (tree / "notes.txt").write_text("not a mesh")
    out = tmp_path / "out"
    code, stdout, _ = run(capsys, "convert", tree, "--points", "5",
                          "--seed", "1", "--out-dir", out)
    assert code == 0
    assert (out / "m0.iospc").exists() and (out / "m1.iospc").exists()
    assert "converted 2/2" in stdout


def test_convert_writes_next_to_input_by_default(tmp_path, mesh_file, capsys):
    code, _, _ = run(capsys, "convert", mesh_file, "--points", "5", "--seed", "0")
    assert code == 0
    assert (mesh_file.parent / "scan.iospc").exists()


def test_convert_bad_file_fails_but_continues(tmp_path, capsys):
    good = tmp_path / "good.stl"
    good.write_bytes(soup_to_stl_binary(random_soup(1, n_faces=10)))
    bad = tmp_path / "bad.stl"
    bad.write_bytes(b"\x00\x01 definitely not a mesh")
    out = tmp_path / "out"
    code, stdout, stderr = run(capsys, "convert", good, bad, "--points", "5",
                               "--seed", "0", "--out-dir", out)
    assert code == 1
    assert (out / "good.iospc").exists()
    assert not (out / "bad.iospc").exists()
    assert "FAIL" in stderr and "converted 1/2" in stdout
    # no temp litter left behind
    assert not list(out.glob(".*tmp*"))


def test_convert_no_inputs(tmp_path, capsys):
    empty = tmp_path / "empty"
    empty.mkdir()
    code, _, stderr = run(capsys, "convert", empty, "--seed", "0")
    assert code == 1
    assert "no input" in stderr


def test_convert_parallel_matches_serial(tmp_path, capsys):
    tree = tmp_path / "meshes"
    tree.mkdir()
    for i in range(4):
        (tree / f"m{i}.stl").write_bytes(
            soup_to_stl_binary(random_soup(i + 10, n_faces=15))
        )
    out1, out2 = tmp_path / "serial", tmp_path / "parallel"
    run(capsys, "convert", tree, "--points", "20", "--seed", "5", "--out-dir", out1)
    code, _, _ = run(capsys, "convert", tree, "--points", "20", "--seed", "5",
                     "--out-dir", out2, "--jobs", "3")
    assert code == 0
    for i in range(4):
        assert (out1 / f"m{i}.iospc").read_bytes() == (out2 / f"m{i}.iospc").read_bytes()


def test_convert_strict_format_rejects_degenerate(tmp_path, capsys):
    soup = random_soup(2, n_faces=6)
    soup[3, 1] = soup[3, 0]
    p = tmp_path / "deg.stl"
    p.write_bytes(soup_to_stl_binary(soup))
    out = tmp_path / "out"
    code, _, stderr = run(capsys, "convert", p, "--points", "5", "--seed", "0",
                          "--out-dir", out, "--strict-format")
    assert code == 1 and "DegenerateTopology" in stderr
    code, _, _ = run(capsys, "convert", p, "--points", "5", "--seed", "0",
                     "--out-dir", out)
    assert code == 0


def test_convert_registration_modes(tmp_path, mesh_file, capsys):
    out_none = tmp_path / "none"
    code, _, _ = run(capsys, "convert", mesh_file, "--points", "10", "--seed", "2",
                     "--out-dir", out_none, "--registration", "none")
    assert code == 0
    tf_path = tmp_path / "tf.json"
    tf_path.write_text(json.dumps({
        "rotation": np.eye(3).tolist(),
        "translation": [0.0, 0.0, 0.0],
    }))
    out_tf = tmp_path / "tf"
    code, _, _ = run(capsys, "convert", mesh_file, "--points", "10", "--seed", "2",
                     "--out-dir", out_tf, "--registration", tf_path)
    assert code == 0
    # identity transform and no registration agree after normalization
    a = (out_none / "scan.iospc").read_bytes()
    b = (out_tf / "scan.iospc").read_bytes()
    assert a == b


# ----------------------------------------------------- build / stats / eval

def build_workspace(tmp_path, capsys):
    manifest = tmp_path / "manifest.jsonl"
    code, _, _ = run(capsys, "synth", "--seed", "1", "--cases", "80",
                     "--out", manifest)
    assert code == 0
    data_dir = tmp_path / "data"
    code, stdout, _ = run(capsys, "build", manifest, "--out-dir", data_dir,
                          "--seed", "2")
    assert code == 0
    return manifest, data_dir, stdout


def test_build_writes_stage_files_and_stats(tmp_path, capsys):
    manifest, data_dir, stdout = build_workspace(tmp_path, capsys)
    for name in ("stage1.jsonl", "stage2.jsonl", "test.jsonl", "stats.json"):
        assert (data_dir / name).exists()
    stats = json.loads((data_dir / "stats.json").read_text())
    assert stats["total_cases"] == 80
    n_samples = sum(
        1
        for name in ("stage1.jsonl", "stage2.jsonl", "test.jsonl")
        for line in (data_dir / name).read_text().splitlines()
        if line.strip()
    )
    assert stats["total_samples"] == n_samples
    assert "total" in stdout.lower()


def test_build_deterministic(tmp_path, capsys):
    manifest, data_dir, _ = build_workspace(tmp_path, capsys)
    again = tmp_path / "again"
    code, _, _ = run(capsys, "build", manifest, "--out-dir", again, "--seed", "2")
    assert code == 0
    for name in ("stage1.jsonl", "stage2.jsonl", "test.jsonl", "stats.json"):
        assert (data_dir / name).read_bytes() == (again / name).read_bytes()


def test_stats_command(tmp_path, capsys):
    manifest, data_dir, _ = build_workspace(tmp_path, capsys)
    out_json = tmp_path / "stats_out.json"
    code, stdout, _ = run(capsys, "stats", data_dir / "stage1.jsonl",
                          data_dir / "stage2.jsonl", data_dir / "test.jsonl",
                          "--manifest", manifest, "--json", out_json)
    assert code == 0
    stats = json.loads(out_json.read_text())
    assert stats["total_cases"] == 80


def test_eval_command_perfect_predictions(tmp_path, capsys):
    _, data_dir, _ = build_workspace(tmp_path, capsys)
    gold = data_dir / "test.jsonl"
    preds = tmp_path / "preds.jsonl"
    with open(preds, "w") as fh:
        for line in gold.read_text().splitlines():
            s = json.loads(line)
            fh.write(json.dumps({
                "sample_id": s["sample_id"],
                "generated_text": f"Answer: {s['answer_label']}",
            }) + "\n")
    report = tmp_path / "report.json"
    audit = tmp_path / "audit.jsonl"
    code, stdout, _ = run(capsys, "eval", preds, gold, "--report", report,
                          "--audit", audit)
    assert code == 0
    assert stdout.splitlines()[1].split() == ["100.00"] * 5
    payload = json.loads(report.read_text())
    assert payload["macro"]["parsing_rate"] == 1.0
    assert sum(1 for _ in open(audit)) == sum(
        1 for ln in gold.read_text().splitlines() if ln.strip()
    )


def test_eval_unparsable_predictions(tmp_path, capsys):
    _, data_dir, _ = build_workspace(tmp_path, capsys)
    gold = data_dir / "test.jsonl"
    preds = tmp_path / "preds.jsonl"
    with open(preds, "w") as fh:
        for line in gold.read_text().splitlines():
            s = json.loads(line)
            fh.write(json.dumps({
                "sample_id": s["sample_id"],
                "generated_text": "I cannot tell from this scan.",
            }) + "\n")
    code, stdout, _ = run(capsys, "eval", preds, gold,
                          "--report", tmp_path / "r.json",
                          "--audit", tmp_path / "a.jsonl")
    assert code == 0
    row = stdout.splitlines()[1].split()
    assert row == ["0.00"] * 5


# ------------------------------------------------------------------ errors

def test_missing_manifest_is_reported(tmp_path, capsys):
    code, _, stderr = run(capsys, "build", tmp_path / "ghost.jsonl",
                          "--out-dir", tmp_path, "--seed", "0")
    assert code == 1
    assert "error" in stderr


def test_eval_on_missing_files(tmp_path, capsys):
    code, _, stderr = run(capsys, "eval", tmp_path / "nope.jsonl",
                          tmp_path / "nope2.jsonl")
    assert code == 1
    assert "error" in stderr


def test_cli_requires_subcommand(capsys):
    with pytest.raises(SystemExit):
        main([])


def test_synth_explicit_sources(tmp_path, capsys):
    out = tmp_path / "m.jsonl"
    code, stdout, _ = run(capsys, "synth", "--seed", "0",
                          "--sources", "a=15,b=12", "--out", out)
    assert code == 0
    lines = [json.loads(x) for x in out.read_text().splitlines()]
    assert len(lines) == 27
    assert {x["source"] for x in lines} == {"a", "b"}