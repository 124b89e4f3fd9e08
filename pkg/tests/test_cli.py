import json

import numpy as np
import pytest

from lidarsim.cli import main
from lidarsim.evaluator import Trajectory
from lidarsim.geometry import quat_normalize
from lidarsim.store import read_bundle


def write_config(tmp_path, **extra):
    doc = {
        "scene": "room",
        "duration": 1.0,
        "seed": 0,
        "lidar": {"model": "avia", "point_rate": 2400.0},
        **extra,
    }
    p = tmp_path / "run.cfg"
    p.write_text(json.dumps(doc))
    return str(p)


def straight_traj(n=50, offset=(0.0, 0.0, 0.0)):
    t = np.arange(n) * 0.1 + 0.1
    pos = np.zeros((n, 3))
    pos[:, 0] = 0.2 * t
    pos += np.asarray(offset)
    quat = np.tile([1.0, 0, 0, 0], (n, 1))
    return Trajectory(t=t, pos=pos, quat=quat_normalize(quat))


# ---------------------------------------------------------------------------
# sim
# ---------------------------------------------------------------------------

def test_sim_deterministic_bundles(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["sim", "--config", cfg, "--seed", "7", "--out", str(tmp_path / "s1")]) == 0
    assert main(["sim", "--config", cfg, "--seed", "7", "--out", str(tmp_path / "s2")]) == 0
    m1 = read_bundle(tmp_path / "s1").manifest
    m2 = read_bundle(tmp_path / "s2").manifest
    assert m1["hashes"] == m2["hashes"]
    out = capsys.readouterr().out
    assert "frames=10" in out


def test_sim_track_mode_ends_on_finish(tmp_path, capsys):
    cfg = write_config(tmp_path, duration=60.0)
    path = tmp_path / "seg.path.json"
    path.write_text("[[0,0],[1.5,0]]")
    rc = main(["sim", "--config", cfg, "--mode", "track", "--path", str(path),
               "--out", str(tmp_path / "tr")])
    assert rc == 0
    assert "tracker finished" in capsys.readouterr().out


def test_sim_missing_scene_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path)
    doc = json.loads((tmp_path / "run.cfg").read_text())
    doc["scene"] = "ghost_castle.scene.json"
    (tmp_path / "run.cfg").write_text(json.dumps(doc))
    rc = main(["sim", "--config", cfg, "--out", str(tmp_path / "x")])
    assert rc == 2
    assert "ghost_castle" in capsys.readouterr().err


def test_unknown_flag_exits_1(capsys):
    assert main(["sim", "--config", "x", "--bogus"]) == 1


def test_missing_subcommand_exits_1():
    assert main([]) == 1


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def test_eval_ape_self_zero(tmp_path, capsys):
    ref = tmp_path / "ref.txt"
    straight_traj().to_tum(ref)
    est = tmp_path / "est.txt"
    straight_traj().to_tum(est)
    rc = main(["eval", "ape", "--est", str(est), "--ref", str(ref)])
    assert rc == 0
    assert "rmse 0.000000" in capsys.readouterr().out


def test_eval_ape_shift_equals_offset(tmp_path, capsys):
    ref = tmp_path / "ref.txt"
    straight_traj().to_tum(ref)
    est = tmp_path / "est.txt"
    straight_traj(offset=(0.3, 0.4, 0.0)).to_tum(est)
    rc = main(["eval", "ape", "--est", str(est), "--ref", str(ref), "--align", "none",
               "--out", str(tmp_path / "rep")])
    assert rc == 0
    assert "rmse 0.500000" in capsys.readouterr().out
    assert (tmp_path / "rep" / "ape_est_series.csv").exists()
    assert (tmp_path / "rep" / "ape_est_summary.json").exists()
    assert (tmp_path / "rep" / "ape_est_series.png").exists()
    assert (tmp_path / "rep" / "ape_est_overlay.png").exists()
    first = (tmp_path / "rep" / "ape_est_series.csv").read_text().splitlines()
    assert first[0] == "t,error"


def test_eval_ape_batch_directory(tmp_path, capsys):
    ref = tmp_path / "ref.txt"
    straight_traj().to_tum(ref)
    estdir = tmp_path / "estimates"
    estdir.mkdir()
    straight_traj().to_tum(estdir / "algo_a.txt")
    straight_traj(offset=(0.1, 0, 0)).to_tum(estdir / "algo_b.txt")
    rc = main(["eval", "ape", "--est", str(estdir), "--ref", str(ref),
               "--out", str(tmp_path / "rep")])
    assert rc == 0
    table = (tmp_path / "rep" / "summary.csv").read_text().splitlines()
    assert len(table) == 3  # header + one row per estimate
    assert table[0].startswith("sequence,estimate,metric,align,samples,rmse")
    out = capsys.readouterr().out
    assert "algo_a.txt" in out and "algo_b.txt" in out


def test_eval_ape_zero_matches_exits_2(tmp_path, capsys):
    ref = tmp_path / "ref.txt"
    straight_traj().to_tum(ref)
    est = tmp_path / "est.txt"
    shifted = straight_traj()
    Trajectory(t=shifted.t + 1e6, pos=shifted.pos, quat=shifted.quat).to_tum(est)
    rc = main(["eval", "ape", "--est", str(est), "--ref", str(ref)])
    assert rc == 2
    assert "zero matches" in capsys.readouterr().err


def test_eval_rpe_cli(tmp_path, capsys):
    ref = tmp_path / "ref.txt"
    straight_traj().to_tum(ref)
    est = tmp_path / "est.txt"
    straight_traj().to_tum(est)
    rc = main(["eval", "rpe", "--est", str(est), "--ref", str(ref), "--delta", "2",
               "--out", str(tmp_path / "rep")])
    assert rc == 0
    assert "rmse 0.000000" in capsys.readouterr().out
    assert (tmp_path / "rep" / "rpe_est_series.png").exists()


def test_eval_normals_cli(tmp_path, capsys):
    rng = np.random.default_rng(0)
    cloud = np.zeros((500, 3))
    cloud[:, 0:2] = rng.uniform(-5, 5, (500, 2))
    np.savetxt(tmp_path / "gt.xyz", cloud)
    rows = ["t,px,py,pz,nx,ny,nz"]
    for i in range(20):
        rows.append(f"0.1,{cloud[i,0]},{cloud[i,1]},0,0,0,1")
        rows.append(f"0.2,{cloud[i,0]},{cloud[i,1]},0,1,0,0")
    (tmp_path / "est.csv").write_text("\n".join(rows) + "\n")
    rc = main(["eval", "normals", "--est", str(tmp_path / "est.csv"),
               "--gt-cloud", str(tmp_path / "gt.xyz"), "--out", str(tmp_path / "rep")])
    assert rc == 0
    out = capsys.readouterr().out
    assert "frames=2" in out
    series = (tmp_path / "rep" / "normals_series.csv").read_text().splitlines()
    assert series[0] == "t,frame_error,points,skipped"
    # frame 1: perfect normals; frame 2: orthogonal ones
    assert float(series[1].split(",")[1]) < 1e-6
    assert float(series[2].split(",")[1]) == pytest.approx(20.0, abs=1e-6)


# ---------------------------------------------------------------------------
# scene validate
# ---------------------------------------------------------------------------

def test_scene_validate_bundled(capsys):
    assert main(["scene", "validate", "--scene", "corridor"]) == 0
    out = capsys.readouterr().out
    assert "objects:" in out and "valid" in out


def test_scene_validate_duplicate_ids(tmp_path, capsys):
    doc = {"name": "dup", "objects": [
        {"id": "a", "kind": "sphere", "radius": 1, "pose": {"xyz": [0, 0, 0]}},
        {"id": "a", "kind": "sphere", "radius": 1, "pose": {"xyz": [2, 0, 0]}},
    ]}
    p = tmp_path / "dup.scene.json"
    p.write_text(json.dumps(doc))
    assert main(["scene", "validate", "--scene", str(p)]) == 2
    assert "duplicate object id" in capsys.readouterr().out


def test_scene_validate_degenerate_mesh(tmp_path, capsys):
    (tmp_path / "flat.obj").write_text("v 0 0 0\nv 1 0 0\nv 2 0 0\nf 1 2 3\n")
    doc = {"name": "m", "objects": [
        {"id": "m", "kind": "mesh", "mesh_file": "flat.obj", "pose": {"xyz": [0, 0, 0]}}]}
    p = tmp_path / "m.scene.json"
    p.write_text(json.dumps(doc))
    assert main(["scene", "validate", "--scene", str(p)]) == 2
    assert "degenerate triangles" in capsys.readouterr().out


def test_scene_validate_parse_failure(tmp_path, capsys):
    p = tmp_path / "broken.scene.json"
    p.write_text("not json at all")
    assert main(["scene", "validate", "--scene", str(p)]) == 2


# ---------------------------------------------------------------------------
# replay
# ---------------------------------------------------------------------------

def test_replay_reproduces_hashes(tmp_path):
    cfg = write_config(tmp_path, duration=2.0)
    cmds = tmp_path / "c.log"
    cmds.write_text("0.0 0.2 0.0\n1.0 0.2 0.4\n")
    doc = json.loads((tmp_path / "run.cfg").read_text())
    doc["mode"] = "scripted"
    doc["command_file"] = "c.log"
    (tmp_path / "run.cfg").write_text(json.dumps(doc))
    assert main(["sim", "--config", str(tmp_path / "run.cfg"), "--out", str(tmp_path / "orig")]) == 0
    assert main(["replay", "--bundle", str(tmp_path / "orig"), "--out", str(tmp_path / "re")]) == 0
    h1 = read_bundle(tmp_path / "orig").manifest["hashes"]
    h2 = read_bundle(tmp_path / "re").manifest["hashes"]
    assert h1 == h2
