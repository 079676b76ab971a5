import json
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np
import pytest

from app.backend import GraphSnapshot, PoseGraphEdge, export_graph
from app.config import PipelineConfig
from app.geometry.lie import PoseSim3
from app.io import read_trajectory, write_trajectory
from app.main import main


@pytest.fixture(scope="module")
def room_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("room")
    assert main(["make-oracle", "room-forward", str(root), "--frames", "3"]) == 0
    return root


def test_dump_config(capsys):
    assert main(["--dump-config"]) == 0
    text = capsys.readouterr().out
    assert PipelineConfig.from_dict(tomllib.loads(text)) == PipelineConfig()


def test_no_command_prints_help(capsys):
    assert main([]) == 1
    assert "flowslam" in capsys.readouterr().out


def test_input_errors_exit_with_one(tmp_path):
    """Entrada ausente ou configuração inválida: código 1"""
    assert main(["run"]) == 1
    assert main(["run", str(tmp_path / "missing"), "-o", str(tmp_path / "out")]) == 1
    config = tmp_path / "bad.toml"
    config.write_text("batch_size = 1\n")
    assert main(["run", str(tmp_path), "--config", str(config), "-o", str(tmp_path / "out")]) == 1


def test_make_oracle_writes_manifest(room_dir):
    assert (room_dir / "manifest.txt").exists()
    assert (room_dir / "flow" / "000001.flo").exists()
    assert not (room_dir / "flow" / "000002.flo").exists()
    times, poses = read_trajectory(room_dir / "groundtruth_tum.txt", "tum")
    assert len(poses) == 3


def test_eval_identical_trajectories(tmp_path, room, capsys):
    poses = room.poses()
    times = [room.timestamp(k) for k in range(room.n_frames)]
    path = tmp_path / "traj.txt"
    write_trajectory(poses, times, "tum", path)
    assert main(["eval", str(path), str(path), "--lengths", "0.2,0.4"]) == 0
    out = dict(line.split(": ", 1) for line in capsys.readouterr().out.splitlines())
    assert float(out["ate_rmse"]) < 1e-9
    assert out["alignment"] == "sim3"
    assert float(out["completeness"]) == 1.0


def test_eval_insufficient_pairs(tmp_path, room):
    path = tmp_path / "one.txt"
    write_trajectory([room.pose(0)], [0.0], "tum", path)
    assert main(["eval", str(path), str(path)]) == 1


def test_align_command(room_dir, capsys):
    """Alinha a profundidade do frame 1 sobre a do frame 0"""
    code = main(["align", str(room_dir / "depth" / "000000.pfm"), str(room_dir / "depth" / "000001.pfm"),
                 "--calib", str(room_dir / "calib.txt")])
    assert code == 0
    result = json.loads(capsys.readouterr().out)
    _, poses = read_trajectory(room_dir / "groundtruth_tum.txt", "tum")
    truth = poses[0].inverse() @ poses[1]
    np.testing.assert_allclose(result["translation"], truth.translation, atol=0.02)
    assert result["scale"] == 1.0
    assert len(result["covariance"]) == 6


def test_graph_dump(tmp_path, capsys):
    step = PoseSim3.from_parts(np.eye(3), np.array([1.0, 0.0, 0.0]), 1.0)
    snapshot = GraphSnapshot(
        poses={0: PoseSim3.identity(), 1: step}, frames={0: 0, 1: 4}, segments={0: 0, 1: 0},
        edges=(PoseGraphEdge(0, 1, step, np.eye(7), "odometry"),), processed=1,
    )
    path = tmp_path / "posegraph.json"
    export_graph(snapshot, path)
    assert main(["graph-dump", str(path)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines == ["0 1 odometry 1 0 0 0 0 0 0"]
