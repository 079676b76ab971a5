import os

import numpy as np
import pytest

from app.errors import EmptySequenceError, FormatError, InvalidInputError, UnsupportedFormatError
from app.geometry import DepthMap, FlowField, PoseSE3
from app.io import (
    Calibration, KeyframeCloud, load_manifest, read_calibration, read_flo, read_image, read_pfm,
    read_pfm_array, read_ply, read_trajectory, write_calibration, write_flo, write_image, write_pfm,
    write_pfm_array, write_pointcloud_ply, write_trajectory,
)
from app.io.flo import FLO_TAG
from app.oracle.export import export_scene
from app.oracle.scene import plane_scene


def _flow(shape=(4, 5)) -> FlowField:
    values = np.arange(np.prod(shape) * 2, dtype=np.float64).reshape(shape + (2,)) * 0.25 - 3.0
    valid = np.ones(shape, dtype=bool)
    valid[1, 2] = False
    return FlowField.from_array(values, valid)


# ------------------------------------------------------------------------ .flo

def test_flo_round_trip(tmp_path):
    """Pixels inválidos voltam inválidos; válidos voltam com precisão float32"""
    flow = _flow()
    path = tmp_path / "a.flo"
    write_flo(path, flow)
    assert os.path.getsize(path) == 12 + 8 * 20
    loaded = read_flo(path)
    np.testing.assert_array_equal(loaded.valid, flow.valid)
    np.testing.assert_allclose(loaded.values[loaded.valid], flow.values[flow.valid], rtol=1e-6)


def test_flo_bad_tag(tmp_path):
    path = tmp_path / "bad.flo"
    path.write_bytes(np.array([1.0, 0, 0], dtype="<f4").tobytes())
    with pytest.raises(FormatError) as info:
        read_flo(path)
    assert info.value.offset == 0


def test_flo_truncated_and_trailing(tmp_path):
    """Payload curto ou com sobra informa o deslocamento"""
    path = tmp_path / "a.flo"
    write_flo(path, _flow())
    raw = path.read_bytes()
    short = tmp_path / "short.flo"
    short.write_bytes(raw[:-8])
    with pytest.raises(FormatError) as info:
        read_flo(short)
    assert info.value.offset == len(raw) - 8
    long = tmp_path / "long.flo"
    long.write_bytes(raw + b"\x00\x00\x00\x00")
    with pytest.raises(FormatError) as info:
        read_flo(long)
    assert info.value.offset == len(raw)


def test_flo_unknown_flow_marker(tmp_path):
    path = tmp_path / "marker.flo"
    header = np.array([FLO_TAG], dtype="<f4").tobytes() + np.array([1, 1], dtype="<i4").tobytes()
    path.write_bytes(header + np.array([1e10, 0.0], dtype="<f4").tobytes())
    assert not read_flo(path).valid[0, 0]


def test_flo_invalid_values_survive_rewrite(tmp_path):
    """Marcadores de pixel inválido diferentes de 1e10 são regravados bit a bit"""
    header = np.array([FLO_TAG], dtype="<f4").tobytes() + np.array([3, 1], dtype="<i4").tobytes()
    payload = np.array([2e9, 0.5, -5e9, np.inf, 1.25, -0.75], dtype="<f4").tobytes()
    source = tmp_path / "markers.flo"
    source.write_bytes(header + payload)
    loaded = read_flo(source)
    assert loaded.valid.tolist() == [[False, False, True]]
    copy = tmp_path / "copy.flo"
    write_flo(copy, loaded)
    assert copy.read_bytes() == source.read_bytes()
    fresh = tmp_path / "fresh.flo"
    write_flo(fresh, FlowField(loaded.values, loaded.valid))
    rewritten = np.frombuffer(fresh.read_bytes(), dtype="<f4", offset=12)
    assert rewritten[:4].tolist() == [1e10] * 4


# ------------------------------------------------------------------------- PFM

def test_pfm_round_trip(tmp_path):
    array = np.arange(12, dtype=np.float32).reshape(3, 4)
    path = tmp_path / "d.pfm"
    write_pfm_array(path, array)
    np.testing.assert_array_equal(read_pfm_array(path), array)


def test_pfm_depth_marks_invalid(tmp_path):
    """Zeros gravados voltam como pixels inválidos"""
    depth = DepthMap.from_array(np.array([[1.0, np.nan], [2.5, 3.0]]))
    path = tmp_path / "d.pfm"
    write_pfm(path, depth)
    loaded = read_pfm(path)
    np.testing.assert_array_equal(loaded.valid, depth.valid)
    np.testing.assert_allclose(loaded.values[loaded.valid], depth.values[depth.valid])


def test_pfm_color_is_unsupported(tmp_path):
    path = tmp_path / "c.pfm"
    path.write_bytes(b"PF\n1 1\n-1\n" + np.zeros(3, dtype="<f4").tobytes())
    with pytest.raises(UnsupportedFormatError):
        read_pfm_array(path)


def test_pfm_bad_header(tmp_path):
    path = tmp_path / "x.pfm"
    path.write_bytes(b"P5\n1 1\n-1\n\x00\x00\x00\x00")
    with pytest.raises(FormatError):
        read_pfm_array(path)
    path.write_bytes(b"Pf\n2 2\n-1\n\x00\x00\x00\x00")
    with pytest.raises(FormatError):
        read_pfm_array(path)


# ---------------------------------------------------------------------- imagens

def test_image_round_trip(tmp_path, rng):
    intensity = rng.random((6, 8))
    path = tmp_path / "i.png"
    write_image(path, intensity)
    np.testing.assert_allclose(read_image(path), intensity, atol=0.5 / 255 + 1e-12)


def test_unreadable_image(tmp_path):
    path = tmp_path / "broken.png"
    path.write_bytes(b"not an image")
    with pytest.raises(FormatError):
        read_image(path)


# ------------------------------------------------------------------ trajetórias

@pytest.mark.parametrize("fmt", ["tum", "kitti"])
def test_trajectory_round_trip(tmp_path, rng, fmt):
    poses = [PoseSE3.exp(rng.normal(size=6)) for _ in range(5)]
    times = [0.1 * k for k in range(5)]
    path = tmp_path / f"traj_{fmt}.txt"
    write_trajectory(poses, times, fmt, path)
    read_times, read_poses = read_trajectory(path, fmt)
    expected_times = times if fmt == "tum" else [float(k) for k in range(5)]
    np.testing.assert_allclose(read_times, expected_times)
    for a, b in zip(poses, read_poses):
        np.testing.assert_allclose(a.matrix(), b.matrix(), atol=1e-9)


def test_tum_quaternion_has_nonnegative_w(tmp_path):
    pose = PoseSE3.exp([0, 0, 0, 0, 0, 3.0])
    path = tmp_path / "t.txt"
    write_trajectory([pose], [0.0], "tum", path)
    values = [float(x) for x in path.read_text().split()]
    assert values[7] >= 0.0
    assert np.linalg.norm(values[4:]) == pytest.approx(1.0)


def test_trajectory_errors(tmp_path):
    path = tmp_path / "t.txt"
    with pytest.raises(InvalidInputError):
        write_trajectory([PoseSE3.identity()], [float("nan")], "tum", path)
    with pytest.raises(UnsupportedFormatError):
        write_trajectory([PoseSE3.identity()], [0.0], "euroc", path)
    path.write_text("# comentário\n0 0 0 0 0 0 0 1\n1 2 3\n")
    with pytest.raises(FormatError) as info:
        read_trajectory(path, "tum")
    assert info.value.offset == len("# comentário\n0 0 0 0 0 0 0 1\n".encode("utf-8"))


# ----------------------------------------------------------------------- nuvem

def test_pointcloud_threshold(tmp_path, camera, plane_depth):
    """Só pixels com confiança acima do limiar viram vértices"""
    confidence = np.zeros(camera.shape)
    confidence[:10] = 1.0
    cloud = KeyframeCloud(plane_depth, confidence, PoseSE3(np.eye(3), [0.0, 0.0, 1.0]), np.full(camera.shape, 1.0))
    path = tmp_path / "cloud.ply"
    count = write_pointcloud_ply([cloud], camera, 0.9, path)
    assert count == 10 * camera.width
    xyz, rgb = read_ply(path)
    assert xyz.shape == (count, 3)
    np.testing.assert_allclose(xyz[:, 2], 6.0)
    assert np.all(rgb == 255)


def test_ply_rejects_ascii(tmp_path):
    path = tmp_path / "a.ply"
    path.write_bytes(b"ply\nformat ascii 1.0\nelement vertex 0\nend_header\n")
    with pytest.raises(FormatError):
        read_ply(path)


# ------------------------------------------------------------------ manifesto

def test_calibration_round_trip(tmp_path, camera):
    path = tmp_path / "calib.txt"
    write_calibration(path, Calibration(camera, 0.25))
    loaded = read_calibration(path)
    assert loaded.intrinsics == camera
    assert loaded.baseline == 0.25
    path.write_text("fx 50\nfy 50\n")
    with pytest.raises(FormatError):
        read_calibration(path)


def test_exported_manifest_loads(tmp_path):
    root = tmp_path / "plane"
    export_scene(plane_scene(5), root)
    manifest = load_manifest(root)
    assert [f.index for f in manifest.frames] == [0, 1, 2, 3, 4]
    assert manifest.segments() == [[0, 1, 2, 3, 4]]
    assert manifest.frames[-1].flow is None
    assert manifest.calibration.baseline == pytest.approx(0.25)
    assert os.path.exists(manifest.path(manifest.groundtruth))


def test_missing_flow_splits_segments(tmp_path):
    """Fluxo ausente exclui o frame e quebra a sequência em dois trechos"""
    root = tmp_path / "plane"
    export_scene(plane_scene(5), root)
    os.remove(root / "flow" / "000002.flo")
    manifest = load_manifest(root)
    assert [f.index for f in manifest.frames] == [0, 1, 3, 4]
    segments = [[manifest.frames[p].index for p in s] for s in manifest.segments()]
    assert segments == [[0, 1], [3, 4]]


def test_manifest_errors(tmp_path):
    with pytest.raises(InvalidInputError):
        load_manifest(tmp_path / "missing")
    with pytest.raises(UnsupportedFormatError):
        load_manifest(tmp_path, layout="euroc")
    (tmp_path / "manifest.txt").write_text("layout explicit-list\ncalibration calib.txt\n")
    with pytest.raises(EmptySequenceError):
        load_manifest(tmp_path)


def test_kitti_like_layout(tmp_path, camera):
    for sub in ("image_2", "flow"):
        (tmp_path / sub).mkdir()
    for k in range(3):
        write_image(tmp_path / "image_2" / f"{k:06d}.png", np.full(camera.shape, 0.5))
        if k < 2:
            write_flo(tmp_path / "flow" / f"{k:06d}.flo",
                      FlowField(np.zeros(camera.shape + (2,)), np.ones(camera.shape, dtype=bool)))
    write_calibration(tmp_path / "calib.txt", Calibration(camera, 0.5))
    (tmp_path / "times.txt").write_text("0.0\n0.1\n0.2\n")
    manifest = load_manifest(tmp_path, layout="kitti-like")
    assert manifest.layout == "kitti-like"
    assert [f.timestamp for f in manifest.frames] == [0.0, 0.1, 0.2]
    assert manifest.segments() == [[0, 1, 2]]
    assert manifest.frames[0].depth is None
