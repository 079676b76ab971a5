import numpy as np
import pytest

from app.errors import InsufficientDataError, InvalidInputError
from app.geometry import PoseSE3
from app.geometry.transfer import rigid_flow
from app.geometry.lie import so3_exp
from app.oracle.metrics import evaluate_depth, evaluate_trajectory, umeyama_alignment
from app.oracle.render import MOVING, STATIC, noisy_flow, render_flow, render_frame, render_labels, render_stereo_flow
from app.oracle.scene import NoiseSpec, moving_box_scene, textureless_scene


def test_plane_depth_is_exact(plane):
    """Frame 0 do plano frontal: Z = 5 m em todos os pixels"""
    depth, image = render_frame(plane, 0)
    assert depth.valid.all()
    np.testing.assert_allclose(depth.values, 5.0)
    assert 0.0 <= image.min() and image.max() <= 1.0


def test_render_flow_matches_rigid_flow(plane, relative_pose):
    depth, _ = render_frame(plane, 0)
    rendered = render_flow(plane, 0, 1)
    predicted = rigid_flow(depth, relative_pose(plane, 0, 1), plane.K)
    both = rendered.valid & predicted.valid
    assert both.mean() > 0.95
    np.testing.assert_allclose(rendered.values[both], predicted.values[both], atol=1e-9)


def test_stereo_flow_disparity(plane):
    """Câmera direita deslocada 0.25 m: dx = -fx b / Z = -2.5 px"""
    flow = render_stereo_flow(plane, 0)
    assert flow.valid.all()
    np.testing.assert_allclose(flow.values[..., 0], -2.5)
    np.testing.assert_allclose(flow.values[..., 1], 0.0, atol=1e-12)


def test_moving_box_labels():
    labels = render_labels(moving_box_scene(), 0)
    fraction = np.mean(labels == MOVING)
    assert 0.02 < fraction < 0.3
    assert np.any(labels == STATIC)


def test_textureless_walls_are_flat():
    _, image = render_frame(textureless_scene(), 0)
    assert np.mean(image == 0.5) > 0.3


def test_noisy_flow_is_deterministic(plane):
    scene = plane.with_noise(NoiseSpec(flow_std=0.5, flow_outlier_fraction=0.1), seed=3)
    flow = render_flow(scene, 0, 1)
    first = noisy_flow(scene, flow, 0, 1)
    second = noisy_flow(scene, flow, 0, 1)
    other = noisy_flow(scene, flow, 1, 2)
    np.testing.assert_array_equal(first.values, second.values)
    assert not np.array_equal(first.values, other.values)
    np.testing.assert_array_equal(first.valid, flow.valid)


def _trajectory(scene):
    return [scene.timestamp(k) for k in range(scene.n_frames)], scene.poses()


def test_identical_trajectory_has_zero_error(room):
    truth = _trajectory(room)
    metrics = evaluate_trajectory(truth, truth, lengths=(0.2, 0.4))
    assert metrics.ate_rmse == pytest.approx(0.0, abs=1e-9)
    assert metrics.rpe_translation == pytest.approx(0.0, abs=1e-6)
    assert metrics.rpe_rotation == pytest.approx(0.0, abs=1e-6)
    assert metrics.completeness == 1.0
    assert metrics.matched == room.n_frames


def test_sim3_alignment_removes_gauge(room):
    """Cópia com rotação, translação e escala 2: ATE nulo só com Sim(3)"""
    times, poses = _trajectory(room)
    R0, t0 = so3_exp(np.array([0.1, -0.3, 0.2])), np.array([1.0, -2.0, 0.5])
    moved = [PoseSE3(R0 @ p.rotation, 2.0 * R0 @ p.translation + t0) for p in poses]
    metrics = evaluate_trajectory((times, moved), (times, poses), alignment="sim3")
    assert metrics.ate_rmse == pytest.approx(0.0, abs=1e-6)
    assert metrics.scale == pytest.approx(0.5)
    rigid = evaluate_trajectory((times, moved), (times, poses), alignment="se3")
    assert rigid.ate_rmse > 0.1
    assert rigid.scale == 1.0


def test_partial_trajectory_drops_rotation_rpe(room):
    times, poses = _trajectory(room)
    metrics = evaluate_trajectory((times[:5], poses[:5]), (times, poses), lengths=(0.1,))
    assert metrics.completeness == pytest.approx(5 / 12)
    assert metrics.rpe_translation is not None
    assert metrics.rpe_rotation is None


def test_trajectory_metric_errors(room):
    times, poses = _trajectory(room)
    with pytest.raises(InsufficientDataError):
        evaluate_trajectory((times[:1], poses[:1]), (times, poses))
    with pytest.raises(InsufficientDataError):
        evaluate_trajectory(([100.0, 200.0], poses[:2]), (times, poses))
    with pytest.raises(InvalidInputError):
        evaluate_trajectory((times, poses), (times, poses), alignment="affine")


def test_umeyama_recovers_similarity(rng):
    source = rng.normal(size=(50, 3))
    R = so3_exp(np.array([0.4, 0.1, -0.7]))
    target = 1.7 * source @ R.T + np.array([0.3, 0.2, -1.0])
    R_hat, t_hat, s_hat = umeyama_alignment(source, target)
    np.testing.assert_allclose(R_hat, R, atol=1e-9)
    np.testing.assert_allclose(t_hat, [0.3, 0.2, -1.0], atol=1e-9)
    assert s_hat == pytest.approx(1.7)


def test_evaluate_depth(plane_depth, camera):
    """Profundidade perfeita: densidade cai só com o limiar de confiança"""
    confidence = np.ones(camera.shape)
    confidence[:, : camera.width // 2] = 0.2
    rows = evaluate_depth(plane_depth, confidence, plane_depth, camera, 0.25, thresholds=(0.0, 0.5))
    assert [r.threshold for r in rows] == [0.0, 0.5]
    assert rows[0].density == 1.0 and rows[0].inlier_rate == 1.0 and rows[0].epe == 0.0
    assert rows[1].density == pytest.approx(0.5)
    with pytest.raises(InvalidInputError):
        evaluate_depth(plane_depth, confidence, plane_depth, camera, 0.0)
