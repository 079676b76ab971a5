import numpy as np
import pytest

from app.errors import BehindCameraError, InvalidInputError
from app.geometry import (
    CameraIntrinsics, DepthMap, PoseSE3, PoseSim3,
    bilinear_sample, normal_map, pixel_to_point, point_to_pixel, reproject, rigid_flow, transfer_point,
)
from app.geometry.lie import relative_tangents, se3_log_batch, so3_exp, so3_log


def test_pixel_point_round_trip(camera):
    """Retroprojetar e projetar devolve o mesmo pixel"""
    point = pixel_to_point((10.25, 7.5), 3.0, camera)
    assert point[2] == pytest.approx(3.0)
    np.testing.assert_allclose(point_to_pixel(point, camera), [10.25, 7.5], atol=1e-9)


def test_invalid_depth_and_behind_camera(camera):
    """Profundidade não positiva e ponto atrás da câmera geram erro"""
    with pytest.raises(InvalidInputError):
        pixel_to_point((1, 1), 0.0, camera)
    with pytest.raises(BehindCameraError):
        point_to_pixel([0.0, 0.0, -1.0], camera)
    with pytest.raises(InvalidInputError):
        CameraIntrinsics(-1.0, 50.0, 10.0, 10.0, 20, 20)


def test_transfer_point_identity(camera):
    """Pose identidade não move o ponto"""
    point = transfer_point(2.0, (31.5, 23.5), PoseSE3.identity(), camera)
    np.testing.assert_allclose(point, [0.0, 0.0, 2.0], atol=1e-12)


def test_reproject_translation(camera):
    """Translação lateral de 0.1 m a 5 m desloca 1 pixel"""
    T = PoseSE3(np.eye(3), [0.1, 0.0, 0.0])
    result = reproject(5.0, (20.0, 10.0), T, camera)
    np.testing.assert_allclose(result.pixel, [21.0, 10.0], atol=1e-9)
    assert result.index == (21, 10)
    assert result.in_bounds
    assert result.depth == pytest.approx(5.0)


def test_reproject_behind_camera(camera):
    with pytest.raises(BehindCameraError):
        reproject(1.0, (31.5, 23.5), PoseSE3(np.eye(3), [0.0, 0.0, -2.0]), camera)


def test_se3_exp_log_round_trip(rng):
    """exp e log são inversas em SE(3)"""
    for _ in range(20):
        xi = np.concatenate([rng.normal(size=3), rng.uniform(-1, 1, size=3)])
        np.testing.assert_allclose(PoseSE3.exp(xi).log(), xi, atol=1e-9)


def test_sim3_exp_log_round_trip(rng):
    """exp e log são inversas em Sim(3), inclusive com escala"""
    for _ in range(20):
        xi = np.concatenate([rng.normal(size=3), rng.uniform(-1, 1, size=3), rng.uniform(-0.5, 0.5, size=1)])
        np.testing.assert_allclose(PoseSim3.exp(xi).log(), xi, atol=1e-9)


def test_so3_log_near_pi():
    """Logaritmo estável perto de ângulo pi"""
    axis = np.array([1.0, 2.0, -0.5])
    axis /= np.linalg.norm(axis)
    w = (np.pi - 1e-4) * axis
    np.testing.assert_allclose(so3_log(so3_exp(w)), w, atol=1e-6)


def test_se3_adjoint(rng):
    """T exp(xi) T^-1 = exp(Ad xi)"""
    T = PoseSE3.exp(rng.normal(size=6) * 0.5)
    xi = rng.normal(size=6) * 0.3
    lhs = (T @ PoseSE3.exp(xi) @ T.inverse()).matrix()
    rhs = PoseSE3.exp(T.adjoint() @ xi).matrix()
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


def test_sim3_adjoint(rng):
    """S exp(xi) S^-1 = exp(Ad xi) em Sim(3)"""
    S = PoseSim3.exp(np.concatenate([rng.normal(size=6) * 0.5, [0.3]]))
    xi = np.concatenate([rng.normal(size=6) * 0.3, [0.1]])
    lhs = (S @ PoseSim3.exp(xi) @ S.inverse()).matrix()
    rhs = PoseSim3.exp(S.adjoint() @ xi).matrix()
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


def test_sim3_inverse_and_apply(rng):
    S = PoseSim3.exp(np.concatenate([rng.normal(size=6), [0.4]]))
    points = rng.normal(size=(5, 3))
    np.testing.assert_allclose(S.inverse().apply(S.apply(points)), points, atol=1e-9)
    np.testing.assert_allclose((S @ S.inverse()).matrix(), np.eye(4), atol=1e-9)


def test_non_orthonormal_rotation_rejected():
    with pytest.raises(InvalidInputError):
        PoseSE3(np.diag([1.0, 1.0, 2.0]), np.zeros(3))
    with pytest.raises(InvalidInputError):
        PoseSim3.from_parts(np.eye(3), np.zeros(3), 0.0)


def test_batch_log_matches_scalar(rng):
    """Versões vetorizadas concordam com o logaritmo escalar"""
    poses = [PoseSE3.exp(rng.normal(size=6) * 0.4) for _ in range(6)]
    batch = se3_log_batch(np.stack([p.rotation for p in poses]), np.stack([p.translation for p in poses]))
    np.testing.assert_allclose(batch, np.stack([p.log() for p in poses]), atol=1e-9)
    center = poses[0]
    rel = relative_tangents(poses, center)
    np.testing.assert_allclose(rel[2], (poses[2] @ center.inverse()).log(), atol=1e-9)
    np.testing.assert_allclose(rel[0], np.zeros(6), atol=1e-12)


def test_rigid_flow_translation(camera, plane_depth):
    """Fluxo rígido de uma translação lateral sobre o plano a 5 m"""
    flow = rigid_flow(plane_depth, PoseSE3(np.eye(3), [0.1, 0.0, 0.0]), camera)
    assert flow.valid.all()
    np.testing.assert_allclose(flow.values[..., 0], 1.0, atol=1e-9)
    np.testing.assert_allclose(flow.values[..., 1], 0.0, atol=1e-9)


def test_rigid_flow_identity_is_zero(camera, plane_depth):
    flow = rigid_flow(plane_depth, PoseSE3.identity(), camera)
    np.testing.assert_allclose(flow.values, 0.0, atol=1e-12)


def test_normal_map_fronto_parallel(camera, plane_depth):
    """Plano frontal tem normal (0, 0, -1) apontando para a câmera"""
    normals = normal_map(plane_depth, camera)
    assert normals.valid.all()
    np.testing.assert_allclose(normals.values[normals.valid], [0.0, 0.0, -1.0], atol=1e-9)


def test_normal_map_invalid_without_neighbors(camera):
    """Pixel isolado fica sem normal"""
    values = np.full(camera.shape, np.nan)
    values[10, 10] = 2.0
    normals = normal_map(DepthMap.from_array(values), camera)
    assert not normals.valid.any()


def test_normal_map_hole_invalidates_3x3_window(camera):
    """Um buraco interior invalida os vizinhos 3x3; a borda usa diferença unilateral"""
    values = np.full(camera.shape, 5.0)
    values[10, 10] = np.nan
    normals = normal_map(DepthMap.from_array(values), camera)
    assert not normals.valid[9:12, 9:12].any()
    assert normals.valid[10, 12] and normals.valid[12, 10]
    assert normals.valid[0, 0] and normals.valid[0, 20] and normals.valid[-1, -1]
    assert normals.valid.sum() == normals.valid.size - 9
    np.testing.assert_allclose(normals.values[normals.valid], [0.0, 0.0, -1.0], atol=1e-9)


def test_bilinear_sample():
    """Interpolação exata de uma função linear"""
    v, u = np.mgrid[0:8, 0:8]
    image = u + 10.0 * v
    values, valid = bilinear_sample(image, np.array([2.5, 7.5]), np.array([3.25, 1.0]))
    assert valid[0] and not valid[1]
    assert values[0] == pytest.approx(35.0)
    assert np.isnan(values[1])


def test_bilinear_sample_respects_mask():
    """Vizinho inválido com peso contamina a amostra"""
    image = np.ones((4, 4))
    mask = np.ones((4, 4), dtype=bool)
    mask[1, 2] = False
    _, valid = bilinear_sample(image, np.array([1.5, 1.0]), np.array([1.5, 2.0]), valid=mask)
    assert not valid[0]
    assert valid[1]


def test_strided_intrinsics(camera):
    small = camera.strided(2)
    assert (small.width, small.height) == (32, 24)
    assert small.fx == pytest.approx(camera.fx / 2)
    with pytest.raises(InvalidInputError):
        camera.strided(0)


def test_depth_map_validation():
    with pytest.raises(InvalidInputError):
        DepthMap(np.array([[1.0, -1.0]]), np.array([[True, True]]))
    depth = DepthMap.from_array(np.array([[1.0, -1.0, np.inf]]))
    np.testing.assert_array_equal(depth.valid, [[True, False, False]])
    np.testing.assert_allclose(depth.inverse(), [[1.0, 0.0, 0.0]])
