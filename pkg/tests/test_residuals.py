import numpy as np
import pytest
from scipy import stats

from app.errors import InvalidInputError
from app.frontend.types import DepthPrior
from app.geometry import DepthMap, PoseSE3
from app.models.residuals import (
    FiskModel, FiskPriorModel, GaussianUniformMixture,
    depth_prior_likelihood, geom_prior_energy, prior_energy_terms, rigidness_responsibility,
)


def test_fisk_mode_and_planar_density():
    """Moda e densidade planar na origem do modelo (0.6, 2)"""
    model = FiskModel(0.6, 2.0)
    assert model.mode() == pytest.approx(0.6 / np.sqrt(3.0), rel=1e-9)
    assert model.planar_pdf(0.0) == pytest.approx(2.0 / (2.0 * np.pi * 0.36), rel=1e-6)
    assert FiskModel(1.0, 0.8).mode() == 0.0


def test_fisk_matches_scipy():
    model = FiskModel(0.6, 2.0)
    r = np.array([0.1, 0.6, 2.0])
    np.testing.assert_allclose(model.pdf(r), stats.fisk.pdf(r, 2.0, scale=0.6))
    assert model.cdf(0.6) == pytest.approx(0.5)
    np.testing.assert_allclose(model.nll(r), -np.log(stats.fisk.pdf(r, 2.0, scale=0.6)))


def test_fisk_nll_is_floored():
    """NLL finita mesmo onde a densidade é zero"""
    model = FiskModel(0.6, 2.0)
    assert np.isfinite(model.nll(1e9))
    assert np.isfinite(model.planar_nll(0.0))


def test_fisk_rejects_invalid():
    with pytest.raises(InvalidInputError):
        FiskModel(0.0, 2.0)
    with pytest.raises(InvalidInputError):
        FiskModel(0.6, 2.0).pdf(-0.1)
    with pytest.raises(InvalidInputError):
        FiskModel.fit([0.5])


def test_fisk_fit_recovers_parameters():
    """Ajuste por máxima verossimilhança sobre amostras sintéticas"""
    samples = stats.fisk.rvs(2.5, scale=0.8, size=5000, random_state=1)
    model = FiskModel.fit(samples)
    assert model.alpha == pytest.approx(0.8, rel=0.05)
    assert model.beta == pytest.approx(2.5, rel=0.08)


def test_mixture_scales_with_inverse_depth():
    mix = GaussianUniformMixture(k_sigma=0.05, k_u=0.5)
    assert mix.sigma(0.2) == pytest.approx(0.01)
    assert mix.outlier_density(0.2) == pytest.approx(0.1)
    peak = mix.inlier_density(0.2, 0.2)
    assert peak == pytest.approx(1.0 / (np.sqrt(2 * np.pi) * 0.01))
    assert mix.inlier_density(0.2, 0.25) < peak


def test_depth_prior_likelihood(camera):
    """Hipótese consistente com o prior tem verossimilhança máxima"""
    mix = GaussianUniformMixture()
    pose = PoseSE3(np.eye(3), [0.0, 0.0, -1.0])
    good = depth_prior_likelihood(5.0, 4.0, 1, pose, mix, (31.5, 23.5), camera)
    bad = depth_prior_likelihood(3.0, 4.0, 1, pose, mix, (31.5, 23.5), camera)
    assert good > bad
    assert depth_prior_likelihood(5.0, 4.0, 0, pose, mix, (31.5, 23.5), camera) == pytest.approx(0.5 / 4.0)
    assert depth_prior_likelihood(0.5, 4.0, 1, pose, mix, (31.5, 23.5), camera) == 0.0


def test_rigidness_responsibility():
    assert rigidness_responsibility(2.0, 1.0, 0.5) == pytest.approx(2.0 / 3.0)
    assert rigidness_responsibility(0.0, 0.0, 0.3) == pytest.approx(0.3)
    q = rigidness_responsibility(np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([0.5, 0.5]))
    np.testing.assert_allclose(q, [1.0, 0.0])


def test_prior_energy_terms():
    """Energia zero com q = 0 e menor para hipótese consistente"""
    mix = GaussianUniformMixture()
    near = prior_energy_terms(0.2, 0.2, 1.0, mix)
    far = prior_energy_terms(0.2, 0.3, 1.0, mix)
    assert 0.0 <= near < far
    assert prior_energy_terms(0.2, 0.3, 0.0, mix) == 0.0


def test_fisk_prior_model():
    model = FiskPriorModel(FiskModel(0.01, 2.0))
    assert model.inlier_density(0.2, 0.2) == pytest.approx(0.0)
    assert model.inlier_density(0.2, 0.21) > model.inlier_density(0.2, 0.3)


def test_geom_prior_energy(camera):
    """Energia mínima na profundidade verdadeira e nula sem rigidez"""
    mix = GaussianUniformMixture()
    depth = DepthMap(np.full(camera.shape, 4.0), np.ones(camera.shape, dtype=bool))
    pose = PoseSE3(np.eye(3), [0.0, 0.0, -1.0])
    prior = DepthPrior(depth, pose, np.ones(camera.shape), "previous-batch")
    pixel = (30, 20)
    at_truth = geom_prior_energy(5.0, pixel, [prior], mix, camera)
    off = geom_prior_energy(6.0, pixel, [prior], mix, camera)
    assert at_truth < off
    silent = prior.with_rigidness(np.zeros(camera.shape))
    assert geom_prior_energy(6.0, pixel, [silent], mix, camera) == 0.0
    assert geom_prior_energy(0.5, pixel, [prior], mix, camera) == 0.0
