try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import pytest

from app.config import Config, PipelineConfig
from app.errors import ConfigError


def test_defaults_are_valid():
    config = PipelineConfig()
    assert config.mode == "stereo"
    assert config.batch_size == 6
    assert config.scale_known
    assert config.propagation_stride == 4


def test_dump_default_round_trips():
    """O TOML anotado volta exatamente à configuração padrão"""
    text = PipelineConfig.dump_default()
    assert text.startswith("#")
    assert PipelineConfig.from_dict(tomllib.loads(text)) == PipelineConfig()


@pytest.mark.parametrize("key, value", [
    ("batch_size", 1),
    ("tau_stride", 1.5),
    ("mode", "lidar"),
    ("alignment_energy", "icp"),
    ("rpe_lengths", []),
])
def test_out_of_range_values(key, value):
    with pytest.raises(ConfigError) as info:
        PipelineConfig.from_dict({key: value})
    assert info.value.key == key


def test_depth_range_must_be_ordered():
    with pytest.raises(ConfigError) as info:
        PipelineConfig(depth_min=10.0, depth_max=5.0)
    assert info.value.key == "depth_min"


def test_unknown_key_is_rejected():
    with pytest.raises(ConfigError) as info:
        PipelineConfig().with_overrides(batchsize=4)
    assert info.value.key == "batchsize"


def test_type_coercion():
    """Inteiro vira float e float inteiro vira int; texto no lugar de número é erro"""
    config = PipelineConfig.from_dict({"fisk_alpha": 1, "batch_size": 8.0, "rpe_lengths": [1, 2]})
    assert isinstance(config.fisk_alpha, float)
    assert config.batch_size == 8 and isinstance(config.batch_size, int)
    assert config.rpe_lengths == [1.0, 2.0]
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"batch_size": 6.5})
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"sync": "yes"})
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"k_sigma": "0.1"})


def test_monocular_scale_is_unknown():
    assert not PipelineConfig(mode="monocular").scale_known


def test_from_file(tmp_path):
    path = tmp_path / "slam.toml"
    path.write_text('mode = "rgbd"\nn_em = 2\nuse_photometric = false\n')
    config = PipelineConfig.from_file(str(path))
    assert config.mode == "rgbd" and config.n_em == 2 and not config.use_photometric
    path.write_text("mode = \n")
    with pytest.raises(ConfigError):
        PipelineConfig.from_file(str(path))
    with pytest.raises(ConfigError):
        PipelineConfig.from_file(str(tmp_path / "missing.toml"))


def test_setup_logging_verbose():
    import logging
    Config.setup_logging(1)
    assert logging.getLogger().level == logging.DEBUG
    Config.setup_logging(0)
    assert logging.getLogger().level == Config.LOG_LEVEL
