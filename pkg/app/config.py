import os
import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field, fields, asdict, replace
from typing import Dict, Any, List, Optional
from dotenv import load_dotenv

from app.errors import ConfigError

load_dotenv()

class Config:
    # Ambiente do processo
    LOG_FORMAT = "%(asctime)s [%(levelname)s] %(message)s"
    LOG_LEVEL = getattr(logging, os.getenv("SLAM_LOG_LEVEL", "INFO").upper(), logging.INFO)
    THREADS = int(os.getenv("SLAM_THREADS", "1"))
    CONFIG_PATH = os.getenv("SLAM_CONFIG")

    @classmethod
    def setup_logging(cls, verbosity: int = 0) -> None:
        """Configurar logging formatado (-v = DEBUG)"""
        level = logging.DEBUG if verbosity > 0 else cls.LOG_LEVEL
        logging.basicConfig(
            level=level,
            format=cls.LOG_FORMAT,
            force=True,
        )


def _param(default: Any, doc: str, lo: Optional[float] = None, hi: Optional[float] = None,
           choices: Optional[List[str]] = None) -> Any:
    meta = {"doc": doc, "min": lo, "max": hi, "choices": choices}
    if isinstance(default, list):
        return field(default_factory=lambda: list(default), metadata=meta)
    return field(default=default, metadata=meta)


@dataclass(frozen=True)
class PipelineConfig:
    """Todos os hiperparâmetros nomeados do pipeline; nada numérico fica fixo nos módulos."""

    # entrada / saída
    manifest: str = _param("", "diretório ou arquivo de manifesto da sequência")
    layout: str = _param("explicit-list", "layout do diretório de entrada",
                         choices=["explicit-list", "tartanair-like", "kitti-like"])
    mode: str = _param("stereo", "fonte de profundidade", choices=["monocular", "stereo", "rgbd"])
    output_dir: str = _param("output", "diretório dos artefatos")
    seed: int = _param(0, "semente do gerador aleatório", lo=0)
    threads: int = _param(1, "limite de paralelismo total", lo=1, hi=256)
    sync: bool = _param(False, "serializa front-end e back-end (depuração)")
    queue_size: int = _param(4, "capacidade da fila entre os estágios", lo=1, hi=1024)

    # geometria
    z_min: float = _param(1e-6, "guarda atrás-da-câmera (m)", lo=0.0, hi=1.0)
    disparity_min: float = _param(0.5, "disparidade mínima aceita para prior estéreo (px)", lo=0.0)

    # modelos de resíduo
    fisk_alpha: float = _param(0.6, "escala Fisk do EPE de fluxo (px)", lo=1e-6)
    fisk_beta: float = _param(2.0, "forma Fisk do EPE de fluxo", lo=1e-3)
    prior_fisk_alpha: float = _param(0.005, "escala Fisk do resíduo de profundidade inversa externa (1/m)", lo=1e-9)
    prior_fisk_beta: float = _param(1.0, "forma Fisk do resíduo de profundidade inversa externa", lo=1e-3)
    k_sigma: float = _param(0.05, "sigma(x) = k_sigma * x da mistura Gauss-uniforme", lo=1e-9)
    k_u: float = _param(0.5, "U(x) = k_u * x da mistura Gauss-uniforme", lo=1e-9)
    density_floor: float = _param(1e-12, "piso das densidades antes do log", lo=0.0, hi=1e-3)

    # front-end
    batch_size: int = _param(6, "N_t, campos de fluxo por lote", lo=2, hi=64)
    n_em: int = _param(4, "iterações de EM generalizado por lote", lo=1, hi=50)
    pose_samples: int = _param(1000, "S, amostras P3P por frame", lo=1)
    pose_weight_floor: float = _param(0.2, "rigidez mínima para um pixel entrar na amostragem P3P", lo=0.0, hi=1.0)
    depth_weight_floor: float = _param(0.05, "rigidez mínima para um fluxo informar a profundidade", lo=0.0, hi=1.0)
    p3p_min_area: float = _param(4.0, "área mínima do triângulo amostrado (px^2)", lo=0.0)
    meanshift_bandwidth: float = _param(1.0, "multiplicador do núcleo diag(0.1 m, 0.1 rad)", lo=1e-6)
    eps_cov: float = _param(1e-8, "piso dos autovalores das covariâncias", lo=0.0)
    fallback_covariance: float = _param(1e-2, "variância inflada quando o ajuste de covariância falha", lo=1e-12)
    propagation: str = _param("hierarchical", "esquema de propagação da profundidade",
                              choices=["hierarchical", "global"])
    f_scale: float = _param(0.25, "escala da propagação global reduzida", lo=0.01, hi=1.0)
    local_window: int = _param(16, "lado das janelas de propagação local (px)", lo=2, hi=512)
    depth_min: float = _param(0.1, "menor profundidade amostrada (m)", lo=1e-6)
    depth_max: float = _param(100.0, "maior profundidade amostrada (m)", lo=1e-6)
    hmm_persistence: float = _param(0.95, "probabilidade de permanência da cadeia de rigidez", lo=0.5, hi=1.0)
    outlier_density: float = _param(0.0, "densidade outlier do EPE; 0 = uniforme no disco da diagonal", lo=0.0)
    tau_stride: float = _param(0.6, "limiar VC do passo do lote", lo=0.0, hi=1.0)
    tau_keyframe: float = _param(0.4, "limiar VC de novo keyframe", lo=0.0, hi=1.0)
    bootstrap_correspondences: int = _param(2000, "correspondências para a matriz essencial monocular", lo=8)
    essential_threshold: float = _param(1.0, "limiar RANSAC da matriz essencial (px)", lo=1e-6)

    # alinhamento de keyframes
    alignment_energy: str = _param("point-to-plane", "energia geométrica",
                                   choices=["point-to-plane", "inverse-depth"])
    cauchy_geo: float = _param(0.05, "escala Cauchy geométrica (profundidade inversa)", lo=1e-9)
    cauchy_photo: float = _param(0.1, "escala Cauchy fotométrica (intensidade normalizada)", lo=1e-9)
    use_photometric: bool = _param(True, "usa o termo fotométrico quando há imagens")
    photometric_weight: float = _param(0.25, "lambda entre geometria e fotometria", lo=0.0)
    overlap_min: float = _param(0.3, "fração mínima de sobreposição para aceitar um par", lo=0.0, hi=1.0)
    pyramid_levels: int = _param(3, "níveis da pirâmide coarse-to-fine", lo=1, hi=6)
    align_max_iterations: int = _param(100, "iterações máximas de LM", lo=1)
    align_step_tol: float = _param(1e-8, "norma de passo de convergência do LM", lo=0.0)
    lm_max_boosts: int = _param(10, "aumentos consecutivos de amortecimento antes de divergir", lo=1)
    geo_noise: float = _param(0.005, "desvio esperado do resíduo geométrico (branqueamento)", lo=1e-12)
    photo_noise: float = _param(0.05, "desvio esperado do resíduo fotométrico (branqueamento)", lo=1e-12)

    # back-end
    sigma_spatial: float = _param(3.0, "sigma_spatial da prioridade de tempo real", lo=1e-6)
    sigma_temporal: float = _param(10.0, "sigma_temporal da prioridade de tempo real", lo=1e-6)
    sigma_lc: float = _param(3.0, "alcance da prioridade ao redor de um fechamento de laço", lo=1e-6)
    tau_link: float = _param(0.1, "prioridade mínima para processar um par", lo=0.0, hi=1.0)
    links_per_keyframe: int = _param(3, "pares processados a cada novo keyframe", lo=0)
    loop_side_condition: str = _param("endpoint", "condição de lado das camadas de laço",
                                      choices=["endpoint", "paired"])
    retriever: str = _param("descriptor", "motor de recuperação de laços",
                            choices=["descriptor", "oracle", "none"])
    descriptor_size: int = _param(16, "lado da grade da assinatura global", lo=2, hi=128)
    retrieval_min_score: float = _param(0.5, "similaridade mínima de um candidato", lo=-1.0, hi=1.0)
    top_k: int = _param(3, "candidatos de laço por consulta", lo=0)
    recency_gap: int = _param(20, "distância mínima em índice de keyframe para um laço", lo=1)
    rho_min: float = _param(0.5, "razão mínima de inliers na verificação geométrica", lo=0.0, hi=1.0)
    n_opt: int = _param(5, "otimiza o grafo a cada n_opt arestas de tempo real", lo=1)
    scale_information_absolute: float = _param(1e8, "informação de escala quando a escala é absoluta", lo=0.0)
    scale_information_mono: float = _param(1e2, "informação de escala das arestas monoculares", lo=0.0)
    pgo_max_iterations: int = _param(100, "iterações máximas da otimização do grafo", lo=1)
    pgo_step_tol: float = _param(1e-8, "norma de passo de convergência do grafo", lo=0.0)

    # saída / avaliação
    pointcloud_confidence: float = _param(0.9, "confiança mínima dos pontos exportados", lo=0.0)
    eval_alignment: str = _param("sim3", "alinhamento do ATE", choices=["se3", "sim3"])
    rpe_lengths: List[float] = _param([2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0, 16.0],
                                      "comprimentos das subsequências do RPE (m)")

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        """Checar faixas e escolhas de cada chave"""
        for f in fields(self):
            value = getattr(self, f.name)
            meta = f.metadata
            if meta.get("choices") and value not in meta["choices"]:
                raise ConfigError(f"{f.name}={value!r} fora de {meta['choices']}", key=f.name)
            if isinstance(value, (int, float)) and not isinstance(value, bool):
                if meta.get("min") is not None and value < meta["min"]:
                    raise ConfigError(f"{f.name}={value} abaixo do mínimo {meta['min']}", key=f.name)
                if meta.get("max") is not None and value > meta["max"]:
                    raise ConfigError(f"{f.name}={value} acima do máximo {meta['max']}", key=f.name)
        if self.depth_min >= self.depth_max:
            raise ConfigError("depth_min deve ser menor que depth_max", key="depth_min")
        if not self.rpe_lengths or any(v <= 0 for v in self.rpe_lengths):
            raise ConfigError("rpe_lengths precisa de comprimentos positivos", key="rpe_lengths")

    @property
    def scale_known(self) -> bool:
        return self.mode != "monocular"

    @property
    def propagation_stride(self) -> int:
        return max(1, int(round(1.0 / self.f_scale)))

    def with_overrides(self, **overrides: Any) -> "PipelineConfig":
        """Cópia com chaves substituídas (chaves desconhecidas são rejeitadas)"""
        _check_keys(overrides)
        return replace(self, **_coerce(overrides))

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> "PipelineConfig":
        _check_keys(values)
        return cls(**_coerce(values))

    @classmethod
    def from_file(cls, path: str) -> "PipelineConfig":
        """Ler documento TOML plano"""
        try:
            with open(path, "rb") as f:
                values = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"TOML inválido em {path}: {e}") from e
        except OSError as e:
            raise ConfigError(f"Não foi possível abrir a configuração {path}: {e}") from e
        logging.debug(f"Configuração lida de {path}: {sorted(values)}")
        return cls.from_dict(values)

    @classmethod
    def dump_default(cls) -> str:
        """Configuração padrão anotada (uma linha de comentário por chave)"""
        lines = ["# Configuração padrão do pipeline", ""]
        default = cls()
        for f in fields(cls):
            lines.append(f"# {f.metadata.get('doc', '')}")
            lines.append(f"{f.name} = {_toml_value(getattr(default, f.name))}")
        return "\n".join(lines) + "\n"


def _check_keys(values: Dict[str, Any]) -> None:
    known = {f.name for f in fields(PipelineConfig)}
    for key in values:
        if key not in known:
            raise ConfigError(f"Chave de configuração desconhecida: {key}", key=key)


def _coerce(values: Dict[str, Any]) -> Dict[str, Any]:
    types = {f.name: f.type for f in fields(PipelineConfig)}
    out: Dict[str, Any] = {}
    for key, value in values.items():
        expected = types[key]
        try:
            if expected in (float, "float") and isinstance(value, int) and not isinstance(value, bool):
                value = float(value)
            elif expected in (int, "int") and isinstance(value, float) and value.is_integer():
                value = int(value)
            elif key == "rpe_lengths":
                value = [float(v) for v in value]
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Valor inválido para {key}: {value!r}", key=key) from e
        if expected in (bool, "bool") and not isinstance(value, bool):
            raise ConfigError(f"{key} espera booleano, recebeu {value!r}", key=key)
        if expected in (str, "str") and not isinstance(value, str):
            raise ConfigError(f"{key} espera texto, recebeu {value!r}", key=key)
        if expected in (int, "int") and (not isinstance(value, int) or isinstance(value, bool)):
            raise ConfigError(f"{key} espera inteiro, recebeu {value!r}", key=key)
        if expected in (float, "float") and not isinstance(value, float):
            raise ConfigError(f"{key} espera número, recebeu {value!r}", key=key)
        out[key] = value
    return out


def _toml_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return f'"{value}"'
    if isinstance(value, list):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    if isinstance(value, float):
        return repr(value)
    return str(value)
