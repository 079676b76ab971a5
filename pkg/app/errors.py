"""Hierarquia de exceções do pipeline."""
from typing import Optional


class SlamError(Exception):
    """Erro base de todo o pacote"""


class InvalidInputError(SlamError, ValueError):
    """Entrada fora do domínio da operação (profundidade não positiva, baseline inválido...)"""


class BehindCameraError(SlamError, ValueError):
    """Ponto transferido atrás (ou rente) ao plano da câmera"""


class InsufficientSupportError(SlamError):
    """Pixels utilizáveis insuficientes para amostrar poses"""


class BatchFailureError(SlamError):
    """Falha de pose no primeiro frame do lote; o lote inteiro é descartado"""


class EmptyOverlapError(SlamError):
    """Nenhum pixel válido em comum entre dois mapas de profundidade"""


class RejectedLinkError(SlamError):
    """Sobreposição insuficiente para alinhar um par de keyframes"""


class NonConvergenceError(SlamError):
    """Levenberg-Marquardt divergiu (aumentos de amortecimento consecutivos demais)"""


class TermUnavailableError(SlamError):
    """Termo fotométrico pedido sem imagens de intensidade"""


class FormatError(SlamError, ValueError):
    """Arquivo malformado; guarda o deslocamento em bytes do problema"""

    def __init__(self, message: str, offset: Optional[int] = None) -> None:
        self.offset = offset
        if offset is not None:
            message = f"{message} (byte {offset})"
        super().__init__(message)


class UnsupportedFormatError(SlamError, ValueError):
    """Variante de formato reconhecida mas não suportada"""


class EmptySequenceError(SlamError):
    """Nenhum frame aproveitável na sequência"""


class InsufficientDataError(SlamError, ValueError):
    """Poses pareadas insuficientes para avaliar a trajetória"""


class ConfigError(SlamError, ValueError):
    """Configuração inválida; guarda a chave problemática"""

    def __init__(self, message: str, key: Optional[str] = None) -> None:
        self.key = key
        super().__init__(message)
