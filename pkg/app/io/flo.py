"""Fluxo óptico no formato Middlebury .flo (little-endian)"""
import logging
import numpy as np

from app.errors import FormatError
from app.geometry.maps import FlowField

FLO_TAG = 202021.25
UNKNOWN_FLOW_THRESH = 1e9
UNKNOWN_FLOW = 1e10


def read_flo(path) -> FlowField:
    """
    Ler arquivo .flo.

    Componentes com módulo acima de 1e9 marcam o pixel como inválido.
    """
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 4:
        raise FormatError(f"{path}: arquivo curto demais para a marca .flo", offset=len(raw))
    tag = np.frombuffer(raw, dtype="<f4", count=1)[0]
    if tag != np.float32(FLO_TAG):
        raise FormatError(f"{path}: marca .flo inválida ({tag})", offset=0)
    if len(raw) < 12:
        raise FormatError(f"{path}: cabeçalho .flo truncado", offset=len(raw))
    width, height = (int(x) for x in np.frombuffer(raw, dtype="<i4", count=2, offset=4))
    if width <= 0 or height <= 0:
        raise FormatError(f"{path}: dimensões inválidas {width}x{height}", offset=4)
    expected = 12 + 8 * width * height
    if len(raw) < expected:
        raise FormatError(f"{path}: payload truncado, esperado {expected} bytes", offset=len(raw))
    if len(raw) > expected:
        raise FormatError(f"{path}: {len(raw) - expected} bytes sobrando após o payload", offset=expected)
    data = np.frombuffer(raw, dtype="<f4", count=2 * width * height, offset=12).reshape(height, width, 2)
    values = data.astype(np.float64)
    valid = np.all(np.isfinite(values) & (np.abs(values) <= UNKNOWN_FLOW_THRESH), axis=-1)
    logging.debug(f"{path}: fluxo {width}x{height}, {valid.mean():.1%} válido")
    return FlowField(np.where(valid[..., None], values, np.nan), valid, sentinel=data.copy())


def write_flo(path, flow: FlowField) -> None:
    height, width = flow.shape
    if flow.sentinel is not None and flow.sentinel.shape == flow.values.shape:
        fill = np.asarray(flow.sentinel, dtype="<f4")
    else:
        fill = np.full(flow.values.shape, UNKNOWN_FLOW, dtype="<f4")
    data = np.where(flow.valid[..., None], flow.values.astype("<f4"), fill)
    with open(path, "wb") as f:
        f.write(np.array([FLO_TAG], dtype="<f4").tobytes())
        f.write(np.array([width, height], dtype="<i4").tobytes())
        f.write(data.tobytes())
