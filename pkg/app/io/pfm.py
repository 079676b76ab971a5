"""Mapas de profundidade/disparidade em PFM de um canal"""
import re
import numpy as np

from app.errors import FormatError, UnsupportedFormatError
from app.geometry.maps import DepthMap


def read_pfm_array(path) -> np.ndarray:
    """Array float32 (H, W) com linhas já de cima para baixo"""
    with open(path, "rb") as f:
        raw = f.read()
    lines = []
    pos = 0
    for _ in range(3):
        end = raw.find(b"\n", pos)
        if end < 0:
            raise FormatError(f"{path}: cabeçalho PFM truncado", offset=len(raw))
        lines.append(raw[pos:end].decode("ascii", errors="replace").strip())
        pos = end + 1
    header, dims, scale_line = lines
    if header == "PF":
        raise UnsupportedFormatError(f"{path}: PFM colorido (PF) não suportado")
    if header != "Pf":
        raise FormatError(f"{path}: cabeçalho PFM inválido {header!r}", offset=0)
    match = re.fullmatch(r"(\d+)\s+(\d+)", dims)
    if not match:
        raise FormatError(f"{path}: dimensões PFM inválidas {dims!r}", offset=3)
    width, height = int(match.group(1)), int(match.group(2))
    try:
        scale = float(scale_line)
    except ValueError as e:
        raise FormatError(f"{path}: escala PFM inválida {scale_line!r}", offset=pos) from e
    endian = "<" if scale < 0 else ">"
    expected = pos + 4 * width * height
    if len(raw) < expected:
        raise FormatError(f"{path}: payload PFM truncado", offset=len(raw))
    data = np.frombuffer(raw, dtype=endian + "f4", count=width * height, offset=pos)
    return np.flipud(data.reshape(height, width)).astype(np.float32)


def write_pfm_array(path, array: np.ndarray) -> None:
    """Grava little-endian (escala -1) com linhas de baixo para cima"""
    data = np.asarray(array, dtype="<f4")
    height, width = data.shape
    with open(path, "wb") as f:
        f.write(f"Pf\n{width} {height}\n-1\n".encode("ascii"))
        f.write(np.flipud(data).tobytes())


def read_pfm(path) -> DepthMap:
    """Valores não positivos ou não finitos viram pixels inválidos"""
    return DepthMap.from_array(read_pfm_array(path).astype(np.float64))


def write_pfm(path, depth: DepthMap, invalid_value: float = 0.0) -> None:
    write_pfm_array(path, np.where(depth.valid, depth.values, invalid_value))
