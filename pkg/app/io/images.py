"""Imagens de intensidade em PNG de 8 bits via OpenCV"""
import numpy as np
import cv2

from app.errors import FormatError


def read_image(path) -> np.ndarray:
    """Intensidade em escala de cinza normalizada para [0, 1]"""
    image = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    if image is None:
        raise FormatError(f"{path}: imagem ilegível", offset=0)
    return image.astype(np.float64) / 255.0


def write_image(path, intensity: np.ndarray) -> None:
    data = np.clip(np.rint(np.asarray(intensity) * 255.0), 0, 255).astype(np.uint8)
    if not cv2.imwrite(str(path), data):
        raise OSError(f"Falha ao gravar imagem {path}")
