"""Trajetórias nos formatos TUM e KITTI (poses câmera -> mundo)"""
from typing import List, Sequence, Tuple
import numpy as np
from scipy.spatial.transform import Rotation

from app.errors import FormatError, InvalidInputError, UnsupportedFormatError
from app.geometry.lie import PoseSE3

FORMATS = ("tum", "kitti")


def _num(x: float) -> str:
    # +0.0 normaliza -0.0
    return np.format_float_positional(float(x) + 0.0, trim="-")


def _quaternion(R: np.ndarray) -> np.ndarray:
    q = Rotation.from_matrix(R).as_quat()
    q /= np.linalg.norm(q)
    return -q if q[3] < 0 else q


def format_pose(pose: PoseSE3, fmt: str, timestamp: float = 0.0) -> str:
    if fmt == "tum":
        values = [timestamp, *pose.translation, *_quaternion(pose.rotation)]
    elif fmt == "kitti":
        values = list(pose.matrix()[:3, :].ravel())
    else:
        raise UnsupportedFormatError(f"Formato de trajetória desconhecido: {fmt}")
    return " ".join(_num(v) for v in values)


def write_trajectory(poses: Sequence[PoseSE3], timestamps: Sequence[float], fmt: str, path) -> None:
    """
    Gravar trajetória no mundo.

    TUM: "timestamp tx ty tz qx qy qz qw" (Hamilton, normalizado, qw >= 0).
    KITTI: 12 valores da matriz [R|t] 3x4 por linha.
    """
    if fmt not in FORMATS:
        raise UnsupportedFormatError(f"Formato de trajetória desconhecido: {fmt}")
    if len(poses) != len(timestamps):
        raise InvalidInputError("Número de poses e timestamps diferente")
    for i, pose in enumerate(poses):
        if not np.all(np.isfinite(pose.matrix())) or not np.isfinite(timestamps[i]):
            raise InvalidInputError(f"Pose não finita no índice {i}; gravação abortada")
    lines = [format_pose(p, fmt, t) for p, t in zip(poses, timestamps)]
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + ("\n" if lines else ""))


def _project_rotation(M: np.ndarray) -> np.ndarray:
    U, _, Vt = np.linalg.svd(M)
    R = U @ Vt
    if np.linalg.det(R) < 0:
        U[:, -1] *= -1
        R = U @ Vt
    return R


def read_trajectory(path, fmt: str) -> Tuple[List[float], List[PoseSE3]]:
    """Linhas vazias e comentários (#) são ignorados; KITTI usa o índice da linha como timestamp"""
    if fmt not in FORMATS:
        raise UnsupportedFormatError(f"Formato de trajetória desconhecido: {fmt}")
    timestamps: List[float] = []
    poses: List[PoseSE3] = []
    offset = 0
    with open(path, "rb") as f:
        content = f.read()
    for line in content.decode("utf-8").splitlines(keepends=True):
        text = line.strip()
        if text and not text.startswith("#"):
            try:
                values = [float(x) for x in text.replace(",", " ").split()]
            except ValueError as e:
                raise FormatError(f"{path}: valor não numérico", offset=offset) from e
            if fmt == "tum":
                if len(values) != 8:
                    raise FormatError(f"{path}: linha TUM com {len(values)} valores", offset=offset)
                R = Rotation.from_quat(values[4:8]).as_matrix()
                timestamps.append(values[0])
                poses.append(PoseSE3(R, values[1:4]))
            else:
                if len(values) != 12:
                    raise FormatError(f"{path}: linha KITTI com {len(values)} valores", offset=offset)
                M = np.array(values).reshape(3, 4)
                timestamps.append(float(len(poses)))
                poses.append(PoseSE3(_project_rotation(M[:, :3]), M[:, 3]))
        offset += len(line.encode("utf-8"))
    return timestamps, poses
