"""
Manifesto da sequência, calibração e adaptadores de layout de diretório.

explicit-list: arquivo `manifest.txt` com linhas
    layout explicit-list
    calibration calib.txt
    groundtruth groundtruth_tum.txt      (opcional)
    frame <índice> <timestamp> <imagem> <fluxo i->i+1> <fluxo estéreo> <profundidade>
usando "-" para campos ausentes e caminhos relativos ao diretório do manifesto.

tartanair-like: image_left/NNNNNN_left.png, flow/NNNNNN_MMMMMM_flow.flo,
stereo_flow/NNNNNN.flo, depth_left/NNNNNN_left_depth.pfm, calib.txt.

kitti-like: image_2/NNNNNN.png, flow/NNNNNN.flo, stereo_flow/NNNNNN.flo,
depth/NNNNNN.pfm, calib.txt, times.txt opcional.
"""
import logging
import os
from dataclasses import dataclass, replace
from typing import Dict, List, Optional
import numpy as np

from app.errors import EmptySequenceError, FormatError, InvalidInputError, UnsupportedFormatError
from app.geometry.camera import CameraIntrinsics
from app.io.flo import FLO_TAG

LAYOUTS = ("explicit-list", "tartanair-like", "kitti-like")
MANIFEST_NAME = "manifest.txt"
CALIBRATION_KEYS = ("fx", "fy", "cx", "cy", "width", "height", "baseline")


@dataclass(frozen=True)
class Calibration:
    intrinsics: CameraIntrinsics
    baseline: float = 0.0


@dataclass(frozen=True)
class FrameRecord:
    index: int
    timestamp: float
    image: Optional[str] = None
    flow: Optional[str] = None
    stereo_flow: Optional[str] = None
    depth: Optional[str] = None


@dataclass(frozen=True)
class SequenceManifest:
    root: str
    layout: str
    frames: List[FrameRecord]
    calibration: Calibration
    groundtruth: Optional[str] = None
    calibration_file: str = "calib.txt"

    def __post_init__(self) -> None:
        if len(self.frames) < 2:
            raise EmptySequenceError(f"Sequência com {len(self.frames)} frame(s); são necessários >= 2")

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return self.calibration.intrinsics

    def path(self, relative: Optional[str]) -> Optional[str]:
        if relative is None:
            return None
        return relative if os.path.isabs(relative) else os.path.join(self.root, relative)

    def linked(self, i: int) -> bool:
        """Existe fluxo utilizável do registro i para o registro i+1"""
        a, b = self.frames[i], self.frames[i + 1]
        return a.flow is not None and b.index == a.index + 1

    def segments(self) -> List[List[int]]:
        """Posições de registros agrupadas em trechos encadeados por fluxo"""
        out: List[List[int]] = [[0]]
        for i in range(len(self.frames) - 1):
            if self.linked(i):
                out[-1].append(i + 1)
            else:
                out.append([i + 1])
        return out


def read_calibration(path) -> Calibration:
    values: Dict[str, float] = {}
    with open(path, "r", encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            parts = text.replace("=", " ").replace(":", " ").split()
            if len(parts) != 2 or parts[0] not in CALIBRATION_KEYS:
                raise FormatError(f"{path}: linha de calibração inválida {number}: {text!r}", offset=0)
            values[parts[0]] = float(parts[1])
    missing = [k for k in CALIBRATION_KEYS[:6] if k not in values]
    if missing:
        raise FormatError(f"{path}: chaves de calibração ausentes {missing}", offset=0)
    K = CameraIntrinsics(values["fx"], values["fy"], values["cx"], values["cy"],
                         int(values["width"]), int(values["height"]))
    return Calibration(K, values.get("baseline", 0.0))


def write_calibration(path, calibration: Calibration) -> None:
    K = calibration.intrinsics
    lines = [f"fx {K.fx!r}", f"fy {K.fy!r}", f"cx {K.cx!r}", f"cy {K.cy!r}",
             f"width {K.width}", f"height {K.height}", f"baseline {calibration.baseline!r}"]
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def _flow_readable(path: str) -> bool:
    """Confere a marca e o tamanho sem decodificar o payload"""
    try:
        size = os.path.getsize(path)
        with open(path, "rb") as f:
            head = f.read(12)
    except OSError:
        return False
    if len(head) < 12 or np.frombuffer(head, dtype="<f4", count=1)[0] != np.float32(FLO_TAG):
        return False
    width, height = np.frombuffer(head, dtype="<i4", count=2, offset=4)
    return size == 12 + 8 * int(width) * int(height)


def _optional(root: str, relative: str) -> Optional[str]:
    return relative if os.path.exists(os.path.join(root, relative)) else None


def _validate(root: str, frames: List[FrameRecord]) -> List[FrameRecord]:
    """Frames com fluxo de saída ausente ou ilegível saem do manifesto (exceto o último)"""
    kept: List[FrameRecord] = []
    for position, frame in enumerate(frames):
        last = position == len(frames) - 1
        flow_ok = frame.flow is not None and _flow_readable(os.path.join(root, frame.flow))
        if not last and not flow_ok:
            logging.warning(f"⚠️ Frame {frame.index}: fluxo ausente ou ilegível ({frame.flow}); frame excluído")
            continue
        kept.append(frame if flow_ok else replace(frame, flow=None))
    return kept


def _load_explicit(path: str) -> SequenceManifest:
    manifest_file = os.path.join(path, MANIFEST_NAME) if os.path.isdir(path) else path
    root = os.path.dirname(os.path.abspath(manifest_file))
    calibration_file = "calib.txt"
    groundtruth = None
    frames: List[FrameRecord] = []
    with open(manifest_file, "r", encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            parts = text.split()
            key = parts[0]
            if key == "layout":
                continue
            if key == "calibration" and len(parts) == 2:
                calibration_file = parts[1]
            elif key == "groundtruth" and len(parts) == 2:
                groundtruth = parts[1]
            elif key == "frame" and len(parts) == 7:
                paths = [None if p == "-" else p for p in parts[3:]]
                frames.append(FrameRecord(int(parts[1]), float(parts[2]), *paths))
            else:
                logging.warning(f"⚠️ {manifest_file}:{number}: linha ignorada: {text!r}")
    if not frames:
        raise EmptySequenceError(f"{manifest_file}: nenhum frame")
    calibration = read_calibration(os.path.join(root, calibration_file))
    return SequenceManifest(root, "explicit-list", _validate(root, frames), calibration, groundtruth,
                            calibration_file)


def _load_directory(root: str, layout: str) -> SequenceManifest:
    if layout == "tartanair-like":
        image_dir, image_name = "image_left", "{i:06d}_left.png"
        flow_name = "flow/{i:06d}_{j:06d}_flow.flo"
        depth_name = "depth_left/{i:06d}_left_depth.pfm"
    else:
        image_dir, image_name = "image_2", "{i:06d}.png"
        flow_name = "flow/{i:06d}.flo"
        depth_name = "depth/{i:06d}.pfm"
    names = sorted(os.listdir(os.path.join(root, image_dir))) if os.path.isdir(os.path.join(root, image_dir)) else []
    count = len([n for n in names if n.endswith(".png")])
    if count == 0:
        raise EmptySequenceError(f"{root}: nenhuma imagem em {image_dir}/")
    times: List[float] = list(map(float, range(count)))
    times_file = os.path.join(root, "times.txt")
    if os.path.exists(times_file):
        with open(times_file, "r", encoding="utf-8") as f:
            read = [float(x) for x in f.read().split()]
        if len(read) >= count:
            times = read[:count]
    frames = []
    for i in range(count):
        frames.append(FrameRecord(
            i, times[i],
            image=_optional(root, os.path.join(image_dir, image_name.format(i=i))),
            flow=_optional(root, flow_name.format(i=i, j=i + 1)),
            stereo_flow=_optional(root, f"stereo_flow/{i:06d}.flo"),
            depth=_optional(root, depth_name.format(i=i)),
        ))
    calibration = read_calibration(os.path.join(root, "calib.txt"))
    groundtruth = _optional(root, "groundtruth_tum.txt")
    return SequenceManifest(root, layout, _validate(root, frames), calibration, groundtruth)


def load_manifest(root, layout: str = "explicit-list") -> SequenceManifest:
    """Carregar e validar um manifesto"""
    root = str(root)
    if layout not in LAYOUTS:
        raise UnsupportedFormatError(f"Layout desconhecido: {layout}")
    if not os.path.exists(root):
        raise InvalidInputError(f"Entrada inexistente: {root}")
    manifest = _load_explicit(root) if layout == "explicit-list" else _load_directory(root, layout)
    logging.info(f"Manifesto {layout}: {len(manifest.frames)} frames, "
                 f"{len(manifest.segments())} trecho(s)")
    return manifest


def save_manifest(manifest: SequenceManifest, path) -> None:
    """Grava no layout explicit-list; caminhos ficam relativos ao diretório do manifesto"""
    path = str(path)
    manifest_file = os.path.join(path, MANIFEST_NAME) if os.path.isdir(path) else path
    base = os.path.dirname(os.path.abspath(manifest_file))

    def rel(p: Optional[str]) -> str:
        if p is None:
            return "-"
        return os.path.relpath(manifest.path(p), base)

    lines = ["layout explicit-list", f"calibration {rel(manifest.calibration_file)}"]
    if manifest.groundtruth:
        lines.append(f"groundtruth {rel(manifest.groundtruth)}")
    for frame in manifest.frames:
        lines.append(f"frame {frame.index} {np.format_float_positional(frame.timestamp, trim='-')} {rel(frame.image)} "
                     f"{rel(frame.flow)} {rel(frame.stereo_flow)} {rel(frame.depth)}")
    with open(manifest_file, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
