"""Exporta uma cena sintética no layout explicit-list"""
import logging
import os
from typing import Optional

from app.io.flo import write_flo
from app.io.images import write_image
from app.io.manifest import Calibration, FrameRecord, SequenceManifest, save_manifest, write_calibration, MANIFEST_NAME
from app.io.pfm import write_pfm
from app.io.trajectory import write_trajectory
from app.oracle.scene import SyntheticScene
from app.oracle.render import render_frame, render_flow, render_stereo_flow, noisy_flow


def export_scene(scene: SyntheticScene, root, n_frames: Optional[int] = None, noisy: bool = False,
                 noisy_stereo: bool = False) -> SequenceManifest:
    """
    Grava imagens, fluxos consecutivos, fluxos estéreo, profundidade,
    calibração, trajetória verdadeira (TUM) e manifest.txt em root.

    noisy aplica o ruído da cena aos fluxos consecutivos; noisy_stereo
    também aos fluxos estéreo.
    """
    root = str(root)
    n = scene.n_frames if n_frames is None else min(n_frames, scene.n_frames)
    for sub in ("images", "flow", "stereo_flow", "depth"):
        os.makedirs(os.path.join(root, sub), exist_ok=True)

    frames = []
    for k in range(n):
        depth, image = render_frame(scene, k)
        image_rel = os.path.join("images", f"{k:06d}.png")
        depth_rel = os.path.join("depth", f"{k:06d}.pfm")
        stereo_rel = os.path.join("stereo_flow", f"{k:06d}.flo")
        write_image(os.path.join(root, image_rel), image)
        write_pfm(os.path.join(root, depth_rel), depth)
        stereo = render_stereo_flow(scene, k)
        if noisy_stereo:
            stereo = noisy_flow(scene, stereo, k, k, stream=1)
        write_flo(os.path.join(root, stereo_rel), stereo)
        flow_rel = None
        if k + 1 < n:
            flow = render_flow(scene, k, k + 1)
            if noisy:
                flow = noisy_flow(scene, flow, k, k + 1)
            flow_rel = os.path.join("flow", f"{k:06d}.flo")
            write_flo(os.path.join(root, flow_rel), flow)
        frames.append(FrameRecord(k, scene.timestamp(k), image_rel, flow_rel, stereo_rel, depth_rel))

    calibration = Calibration(scene.K, scene.baseline)
    write_calibration(os.path.join(root, "calib.txt"), calibration)
    write_trajectory([scene.pose(k) for k in range(n)], [scene.timestamp(k) for k in range(n)], "tum",
                     os.path.join(root, "groundtruth_tum.txt"))
    manifest = SequenceManifest(os.path.abspath(root), "explicit-list", frames, calibration,
                                "groundtruth_tum.txt", "calib.txt")
    save_manifest(manifest, os.path.join(root, MANIFEST_NAME))
    logging.info(f"✅ Cena {scene.name} exportada: {n} frames em {root}")
    return manifest
