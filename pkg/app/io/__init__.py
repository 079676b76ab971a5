"""Pacote app.io - formatos de arquivo e adaptadores de dataset"""
from app.io.flo import read_flo, write_flo
from app.io.pfm import read_pfm, write_pfm, read_pfm_array, write_pfm_array
from app.io.images import read_image, write_image
from app.io.trajectory import read_trajectory, write_trajectory
from app.io.ply import KeyframeCloud, write_pointcloud_ply, read_ply
from app.io.manifest import (SequenceManifest, FrameRecord, Calibration, load_manifest, save_manifest,
                             read_calibration, write_calibration)
