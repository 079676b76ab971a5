"""Pacote app.geometry - câmera pinhole, grupos de Lie e transferência de profundidade"""
from app.geometry.camera import CameraIntrinsics, pixel_to_point, point_to_pixel, bilinear_sample, Z_MIN
from app.geometry.lie import PoseSE3, PoseSim3
from app.geometry.maps import DepthMap, FlowField, NormalMap
from app.geometry.transfer import transfer_point, reproject, rigid_flow, normal_map

__all__ = [
    "CameraIntrinsics", "pixel_to_point", "point_to_pixel", "bilinear_sample", "Z_MIN",
    "PoseSE3", "PoseSim3", "DepthMap", "FlowField", "NormalMap",
    "transfer_point", "reproject", "rigid_flow", "normal_map",
]
