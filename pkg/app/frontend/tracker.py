"""
Condutor do front-end sobre um manifesto.

Convenção das poses guardadas: rel leva pontos da câmera do frame para a
câmera do keyframe que o ancora (W_kf^-1 W_frame). Poses de lote T_t levam
pontos da referência para o frame t.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence
import numpy as np

from app.config import PipelineConfig
from app.errors import BatchFailureError, InsufficientSupportError, FormatError
from app.geometry.camera import CameraIntrinsics, bilinear_sample
from app.geometry.lie import PoseSE3, PoseSim3
from app.geometry.maps import FlowField
from app.io.flo import read_flo
from app.io.images import read_image
from app.io.manifest import SequenceManifest
from app.io.pfm import read_pfm_array
from app.frontend.types import DepthPrior, FlowBatch, VoBatchResult
from app.frontend.batch import process_batch
from app.frontend.priors import depth_prior_from_rgbd, stereo_flow_to_prior, transported_prior
from app.backend.graph import KeyframeRegistration


def compose_flows(flows: Sequence[FlowField]) -> List[FlowField]:
    """
    Encadeia fluxos consecutivos i -> i+1 em fluxos referência -> t.

    Inválido onde alguma perna é inválida ou sai da imagem.
    """
    height, width = flows[0].shape
    u, v = np.meshgrid(np.arange(width, dtype=np.float64), np.arange(height, dtype=np.float64))
    total = flows[0].values.astype(np.float64).copy()
    valid = flows[0].valid.copy()
    out = [FlowField(total.copy(), valid.copy())]
    for leg in flows[1:]:
        step, ok = bilinear_sample(leg.values, u + total[..., 0], v + total[..., 1], leg.valid)
        valid = valid & ok
        total = np.where(valid[..., None], total + step, 0.0)
        out.append(FlowField(total.copy(), valid.copy()))
    return out


def _compose_covariance(cov_base: np.ndarray, composed: PoseSE3, cov_step: np.ndarray) -> np.ndarray:
    """Covariância à esquerda de base o step^-1 (propagação pela adjunta)"""
    Ad = composed.adjoint()
    return cov_base + Ad @ cov_step @ Ad.T


@dataclass
class FrameTrack:
    frame: int
    segment: int
    keyframe: int
    relative: PoseSE3
    covariance: np.ndarray


@dataclass
class KeyframeRecord:
    kappa: int
    frame: int
    segment: int
    depth: object
    confidence: np.ndarray
    image: Optional[np.ndarray]
    world_pose: PoseSE3


@dataclass
class TrackingResult:
    frames: Dict[int, FrameTrack] = field(default_factory=dict)
    keyframes: List[KeyframeRecord] = field(default_factory=list)
    segments: int = 0
    batches: int = 0
    failed_batches: int = 0
    sequential_steps: int = 0

    def world_poses(self, keyframe_poses: Optional[Dict[int, PoseSim3]] = None) -> Dict[int, PoseSE3]:
        """Poses câmera -> mundo por frame; keyframe_poses vem do grafo (corrigidas)"""
        local = {k.kappa: k.world_pose.to_sim3() for k in self.keyframes}
        anchors = dict(local)
        if keyframe_poses:
            anchors.update(keyframe_poses)
        out = {}
        for frame, track in sorted(self.frames.items()):
            S = anchors.get(track.keyframe)
            if S is None:
                continue
            out[frame] = (S @ track.relative.to_sim3()).to_se3()
        return out


class VisualOdometry:
    """Percorre os trechos do manifesto lote a lote"""

    def __init__(self, manifest: SequenceManifest, config: PipelineConfig, backend=None,
                 rng: Optional[np.random.Generator] = None, state=None):
        self.manifest = manifest
        self.config = config
        self.backend = backend
        self.state = state
        self.rng = rng if rng is not None else np.random.default_rng(config.seed)
        self.K: CameraIntrinsics = manifest.intrinsics
        self._flow_cache: Dict[int, FlowField] = {}
        self.result = TrackingResult()
        self._kf_world: Dict[int, PoseSE3] = {}
        self._next_kappa = 0

    # ---------------------------------------------------------------- leitura

    def _flow(self, position: int) -> FlowField:
        if position not in self._flow_cache:
            self._flow_cache[position] = read_flo(self.manifest.path(self.manifest.frames[position].flow))
        return self._flow_cache[position]

    def _evict(self, position: int) -> None:
        for key in [k for k in self._flow_cache if k < position]:
            del self._flow_cache[key]

    def _image(self, position: int) -> Optional[np.ndarray]:
        path = self.manifest.path(self.manifest.frames[position].image)
        if path is None:
            return None
        try:
            return read_image(path)
        except (OSError, FormatError) as e:
            logging.warning(f"⚠️ Imagem ilegível {path}: {e}")
            return None

    def _external_priors(self, position: int) -> List[DepthPrior]:
        frame = self.manifest.frames[position]
        priors = []
        if self.config.mode == "stereo" and frame.stereo_flow is not None:
            if self.manifest.calibration.baseline > 0:
                stereo = read_flo(self.manifest.path(frame.stereo_flow))
                priors.append(stereo_flow_to_prior(stereo, self.manifest.calibration.baseline, self.K,
                                                   self.config.disparity_min))
            else:
                logging.warning("⚠️ Modo estéreo sem baseline na calibração; prior ignorado")
        elif self.config.mode == "rgbd" and frame.depth is not None:
            priors.append(depth_prior_from_rgbd(read_pfm_array(self.manifest.path(frame.depth))))
        return priors

    # ------------------------------------------------------------ keyframes

    def _segment_origin(self, frame: int) -> PoseSE3:
        """Pose de mundo do primeiro frame de um trecho (ou do último frame anterior conhecido)"""
        known = [f for f in self.result.frames if f <= frame]
        if not known:
            return PoseSE3.identity()
        last = max(known)
        corrected = None
        if self.backend is not None and self.result.keyframes:
            kappa = self.result.keyframes[-1].kappa
            self.backend.wait_keyframe(kappa)
            corrected = self.backend.snapshot().poses
        poses = self.result.world_poses(corrected)
        return poses.get(last, PoseSE3.identity())

    def _register_keyframe(self, position: int, segment: int, vo: VoBatchResult, world_pose: PoseSE3,
                           odometry: Optional[PoseSE3], covariance: Optional[np.ndarray]) -> int:
        frame = self.manifest.frames[position]
        image = self._image(position)
        if self.backend is not None:
            kappa = self.backend.register_keyframe(KeyframeRegistration(
                frame=frame.index, segment=segment, depth=vo.depth, confidence=vo.confidence.values,
                world_pose=world_pose, image=image, odometry=odometry, odometry_covariance=covariance,
                scale_known=vo.scale_known,
            ))
        else:
            kappa = self._next_kappa
        self._next_kappa = kappa + 1
        self.result.keyframes.append(KeyframeRecord(kappa, frame.index, segment, vo.depth, vo.confidence.values,
                                                    image, world_pose))
        self._kf_world[kappa] = world_pose
        if self.state is not None and self.backend is None:
            self.state.increment("keyframes")
        logging.info(f"🔑 Keyframe {kappa} no frame {frame.index}")
        return kappa

    # ----------------------------------------------------------------- lotes

    def _build_batch(self, segment: List[int], start: int) -> FlowBatch:
        n = min(self.config.batch_size, len(segment) - 1 - start)
        positions = segment[start:start + n + 1]
        flows = compose_flows([self._flow(p) for p in positions[:-1]])
        frame_ids = [self.manifest.frames[p].index for p in positions[1:]]
        return FlowBatch(self.manifest.frames[positions[0]].index, frame_ids, flows)

    def run(self) -> TrackingResult:
        segments = self.manifest.segments()
        queue = [list(s) for s in segments]
        segment_id = 0
        while queue:
            segment = queue.pop(0)
            if len(segment) < 3:
                logging.warning(f"⚠️ Trecho com {len(segment)} frame(s) ignorado (lote precisa de 2 fluxos)")
                continue
            remainder = self._track_segment(segment, segment_id)
            self.result.segments += 1
            if self.state is not None:
                self.state.increment("segments")
            segment_id += 1
            if remainder:
                queue.insert(0, remainder)
        logging.info(f"📊 Front-end: {self.result.batches} lotes, {self.result.failed_batches} falhas, "
                     f"{len(self.result.keyframes)} keyframes, {self.result.segments} trecho(s)")
        return self.result

    def _track_segment(self, segment: List[int], segment_id: int) -> Optional[List[int]]:
        """Rastreia um trecho; devolve as posições restantes quando um lote falha"""
        origin = self._segment_origin(self.manifest.frames[segment[0]].index)
        start = 0
        kappa: Optional[int] = None
        rel_ref = PoseSE3.identity()
        cov_ref = np.zeros((6, 6))
        previous: Optional[VoBatchResult] = None
        previous_stride_pose: Optional[PoseSE3] = None
        kf_depth = kf_conf = None

        while len(segment) - 1 - start >= 2:
            position = segment[start]
            self._evict(position)
            batch = self._build_batch(segment, start)
            priors = self._external_priors(position)
            if previous is not None:
                priors.append(transported_prior(previous.depth, previous.confidence.values,
                                                previous_stride_pose.inverse(), self.K, "previous-batch"))
            if kappa is not None:
                priors.append(transported_prior(kf_depth, kf_conf, rel_ref, self.K, "keyframe"))
            try:
                vo = process_batch(batch, priors, self.K, self.config, self.rng,
                                   to_latest_keyframe=rel_ref if kappa is not None else None)
            except (BatchFailureError, InsufficientSupportError) as e:
                self.result.failed_batches += 1
                if self.state is not None:
                    self.state.increment("failed_batches")
                logging.warning(f"⚠️ Lote na referência {batch.reference} falhou: {e}; novo trecho")
                return segment[start + 1:] if len(segment) - start - 1 >= 3 else None
            self.result.batches += 1
            self.result.sequential_steps += vo.stats.get("sequential_steps", 0)
            if self.state is not None:
                self.state.increment("batches")
                self.state.add_timing("frontend", vo.stats.get("seconds", 0.0))

            if vo.keyframe:
                if kappa is None:
                    world, odometry, covariance = origin, None, None
                else:
                    world, odometry, covariance = self._kf_world[kappa] @ rel_ref, rel_ref, cov_ref
                kappa = self._register_keyframe(position, segment_id, vo, world, odometry, covariance)
                kf_depth, kf_conf = vo.depth, vo.confidence.values
                rel_ref, cov_ref = PoseSE3.identity(), np.zeros((6, 6))
                self.result.frames[batch.reference] = FrameTrack(batch.reference, segment_id, kappa,
                                                                 PoseSE3.identity(), np.zeros((6, 6)))

            for frame_id, estimate in zip(vo.frame_ids, vo.poses):
                relative = rel_ref @ estimate.pose.inverse()
                cov = _compose_covariance(cov_ref, relative, estimate.covariance)
                self.result.frames[frame_id] = FrameTrack(frame_id, segment_id, kappa, relative, cov)

            if vo.truncated:
                # nenhum frame além da falha; o último frame com pose abre o trecho seguinte
                resume = start + len(vo.frame_ids)
                logging.info(f"Lote truncado em {len(vo.frame_ids)} frames; novo trecho a partir da posição {resume}")
                return segment[resume:] if len(segment) - resume >= 3 else None
            stride = min(vo.stride, len(vo.frame_ids))
            last_frame = self.manifest.frames[segment[-1]].index
            if stride > 1 and len(segment) - 1 - (start + stride) == 1 and last_frame not in self.result.frames:
                # um único frame restante não forma lote
                stride -= 1
            next_track = self.result.frames[vo.frame_ids[stride - 1]]
            rel_ref, cov_ref = next_track.relative, next_track.covariance
            previous, previous_stride_pose = vo, vo.poses[stride - 1].pose
            start += stride
        return None
