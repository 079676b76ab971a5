import argparse
import json
import logging
import os
import sys
import time
from typing import Dict, List, Optional

import numpy as np

from app.config import Config, PipelineConfig
from app.errors import (
    ConfigError, EmptySequenceError, FormatError, InsufficientDataError, InvalidInputError, SlamError,
    UnsupportedFormatError,
)
from app.geometry.lie import PoseSE3
from app.state import RunState, StateManager
from app.alignment import AlignmentProblem, AlignmentSettings, align
from app.backend import (
    DescriptorRetriever, GraphSnapshot, OracleRetriever, PoseGraphBackend, edge_list, export_graph, load_graph,
)
from app.backend.retrieval import Retriever
from app.frontend.tracker import TrackingResult, VisualOdometry
from app.io import (
    KeyframeCloud, load_manifest, read_calibration, read_image, read_pfm, read_trajectory, write_pfm,
    write_pfm_array, write_pointcloud_ply, write_trajectory,
)
from app.io.manifest import SequenceManifest
from app.oracle.export import export_scene
from app.oracle.metrics import evaluate_trajectory
from app.oracle.scene import (
    NoiseSpec, moving_box_scene, plane_scene, room_scene, slanted_plane_scene, textureless_scene,
)

INPUT_ERRORS = (ConfigError, FormatError, UnsupportedFormatError, EmptySequenceError, InsufficientDataError,
                InvalidInputError)

SCENES = {
    "plane": plane_scene,
    "slanted-plane": slanted_plane_scene,
    "room-forward": lambda n, seed: room_scene(n, "forward", seed=seed),
    "room-loop": lambda n, seed: room_scene(n, "loop", seed=seed),
    "moving-box": moving_box_scene,
    "textureless": textureless_scene,
}


def groundtruth_by_frame(manifest: SequenceManifest) -> Dict[int, PoseSE3]:
    """Poses verdadeiras do manifesto indexadas pelo índice do frame (pareamento por timestamp)"""
    if not manifest.groundtruth:
        return {}
    times, poses = read_trajectory(manifest.path(manifest.groundtruth), "tum")
    if not times:
        return {}
    gt_times = np.asarray(times)
    out = {}
    for frame in manifest.frames:
        k = int(np.argmin(np.abs(gt_times - frame.timestamp)))
        if abs(gt_times[k] - frame.timestamp) <= 1e-6 * max(1.0, abs(frame.timestamp)):
            out[frame.index] = poses[k]
    return out


def build_retriever(config: PipelineConfig, manifest: SequenceManifest) -> Optional[Retriever]:
    if config.retriever == "descriptor":
        return DescriptorRetriever(config.retrieval_min_score, config.top_k, config.recency_gap)
    if config.retriever == "oracle":
        ground_truth = groundtruth_by_frame(manifest)
        if not ground_truth:
            logging.warning("⚠️ Recuperação 'oracle' sem trajetória verdadeira; laços desativados")
            return None
        return OracleRetriever(ground_truth, top_k=config.top_k, recency_gap=config.recency_gap)
    return None


class SlamOrchestrator:
    """Orquestrador do pipeline: front-end e back-end em estágios concorrentes"""

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.output_dir = config.output_dir
        os.makedirs(self.output_dir, exist_ok=True)

    def run(self) -> RunState:
        """
        Executar o pipeline completo e gravar os artefatos.

        Returns:
            RunState: contadores e tempos da execução
        """
        logging.info("=" * 60)
        logging.info("INICIANDO PIPELINE SLAM")
        logging.info("=" * 60)
        logging.info(f"📋 Entrada: {self.config.manifest} ({self.config.layout}, modo {self.config.mode})")

        state = StateManager()
        started = time.perf_counter()
        manifest = load_manifest(self.config.manifest, self.config.layout)
        state.update(frames=len(manifest.frames), status="running")

        backend = PoseGraphBackend(manifest.intrinsics, self.config, build_retriever(self.config, manifest),
                                   state=state)
        tracker = VisualOdometry(manifest, self.config, backend=backend,
                                 rng=np.random.default_rng(self.config.seed), state=state)
        try:
            tracking = tracker.run()
        finally:
            snapshot = backend.close()
        for error in backend.errors:
            logging.error(f"❌ Erro do back-end: {error}")

        poses = tracking.world_poses(snapshot.poses)
        state.update(frames_registered=len(poses))
        self._write_artifacts(manifest, tracking, snapshot, poses)
        state.add_timing("total", time.perf_counter() - started)
        state.update(status="failed" if backend.errors else "done")
        state.save_report(os.path.join(self.output_dir, "report.txt"))

        self._print_final_report(state)
        return state.state

    def _write_artifacts(self, manifest: SequenceManifest, tracking: TrackingResult, snapshot: GraphSnapshot,
                         poses: Dict[int, PoseSE3]) -> None:
        timestamps = {f.index: f.timestamp for f in manifest.frames}
        frames = sorted(poses)
        trajectory = [poses[f] for f in frames]
        times = [timestamps[f] for f in frames]
        write_trajectory(trajectory, times, "tum", os.path.join(self.output_dir, "trajectory_tum.txt"))
        write_trajectory(trajectory, times, "kitti", os.path.join(self.output_dir, "trajectory_kitti.txt"))
        logging.info(f"✅ Trajetória com {len(frames)} poses gravada")

        keyframe_dir = os.path.join(self.output_dir, "keyframes")
        os.makedirs(keyframe_dir, exist_ok=True)
        clouds: List[KeyframeCloud] = []
        for kf in tracking.keyframes:
            write_pfm(os.path.join(keyframe_dir, f"kf_{kf.kappa:04d}_depth.pfm"), kf.depth)
            write_pfm_array(os.path.join(keyframe_dir, f"kf_{kf.kappa:04d}_confidence.pfm"),
                            np.nan_to_num(kf.confidence).astype(np.float32))
            world = snapshot.poses.get(kf.kappa, kf.world_pose.to_sim3())
            clouds.append(KeyframeCloud(kf.depth, kf.confidence, world, kf.image))
        write_pointcloud_ply(clouds, manifest.intrinsics, self.config.pointcloud_confidence,
                             os.path.join(self.output_dir, "pointcloud.ply"))
        export_graph(snapshot, os.path.join(self.output_dir, "posegraph.json"))

    def _print_final_report(self, state: StateManager) -> None:
        """Imprimir relatório final da execução"""
        logging.info("=" * 60)
        logging.info("📊 RELATÓRIO FINAL")
        logging.info("=" * 60)
        logging.info(f"✅ Status: {state.get('status', 'unknown')}")
        logging.info(f"🎞️ Frames registrados: {state.get('frames_registered')}/{state.get('frames')}")
        logging.info(f"📦 Lotes: {state.get('batches')} ({state.get('failed_batches')} falhas, "
                     f"{state.get('segments')} trecho(s))")
        logging.info(f"🔑 Keyframes: {state.get('keyframes')}")
        logging.info(f"🔗 Ligações: {state.get('links_accepted')}/{state.get('links_attempted')} aceitas, "
                     f"{state.get('loop_closures')} laço(s), {state.get('optimization_passes')} otimização(ões)")
        for name, seconds in sorted(state.get("timings", {}).items()):
            logging.info(f"⏱️ {name}: {seconds:.2f} s")
        logging.info(f"📄 Artefatos: {self.output_dir}")
        logging.info("=" * 60)


# ----------------------------------------------------------------- comandos

def load_config(args: argparse.Namespace) -> PipelineConfig:
    """Arquivo TOML (--config ou SLAM_CONFIG) com as flags da linha de comando por cima"""
    path = args.config or Config.CONFIG_PATH
    config = PipelineConfig.from_file(path) if path else PipelineConfig()
    overrides = {}
    for key in ("manifest", "layout", "mode", "output_dir", "seed", "threads"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "sync", False):
        overrides["sync"] = True
    if "threads" not in overrides and not path and Config.THREADS != config.threads:
        overrides["threads"] = Config.THREADS
    return config.with_overrides(**overrides) if overrides else config


def cmd_run(args: argparse.Namespace) -> int:
    config = load_config(args)
    if not config.manifest:
        raise ConfigError("Nenhuma entrada informada (manifest)", key="manifest")
    state = SlamOrchestrator(config).run()
    return 2 if state.status == "failed" else 0


def cmd_eval(args: argparse.Namespace) -> int:
    estimated = read_trajectory(args.estimated, args.format)
    ground_truth = read_trajectory(args.groundtruth, args.gt_format or args.format)
    lengths = [float(v) for v in args.lengths.split(",")] if args.lengths else PipelineConfig().rpe_lengths
    metrics = evaluate_trajectory(estimated, ground_truth, args.alignment, lengths)
    for key, value in metrics.as_dict().items():
        print(f"{key}: {value}")
    return 0


def cmd_make_oracle(args: argparse.Namespace) -> int:
    factory = SCENES[args.scene]
    scene = factory(args.frames, seed=args.seed)
    noisy = args.flow_noise > 0 or args.outliers > 0
    if noisy:
        scene = scene.with_noise(NoiseSpec(flow_std=args.flow_noise, flow_outlier_fraction=args.outliers))
    export_scene(scene, args.output, noisy=noisy)
    return 0


def cmd_align(args: argparse.Namespace) -> int:
    config = load_config(args)
    calibration = read_calibration(args.calib)
    target = read_pfm(args.target)
    source = read_pfm(args.source)
    problem = AlignmentProblem(
        source_depth=source, source_confidence=source.valid.astype(np.float64),
        target_depth=target, target_confidence=target.valid.astype(np.float64),
        K=calibration.intrinsics,
        source_image=read_image(args.source_image) if args.source_image else None,
        target_image=read_image(args.target_image) if args.target_image else None,
        estimate_scale=args.estimate_scale,
        use_photometric=bool(args.source_image and args.target_image) and config.use_photometric,
        weight=config.photometric_weight,
    )
    result = align(problem, AlignmentSettings.from_config(config))
    print(json.dumps(result.as_dict(), indent=2))
    return 0


def cmd_graph_dump(args: argparse.Namespace) -> int:
    for line in edge_list(load_graph(args.graph)):
        print(line)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowslam", description="SLAM denso-indireto sobre fluxo óptico")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="logging DEBUG")
    parser.add_argument("--dump-config", action="store_true", help="imprime a configuração padrão anotada")
    sub = parser.add_subparsers(dest="command")

    def with_config(p: argparse.ArgumentParser) -> argparse.ArgumentParser:
        p.add_argument("--config", help="arquivo TOML de configuração")
        return p

    run = with_config(sub.add_parser("run", help="executa o pipeline sobre uma sequência"))
    run.add_argument("manifest", nargs="?", help="diretório ou manifest.txt da sequência")
    run.add_argument("--layout", choices=["explicit-list", "tartanair-like", "kitti-like"])
    run.add_argument("--mode", choices=["monocular", "stereo", "rgbd"])
    run.add_argument("-o", "--output", dest="output_dir")
    run.add_argument("--seed", type=int)
    run.add_argument("--threads", type=int)
    run.add_argument("--sync", action="store_true", help="serializa front-end e back-end")
    run.set_defaults(handler=cmd_run)

    ev = sub.add_parser("eval", help="ATE/RPE de uma trajetória contra a verdade")
    ev.add_argument("estimated")
    ev.add_argument("groundtruth")
    ev.add_argument("--format", choices=["tum", "kitti"], default="tum")
    ev.add_argument("--gt-format", choices=["tum", "kitti"])
    ev.add_argument("--alignment", choices=["se3", "sim3"], default="sim3")
    ev.add_argument("--lengths", help="comprimentos do RPE separados por vírgula")
    ev.set_defaults(handler=cmd_eval)

    mk = sub.add_parser("make-oracle", help="exporta uma cena sintética")
    mk.add_argument("scene", choices=sorted(SCENES))
    mk.add_argument("output")
    mk.add_argument("--frames", type=int, default=60)
    mk.add_argument("--seed", type=int, default=0)
    mk.add_argument("--flow-noise", type=float, default=0.0, help="desvio do ruído gaussiano do fluxo (px)")
    mk.add_argument("--outliers", type=float, default=0.0, help="fração de outliers do fluxo")
    mk.set_defaults(handler=cmd_make_oracle)

    al = with_config(sub.add_parser("align", help="alinha dois mapas de profundidade (depuração)"))
    al.add_argument("target")
    al.add_argument("source")
    al.add_argument("--calib", required=True)
    al.add_argument("--target-image")
    al.add_argument("--source-image")
    al.add_argument("--estimate-scale", action="store_true")
    al.set_defaults(handler=cmd_align)

    gd = sub.add_parser("graph-dump", help="lista as arestas de um posegraph.json")
    gd.add_argument("graph")
    gd.set_defaults(handler=cmd_graph_dump)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Função principal; devolve o código de saída"""
    parser = build_parser()
    args = parser.parse_args(argv)
    Config.setup_logging(args.verbose)

    if args.dump_config:
        print(PipelineConfig.dump_default(), end="")
        return 0
    if not getattr(args, "handler", None):
        parser.print_help()
        return 1
    try:
        return args.handler(args)
    except INPUT_ERRORS as e:
        logging.error(f"❌ Erro de entrada: {e}")
        return 1
    except OSError as e:
        logging.error(f"❌ Erro de entrada: {e}")
        return 1
    except SlamError as e:
        logging.error(f"❌ Falha em tempo de execução: {e}")
        return 2


if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        logging.warning("\n⚠️ Execução interrompida pelo usuário")
        sys.exit(130)
