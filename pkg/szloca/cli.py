"""
Command-line entry points.

Usage:
  # Lift a detections file into a tracks file
  python -m szloca lift --config config.yaml --detections dets.jsonl --out tracks.jsonl

  # Live: detection records over UDP in, OSC track messages out
  python -m szloca stream --config config.yaml --listen udp://0.0.0.0:7000 --emit osc://127.0.0.1:9000

  # Synthetic scene, scored against its own ground truth
  python -m szloca simulate --scene config/scenes/plaza.yaml --seed 7 --report metrics.yaml

  # Fit a ground homography from measured pixel/ground pairs
  python -m szloca calibrate --pairs pairs.txt --config config.yaml

Exit codes: 0 success, 2 configuration error, 3 stream error.
"""

from __future__ import annotations

import dataclasses
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import defopt
import numpy as np
import yaml
from dotenv import load_dotenv

from szloca.camera_model import screen_to_ray
from szloca.config import PipelineConfig, SceneConfig, format_homography_block
from szloca.errors import EXIT_OK, ConfigError, SzlocaError
from szloca.ground_surface import GroundPlane, intersect_plane
from szloca.lifting import fit_ground_homography, lift_via_homography
from szloca.logging_utils import configure_logging
from szloca.pipeline import run_pipeline
from szloca.records import DetectionFrame, load_calibration_pairs, serialize_detections, topview_table
from szloca.simulation import evaluate, generate_truth, serialize_truth, synthesize_detections

logger = logging.getLogger(__name__)


def eprint(*args: object) -> None:
    print(*args, file=sys.stderr)


def lift(
    *,
    config: str,
    detections: str,
    out: str,
    override: Sequence[str] = (),
    emit: Sequence[str] = (),
) -> int:
    """Lift and track a detections file.

    :param config: Pipeline config YAML
    :param detections: DetectionRecord file (``-`` for stdin)
    :param out: TrackRecord output file (``-`` for stdout)
    :param override: Override YAML files merged on top of the config, in order
    :param emit: Extra ``osc://HOST:PORT`` sinks
    """
    cfg = PipelineConfig.from_yaml(config, overrides=override)
    cfg = cfg.with_io(input=detections, output=out, emit=tuple(cfg.io.emit) + tuple(emit))
    return run_pipeline(cfg).exit_code


def stream(
    *,
    config: str,
    listen: str,
    emit: Sequence[str] = (),
    out: Optional[str] = None,
    override: Sequence[str] = (),
    max_frames: Optional[int] = None,
) -> int:
    """Track detection records arriving over UDP and emit OSC messages.

    :param config: Pipeline config YAML
    :param listen: ``udp://HOST:PORT`` to receive DetectionRecord datagrams on
    :param emit: ``osc://HOST:PORT`` sinks (added to the config's)
    :param out: Optional TrackRecord file as well
    :param override: Override YAML files merged on top of the config, in order
    :param max_frames: Stop after this many frames
    """
    cfg = PipelineConfig.from_yaml(config, overrides=override)
    cfg = cfg.with_io(input=listen, output=out, emit=tuple(cfg.io.emit) + tuple(emit))
    return run_pipeline(cfg, max_frames=max_frames).exit_code


def simulate(
    *,
    scene: str,
    report: str,
    seed: Optional[int] = None,
    override: Sequence[str] = (),
    truth: Optional[str] = None,
    detections: Optional[str] = None,
    tracks: Optional[str] = None,
    topview: Optional[str] = None,
) -> int:
    """Render a synthetic scene, run the pipeline on it and score the result.

    :param scene: Scene YAML
    :param report: Metrics report YAML to write
    :param seed: Seed replacing the scene's
    :param override: Override YAML files merged on top of the scene, in order
    :param truth: Optional truth JSONL output
    :param detections: Optional DetectionRecord output
    :param tracks: Optional TrackRecord output
    :param topview: Optional CSV of track ground positions (frame, t, id, x, z)
    """
    scene_cfg = SceneConfig.from_yaml(scene, overrides=override)
    sim = scene_cfg.scene if seed is None else dataclasses.replace(scene_cfg.scene, seed=seed)
    logger.info(f"Simulating {sim.frame_count} frames, seed {sim.seed}")

    truth_frames = generate_truth(sim)
    det_frames = [
        DetectionFrame(tf.frame_index, tf.timestamp, synthesize_detections(tf, sim.rig, sim.noise, sim.seed))
        for tf in truth_frames
    ]
    _write_lines(truth, (serialize_truth(tf) for tf in truth_frames))
    _write_lines(detections, (serialize_detections(df) for df in det_frames))

    pipeline_cfg = scene_cfg.pipeline.with_io(output=tracks)
    result = run_pipeline(pipeline_cfg, frames=det_frames, collect=True)
    if result.exit_code != EXIT_OK:
        return result.exit_code

    metrics = evaluate(truth_frames, result.frames, sim.matching_radius,
                       camera_position=sim.rig.pose.position)
    document = {
        "scene": {"seed": sim.seed, "frames": sim.frame_count, "agents": len(sim.resolve_agents()),
                  "pixel_noise_std": sim.noise.pixel_noise_std,
                  "joint_dropout_prob": sim.noise.joint_dropout_prob},
        "metrics": metrics.to_dict(),
        "stats": result.stats.to_dict(),
    }
    with open(report, "w", encoding="utf-8") as f:
        yaml.safe_dump(document, f, sort_keys=False)
    if topview:
        topview_table(result.frames).to_csv(topview, index=False, float_format="%.6f")
    logger.info(
        f"mean error {metrics.mean_error:.4f} m, switches {metrics.identity_switches}, "
        f"miss rate {metrics.miss_rate:.3f}"
    )
    return EXIT_OK


def calibrate(*, pairs: str, config: Optional[str] = None) -> int:
    """Fit a ground homography and print it as a rig config block.

    :param pairs: File of ``u v x z`` lines (pixels, ground meters)
    :param config: Pipeline config whose planar ground (and rig) the fit refers to
    """
    plane = GroundPlane.horizontal()
    cfg = None
    if config is not None:
        cfg = PipelineConfig.from_yaml(config)
        if not isinstance(cfg.ground, GroundPlane):
            raise ConfigError("calibration needs planar ground")
        plane = cfg.ground

    pair_list = load_calibration_pairs(pairs)
    homography, fit = fit_ground_homography(pair_list, plane)

    print(format_homography_block(homography), end="")
    print(f"# pairs: {fit.pair_count}")
    print(f"# rms residual: {fit.rms_residual:.6f} m")
    print(f"# max residual: {fit.max_residual:.6f} m")
    print(f"# condition: {fit.condition:.3e}")
    if cfg is not None:
        gaps = []
        for pixel, _ in pair_list:
            by_ray = intersect_plane(screen_to_ray(cfg.rig, pixel), plane)
            by_h = lift_via_homography(homography, pixel)
            if by_ray is not None and by_h is not None:
                gaps.append(float(np.linalg.norm(by_ray - by_h)))
        if gaps:
            print(f"# max disagreement with configured rig: {max(gaps):.6f} m")
    return EXIT_OK


def _write_lines(path: Optional[str], lines) -> None:
    if not path:
        return
    with open(Path(path), "w", encoding="utf-8", newline="\n") as f:
        for line in lines:
            f.write(line + "\n")


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    configure_logging()
    try:
        return defopt.run([lift, stream, simulate, calibrate], argv=argv)
    except SzlocaError as e:
        eprint(f"error: {e}")
        logger.debug("Command failed", exc_info=True)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
