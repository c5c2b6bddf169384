"""
Streaming pipeline: detections in, tracks out.

    reader -> anchor/lift/place -> track -> serialize + OSC emit

One frame is processed at a time, so memory is bounded by the active tracks
plus the input backlog, and every input frame yields exactly one output
record (empty frames included). UDP input is drained by its own reader thread
into a bounded queue, so datagrams keep arriving while a frame is processed.
"""

from __future__ import annotations

import logging
import queue
import socket
import sys
import threading
import time
import uuid
from contextlib import ExitStack
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, Iterable, Iterator, List, Optional, TextIO, Tuple

from szloca.anchoring import LiftMethod
from szloca.config import PipelineConfig
from szloca.errors import EXIT_OK, StreamError, SzlocaError
from szloca.ground_surface import GroundPlane
from szloca.lifting import GroundHomography, homography_from_camera, lift_frame
from szloca.logging_utils import EventLogger
from szloca.osc import OscEmitter
from szloca.records import DetectionFrame, TrackFrame, parse_detection_stream, serialize_tracks
from szloca.timing import StageTimer
from szloca.tracking import Tracker

logger = logging.getLogger(__name__)

UDP_MAX_DATAGRAM = 65535
UDP_RECEIVE_BUFFER = 4 * 1024 * 1024
UDP_QUEUE_SIZE = 8192
UDP_POLL_S = 0.1


@dataclass
class PipelineStats:
    frames: int = 0
    detections: int = 0
    anchors_missing: int = 0
    lift_misses: int = 0
    out_of_bounds_anchors: int = 0
    active_tracks: int = 0
    emitted: int = 0
    emit_dropped: int = 0
    stage_ms: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)

    def summary(self) -> str:
        stages = ", ".join(f"{name}={ms:.3f}ms" for name, ms in self.stage_ms.items())
        return (
            f"frames={self.frames} detections={self.detections} lift_misses={self.lift_misses} "
            f"(no anchor: {self.anchors_missing}) out_of_bounds={self.out_of_bounds_anchors} "
            f"active_tracks={self.active_tracks} emitted={self.emitted} emit_dropped={self.emit_dropped}"
            + (f" | mean per frame: {stages}" if stages else "")
        )


@dataclass
class PipelineResult:
    exit_code: int
    stats: PipelineStats
    error: Optional[str] = None
    frames: List[TrackFrame] = field(default_factory=list)


class FramePipeline:
    """Anchor, lift, place and track one frame at a time."""

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.tracker = Tracker(config.tracker)
        self.stats = PipelineStats()
        self.timer = StageTimer()
        self.homography: Optional[GroundHomography] = config.homography
        if (
            self.homography is None
            and config.anchor.lift_method is LiftMethod.HOMOGRAPHY
            and isinstance(config.ground, GroundPlane)
        ):
            self.homography = homography_from_camera(config.rig, config.ground)

    def process(self, frame: DetectionFrame) -> TrackFrame:
        """
        Run one frame through lifting and tracking.

        Raises:
            SzlocaError: Any module error, tagged with the frame index
        """
        cfg = self.config
        try:
            with self.timer.stage("lift"):
                lifted = lift_frame(
                    frame.detections, cfg.rig, cfg.ground, cfg.layout, cfg.anchor,
                    homography=self.homography, workers=cfg.lift_workers, frame_index=frame.frame_index,
                )
            with self.timer.stage("track"):
                tracks = self.tracker.step(frame.frame_index, frame.timestamp, lifted.lifted)
        except SzlocaError as e:
            if e.frame_index is None:
                e.frame_index = frame.frame_index
            raise

        stats = self.stats
        stats.frames += 1
        stats.detections += len(frame.detections)
        stats.anchors_missing += lifted.anchors_missing
        stats.lift_misses += lifted.lift_misses
        stats.out_of_bounds_anchors += lifted.out_of_bounds_anchors
        stats.active_tracks = self.tracker.active_count
        return TrackFrame(frame_index=frame.frame_index, timestamp=frame.timestamp, tracks=tracks)


class UdpReader:
    """
    Drain a UDP socket on a dedicated thread into an in-process queue.

    The kernel buffer only has to cover scheduling gaps of the reader thread,
    never the time spent lifting and tracking a frame.

    Example:
        with UdpReader("0.0.0.0", 7000, timeout=30) as reader:
            for line in reader.lines():
                ...
    """

    def __init__(
        self,
        host: str,
        port: int,
        timeout: Optional[float] = None,
        *,
        queue_size: int = UDP_QUEUE_SIZE,
        receive_buffer: int = UDP_RECEIVE_BUFFER,
    ):
        """
        Bind the socket and start the reader thread.

        Args:
            host: Interface to bind
            port: Port to bind (0 picks a free port)
            timeout: Stop after this many idle seconds (None waits forever)
            queue_size: Datagrams held between the reader and the consumer
            receive_buffer: Requested SO_RCVBUF in bytes (the kernel may cap it)
        """
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        try:
            self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, receive_buffer)
        except OSError as e:
            logger.warning(f"Could not enlarge UDP receive buffer to {receive_buffer} bytes: {e}")
        self._sock.bind((host, port))
        self._sock.settimeout(UDP_POLL_S)
        self.address: Tuple[str, int] = self._sock.getsockname()[:2]
        self._timeout = timeout
        self._queue: "queue.Queue[Optional[bytes]]" = queue.Queue(maxsize=queue_size)
        self._stop = threading.Event()
        self.received = 0
        self._thread = threading.Thread(target=self._run, name=f"udp-reader-{self.address[1]}", daemon=True)
        self._thread.start()

    def _put(self, item: Optional[bytes]) -> bool:
        # a full queue holds the reader back instead of dropping; the kernel buffer absorbs the rest
        while not self._stop.is_set():
            try:
                self._queue.put(item, timeout=UDP_POLL_S)
                return True
            except queue.Full:
                continue
        return False

    def _run(self) -> None:
        last_seen = time.monotonic()
        try:
            while not self._stop.is_set():
                try:
                    datagram, _ = self._sock.recvfrom(UDP_MAX_DATAGRAM)
                except socket.timeout:
                    if self._timeout is not None and time.monotonic() - last_seen >= self._timeout:
                        host, port = self.address
                        logger.info(f"No datagram for {self._timeout}s, closing udp://{host}:{port}")
                        return
                    continue
                except OSError as e:
                    if not self._stop.is_set():
                        logger.error(f"UDP receive on {self.address[0]}:{self.address[1]} failed: {e}")
                    return
                last_seen = time.monotonic()
                self.received += 1
                if not self._put(datagram):
                    return
        finally:
            self._put(None)

    def lines(self) -> Iterator[bytes]:
        """Record lines in arrival order; one datagram may carry several lines."""
        while True:
            datagram = self._queue.get()
            if datagram is None:
                return
            yield from datagram.splitlines()

    def close(self) -> None:
        self._stop.set()
        self._thread.join(timeout=1.0)
        self._sock.close()

    def __enter__(self) -> "UdpReader":
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.close()


def udp_lines(
    host: str,
    port: int,
    timeout: Optional[float] = None,
    *,
    on_bound: Optional[Callable[[Tuple[str, int]], None]] = None,
) -> Iterator[bytes]:
    """
    Yield record lines received on a UDP socket; one datagram may carry several lines.

    Args:
        host: Interface to bind
        port: Port to bind (0 picks a free port)
        timeout: Stop after this many idle seconds (None waits forever)
        on_bound: Called with the bound (host, port) once the socket listens
    """
    with UdpReader(host, port, timeout) as reader:
        logger.info(f"Listening for detection records on udp://{reader.address[0]}:{reader.address[1]}")
        if on_bound is not None:
            on_bound(reader.address)
        yield from reader.lines()


def _open_frames(config: PipelineConfig, stack: ExitStack) -> Iterator[DetectionFrame]:
    source = config.io.input
    endpoint = config.io.listen_endpoint
    if endpoint is not None:
        lines = udp_lines(*endpoint)
        stack.callback(lines.close)
        return parse_detection_stream(lines)
    if source == "-":
        return parse_detection_stream(sys.stdin)
    try:
        f = stack.enter_context(open(source, "r", encoding="utf-8"))
    except OSError as e:
        raise StreamError(f"cannot open detections {source}: {e}") from e
    return parse_detection_stream(f)


def _open_output(config: PipelineConfig, stack: ExitStack) -> Optional[TextIO]:
    target = config.io.output
    if not target:
        return None
    if target == "-":
        return sys.stdout
    try:
        return stack.enter_context(open(target, "w", encoding="utf-8", newline="\n"))
    except OSError as e:
        raise StreamError(f"cannot open output {target}: {e}") from e


def run_pipeline(
    config: PipelineConfig,
    *,
    frames: Optional[Iterable[DetectionFrame]] = None,
    max_frames: Optional[int] = None,
    event_logger: Optional[EventLogger] = None,
    collect: bool = False,
) -> PipelineResult:
    """
    Stream frames through the pipeline into the configured sinks.

    Args:
        config: Pipeline configuration
        frames: Frames to process instead of ``config.io.input``
        max_frames: Stop after this many frames
        event_logger: Structured event sink (default: from the environment)
        collect: Keep the produced track frames on the result

    Returns:
        PipelineResult with the exit code (0, 2 or 3) and run stats; errors
        are reported, not raised
    """
    run_id = uuid.uuid4().hex[:12]
    events = event_logger or EventLogger.from_env(run_id=run_id)
    result = PipelineResult(exit_code=EXIT_OK, stats=PipelineStats())
    emitters: List[OscEmitter] = []
    pipeline: Optional[FramePipeline] = None

    with ExitStack() as stack:
        try:
            config.validate(require_input=frames is None, require_sink=not collect)
            pipeline = FramePipeline(config)
            result.stats = pipeline.stats
            source = frames if frames is not None else _open_frames(config, stack)
            out = _open_output(config, stack)
            emitters = [
                OscEmitter(host, port, config.io.emit_queue_size, event_logger=events)
                for host, port in config.io.emit_endpoints
            ]
            events.log_event("run_started", {"input": config.io.input, "output": config.io.output,
                                             "emit": list(config.io.emit)})

            for frame in source:
                track_frame = pipeline.process(frame)
                with pipeline.timer.stage("output"):
                    if out is not None:
                        out.write(serialize_tracks(track_frame) + "\n")
                    for emitter in emitters:
                        pipeline.stats.emitted += emitter.emit_tracks(track_frame.tracks)
                if collect:
                    result.frames.append(track_frame)
                if max_frames is not None and pipeline.stats.frames >= max_frames:
                    break
            if out is not None:
                out.flush()
        except SzlocaError as e:
            result.exit_code = e.exit_code
            result.error = str(e)
            logger.error(str(e))
            logger.debug("Pipeline failure", exc_info=True)
            events.log_event("frame_error", {"error": str(e), "frame": e.frame_index,
                                             "type": type(e).__name__})
        except KeyboardInterrupt:
            logger.warning("Interrupted, stopping after the current frame")
        finally:
            for emitter in emitters:
                emitter.close()
                result.stats.emit_dropped += emitter.dropped
            if pipeline is not None:
                result.stats.stage_ms = pipeline.timer.mean_ms()
            logger.info(f"Pipeline stats: {result.stats.summary()}")
            events.log_event("run_completed", {"exit_code": result.exit_code, **result.stats.to_dict()})
    return result
