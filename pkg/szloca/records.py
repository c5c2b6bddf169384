"""
Newline-delimited record formats.

DetectionRecord (input, one line per frame):
    {"frame": 0, "t": 0.0, "detections": [{"bbox": [u, v, w, h], "kp": {"nose": [u, v, conf]}, "conf": 0.9}]}

TrackRecord (output, one line per frame):
    {"frame":0,"t":0.000000,"tracks":[{"id":1,"pos":[x,y,z],"smoothed":[x,y,z],"vel":[vx,vz],"state":"confirmed"}]}

Track lines use a fixed key order and six decimals so output is byte-stable.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from szloca.anchoring import BBox, Detection2D, Keypoint
from szloca.errors import CalibrationError, FrameOrderError, RecordParseError, SerializationError
from szloca.tracking import Lifecycle, Track3D

logger = logging.getLogger(__name__)

Line = Union[str, bytes]


class DetectionModel(BaseModel):
    """One detection inside a DetectionRecord."""

    model_config = ConfigDict(allow_inf_nan=False)

    bbox: Optional[Tuple[float, float, float, float]] = None
    kp: Dict[str, Tuple[float, float, float]] = Field(default_factory=dict)
    conf: float = Field(default=1.0, ge=0.0, le=1.0)


class DetectionRecord(BaseModel):
    model_config = ConfigDict(allow_inf_nan=False)

    frame: int = Field(ge=0)
    t: float
    detections: List[DetectionModel] = Field(default_factory=list)


class TrackModel(BaseModel):
    model_config = ConfigDict(allow_inf_nan=False)

    id: int = Field(ge=1)
    pos: Tuple[float, float, float]
    smoothed: Tuple[float, float, float]
    vel: Tuple[float, float]
    skeleton: Optional[Dict[str, Tuple[float, float, float]]] = None
    state: Lifecycle = Lifecycle.CONFIRMED


class TrackRecord(BaseModel):
    model_config = ConfigDict(allow_inf_nan=False)

    frame: int = Field(ge=0)
    t: float
    tracks: List[TrackModel] = Field(default_factory=list)


@dataclass
class DetectionFrame:
    frame_index: int
    timestamp: float
    detections: List[Detection2D] = field(default_factory=list)


@dataclass
class TrackFrame:
    frame_index: int
    timestamp: float
    tracks: List[Track3D] = field(default_factory=list)


def _to_detection(model: DetectionModel) -> Detection2D:
    return Detection2D(
        keypoints={name: Keypoint(*values) for name, values in model.kp.items()},
        bbox=BBox(*model.bbox) if model.bbox is not None else None,
        source_confidence=model.conf,
    )


def _numbered_lines(source: Iterable[Line]) -> Iterator[Tuple[int, str]]:
    for line_number, raw in enumerate(source, start=1):
        try:
            text = raw.decode("utf-8") if isinstance(raw, bytes) else raw
        except UnicodeDecodeError as e:
            raise RecordParseError(f"not UTF-8: {e}", line_number=line_number) from e
        text = text.strip()
        if text:
            yield line_number, text


def parse_detection_stream(source: Iterable[Line]) -> Iterator[DetectionFrame]:
    """
    Lazily parse DetectionRecord lines into frames.

    Blank lines are skipped. Unknown joint names are kept; anchoring ignores
    joints its layout does not name.

    Raises:
        RecordParseError: Malformed record (carries the line number)
        FrameOrderError: Frame index or timestamp not strictly increasing
    """
    last: Optional[DetectionRecord] = None
    for line_number, text in _numbered_lines(source):
        try:
            record = DetectionRecord.model_validate_json(text)
            detections = [_to_detection(d) for d in record.detections]
        except (ValidationError, ValueError) as e:
            raise RecordParseError(str(e).splitlines()[0] if str(e) else repr(e), line_number=line_number) from e

        if last is not None and (record.frame <= last.frame or record.t <= last.t):
            raise FrameOrderError(
                f"line {line_number}: frame {record.frame} at t={record.t} "
                f"does not follow frame {last.frame} at t={last.t}",
                frame_index=record.frame,
            )
        last = record
        yield DetectionFrame(frame_index=record.frame, timestamp=record.t, detections=detections)


def serialize_detections(frame: DetectionFrame) -> str:
    """One DetectionRecord line (no trailing newline); floats keep full precision."""
    detections = []
    for det in frame.detections:
        entry: Dict[str, object] = {}
        if det.bbox is not None:
            entry["bbox"] = list(det.bbox)
        entry["kp"] = {name: list(kp) for name, kp in det.keypoints.items()}
        entry["conf"] = det.source_confidence
        detections.append(entry)
    record = {"frame": frame.frame_index, "t": frame.timestamp, "detections": detections}
    return json.dumps(record, separators=(",", ":"), allow_nan=False)


def _num(value: float, what: str) -> str:
    value = float(value)
    if not math.isfinite(value):
        raise SerializationError(f"non-finite {what}: {value}")
    text = f"{value:.6f}"
    return "0.000000" if text == "-0.000000" else text


def _vec(values: Sequence[float], what: str) -> str:
    return "[" + ",".join(_num(v, what) for v in values) + "]"


def serialize_tracks(frame: TrackFrame) -> str:
    """
    One TrackRecord line (no trailing newline).

    Raises:
        SerializationError: Non-finite values or duplicate track ids
    """
    seen = set()
    parts = []
    for track in frame.tracks:
        if track.track_id in seen:
            raise SerializationError(f"duplicate track id {track.track_id}", frame_index=frame.frame_index)
        seen.add(track.track_id)
        try:
            fields = [
                f'"id":{int(track.track_id)}',
                f'"pos":{_vec(track.position, "position")}',
                f'"smoothed":{_vec(track.smoothed, "smoothed position")}',
                f'"vel":{_vec(track.velocity, "velocity")}',
            ]
            if track.skeleton is not None:
                joints = ",".join(
                    f"{json.dumps(name)}:{_vec(point, 'joint')}" for name, point in track.skeleton.items()
                )
                fields.append(f'"skeleton":{{{joints}}}')
        except SerializationError as e:
            e.frame_index = frame.frame_index
            raise
        fields.append(f'"state":{json.dumps(Lifecycle(track.state).value)}')
        parts.append("{" + ",".join(fields) + "}")
    try:
        t = _num(frame.timestamp, "timestamp")
    except SerializationError as e:
        e.frame_index = frame.frame_index
        raise
    return f'{{"frame":{int(frame.frame_index)},"t":{t},"tracks":[{",".join(parts)}]}}'


def parse_tracks(source: Iterable[Line]) -> Iterator[TrackFrame]:
    """Parse TrackRecord lines back into frames."""
    for line_number, text in _numbered_lines(source):
        try:
            record = TrackRecord.model_validate_json(text)
        except ValidationError as e:
            raise RecordParseError(str(e).splitlines()[0], line_number=line_number) from e
        tracks = [
            Track3D(
                track_id=t.id,
                position=t.pos,
                smoothed=t.smoothed,
                velocity=t.vel,
                skeleton=dict(t.skeleton) if t.skeleton is not None else None,
                state=t.state,
            )
            for t in record.tracks
        ]
        yield TrackFrame(frame_index=record.frame, timestamp=record.t, tracks=tracks)


def topview_table(frames: Iterable[TrackFrame], use_smoothed: bool = False) -> pd.DataFrame:
    """Per-frame track ground positions as a (frame, t, id, x, z) table."""
    rows = [
        (frame.frame_index, frame.timestamp, track.track_id,
         (track.smoothed if use_smoothed else track.position)[0],
         (track.smoothed if use_smoothed else track.position)[2])
        for frame in frames
        for track in frame.tracks
    ]
    return pd.DataFrame(rows, columns=["frame", "t", "id", "x", "z"])


def load_calibration_pairs(path: Union[str, Path]) -> List[Tuple[Tuple[float, float], Tuple[float, float]]]:
    """
    Read ``u v x z`` lines (pixels, then ground meters); ``#`` comments and blank lines are skipped.

    Raises:
        CalibrationError: On a malformed line
    """
    pairs = []
    with open(path, "r", encoding="utf-8") as f:
        for line_number, raw in enumerate(f, start=1):
            text = raw.split("#", 1)[0].strip()
            if not text:
                continue
            fields = text.replace(",", " ").split()
            try:
                u, v, x, z = (float(value) for value in fields)
            except ValueError as e:
                raise CalibrationError(f"{path}:{line_number}: expected 'u v x z', got {raw.strip()!r}") from e
            pairs.append(((u, v), (x, z)))
    logger.info(f"Loaded {len(pairs)} calibration pairs from {path}")
    return pairs
