"""
OSC delivery of track positions.

Every confirmed track of a frame becomes one OSC message
``/szloca/track ,ifff <id> <x> <y> <z>`` (40 bytes, big-endian, no bundles).
``OscEmitter`` sends them from a worker thread through a bounded queue: the
tracker never waits on the network, and when the queue is full the oldest
message is dropped and counted.
"""

from __future__ import annotations

import logging
import math
import threading
from collections import deque
from typing import Deque, Iterable, Optional, Protocol, Sequence

from pythonosc.osc_message import OscMessage
from pythonosc.osc_message_builder import BuildError, OscMessageBuilder
from pythonosc.udp_client import UDPClient

from szloca.errors import ConfigError, EncodeError
from szloca.logging_utils import EventLogger
from szloca.tracking import Track3D

logger = logging.getLogger(__name__)

TRACK_ADDRESS = "/szloca/track"
DEFAULT_QUEUE_SIZE = 256
INT32_MIN, INT32_MAX = -(2 ** 31), 2 ** 31 - 1


def build_track_message(track_id: int, position: Sequence[float]) -> OscMessage:
    """
    Build the OSC message for one track position.

    Raises:
        EncodeError: Non-finite position, id outside int32, or a float32 overflow
    """
    values = [float(c) for c in position]
    if len(values) != 3:
        raise EncodeError(f"track position needs 3 components, got {len(values)}")
    if not all(math.isfinite(c) for c in values):
        raise EncodeError(f"track {track_id}: non-finite position {values}")
    if not INT32_MIN <= int(track_id) <= INT32_MAX:
        raise EncodeError(f"track id {track_id} does not fit int32")

    builder = OscMessageBuilder(address=TRACK_ADDRESS)
    builder.add_arg(int(track_id), OscMessageBuilder.ARG_TYPE_INT)
    for value in values:
        builder.add_arg(value, OscMessageBuilder.ARG_TYPE_FLOAT)
    try:
        return builder.build()
    except BuildError as e:
        raise EncodeError(f"track {track_id}: {e}") from e


def encode_osc_track(track_id: int, position: Sequence[float]) -> bytes:
    """The 40-byte datagram for one track position."""
    return build_track_message(track_id, position).dgram


class DatagramSender(Protocol):
    def send(self, content: OscMessage) -> None:
        ...


class OscEmitter:
    """
    Non-blocking OSC sender for one ``osc://HOST:PORT`` endpoint.

    Example:
        emitter = OscEmitter("127.0.0.1", 9000)
        emitter.emit_tracks(tracks)
        ...
        emitter.close()
        print(emitter.dropped)
    """

    def __init__(
        self,
        host: str,
        port: int,
        queue_size: int = DEFAULT_QUEUE_SIZE,
        *,
        event_logger: Optional[EventLogger] = None,
        client: Optional[DatagramSender] = None,
    ):
        """
        Initialize the emitter and start its worker thread.

        Args:
            host: Destination host
            port: Destination UDP port
            queue_size: Maximum queued messages before the oldest is dropped
            event_logger: Optional event logger for drop events
            client: Sender to use instead of a pythonosc UDP client
        """
        if queue_size < 1:
            raise ConfigError(f"emit queue size must be >= 1, got {queue_size}")
        self.endpoint = f"osc://{host}:{port}"
        self._client = client if client is not None else UDPClient(host, port)
        self._queue: Deque[OscMessage] = deque()
        self._queue_size = queue_size
        self._cond = threading.Condition()
        self._closed = False
        self._event_logger = event_logger
        self.sent = 0
        self.dropped = 0
        self.send_errors = 0
        self._worker = threading.Thread(target=self._run, name=f"osc-emitter-{port}", daemon=True)
        self._worker.start()

    def emit(self, message: OscMessage) -> None:
        """Queue a message; never blocks on the network."""
        dropped_total: Optional[int] = None
        with self._cond:
            if self._closed:
                raise RuntimeError(f"emitter {self.endpoint} is closed")
            if len(self._queue) >= self._queue_size:
                self._queue.popleft()
                self.dropped += 1
                dropped_total = self.dropped
            self._queue.append(message)
            self._cond.notify()
        # event log I/O runs outside the lock
        if dropped_total is not None and self._event_logger is not None:
            self._event_logger.log_event("emit_dropped", {"endpoint": self.endpoint, "dropped": dropped_total})

    def emit_tracks(self, tracks: Iterable[Track3D]) -> int:
        """Queue one message per track (smoothed position); returns the number queued."""
        count = 0
        for track in tracks:
            self.emit(build_track_message(track.track_id, track.smoothed))
            count += 1
        return count

    def _run(self) -> None:
        while True:
            with self._cond:
                while not self._queue and not self._closed:
                    self._cond.wait()
                if not self._queue:
                    return
                message = self._queue.popleft()
            try:
                self._client.send(message)
                self.sent += 1
            except OSError as e:
                self.send_errors += 1
                logger.warning(f"OSC send to {self.endpoint} failed: {e}")

    def close(self, timeout: float = 5.0) -> None:
        """Flush what is queued, then stop the worker."""
        with self._cond:
            self._closed = True
            self._cond.notify_all()
        self._worker.join(timeout=timeout)
        if self._worker.is_alive():
            logger.warning(f"OSC emitter {self.endpoint} still flushing after {timeout}s")
