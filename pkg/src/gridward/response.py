"""Graduated responses to detection results and alert delivery."""

from __future__ import annotations

import json
import os
import socket
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from gridward.detector import DetectionResult

ACTIONS = ("none", "alert", "suspend", "kill")
_RANK = {a: i for i, a in enumerate(ACTIONS)}
BUFFER_CAPACITY = 1000


@dataclass(frozen=True)
class ReactionPolicy:
    warn_ratio: float = 1.5
    kill_ratio: float = 3.0

    def __post_init__(self) -> None:
        if not 1.0 < self.warn_ratio < self.kill_ratio:
            raise ValueError("need 1 < warn_ratio < kill_ratio")


def excess_ratio(result: DetectionResult, thresholds: Mapping[str, float]) -> float:
    """max over enabled detectors of score / threshold."""
    scores = result.scores
    ratios = []
    for name, thr in thresholds.items():
        if not thr > 0:
            raise ValueError(f"threshold for {name} must be positive, got {thr}")
        if name not in scores:
            raise ValueError(f"result has no {name} score")
        ratios.append(scores[name] / thr)
    if not ratios:
        raise ValueError("no enabled detectors")
    return max(ratios)


def decide_action(result: DetectionResult, thresholds: Mapping[str, float],
                  policy: ReactionPolicy = ReactionPolicy()) -> str:
    r = excess_ratio(result, thresholds)
    if r <= 1.0:
        return "none"
    if r <= policy.warn_ratio:
        return "alert"
    if r <= policy.kill_ratio:
        return "suspend"
    return "kill"


def stronger(a: str, b: str) -> bool:
    return _RANK[a] > _RANK[b]


@dataclass(frozen=True)
class Alert:
    t: int
    job_id: str
    worker: int
    action: str
    scores: Mapping[str, float]
    thresholds: Mapping[str, float]
    evidence: Sequence[Sequence[int]] = ()
    truth: str = ""

    def __post_init__(self) -> None:
        if self.action not in ACTIONS[1:]:
            raise ValueError(f"alert action must be alert/suspend/kill, got {self.action!r}")
        if len(self.evidence) > 10:
            raise ValueError("at most 10 evidence grams")

    @classmethod
    def from_result(cls, result: DetectionResult, action: str, thresholds: Mapping[str, float],
                    t: int = 0, worker: int = 0) -> "Alert":
        return cls(t, result.job_id, worker, action, dict(result.scores), dict(thresholds),
                   tuple(tuple(g) for g in result.evidence[:10]), result.truth or "")

    def to_line(self) -> str:
        obj = {
            "t": self.t,
            "job": self.job_id,
            "worker": self.worker,
            "action": self.action,
            "scores": dict(self.scores),
            "thresholds": dict(self.thresholds),
            "evidence": [list(g) for g in self.evidence],
            "truth": self.truth,
        }
        return json.dumps(obj, separators=(",", ":"), ensure_ascii=False) + "\n"


def parse_alert(line: str) -> Alert:
    obj = json.loads(line)
    return Alert(
        t=int(obj["t"]),
        job_id=obj["job"],
        worker=int(obj["worker"]),
        action=obj["action"],
        scores={k: float(v) for k, v in obj["scores"].items()},
        thresholds={k: float(v) for k, v in obj["thresholds"].items()},
        evidence=tuple(tuple(g) for g in obj["evidence"]),
        truth=obj.get("truth", ""),
    )


# -- sinks --------------------------------------------------------------------

@dataclass
class SinkStatus:
    sink: str
    delivered: int = 0
    buffered: int = 0
    dropped: int = 0
    error: str | None = None

    def to_json(self) -> dict:
        return {"sink": self.sink, "delivered": self.delivered, "buffered": self.buffered,
                "dropped": self.dropped, "error": self.error}


class FileSink:
    """Appends one line per alert with a single O_APPEND write."""

    def __init__(self, path: str | os.PathLike) -> None:
        self.path = os.fspath(path)
        self.delivered = 0
        self.last_error: str | None = None
        self._lock = threading.Lock()

    @property
    def name(self) -> str:
        return f"file:{self.path}"

    def emit(self, line: str) -> SinkStatus:
        data = line.encode("utf-8")
        with self._lock:
            try:
                fd = os.open(self.path, os.O_WRONLY | os.O_APPEND | os.O_CREAT, 0o644)
                try:
                    os.write(fd, data)
                finally:
                    os.close(fd)
                self.delivered += 1
                self.last_error = None
            except OSError as exc:
                self.last_error = str(exc)
            return SinkStatus(self.name, self.delivered, 0, 0, self.last_error)


class TcpSink:
    """LF-delimited JSONL over TCP.

    While the peer is unreachable, alerts queue in a bounded buffer; once full,
    the oldest alert is dropped and counted. Each emit retries the connection
    and flushes the backlog in order.
    """

    def __init__(self, host: str, port: int, capacity: int = BUFFER_CAPACITY,
                 timeout: float = 1.0) -> None:
        self.host = host
        self.port = port
        self.capacity = capacity
        self.timeout = timeout
        self.buffer: deque[bytes] = deque()
        self.delivered = 0
        self.dropped = 0
        self.last_error: str | None = None
        self._sock: socket.socket | None = None
        self._lock = threading.Lock()

    @property
    def name(self) -> str:
        return f"tcp:{self.host}:{self.port}"

    def _connect(self) -> socket.socket:
        if self._sock is None:
            self._sock = socket.create_connection((self.host, self.port), timeout=self.timeout)
        return self._sock

    def _flush(self) -> None:
        sock = self._connect()
        while self.buffer:
            sock.sendall(self.buffer[0])
            self.buffer.popleft()
            self.delivered += 1

    def emit(self, line: str) -> SinkStatus:
        with self._lock:
            if len(self.buffer) >= self.capacity:
                self.buffer.popleft()
                self.dropped += 1
            self.buffer.append(line.encode("utf-8"))
            try:
                self._flush()
                self.last_error = None
            except OSError as exc:
                self.last_error = str(exc)
                self.close_socket()
            return self.status()

    def status(self) -> SinkStatus:
        return SinkStatus(self.name, self.delivered, len(self.buffer), self.dropped, self.last_error)

    def close_socket(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
            self._sock = None

    def close(self) -> None:
        with self._lock:
            self.close_socket()


def parse_sink(spec: str):
    """``tcp://host:port`` or a file path."""
    if spec.startswith("tcp://"):
        host, _, port = spec[6:].rpartition(":")
        if not host or not port.isdigit():
            raise ValueError(f"bad TCP sink address {spec!r}")
        return TcpSink(host.strip("[]"), int(port))
    return FileSink(spec)


@dataclass
class DeliveryRecord:
    statuses: list[SinkStatus] = field(default_factory=list)

    def to_json(self) -> list[dict]:
        return [s.to_json() for s in self.statuses]


def emit_alert(alert: Alert, sinks: Iterable) -> DeliveryRecord:
    """Deliver to every sink; failures are recorded, never raised."""
    line = alert.to_line()
    record = DeliveryRecord()
    for sink in sinks:
        try:
            record.statuses.append(sink.emit(line))
        except Exception as exc:  # a broken sink must not stop detection
            record.statuses.append(SinkStatus(getattr(sink, "name", repr(sink)), error=str(exc)))
    return record
