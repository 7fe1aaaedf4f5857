"""Syscall alphabet, event/trace data model, JSONL trace files, sliding windows."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Sequence, Union

import numpy as np

SYSCALLS: tuple[str, ...] = (
    "read", "write", "open", "close", "stat", "mmap", "brk", "ioctl",
    "access", "pipe", "dup", "socket", "connect", "accept", "send", "recv",
    "bind", "listen", "fork", "clone", "execve", "exit", "wait", "kill",
    "ptrace", "setuid", "setgid", "chmod", "chown", "mount", "unshare", "getdents",
)
SYSCALL_ID: dict[str, int] = {name: i for i, name in enumerate(SYSCALLS)}
N_SYSCALLS = len(SYSCALLS)

MAX_ARGS = 4
MAX_STR_BYTES = 256
I64_MIN, I64_MAX = -(1 << 63), (1 << 63) - 1
U64_MAX = (1 << 64) - 1

# 5 bits per id packed into a uint64 window code.
ID_BITS = 5
MAX_CODE_N = 12

ArgValue = Union[int, str]


class TraceParseError(ValueError):
    def __init__(self, line: int, message: str) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line
        self.message = message


def syscall_id(name: str) -> int:
    try:
        return SYSCALL_ID[name]
    except KeyError:
        raise ValueError(f"unknown syscall {name!r}") from None


def check_arg(value: object) -> ArgValue:
    """Validate one argument value; raise ValueError if it is not an ArgValue."""
    if isinstance(value, bool):
        raise ValueError("boolean is not a valid argument")
    if isinstance(value, int):
        if not I64_MIN <= value <= I64_MAX:
            raise ValueError(f"integer argument out of 64-bit range: {value}")
        return value
    if isinstance(value, str):
        if len(value.encode("utf-8")) > MAX_STR_BYTES:
            raise ValueError(f"string argument longer than {MAX_STR_BYTES} bytes")
        return value
    raise ValueError(f"argument must be an integer or string, got {type(value).__name__}")


class SyscallEvent(NamedTuple):
    t: int
    pid: int
    name: str
    args: tuple[ArgValue, ...] = ()
    ret: int = 0


@dataclass(frozen=True)
class JobMetadata:
    job_id: str
    user: str = ""
    profile_label: str | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.job_id:
            raise ValueError("job_id must be non-empty")
        if not 0 <= self.seed <= U64_MAX:
            raise ValueError("seed must be an unsigned 64-bit integer")


@dataclass(frozen=True)
class Trace:
    meta: JobMetadata
    events: tuple[SyscallEvent, ...] = field(default=())

    def __post_init__(self) -> None:
        if not isinstance(self.events, tuple):
            object.__setattr__(self, "events", tuple(self.events))
        last = 0
        for i, ev in enumerate(self.events):
            if ev.t < last:
                raise ValueError(f"event {i}: timestamp {ev.t} precedes {last}")
            last = ev.t
            if ev.name not in SYSCALL_ID:
                raise ValueError(f"event {i}: unknown syscall {ev.name!r}")
            if ev.pid < 1 or len(ev.args) > MAX_ARGS:
                raise ValueError(f"event {i}: pid must be >= 1 with at most {MAX_ARGS} args")
            if not I64_MIN <= ev.ret <= I64_MAX:
                raise ValueError(f"event {i}: return value out of 64-bit range")
            for a in ev.args:
                if type(a) is not str or len(a) > MAX_STR_BYTES // 4:
                    try:
                        check_arg(a)
                    except ValueError as exc:
                        raise ValueError(f"event {i}: {exc}") from None

    def __len__(self) -> int:
        return len(self.events)

    @cached_property
    def ids(self) -> np.ndarray:
        """Syscall ids of the events as an int64 array."""
        return np.fromiter((SYSCALL_ID[e.name] for e in self.events),
                           dtype=np.int64, count=len(self.events))

    @property
    def names(self) -> list[str]:
        return [e.name for e in self.events]


# -- JSONL --------------------------------------------------------------------

def _js(s: str) -> str:
    return json.dumps(s, ensure_ascii=False)


def _render_arg(a: ArgValue) -> str:
    return str(a) if isinstance(a, int) else _js(a)


def render_header(meta: JobMetadata) -> str:
    return (f'{{"job":{_js(meta.job_id)},"user":{_js(meta.user)},'
            f'"profile":{_js(meta.profile_label or "")},"seed":{meta.seed}}}\n')


def render_event(ev: SyscallEvent) -> str:
    args = ",".join(_render_arg(a) for a in ev.args)
    return (f'{{"t":{ev.t},"pid":{ev.pid},"sc":{_js(ev.name)},'
            f'"args":[{args}],"ret":{ev.ret}}}\n')


def render_trace(trace: Trace) -> bytes:
    parts = [render_header(trace.meta)]
    parts.extend(render_event(ev) for ev in trace.events)
    return "".join(parts).encode("utf-8")


_HEADER_KEYS = ("job", "user", "profile", "seed")
_EVENT_KEYS = ("t", "pid", "sc", "args", "ret")


def _load_object(line: str, lineno: int, keys: tuple[str, ...]) -> dict:
    try:
        pairs = json.loads(line, object_pairs_hook=list)
    except json.JSONDecodeError as exc:
        raise TraceParseError(lineno, f"malformed JSON: {exc.msg}") from None
    if not isinstance(pairs, list) or (pairs and not isinstance(pairs[0], tuple)):
        raise TraceParseError(lineno, "expected a JSON object")
    obj = dict(pairs)
    if len(obj) != len(pairs):
        raise TraceParseError(lineno, "duplicate key")
    if set(obj) != set(keys):
        missing = [k for k in keys if k not in obj]
        extra = sorted(set(obj) - set(keys))
        raise TraceParseError(lineno, f"bad keys (missing {missing}, unexpected {extra})")
    return obj


def _int(obj: dict, key: str, lineno: int, lo: int, hi: int) -> int:
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise TraceParseError(lineno, f"{key!r} must be an integer")
    if not lo <= v <= hi:
        raise TraceParseError(lineno, f"{key!r} out of range: {v}")
    return v


def _str(obj: dict, key: str, lineno: int) -> str:
    v = obj[key]
    if not isinstance(v, str):
        raise TraceParseError(lineno, f"{key!r} must be a string")
    return v


def parse_trace(data: bytes | str) -> Trace:
    """Parse a JSONL trace file (header line, then one event per line)."""
    if isinstance(data, bytes):
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise TraceParseError(1, f"invalid UTF-8 at byte {exc.start}") from None
    else:
        text = data
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or not lines[0].strip():
        raise TraceParseError(1, "missing header")

    head = _load_object(lines[0], 1, _HEADER_KEYS)
    job = _str(head, "job", 1)
    if not job:
        raise TraceParseError(1, "empty job id")
    meta = JobMetadata(
        job_id=job,
        user=_str(head, "user", 1),
        profile_label=_str(head, "profile", 1) or None,
        seed=_int(head, "seed", 1, 0, U64_MAX),
    )

    events = []
    last_t = 0
    for lineno, line in enumerate(lines[1:], start=2):
        obj = _load_object(line, lineno, _EVENT_KEYS)
        t = _int(obj, "t", lineno, 0, I64_MAX)
        if t < last_t:
            raise TraceParseError(lineno, f"non-monotonic timestamp {t} < {last_t}")
        last_t = t
        pid = _int(obj, "pid", lineno, 1, I64_MAX)
        name = _str(obj, "sc", lineno)
        if name not in SYSCALL_ID:
            raise TraceParseError(lineno, f"unknown syscall {name!r}")
        raw_args = obj["args"]
        if not isinstance(raw_args, list):
            raise TraceParseError(lineno, "'args' must be a list")
        if len(raw_args) > MAX_ARGS:
            raise TraceParseError(lineno, f"more than {MAX_ARGS} arguments")
        try:
            args = tuple(check_arg(a) for a in raw_args)
        except ValueError as exc:
            raise TraceParseError(lineno, str(exc)) from None
        ret = _int(obj, "ret", lineno, I64_MIN, I64_MAX)
        events.append(SyscallEvent(t, pid, name, args, ret))
    return Trace(meta, tuple(events))


# -- windows ------------------------------------------------------------------

def windows(trace: Trace | Sequence[int], n: int) -> list[tuple[int, ...]]:
    """Overlapping length-n windows of syscall ids, in trace order."""
    if n < 1:
        raise ValueError("window length must be >= 1")
    ids = trace.ids.tolist() if isinstance(trace, Trace) else list(trace)
    return [tuple(ids[i:i + n]) for i in range(len(ids) - n + 1)]


def window_codes(ids: np.ndarray, n: int) -> np.ndarray:
    """Pack each length-n window into one uint64 (5 bits per id, first id high)."""
    if not 1 <= n <= MAX_CODE_N:
        raise ValueError(f"window length must be in [1, {MAX_CODE_N}]")
    count = len(ids) - n + 1
    if count <= 0:
        return np.empty(0, dtype=np.uint64)
    ids = np.asarray(ids, dtype=np.uint64)
    codes = np.zeros(count, dtype=np.uint64)
    for k in range(n):
        codes <<= np.uint64(ID_BITS)
        codes |= ids[k:k + count]
    return codes


def encode_gram(gram: Sequence[int]) -> int:
    code = 0
    for g in gram:
        code = (code << ID_BITS) | g
    return code


def decode_gram(code: int, n: int) -> tuple[int, ...]:
    mask = (1 << ID_BITS) - 1
    return tuple((code >> (ID_BITS * (n - 1 - k))) & mask for k in range(n))
