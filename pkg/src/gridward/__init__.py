"""gridward: syscall-filter sandboxing and sequence-based intrusion detection
for Grid worker nodes."""

from gridward.trace import (
    SYSCALLS,
    SYSCALL_ID,
    JobMetadata,
    SyscallEvent,
    Trace,
    TraceParseError,
    parse_trace,
    render_trace,
    windows,
)

__version__ = "0.1.0"

__all__ = [
    "SYSCALLS",
    "SYSCALL_ID",
    "JobMetadata",
    "SyscallEvent",
    "Trace",
    "TraceParseError",
    "parse_trace",
    "render_trace",
    "windows",
]
