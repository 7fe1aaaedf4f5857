import pytest

from gridward.sim import BUILTIN_NORMAL, builtin_profiles, generate_trace
from gridward.trace import JobMetadata, SyscallEvent, Trace


def make_trace(names, job="j1", args=None, label=None):
    """Trace with one event per name, t = index, pid 1."""
    args = args or {}
    events = [SyscallEvent(i, 1, n, tuple(args.get(i, ())), 0) for i, n in enumerate(names)]
    return Trace(JobMetadata(job, "u", label, 0), tuple(events))


@pytest.fixture(scope="session")
def catalog():
    return builtin_profiles()


@pytest.fixture(scope="session")
def normal_traces(catalog):
    return [generate_trace(catalog[BUILTIN_NORMAL[i % 3]], 1000 + i, 500) for i in range(60)]
