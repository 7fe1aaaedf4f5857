"""Markov-chain job behaviour profiles and a seeded Grid site simulator."""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

from gridward.rng import SplitMix64, mix64
from gridward.trace import (
    MAX_ARGS,
    N_SYSCALLS,
    SYSCALL_ID,
    SYSCALLS,
    JobMetadata,
    SyscallEvent,
    Trace,
)

PROB_TOL = 1e-9
NORMAL, ATTACK = "normal", "attack"
BUILTIN_NORMAL = ("reco", "montecarlo", "merge")
BUILTIN_ATTACK = ("credential-theft", "cryptominer", "dos-forkbomb", "job-tamper", "escape-privesc")

# Per-event clock advance, nanoseconds.
DT_MIN_NS, DT_SPAN_NS = 200, 4800


class ProfileParseError(ValueError):
    def __init__(self, line: int, message: str, source: str = "") -> None:
        where = f"{source}:" if source else "line "
        super().__init__(f"{where}{line}: {message}")
        self.line = line
        self.message = message


@dataclass(frozen=True)
class BehaviorProfile:
    """A first-order Markov chain over the syscall alphabet plus argument templates.

    ``pools`` maps (syscall, arg index) to candidate strings, ``ranges`` maps
    (syscall, arg index) to an inclusive integer range and ``rets`` maps a
    syscall to an inclusive return-value range (0 when absent). Strings may
    contain ``{job}``, ``{other}`` (some other job's id) and ``{n}`` (0-99).
    """

    name: str
    kind: str
    initial: tuple[float, ...]
    transition: tuple[tuple[float, ...], ...]
    pools: Mapping[tuple[str, int], tuple[str, ...]] = field(default_factory=dict)
    ranges: Mapping[tuple[str, int], tuple[int, int]] = field(default_factory=dict)
    rets: Mapping[str, tuple[int, int]] = field(default_factory=dict)
    mean_len: int = 500

    def __post_init__(self) -> None:
        if self.kind not in (NORMAL, ATTACK):
            raise ValueError(f"profile kind must be normal or attack, got {self.kind!r}")
        if self.mean_len < 1:
            raise ValueError("mean_len must be >= 1")
        _check_distribution(self.initial, "initial")
        if len(self.transition) != N_SYSCALLS:
            raise ValueError(f"transition needs {N_SYSCALLS} rows")
        for sc, row in zip(SYSCALLS, self.transition):
            _check_distribution(row, f"row {sc}")
        for (sc, k), _ in list(self.pools.items()) + list(self.ranges.items()):
            if sc not in SYSCALL_ID or not 0 <= k < MAX_ARGS:
                raise ValueError(f"bad argument template target {sc} arg{k}")
        for (sc, k), (lo, hi) in self.ranges.items():
            if lo > hi:
                raise ValueError(f"empty range for {sc} arg{k}")
        # Sampling tables; precomputed once per profile.
        object.__setattr__(self, "_init_cdf", _cdf(self.initial))
        object.__setattr__(self, "_row_cdf", tuple(_cdf(r) for r in self.transition))
        templates = []
        for sc in SYSCALLS:
            slots = []
            for k in range(MAX_ARGS):
                if (sc, k) in self.pools:
                    slots.append(self.pools[(sc, k)])
                elif (sc, k) in self.ranges:
                    slots.append(self.ranges[(sc, k)])
                else:
                    break
            templates.append((tuple(slots), self.rets.get(sc)))
        object.__setattr__(self, "_templates", tuple(templates))


def _check_distribution(p: Iterable[float], what: str) -> None:
    p = list(p)
    if len(p) != N_SYSCALLS:
        raise ValueError(f"{what}: expected {N_SYSCALLS} probabilities, got {len(p)}")
    if any(not math.isfinite(x) or x < 0 for x in p):
        raise ValueError(f"{what}: probabilities must be finite and non-negative")
    if abs(math.fsum(p) - 1.0) > PROB_TOL:
        raise ValueError(f"{what}: probabilities sum to {math.fsum(p)!r}, not 1")


def _cdf(p: Iterable[float]) -> tuple[list[float], int]:
    acc, out, last = 0.0, [], 0
    for i, x in enumerate(p):
        acc += x
        out.append(acc)
        if x > 0:
            last = i
    return out, last


def _draw(cdf: tuple[list[float], int], u: float) -> int:
    cum, last = cdf
    i = bisect.bisect_right(cum, u)
    return i if i <= last else last


# -- profile files ------------------------------------------------------------

def _floats(tokens: list[str], lineno: int, source: str) -> tuple[float, ...]:
    if len(tokens) != N_SYSCALLS:
        raise ProfileParseError(lineno, f"expected {N_SYSCALLS} probabilities, got {len(tokens)}", source)
    try:
        return tuple(float(t) for t in tokens)
    except ValueError as exc:
        raise ProfileParseError(lineno, str(exc), source) from None


def _arg_index(token: str, lineno: int, source: str) -> int:
    if len(token) != 4 or not token.startswith("arg") or token[3] not in "0123":
        raise ProfileParseError(lineno, f"expected arg0..arg3, got {token!r}", source)
    return int(token[3])


def _syscall(token: str, lineno: int, source: str) -> str:
    if token not in SYSCALL_ID:
        raise ProfileParseError(lineno, f"unknown syscall {token!r}", source)
    return token


def parse_profile(text: str, source: str = "") -> BehaviorProfile:
    """Parse the line-oriented profile format.

    Rows that are not listed default to the initial distribution (a job that
    reaches an unmodelled syscall restarts its behaviour).
    """
    name = kind = None
    mean_len = 500
    initial = None
    rows: dict[str, tuple[float, ...]] = {}
    pools: dict[tuple[str, int], tuple[str, ...]] = {}
    ranges: dict[tuple[str, int], tuple[int, int]] = {}
    rets: dict[str, tuple[int, int]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        key, rest = tok[0], tok[1:]
        try:
            if key == "profile":
                if len(rest) != 2 or rest[1] not in (NORMAL, ATTACK):
                    raise ProfileParseError(lineno, "expected 'profile <name> <normal|attack>'", source)
                name, kind = rest
            elif key == "len":
                mean_len = int(rest[0])
            elif key == "init":
                initial = _floats(rest, lineno, source)
            elif key == "row":
                sc = _syscall(rest[0], lineno, source)
                if sc in rows:
                    raise ProfileParseError(lineno, f"duplicate row {sc}", source)
                rows[sc] = _floats(rest[1:], lineno, source)
            elif key == "pool":
                sc = _syscall(rest[0], lineno, source)
                k = _arg_index(rest[1], lineno, source)
                values = tuple(v for v in " ".join(rest[2:]).split(",") if v)
                if not values:
                    raise ProfileParseError(lineno, "empty pool", source)
                pools[(sc, k)] = values
            elif key == "range":
                sc = _syscall(rest[0], lineno, source)
                k = _arg_index(rest[1], lineno, source)
                ranges[(sc, k)] = (int(rest[2]), int(rest[3]))
            elif key == "ret":
                sc = _syscall(rest[0], lineno, source)
                rets[sc] = (int(rest[1]), int(rest[2]))
            else:
                raise ProfileParseError(lineno, f"unknown directive {key!r}", source)
        except (IndexError, ValueError) as exc:
            if isinstance(exc, ProfileParseError):
                raise
            raise ProfileParseError(lineno, f"malformed {key} line: {exc}", source) from None
    if name is None:
        raise ProfileParseError(1, "missing 'profile' line", source)
    if initial is None:
        raise ProfileParseError(1, "missing 'init' line", source)
    transition = tuple(rows.get(sc, initial) for sc in SYSCALLS)
    try:
        return BehaviorProfile(name, kind, initial, transition, pools, ranges, rets, mean_len)
    except ValueError as exc:
        raise ProfileParseError(0, str(exc), source) from None


def render_profile(p: BehaviorProfile) -> str:
    def fl(xs: Iterable[float]) -> str:
        return " ".join(repr(float(x)) for x in xs)

    lines = [f"profile {p.name} {p.kind}", f"len {p.mean_len}", f"init {fl(p.initial)}"]
    lines += [f"row {sc} {fl(row)}" for sc, row in zip(SYSCALLS, p.transition)]
    for (sc, k), values in sorted(p.pools.items(), key=lambda kv: (SYSCALL_ID[kv[0][0]], kv[0][1])):
        lines.append(f"pool {sc} arg{k} {','.join(values)}")
    for (sc, k), (lo, hi) in sorted(p.ranges.items(), key=lambda kv: (SYSCALL_ID[kv[0][0]], kv[0][1])):
        lines.append(f"range {sc} arg{k} {lo} {hi}")
    for sc, (lo, hi) in sorted(p.rets.items(), key=lambda kv: SYSCALL_ID[kv[0]]):
        lines.append(f"ret {sc} {lo} {hi}")
    return "\n".join(lines) + "\n"


def load_profiles(directory: str | Path | None = None) -> dict[str, BehaviorProfile]:
    """The built-in catalog, extended (or overridden) by ``*.profile`` files in ``directory``."""
    catalog: dict[str, BehaviorProfile] = {}
    pkg = resources.files("gridward") / "profiles"
    for entry in sorted(pkg.iterdir(), key=lambda e: e.name):
        if entry.name.endswith(".profile"):
            prof = parse_profile(entry.read_text(encoding="utf-8"), entry.name)
            catalog[prof.name] = prof
    if directory is not None:
        for path in sorted(Path(directory).glob("*.profile")):
            prof = parse_profile(path.read_text(encoding="utf-8"), str(path))
            catalog[prof.name] = prof
    return catalog


_BUILTIN: dict[str, BehaviorProfile] | None = None


def builtin_profiles() -> dict[str, BehaviorProfile]:
    global _BUILTIN
    if _BUILTIN is None:
        _BUILTIN = load_profiles()
    return _BUILTIN


def get_profile(name: str, catalog: Mapping[str, BehaviorProfile] | None = None) -> BehaviorProfile:
    catalog = builtin_profiles() if catalog is None else catalog
    try:
        return catalog[name]
    except KeyError:
        raise KeyError(f"unknown profile {name!r}") from None


# -- generation ---------------------------------------------------------------

def default_job_id(seed: int) -> str:
    return f"job-{seed:016x}"


def _other_job(rng: SplitMix64, own: str) -> str:
    other = f"w{rng.below(1000):03d}-j{rng.below(10000):04d}"
    return other if other != own else other + "x"


def _fill(template: str, rng: SplitMix64, job_id: str) -> str:
    if "{" not in template:
        return template
    out = template.replace("{job}", job_id)
    if "{other}" in out:
        out = out.replace("{other}", _other_job(rng, job_id))
    if "{n}" in out:
        out = out.replace("{n}", str(rng.below(100)))
    return out


def generate_trace(profile: BehaviorProfile | str, seed: int, length: int,
                   job_id: str | None = None, user: str = "aliprod",
                   catalog: Mapping[str, BehaviorProfile] | None = None) -> Trace:
    """Sample ``length`` events from a profile, deterministically in (profile, seed, length).

    Draw order per event: syscall, then one draw per argument slot (plus
    template placeholders), then the return value if ranged, then the clock
    advance.
    """
    if isinstance(profile, str):
        profile = get_profile(profile, catalog)
    if length < 0:
        raise ValueError("length must be non-negative")
    job_id = job_id or default_job_id(seed)
    meta = JobMetadata(job_id, user, profile.name, seed)
    rng = SplitMix64(seed)
    templates = profile._templates
    row_cdf = profile._row_cdf
    events = []
    t = 0
    sid = -1
    for _ in range(length):
        u = rng.uniform()
        sid = _draw(profile._init_cdf if sid < 0 else row_cdf[sid], u)
        slots, ret_range = templates[sid]
        args = []
        for slot in slots:
            if isinstance(slot[0], str):
                args.append(_fill(slot[rng.below(len(slot))], rng, job_id))
            else:
                lo, hi = slot
                args.append(lo + rng.below(hi - lo + 1))
        ret = 0
        if ret_range is not None:
            lo, hi = ret_range
            ret = lo + rng.below(hi - lo + 1)
        events.append(SyscallEvent(t, 1, SYSCALLS[sid], tuple(args), ret))
        t += DT_MIN_NS + rng.below(DT_SPAN_NS)
    return Trace(meta, tuple(events))


# -- signatures ---------------------------------------------------------------

_PATH_CALLS = frozenset({"open", "stat", "access", "execve", "chmod", "chown", "getdents"})


def _touches_other_job(trace: Trace) -> bool:
    own = trace.meta.job_id
    for ev in trace.events:
        if ev.name in _PATH_CALLS and ev.args and isinstance(ev.args[0], str):
            path = ev.args[0]
            if path.startswith("/job/"):
                owner = path[5:].split("/", 1)[0]
                if owner and owner != own:
                    return True
    return False


def _opens_credentials(trace: Trace) -> bool:
    return any(ev.name == "open" and ev.args and isinstance(ev.args[0], str)
               and ev.args[0].startswith("/pilot/credentials/") for ev in trace.events)


def _connects_to_pool(trace: Trace) -> bool:
    return any(ev.name == "connect" and ev.args and isinstance(ev.args[0], str)
               and ev.args[0].startswith("stratum+tcp://") for ev in trace.events)


def _fork_storm(trace: Trace) -> bool:
    if not trace.events:
        return False
    clones = sum(1 for ev in trace.events if ev.name == "clone")
    return clones / len(trace.events) > 0.3


_ESCAPE_CALLS = frozenset({"unshare", "mount", "ptrace", "setuid"})


def _escape_attempt(trace: Trace) -> bool:
    return any(ev.name in _ESCAPE_CALLS for ev in trace.events)


SIGNATURES = {
    "credential-theft": _opens_credentials,
    "cryptominer": _connects_to_pool,
    "dos-forkbomb": _fork_storm,
    "job-tamper": _touches_other_job,
    "escape-privesc": _escape_attempt,
}


def signature_hits(trace: Trace) -> list[str]:
    """Names of attack signatures the trace exhibits."""
    return [name for name, pred in SIGNATURES.items() if pred(trace)]


# -- site ---------------------------------------------------------------------

@dataclass(frozen=True)
class SiteConfig:
    workers: int = 4
    jobs_per_worker: int = 25
    mix: Mapping[str, float] = field(default_factory=lambda: {"reco": 1.0})
    seed: int = 0
    trace_len: int = 500

    def __post_init__(self) -> None:
        if self.workers < 1 or self.jobs_per_worker < 1 or self.trace_len < 1:
            raise ValueError("workers, jobs_per_worker and trace_len must be positive")
        if not self.mix or any(p < 0 for p in self.mix.values()):
            raise ValueError("mix must be a non-empty map of non-negative probabilities")
        if abs(math.fsum(self.mix.values()) - 1.0) > PROB_TOL:
            raise ValueError(f"mix probabilities sum to {math.fsum(self.mix.values())!r}, not 1")

    @classmethod
    def from_mapping(cls, kv: Mapping[str, str]) -> "SiteConfig":
        mix = {k[4:]: float(v) for k, v in kv.items() if k.startswith("mix.")}
        args = {}
        for key in ("workers", "jobs_per_worker", "seed", "trace_len"):
            if key in kv:
                args[key] = int(kv[key], 0)
        if mix:
            args["mix"] = mix
        return cls(**args)


@dataclass
class SiteRun:
    traces: list[Trace]
    workers: dict[str, int]  # job id -> worker
    log: list[str]

    @property
    def labels(self) -> dict[str, str]:
        return {t.meta.job_id: t.meta.profile_label or "" for t in self.traces}


def job_id_for(worker: int, job: int) -> str:
    return f"w{worker:03d}-j{job:04d}"


def plan_site(config: SiteConfig, catalog: Mapping[str, BehaviorProfile] | None = None
              ) -> list[tuple[int, int, str, int]]:
    """(worker, job, profile name, job seed) for every job, in job-id order.

    Profiles are drawn from one site-level stream seeded with ``config.seed``;
    each job's trace seed comes from :func:`mix64`.
    """
    catalog = builtin_profiles() if catalog is None else catalog
    names = sorted(config.mix)
    for name in names:
        if name not in catalog:
            raise KeyError(f"mix names unknown profile {name!r}")
    cdf = _cdf([config.mix[n] for n in names])
    rng = SplitMix64(config.seed)
    plan = []
    for w in range(config.workers):
        for j in range(config.jobs_per_worker):
            name = names[_draw(cdf, rng.uniform())]
            plan.append((w, j, name, mix64(config.seed, w, j)))
    return plan


def run_site(config: SiteConfig, catalog: Mapping[str, BehaviorProfile] | None = None,
             executor=None) -> SiteRun:
    """Simulate every job of the site. ``executor`` (optional) must provide ``map``."""
    catalog = builtin_profiles() if catalog is None else catalog
    plan = plan_site(config, catalog)

    def gen(item):
        w, j, name, seed = item
        return generate_trace(catalog[name], seed, config.trace_len, job_id=job_id_for(w, j))

    mapper = executor.map if executor is not None else map
    traces = list(mapper(gen, plan))
    workers = {}
    log = []
    clock: dict[int, int] = {}
    for (w, j, name, seed), tr in zip(plan, traces):
        jid = tr.meta.job_id
        workers[jid] = w
        start = clock.get(w, 0)
        end = start + (tr.events[-1].t if tr.events else 0)
        clock[w] = end + 1
        log.append(f"{start}\t{w}\t{jid}\tstart\t{name}\t{seed}")
        log.append(f"{end}\t{w}\t{jid}\tfinish\t{len(tr.events)}")
    return SiteRun(traces, workers, log)
