"""Syscall filter policies, namespace/cgroup models and trace enforcement.

Policies are ordered first-match rule lists with an explicit default action::

    policy worker
    default allow
    kill ptrace
    deny 13 open if arg0 prefix "/pilot/credentials"
    log connect

``log`` rules never terminate the scan: they mark the event and evaluation
continues with the next rule.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import cached_property
from itertools import product
from typing import Iterable, Sequence

from gridward.trace import (
    I64_MAX,
    I64_MIN,
    MAX_ARGS,
    MAX_STR_BYTES,
    N_SYSCALLS,
    SYSCALL_ID,
    SYSCALLS,
    ArgValue,
    SyscallEvent,
    Trace,
)

ALLOW_KINDS = ("allow", "log")
BLOCK_KINDS = ("deny", "kill")
HIDDEN_ERRNO = 13
MAX_ERRNO = 133
WILDCARD = "*"


class PolicyParseError(ValueError):
    def __init__(self, line: int, message: str) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line
        self.message = message


@dataclass(frozen=True)
class FilterAction:
    kind: str
    errno: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("allow", "deny", "kill", "log"):
            raise ValueError(f"unknown action {self.kind!r}")
        if self.kind == "deny":
            if not 1 <= self.errno <= MAX_ERRNO:
                raise ValueError(f"deny errno must be in [1, {MAX_ERRNO}], got {self.errno}")
        elif self.errno:
            raise ValueError(f"{self.kind} takes no errno")

    @property
    def blocks(self) -> bool:
        return self.kind in BLOCK_KINDS

    def __str__(self) -> str:
        return f"deny {self.errno}" if self.kind == "deny" else self.kind


ALLOW = FilterAction("allow")
KILL = FilterAction("kill")
LOG = FilterAction("log")


def deny(errno: int) -> FilterAction:
    return FilterAction("deny", errno)


@dataclass(frozen=True)
class ArgPredicate:
    index: int
    op: str  # "eq-int" | "eq-str" | "prefix"
    value: ArgValue

    def __post_init__(self) -> None:
        if not 0 <= self.index < MAX_ARGS:
            raise ValueError(f"argument index must be in [0, {MAX_ARGS - 1}]")
        if self.op == "eq-int":
            if isinstance(self.value, bool) or not isinstance(self.value, int):
                raise ValueError("eq-int needs an integer value")
            if not I64_MIN <= self.value <= I64_MAX:
                raise ValueError("integer out of 64-bit range")
        elif self.op in ("eq-str", "prefix"):
            if not isinstance(self.value, str):
                raise ValueError(f"{self.op} needs a string value")
            if len(self.value.encode("utf-8")) > MAX_STR_BYTES:
                raise ValueError(f"string longer than {MAX_STR_BYTES} bytes")
        else:
            raise ValueError(f"unknown predicate op {self.op!r}")

    def holds(self, args: Sequence[ArgValue]) -> bool:
        if self.index >= len(args):
            return False
        v = args[self.index]
        if self.op == "eq-int":
            return type(v) is int and v == self.value
        if type(v) is not str:
            return False
        if self.op == "eq-str":
            return v == self.value
        return v.startswith(self.value)


@dataclass(frozen=True)
class FilterRule:
    syscall: str  # a name from SYSCALLS or "*"
    action: FilterAction
    predicates: tuple[ArgPredicate, ...] = ()

    def __post_init__(self) -> None:
        if self.syscall != WILDCARD and self.syscall not in SYSCALL_ID:
            raise ValueError(f"unknown syscall {self.syscall!r}")
        seen = [p.index for p in self.predicates]
        if len(seen) != len(set(seen)):
            raise ValueError("at most one predicate per argument index")

    def matches(self, event: SyscallEvent) -> bool:
        if self.syscall != WILDCARD and self.syscall != event.name:
            return False
        return all(p.holds(event.args) for p in self.predicates)


@dataclass(frozen=True)
class Policy:
    name: str
    default: FilterAction
    rules: tuple[FilterRule, ...] = ()

    def __post_init__(self) -> None:
        if not self.name or not _NAME_RE.fullmatch(self.name):
            raise ValueError(f"invalid policy name {self.name!r}")
        if not isinstance(self.rules, tuple):
            object.__setattr__(self, "rules", tuple(self.rules))

    @cached_property
    def _table(self) -> tuple[list, list]:
        """Per-syscall terminal rule chains plus a constant-verdict shortcut.

        ``fast[sid]`` is set when the outcome for that syscall cannot depend
        on arguments (the first applicable terminal rule has no predicates).
        """
        chains: list[list[FilterRule]] = [[] for _ in range(N_SYSCALLS)]
        for rule in self.rules:
            if rule.action.kind == "log":
                continue
            targets = range(N_SYSCALLS) if rule.syscall == WILDCARD else (SYSCALL_ID[rule.syscall],)
            for sid in targets:
                chains[sid].append(rule)
        fast: list[FilterAction | None] = []
        for chain in chains:
            if not chain:
                fast.append(self.default)
            elif not chain[0].predicates:
                fast.append(chain[0].action)
            else:
                fast.append(None)
        return chains, fast


_NAME_RE = re.compile(r'[^\s"#=]+')


# -- evaluation ---------------------------------------------------------------

def evaluate(policy: Policy, event: SyscallEvent) -> FilterAction:
    """Verdict of the first matching allow/deny/kill rule, else the default."""
    chains, fast = policy._table
    sid = SYSCALL_ID[event.name]
    verdict = fast[sid]
    if verdict is not None:
        return verdict
    args = event.args
    for rule in chains[sid]:
        for p in rule.predicates:
            if not p.holds(args):
                break
        else:
            return rule.action
    return policy.default


def logged(policy: Policy, event: SyscallEvent) -> bool:
    """True if a log rule matches before the terminal verdict is reached."""
    for rule in policy.rules:
        if rule.matches(event):
            if rule.action.kind != "log":
                return False
            return True
    return policy.default.kind == "log"


# -- grammar ------------------------------------------------------------------

_TOKEN_RE = re.compile(r'\s*(?:("(?:[^"\\]|\\.)*")|(==)|([^\s"#=]+)|(#.*)|(\S))')


def _tokenize(line: str, lineno: int) -> list[str]:
    tokens = []
    pos = 0
    while pos < len(line):
        m = _TOKEN_RE.match(line, pos)
        if m is None or m.end() == pos:
            break
        pos = m.end()
        string, eq, word, comment, junk = m.groups()
        if comment is not None:
            break
        if junk is not None:
            if junk == '"':
                raise PolicyParseError(lineno, "unterminated string")
            raise PolicyParseError(lineno, f"unexpected character {junk!r}")
        tokens.append(string or eq or word)
    return tokens


def _unquote(token: str, lineno: int) -> str:
    out = []
    body = token[1:-1]
    i = 0
    while i < len(body):
        ch = body[i]
        if ch == "\\":
            nxt = body[i + 1]
            if nxt not in '"\\':
                raise PolicyParseError(lineno, f"unsupported escape \\{nxt}")
            out.append(nxt)
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def _quote(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


_INT_RE = re.compile(r"-?\d+")


def _parse_int(token: str, lineno: int, what: str) -> int:
    if not _INT_RE.fullmatch(token):
        raise PolicyParseError(lineno, f"expected integer {what}, got {token!r}")
    return int(token)


def _parse_action(tokens: list[str], lineno: int) -> tuple[FilterAction, list[str]]:
    if not tokens:
        raise PolicyParseError(lineno, "missing action")
    word, rest = tokens[0], tokens[1:]
    if word in ("allow", "kill", "log"):
        return FilterAction(word), rest
    if word == "deny":
        if not rest:
            raise PolicyParseError(lineno, "deny needs an errno")
        if not _INT_RE.fullmatch(rest[0]) and rest[0] != WILDCARD and rest[0] not in SYSCALL_ID:
            # "deny ptraze 1": the misplaced word is reported as the syscall it was meant to be
            raise PolicyParseError(lineno, f"unknown syscall {rest[0]!r}")
        errno = _parse_int(rest[0], lineno, "errno")
        if not 1 <= errno <= MAX_ERRNO:
            raise PolicyParseError(lineno, f"errno {errno} outside [1, {MAX_ERRNO}]")
        return deny(errno), rest[1:]
    raise PolicyParseError(lineno, f"unknown action {word!r}")


def _parse_predicates(tokens: list[str], lineno: int) -> tuple[ArgPredicate, ...]:
    preds: list[ArgPredicate] = []
    i = 0
    while True:
        if len(tokens) - i < 3:
            raise PolicyParseError(lineno, "malformed predicate")
        m = re.fullmatch(r"arg(\d)", tokens[i])
        if m is None or int(m.group(1)) >= MAX_ARGS:
            raise PolicyParseError(lineno, f"malformed predicate: bad argument {tokens[i]!r}")
        index = int(m.group(1))
        op_tok, val_tok = tokens[i + 1], tokens[i + 2]
        if op_tok == "==":
            if val_tok.startswith('"'):
                op, value = "eq-str", _unquote(val_tok, lineno)
            else:
                op, value = "eq-int", _parse_int(val_tok, lineno, "value")
        elif op_tok == "prefix":
            if not val_tok.startswith('"'):
                raise PolicyParseError(lineno, "malformed predicate: prefix needs a string")
            op, value = "prefix", _unquote(val_tok, lineno)
        else:
            raise PolicyParseError(lineno, f"malformed predicate: unknown operator {op_tok!r}")
        if any(p.index == index for p in preds):
            raise PolicyParseError(lineno, f"malformed predicate: arg{index} constrained twice")
        try:
            preds.append(ArgPredicate(index, op, value))
        except ValueError as exc:
            raise PolicyParseError(lineno, f"malformed predicate: {exc}") from None
        i += 3
        if i == len(tokens):
            return tuple(preds)
        if tokens[i] != "and":
            raise PolicyParseError(lineno, f"malformed predicate: expected 'and', got {tokens[i]!r}")
        i += 1


def parse_policy(data: bytes | str) -> Policy:
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    name: str | None = None
    default: FilterAction | None = None
    rules: list[FilterRule] = []
    last = 0
    for lineno, line in enumerate(text.split("\n"), start=1):
        tokens = _tokenize(line, lineno)
        if not tokens:
            continue
        last = lineno
        if name is None:
            if tokens[0] != "policy":
                raise PolicyParseError(lineno, "missing policy header")
            if len(tokens) != 2 or not _NAME_RE.fullmatch(tokens[1]):
                raise PolicyParseError(lineno, "policy header needs exactly one name")
            name = tokens[1]
            continue
        if tokens[0] == "policy":
            raise PolicyParseError(lineno, "duplicate policy header")
        if tokens[0] == "default":
            if default is not None:
                raise PolicyParseError(lineno, "duplicate default")
            default, rest = _parse_action(tokens[1:], lineno)
            if rest:
                raise PolicyParseError(lineno, f"unexpected tokens after default: {rest}")
            continue
        action, rest = _parse_action(tokens, lineno)
        if not rest:
            raise PolicyParseError(lineno, "missing syscall")
        sc = rest[0]
        if sc != WILDCARD and sc not in SYSCALL_ID:
            raise PolicyParseError(lineno, f"unknown syscall {sc!r}")
        preds: tuple[ArgPredicate, ...] = ()
        if len(rest) > 1:
            if rest[1] != "if":
                raise PolicyParseError(lineno, f"expected 'if', got {rest[1]!r}")
            preds = _parse_predicates(rest[2:], lineno)
        rules.append(FilterRule(sc, action, preds))
    if name is None:
        raise PolicyParseError(max(last, 1), "missing policy header")
    if default is None:
        raise PolicyParseError(last, "missing default action")
    return Policy(name, default, tuple(rules))


def _render_predicate(p: ArgPredicate) -> str:
    if p.op == "eq-int":
        return f"arg{p.index} == {p.value}"
    if p.op == "eq-str":
        return f"arg{p.index} == {_quote(p.value)}"
    return f"arg{p.index} prefix {_quote(p.value)}"


def render_policy(policy: Policy) -> bytes:
    lines = [f"policy {policy.name}", f"default {policy.default}"]
    for rule in policy.rules:
        line = f"{rule.action} {rule.syscall}"
        if rule.predicates:
            line += " if " + " and ".join(_render_predicate(p) for p in rule.predicates)
        lines.append(line)
    return ("\n".join(lines) + "\n").encode("utf-8")


# -- isolation models ---------------------------------------------------------

OVERFLOW_UID = 65534


@dataclass(frozen=True)
class NamespaceConfig:
    visible_paths: tuple[str, ...]
    uid_map: tuple[tuple[int, int], ...] = ((0, 100000),)

    def __post_init__(self) -> None:
        object.__setattr__(self, "visible_paths", tuple(self.visible_paths))
        object.__setattr__(self, "uid_map", tuple(tuple(p) for p in self.uid_map))
        if not self.visible_paths:
            raise ValueError("visible_paths must be non-empty")
        for inner, host in self.uid_map:
            if host == 0:
                raise ValueError(f"container uid {inner} maps to host root")
            if inner == 0 and host < 1000:
                raise ValueError("container root must map to an unprivileged host uid (>= 1000)")

    def host_uid(self, container_uid: int) -> int:
        for inner, host in self.uid_map:
            if inner == container_uid:
                return host
        return OVERFLOW_UID

    def visible(self, path: str) -> bool:
        for prefix in self.visible_paths:
            if path == prefix:
                return True
            base = prefix if prefix.endswith("/") else prefix + "/"
            if path.startswith(base):
                return True
        return False


@dataclass(frozen=True)
class ResourceLimits:
    cpu_ms: int = 100_000
    mem_bytes: int = 4 << 30
    max_pids: int = 64

    def __post_init__(self) -> None:
        if min(self.cpu_ms, self.mem_bytes, self.max_pids) <= 0:
            raise ValueError("resource limits must be strictly positive")


PATH_SYSCALLS = frozenset({"open", "stat", "access", "execve", "chmod", "chown", "getdents"})
MEM_SYSCALLS = frozenset({"mmap", "brk"})
SPAWN_SYSCALLS = frozenset({"fork", "clone"})
REAP_SYSCALLS = frozenset({"exit", "wait"})

KILL_REASONS = frozenset({"rule-kill", "cpu-limit", "mem-limit", "pid-limit"})
CPU_MS_PER_EVENT = 1


@dataclass(frozen=True)
class Violation:
    index: int
    reason: str


@dataclass(frozen=True)
class EnforcementReport:
    enforced: Trace
    verdicts: tuple[FilterAction, ...]
    violations: tuple[Violation, ...]
    killed_at: int | None = None
    cpu_ms_used: int = 0
    mem_peak: int = 0
    pids_peak: int = 1
    logged: tuple[int, ...] = field(default=())

    def to_json(self) -> dict:
        return {
            "job": self.enforced.meta.job_id,
            "killed_at": self.killed_at,
            "events_kept": len(self.enforced.events),
            "cpu_ms_used": self.cpu_ms_used,
            "mem_peak": self.mem_peak,
            "pids_peak": self.pids_peak,
            "violations": [[v.index, v.reason] for v in self.violations],
            "logged": list(self.logged),
        }


def enforce(policy: Policy, ns: NamespaceConfig, limits: ResourceLimits,
            trace: Trace) -> EnforcementReport:
    """Run a trace through namespace, filter and resource checks in order.

    Denied events stay in the enforced trace with ``ret`` rewritten to
    ``-errno``. The first kill-class outcome truncates the trace before the
    offending event.
    """
    kept: list[SyscallEvent] = []
    verdicts: list[FilterAction] = []
    violations: list[Violation] = []
    log_hits: list[int] = []
    killed_at = None
    cpu = mem = mem_peak = 0
    pids = pids_peak = 1
    hidden = deny(HIDDEN_ERRNO)
    has_log = any(r.action.kind == "log" for r in policy.rules) or policy.default.kind == "log"

    for i, ev in enumerate(trace.events):
        name = ev.name
        if (name in PATH_SYSCALLS and ev.args and type(ev.args[0]) is str
                and not ns.visible(ev.args[0])):
            verdict = hidden
            violations.append(Violation(i, "path-hidden"))
        else:
            verdict = evaluate(policy, ev)
            if has_log and logged(policy, ev):
                log_hits.append(i)
            if verdict.kind == "deny":
                violations.append(Violation(i, "rule-deny"))
            elif verdict.kind == "kill":
                violations.append(Violation(i, "rule-kill"))
                verdicts.append(verdict)
                cpu += CPU_MS_PER_EVENT
                killed_at = i
                break

        cpu += CPU_MS_PER_EVENT
        reason = None
        if cpu > limits.cpu_ms:
            reason = "cpu-limit"
        elif verdict.kind != "deny":
            if name in MEM_SYSCALLS and ev.args and type(ev.args[0]) is int:
                mem += max(ev.args[0], 0)
                mem_peak = max(mem_peak, mem)
                if mem > limits.mem_bytes:
                    reason = "mem-limit"
            elif name in SPAWN_SYSCALLS and ev.ret >= 0:
                pids += 1
                pids_peak = max(pids_peak, pids)
                if pids > limits.max_pids:
                    reason = "pid-limit"
            elif name in REAP_SYSCALLS:
                pids = max(1, pids - 1)
        if reason is not None:
            violations.append(Violation(i, reason))
            verdicts.append(KILL)
            killed_at = i
            break

        verdicts.append(verdict)
        kept.append(ev if verdict.kind != "deny" else ev._replace(ret=-verdict.errno))

    return EnforcementReport(
        enforced=Trace(trace.meta, tuple(kept)),
        verdicts=tuple(verdicts),
        violations=tuple(violations),
        killed_at=killed_at,
        cpu_ms_used=cpu,
        mem_peak=mem_peak,
        pids_peak=pids_peak,
        logged=tuple(log_hits),
    )


# -- audit --------------------------------------------------------------------

@dataclass(frozen=True)
class AuditReport:
    classes: dict[str, str]  # syscall -> always-allowed | always-blocked | conditional

    @property
    def surface(self) -> int:
        return sum(1 for c in self.classes.values() if c == "always-allowed")

    def names(self, cls: str) -> list[str]:
        return [sc for sc in SYSCALLS if self.classes[sc] == cls]


_SUFFIXES = ("\x00", "\x01\x02", "￿", "~~gridward~~", "\x7f\x00\x7f")


def _string_representatives(eqs: set[str], prefixes: set[str]) -> set[str]:
    """One string from every equivalence class induced by eq/prefix tests."""
    reps = set(eqs) | set(prefixes)
    for base in prefixes | {""}:
        longer = [q for q in prefixes if len(q) > len(base)]
        for sfx in _SUFFIXES:
            cand = base + sfx
            if cand not in eqs and not any(cand.startswith(q) for q in longer):
                reps.add(cand)
                break
        else:
            reps.update(base + s for s in _SUFFIXES)
    return reps


def _arg_vectors(rules: Iterable[FilterRule]) -> list[tuple[ArgValue, ...]]:
    ints: dict[int, set[int]] = {}
    eqs: dict[int, set[str]] = {}
    prefixes: dict[int, set[str]] = {}
    for rule in rules:
        for p in rule.predicates:
            if p.op == "eq-int":
                ints.setdefault(p.index, set()).add(p.value)
            elif p.op == "eq-str":
                eqs.setdefault(p.index, set()).add(p.value)
            else:
                prefixes.setdefault(p.index, set()).add(p.value)
    used = set(ints) | set(eqs) | set(prefixes)
    if not used:
        return [()]
    top = max(used)
    per_index: list[list[ArgValue]] = []
    for k in range(top + 1):
        if k not in used:
            per_index.append([0])
            continue
        iv = ints.get(k, set())
        fresh = (max(iv) + 1) if iv and max(iv) < I64_MAX else (min(iv) - 1 if iv else 0)
        vals: list[ArgValue] = sorted(iv | {fresh})
        vals.extend(sorted(_string_representatives(eqs.get(k, set()), prefixes.get(k, set()))))
        per_index.append(vals)
    vectors: list[tuple[ArgValue, ...]] = []
    for length in range(top + 2):
        vectors.extend(product(*per_index[:length]))
    return vectors


def audit(policy: Policy) -> AuditReport:
    """Classify every syscall by the verdicts it can receive across all arguments.

    Arguments are enumerated over one representative per equivalence class of
    the policy's predicates, so the classification is exact.
    """
    chains, fast = policy._table
    classes = {}
    for sid, sc in enumerate(SYSCALLS):
        if fast[sid] is not None:
            outcomes = {fast[sid].blocks}
        else:
            outcomes = set()
            for args in _arg_vectors(chains[sid]):
                outcomes.add(evaluate(policy, SyscallEvent(0, 1, sc, args, 0)).blocks)
                if len(outcomes) == 2:
                    break
        if outcomes == {True}:
            classes[sc] = "always-blocked"
        elif outcomes == {False}:
            classes[sc] = "always-allowed"
        else:
            classes[sc] = "conditional"
    return AuditReport(classes)
