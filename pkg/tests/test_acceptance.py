"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""

import json
import math
import os
import random
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from gridward.cli import bench
from gridward.detector import calibrate, classify, evaluate_metrics, stide_score, train_bundle, train_stide
from gridward.policy import (
    ALLOW,
    KILL,
    LOG,
    FilterRule,
    NamespaceConfig,
    Policy,
    ResourceLimits,
    deny,
    enforce,
    evaluate,
    parse_policy,
    render_policy,
)
from gridward.sim import BUILTIN_ATTACK, BUILTIN_NORMAL, builtin_profiles, generate_trace
from gridward.trace import SYSCALLS, JobMetadata, SyscallEvent, Trace, parse_trace, render_trace

from gen import (
    first_resource_breach,
    gradient_fd_error,
    random_event,
    random_policy,
    random_predicates,
    random_rich_trace,
    random_stide_trace,
    reference_evaluate,
)

pytestmark = pytest.mark.acceptance


@pytest.fixture()
def report(capsys):
    def emit(number, name, ok, detail):
        with capsys.disabled():
            print(f"\n[acceptance {number}] {'PASS' if ok else 'FAIL'} {name}: {detail}")
    return emit


def test_1_policy_evaluator_oracle(report):
    rng = random.Random(1)
    pairs = [(random_policy(rng), random_event(rng)) for _ in range(10_000)]
    t0 = time.perf_counter()
    agree = sum(evaluate(p, e) == reference_evaluate(p, e) for p, e in pairs)
    dt = time.perf_counter() - t0
    ok = agree == len(pairs) and dt < 10
    report(1, "policy evaluator oracle", ok, f"{agree}/{len(pairs)} agree in {dt:.2f}s")
    assert ok


def _set_oracle(train, test, n):
    seen = set()
    for tr in train:
        names = [e.name for e in tr.events]
        for i in range(len(names) - n + 1):
            seen.add(tuple(names[i:i + n]))
    names = [e.name for e in test.events]
    total = len(names) - n + 1
    misses = 0
    for i in range(total):
        if tuple(names[i:i + n]) not in seen:
            misses += 1
    return misses / total


def test_2_stide_oracle(report):
    rng = random.Random(2)
    t0 = time.perf_counter()
    agree = 0
    for k in range(1000):
        n = (2, 3, 5)[k % 3]
        alphabet = rng.sample(range(32), rng.randint(2, 6))
        train = [random_stide_trace(rng, rng.randint(n, 500), alphabet) for _ in range(rng.randint(1, 3))]
        test = random_stide_trace(rng, rng.randint(n, 500), alphabet + rng.sample(range(32), 1))
        agree += stide_score(train_stide(train, n), test).mismatch_rate == _set_oracle(train, test, n)
    dt = time.perf_counter() - t0
    ok = agree == 1000 and dt < 10
    report(2, "stide oracle", ok, f"{agree}/1000 exact in {dt:.2f}s")
    assert ok


def test_3_end_to_end_detection(report):
    t0 = time.perf_counter()
    cat = builtin_profiles()
    train = [generate_trace(cat[BUILTIN_NORMAL[i % 3]], 1000 + i, 500) for i in range(200)]
    bundle = train_bundle(train, detectors=("stide", "lfc", "ocsvm"), target_fpr=0.01, seed=0)
    held = [generate_trace(cat[BUILTIN_NORMAL[i % 3]], 50_000 + i, 500) for i in range(200)]
    attacks = [generate_trace(cat[name], 90_000 + i, 500) for name in BUILTIN_ATTACK for i in range(50)]
    results = [classify(t, bundle) for t in held + attacks]
    m = evaluate_metrics(results, {n: p.kind for n, p in cat.items()})
    dt = time.perf_counter() - t0
    ok = m.fpr <= 0.05 and all(m.per_profile[a] >= 0.9 for a in BUILTIN_ATTACK) and dt < 60
    detail = ", ".join(f"{a}={m.per_profile[a]:.2f}" for a in BUILTIN_ATTACK)
    report(3, "end-to-end detection", ok, f"FPR={m.fpr:.3f}; TPR {detail}; {dt:.1f}s")
    assert ok


def test_4_gradient_check(report):
    rng = np.random.default_rng(4)
    worst = max(gradient_fd_error(rng) for _ in range(100))
    ok = worst <= 1e-4
    report(4, "one-class gradient check", ok, f"max relative error {worst:.2e} over 100 points")
    assert ok


def test_5_calibration_guarantee(report):
    rng = np.random.default_rng(5)
    worst = -math.inf
    cases = 0
    for k in range(100):
        m = int(rng.integers(1, 2000))
        kind = k % 3
        if kind == 0:
            scores = rng.normal(size=m)
        elif kind == 1:
            scores = np.round(rng.exponential(size=m), 1)  # heavy ties
        else:
            scores = rng.integers(0, 5, size=m).astype(float)
        for fpr in (0.01, 0.05, 0.1):
            thr = calibrate(scores.tolist(), fpr)
            worst = max(worst, float(np.mean(scores > thr)) - fpr)
            cases += 1
    ok = worst <= 0
    report(5, "calibration guarantee", ok, f"{cases} cases, max (FPR - target) = {worst:.4f}")
    assert ok


def test_6_enforcement_truncation(report):
    rng = random.Random(6)
    names = tuple(s for s in SYSCALLS if s != "ptrace")
    ns = NamespaceConfig(("/",))
    ample = ResourceLimits(10**9, 10**15, 10**6)
    planted_ok = 0
    for _ in range(1000):
        rules = [FilterRule("ptrace", KILL)]
        for _ in range(rng.randint(0, 6)):
            action = rng.choice([ALLOW, LOG, deny(rng.randint(1, 133))])
            rules.append(FilterRule(rng.choice(names + ("*",)), action, random_predicates(rng)))
        rng.shuffle(rules)
        # non-kill rules may sit in front as long as none can swallow ptrace
        rules = [r for r in rules if r.syscall != "*" or r.action.kind == "log"] or rules
        if rules[0].syscall != "ptrace":
            rules.remove(FilterRule("ptrace", KILL))
            rules.insert(rng.randint(0, len(rules)), FilterRule("ptrace", KILL))
        policy = Policy("planted", rng.choice([ALLOW, deny(1), LOG]), tuple(rules))
        length = rng.randint(1, 200)
        k = rng.randrange(length)
        events = [random_event(rng, i, names) for i in range(length)]
        events[k] = SyscallEvent(k, 1, "ptrace", (16, 4242), 0)
        rep = enforce(policy, ns, ample, Trace(JobMetadata("j", "u"), tuple(events)))
        planted_ok += rep.killed_at == k and len(rep.enforced.events) == k
    resource_ok = 0
    res_names = ("clone", "fork", "exit", "wait", "mmap", "brk", "read", "write")
    for _ in range(1000):
        events = []
        for i in range(rng.randint(1, 150)):
            name = rng.choice(res_names)
            args = (rng.randint(0, 8192),) if name in ("mmap", "brk") else ()
            events.append(SyscallEvent(i, 1, name, args, rng.choice([-1, 0, 321])))
        tr = Trace(JobMetadata("j", "u"), tuple(events))
        limits = ResourceLimits(rng.randint(5, 200), rng.randint(1000, 100_000), rng.randint(1, 8))
        rep = enforce(Policy("p", ALLOW), ns, limits, tr)
        got = None if rep.killed_at is None else (rep.killed_at, rep.violations[-1].reason)
        resource_ok += got == first_resource_breach(tr, limits)
    ok = planted_ok == 1000 and resource_ok == 1000
    report(6, "enforcement truncation", ok,
           f"planted kills {planted_ok}/1000, resource kills {resource_ok}/1000")
    assert ok


def test_7_round_trips(report):
    rng = random.Random(7)
    pol_ok = trace_ok = 0
    for _ in range(1000):
        p = random_policy(rng)
        text = render_policy(p)
        again = parse_policy(text)
        pol_ok += again == p and render_policy(again) == text
    for _ in range(1000):
        t = random_rich_trace(rng)
        data = render_trace(t)
        again = parse_trace(data)
        trace_ok += again == t and render_trace(again) == data
    ok = pol_ok == 1000 and trace_ok == 1000
    report(7, "round trips", ok, f"policies {pol_ok}/1000, traces {trace_ok}/1000")
    assert ok


def _tree(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def _cli(*args):
    env = {k: v for k, v in os.environ.items() if k != "GRIDWARD_SEED"}
    proc = subprocess.run([sys.executable, "-m", "gridward.cli", *args], capture_output=True,
                          text=True, env=env)
    assert proc.returncode == 0, proc.stderr
    return proc


def test_8_determinism(report, tmp_path):
    cfg = tmp_path / "site.cfg"
    cfg.write_text("workers=4\njobs_per_worker=25\ntrace_len=500\n"
                   "mix.reco=0.3\nmix.montecarlo=0.25\nmix.merge=0.25\nmix.cryptominer=0.04\n"
                   "mix.credential-theft=0.04\nmix.dos-forkbomb=0.04\nmix.job-tamper=0.04\n"
                   "mix.escape-privesc=0.04\n")
    sims, runs = [], []
    for i, threads in enumerate(("1", "1", "4")):
        _cli("simulate", "--config", str(cfg), "--seed", "42", "--threads", threads,
             "--out", str(tmp_path / f"sim{i}"))
        _cli("run", "--config", str(cfg), "--seed", "42", "--threads", threads,
             "--out", str(tmp_path / f"run{i}"), "--figures", str(tmp_path / f"run{i}" / "figures"))
        sims.append(_tree(tmp_path / f"sim{i}"))
        runs.append(_tree(tmp_path / f"run{i}"))
    ok = sims[0] == sims[1] == sims[2] and runs[0] == runs[1] == runs[2]
    report(8, "determinism", ok,
           f"simulate {len(sims[0])} files, run {len(runs[0])} files, identical across 3 invocations "
           "(threads 1, 1, 4)" if ok else "output trees differ")
    assert ok


def test_9_throughput(report):
    result = bench(200_000, 0, 3)
    ev, sw = result["evaluate_events_per_s"], result["stide_windows_per_s"]
    ok = ev >= 0.2 * 1_000_000 and sw >= 0.2 * 1_000_000
    report(9, "throughput", ok, f"evaluate {ev:,.0f} events/s, stide {sw:,.0f} windows/s "
           f"(targets 1,000,000; floor 20%)")
    assert ok
