"""gridward command line.

Exit codes: 0 success, 1 usage error, 2 input parse error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from gridward import detector as det
from gridward.policy import (
    NamespaceConfig,
    PolicyParseError,
    ResourceLimits,
    audit,
    enforce,
    evaluate,
    parse_policy,
)
from gridward.response import (
    Alert,
    FileSink,
    ReactionPolicy,
    decide_action,
    emit_alert,
    parse_sink,
)
from gridward.rng import mix64
from gridward.sim import (
    NORMAL,
    ProfileParseError,
    SiteConfig,
    generate_trace,
    load_profiles,
    run_site,
)
from gridward.trace import Trace, TraceParseError, parse_trace, render_trace

log = logging.getLogger("gridward")

EXIT_OK, EXIT_USAGE, EXIT_PARSE, EXIT_RUNTIME = 0, 1, 2, 3
TRAIN_SALT = 0x7A11_5EED_0000_0001
SHARED_PATHS = ("/data", "/cvmfs", "/tmp", "/usr", "/lib")


class UsageError(Exception):
    pass


class InputError(Exception):
    """Bad input file content; maps to exit code 2."""


# -- file helpers -------------------------------------------------------------

def write_atomic(path: Path, data: bytes | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: Path, obj) -> None:
    write_atomic(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def parse_kv(text: str, source: str) -> dict[str, str]:
    """key=value lines with '#' comments."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise InputError(f"{source}:{lineno}: expected key=value")
        out[key.strip()] = value.strip()
    return out


def read_traces(directory: Path) -> list[Trace]:
    directory = Path(directory)
    if not directory.is_dir():
        raise InputError(f"{directory}: not a directory")
    traces = []
    for path in sorted(directory.glob("*.jsonl")):
        try:
            traces.append(parse_trace(path.read_bytes()))
        except TraceParseError as exc:
            raise InputError(f"{path}:{exc.line}: {exc.message}") from None
    traces.sort(key=lambda t: t.meta.job_id)
    return traces


def read_policy(path: Path | None):
    if path is None:
        text = (resources.files("gridward") / "policies" / "worker.pol").read_text("utf-8")
        source = "<builtin worker.pol>"
    else:
        text = Path(path).read_text("utf-8")
        source = str(path)
    try:
        return parse_policy(text)
    except PolicyParseError as exc:
        raise InputError(f"{source}:{exc.line}: {exc.message}") from None


def read_model(path: Path) -> det.DetectorBundle:
    try:
        return det.parse_model(Path(path).read_text("utf-8"))
    except det.ModelParseError as exc:
        raise InputError(f"{path}: {exc}") from None


@contextmanager
def pool(threads: int):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            yield ex.map
    else:
        yield map


def resolve_seed(args, config: Mapping[str, str]) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("GRIDWARD_SEED")
    if env:
        try:
            return int(env, 0)
        except ValueError:
            raise UsageError(f"GRIDWARD_SEED is not an integer: {env!r}") from None
    if "seed" in config:
        return int(config["seed"], 0)
    return 0


def _opt(args, config: Mapping[str, str], name: str, conv, default):
    value = getattr(args, name, None)
    if value is not None:
        return value
    if name in config:
        try:
            return conv(config[name])
        except ValueError:
            raise InputError(f"config: bad value for {name}: {config[name]!r}") from None
    return default


def load_config(args) -> dict[str, str]:
    path = getattr(args, "config", None)
    if path is None:
        return {}
    return parse_kv(Path(path).read_text("utf-8"), str(path))


def site_config(args, config: Mapping[str, str]) -> SiteConfig:
    kv = dict(config)
    kv["seed"] = str(resolve_seed(args, config))
    for key in ("workers", "jobs_per_worker", "trace_len"):
        if getattr(args, key, None) is not None:
            kv[key] = str(getattr(args, key))
    if getattr(args, "mix", None):
        kv = {k: v for k, v in kv.items() if not k.startswith("mix.")}
        for item in args.mix:
            name, sep, p = item.partition("=")
            if not sep:
                raise UsageError(f"--mix expects PROFILE=P, got {item!r}")
            kv[f"mix.{name}"] = p
    try:
        return SiteConfig.from_mapping(kv)
    except (ValueError, TypeError) as exc:
        raise InputError(f"site config: {exc}") from None


def kinds_of(catalog) -> dict[str, str]:
    return {name: p.kind for name, p in catalog.items()}


# -- subcommands --------------------------------------------------------------

def write_site(out: Path, run, catalog) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for tr in run.traces:
        write_atomic(out / f"{tr.meta.job_id}.jsonl", render_trace(tr))
    rows = ["job\tworker\tprofile\tkind\tseed"]
    for tr in run.traces:
        label = tr.meta.profile_label or ""
        rows.append(f"{tr.meta.job_id}\t{run.workers[tr.meta.job_id]}\t{label}\t"
                    f"{catalog[label].kind}\t{tr.meta.seed}")
    write_atomic(out / "labels.tsv", "\n".join(rows) + "\n")
    write_atomic(out / "site.log", "\n".join(run.log) + "\n")


def cmd_simulate(args) -> int:
    config = load_config(args)
    catalog = load_profiles(args.profiles)
    cfg = site_config(args, config)
    threads = _opt(args, config, "threads", int, 1)
    with ThreadPoolExecutor(max_workers=threads) if threads > 1 else _null() as ex:
        run = run_site(cfg, catalog, ex)
    write_site(Path(args.out), run, catalog)
    log.info("wrote %d traces to %s", len(run.traces), args.out)
    return EXIT_OK


@contextmanager
def _null():
    yield None


def detector_options(args, config) -> dict:
    detectors = _opt(args, config, "detectors", str, ",".join(det.DETECTORS))
    return dict(
        n=_opt(args, config, "n", int, det.DEFAULT_N),
        dims=_opt(args, config, "dims", int, det.DEFAULT_DIMS),
        nu=_opt(args, config, "nu", float, det.DEFAULT_NU),
        target_fpr=_opt(args, config, "target_fpr", float, det.DEFAULT_TARGET_FPR),
        epochs=_opt(args, config, "epochs", int, det.DEFAULT_EPOCHS),
        lr=_opt(args, config, "lr", float, det.DEFAULT_LR),
        detectors=tuple(d for d in detectors.split(",") if d),
    )


def _train(traces: Sequence[Trace], opts: dict, seed: int) -> det.DetectorBundle:
    if not traces:
        raise InputError("no training traces")
    try:
        return det.train_bundle(traces, seed=seed, **opts)
    except det.DetectorError as exc:
        raise InputError(str(exc)) from None
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_train(args) -> int:
    config = load_config(args)
    traces = read_traces(Path(args.normal))
    bundle = _train(traces, detector_options(args, config), resolve_seed(args, config))
    write_atomic(Path(args.out), det.render_model(bundle))
    log.info("trained on %d traces (%d windows, %d grams); thresholds %s",
             len(traces), bundle.db.trained_on, len(bundle.db.grams), dict(bundle.thresholds))
    return EXIT_OK


def classify_all(traces: Sequence[Trace], bundle: det.DetectorBundle, threads: int):
    def one(tr):
        return det.classify(tr, bundle)

    try:
        with pool(threads) as mapper:
            return list(mapper(one, traces))
    except det.DetectorError as exc:
        raise InputError(str(exc)) from None


def results_jsonl(results) -> str:
    return "".join(json.dumps(r.to_json(), separators=(",", ":")) + "\n" for r in results)


def metrics_for(results, catalog) -> det.Metrics:
    try:
        return det.evaluate_metrics(results, kinds_of(catalog))
    except ValueError as exc:
        raise InputError(f"cannot compute metrics: {exc}") from None


def per_profile_tsv(metrics: det.Metrics) -> str:
    rows = ["profile\tkind\tflagged_fraction"]
    rows += [f"{k}\tattack\t{v:.6f}" for k, v in metrics.per_profile.items()]
    rows += [f"{k}\tnormal\t{v:.6f}" for k, v in metrics.per_profile_fpr.items()]
    return "\n".join(rows) + "\n"


def write_report(out: Path, results, catalog, thresholds, figures: Path | None) -> det.Metrics:
    metrics = metrics_for(results, catalog)
    write_json(out, metrics.to_json())
    write_atomic(out.with_suffix(".tsv"), per_profile_tsv(metrics))
    if figures is not None:
        from gridward import plotting

        plotting.score_histograms(results, kinds_of(catalog), thresholds, figures / "scores.png")
        plotting.per_profile_rates(metrics, figures / "per_profile.png")
    return metrics


def cmd_score(args) -> int:
    config = load_config(args)
    catalog = load_profiles(args.profiles)
    bundle = read_model(Path(args.model))
    traces = read_traces(Path(args.traces))
    results = classify_all(traces, bundle, _opt(args, config, "threads", int, 1))
    if args.out:
        write_atomic(Path(args.out), results_jsonl(results))
    else:
        sys.stdout.write(results_jsonl(results))
    if args.report:
        m = write_report(Path(args.report), results, catalog, bundle.thresholds,
                         Path(args.figures) if args.figures else None)
        log.info("tp=%d fp=%d tn=%d fn=%d", m.tp, m.fp, m.tn, m.fn)
    return EXIT_OK


def read_results(path: Path) -> list[det.DetectionResult]:
    results = []
    for lineno, line in enumerate(Path(path).read_text("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            results.append(det.DetectionResult.from_json(json.loads(line)))
        except (ValueError, KeyError, TypeError) as exc:
            raise InputError(f"{path}:{lineno}: bad result line: {exc}") from None
    return results


def cmd_report(args) -> int:
    catalog = load_profiles(args.profiles)
    results = read_results(Path(args.results))
    thresholds = read_model(Path(args.model)).thresholds if args.model else None
    write_report(Path(args.out), results, catalog, thresholds,
                 Path(args.figures) if args.figures else None)
    return EXIT_OK


def namespace_for(job_id: str, visible: Sequence[str] | None) -> NamespaceConfig:
    paths = tuple(visible) if visible else (f"/job/{job_id}",) + SHARED_PATHS
    return NamespaceConfig(paths)


def limits_from(args, config) -> ResourceLimits:
    d = ResourceLimits()
    try:
        return ResourceLimits(
            cpu_ms=_opt(args, config, "cpu_ms", int, d.cpu_ms),
            mem_bytes=_opt(args, config, "mem_bytes", int, d.mem_bytes),
            max_pids=_opt(args, config, "max_pids", int, d.max_pids),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def enforce_all(policy, traces, visible, limits, threads):
    def one(tr):
        return enforce(policy, namespace_for(tr.meta.job_id, visible), limits, tr)

    with pool(threads) as mapper:
        return list(mapper(one, traces))


def enforcement_outputs(out: Path, reports) -> dict[str, int]:
    lines = []
    rows = ["job\tevents_in\tevents_kept\tkilled_at\tkill_reason\tviolations"]
    reasons: dict[str, int] = {}
    for rep in reports:
        obj = rep.to_json()
        lines.append(json.dumps(obj, separators=(",", ":")))
        kill_reason = ""
        for v in rep.violations:
            reasons[v.reason] = reasons.get(v.reason, 0) + 1
            if rep.killed_at is not None and v.index == rep.killed_at:
                kill_reason = v.reason
        events_in = len(rep.verdicts) if rep.killed_at is not None else len(rep.enforced.events)
        rows.append(f"{obj['job']}\t{events_in}\t{obj['events_kept']}\t"
                    f"{'' if rep.killed_at is None else rep.killed_at}\t{kill_reason}\t"
                    f"{len(rep.violations)}")
    write_atomic(out / "enforcement.jsonl", "\n".join(lines) + "\n" if lines else "")
    write_atomic(out / "enforcement.tsv", "\n".join(rows) + "\n")
    return dict(sorted(reasons.items()))


def audit_tsv(policy) -> str:
    rep = audit(policy)
    rows = ["syscall\tclass"] + [f"{sc}\t{c}" for sc, c in rep.classes.items()]
    rows.append(f"# surface={rep.surface}")
    return "\n".join(rows) + "\n"


def cmd_enforce(args) -> int:
    config = load_config(args)
    policy = read_policy(Path(args.policy) if args.policy else None)
    traces = read_traces(Path(args.traces))
    visible = args.visible.split(",") if args.visible else None
    reports = enforce_all(policy, traces, visible, limits_from(args, config),
                          _opt(args, config, "threads", int, 1))
    out = Path(args.out)
    reasons = enforcement_outputs(out, reports)
    write_atomic(out / "audit.tsv", audit_tsv(policy))
    if args.figures:
        from gridward import plotting

        plotting.enforcement_reasons(reasons, Path(args.figures) / "violations.png")
    killed = sum(r.killed_at is not None for r in reports)
    log.info("%d traces enforced, %d killed", len(reports), killed)
    return EXIT_OK


def training_traces(cfg: SiteConfig, catalog, count: int, seed: int) -> list[Trace]:
    normals = sorted(n for n in cfg.mix if catalog[n].kind == NORMAL and cfg.mix[n] > 0)
    if not normals:
        normals = sorted(n for n, p in catalog.items() if p.kind == NORMAL)
    if not normals:
        raise InputError("no normal profiles available for training")
    salt = seed ^ TRAIN_SALT
    return [generate_trace(catalog[normals[i % len(normals)]], mix64(salt, 0, i), cfg.trace_len,
                           job_id=f"train-j{i:04d}") for i in range(count)]


def cmd_run(args) -> int:
    config = load_config(args)
    catalog = load_profiles(args.profiles)
    cfg = site_config(args, config)
    seed = cfg.seed
    threads = _opt(args, config, "threads", int, 1)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    train_jobs = _opt(args, config, "train_jobs", int, 200)
    train = training_traces(cfg, catalog, train_jobs, seed)
    for tr in train:
        write_atomic(out / "train" / f"{tr.meta.job_id}.jsonl", render_trace(tr))
    bundle = _train(train, detector_options(args, config), seed)
    write_atomic(out / "model.gim", det.render_model(bundle))

    with ThreadPoolExecutor(max_workers=threads) if threads > 1 else _null() as ex:
        site = run_site(cfg, catalog, ex)
    write_site(out / "traces", site, catalog)

    policy = read_policy(Path(args.policy) if args.policy else None)
    visible = args.visible.split(",") if args.visible else None
    reports = enforce_all(policy, site.traces, visible, limits_from(args, config), threads)
    reasons = enforcement_outputs(out, reports)

    results = classify_all(site.traces, bundle, threads)
    write_atomic(out / "results.jsonl", results_jsonl(results))

    reaction = ReactionPolicy(_opt(args, config, "warn_ratio", float, 1.5),
                              _opt(args, config, "kill_ratio", float, 3.0))
    alerts_path = out / "alerts.jsonl"
    if alerts_path.exists():
        alerts_path.unlink()
    sinks = [FileSink(alerts_path)]
    for spec in args.sink or []:
        sinks.append(parse_sink(spec))
    actions = {a: 0 for a in ("none", "alert", "suspend", "kill")}
    response_log = []
    last_delivery = None
    for tr, res in zip(site.traces, results):
        action = decide_action(res, bundle.thresholds, reaction)
        actions[action] += 1
        if action == "none":
            continue
        t_end = tr.events[-1].t if tr.events else 0
        worker = site.workers[tr.meta.job_id]
        last_delivery = emit_alert(Alert.from_result(res, action, bundle.thresholds, t_end, worker),
                                   sinks)
        response_log.append(f"{t_end}\t{worker}\t{tr.meta.job_id}\t{action}")
    if not alerts_path.exists():
        write_atomic(alerts_path, "")
    write_atomic(out / "response.log", "".join(line + "\n" for line in response_log))

    metrics = metrics_for(results, catalog)
    summary = {
        "seed": seed,
        "jobs": len(site.traces),
        "training_jobs": len(train),
        "thresholds": dict(bundle.thresholds),
        "metrics": metrics.to_json(),
        "actions": actions,
        "enforcement": {
            "killed": sum(r.killed_at is not None for r in reports),
            "violations": reasons,
        },
    }
    write_json(out / "summary.json", summary)
    write_atomic(out / "per_profile.tsv", per_profile_tsv(metrics))
    if args.figures:
        from gridward import plotting

        fig_dir = Path(args.figures)
        plotting.score_histograms(results, kinds_of(catalog), bundle.thresholds,
                                  fig_dir / "scores.png")
        plotting.per_profile_rates(metrics, fig_dir / "per_profile.png")
        plotting.enforcement_reasons(reasons, fig_dir / "violations.png")
    if last_delivery is not None:
        for status in last_delivery.statuses:
            if status.error:
                log.warning("alert sink %s: %s (buffered %d, dropped %d)", status.sink,
                            status.error, status.buffered, status.dropped)
    log.info("TPR=%s FPR=%s", metrics.tpr, metrics.fpr)
    return EXIT_OK


# -- bench --------------------------------------------------------------------

EVAL_TARGET = 1_000_000
STIDE_TARGET = 1_000_000


def bench(events: int = 200_000, seed: int = 0, repeats: int = 3) -> dict:
    """Single-threaded throughput of policy evaluation and stide scoring."""
    from gridward.sim import BUILTIN_ATTACK, BUILTIN_NORMAL, builtin_profiles

    catalog = builtin_profiles()
    names = BUILTIN_NORMAL + BUILTIN_ATTACK
    per_trace = 500
    count = max(1, events // per_trace)
    traces = [generate_trace(catalog[names[i % len(names)]], mix64(seed, 1, i), per_trace)
              for i in range(count)]
    evs = [ev for tr in traces for ev in tr.events]
    policy = read_policy(None)

    best_eval = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        for ev in evs:
            evaluate(policy, ev)
        best_eval = min(best_eval, time.perf_counter() - t0)

    normal = [generate_trace(catalog[BUILTIN_NORMAL[i % 3]], mix64(seed, 2, i), per_trace)
              for i in range(60)]
    db = det.train_stide(normal, det.DEFAULT_N)
    windows = sum(len(tr) - db.n + 1 for tr in traces)
    for tr in traces:
        tr.ids  # noqa: B018 -- id arrays are part of parsing, not scoring
    best_stide = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        for tr in traces:
            det.stide_score(db, tr)
        best_stide = min(best_stide, time.perf_counter() - t0)

    eval_rate = len(evs) / best_eval
    stide_rate = windows / best_stide
    return {
        "evaluate_events": len(evs),
        "evaluate_events_per_s": eval_rate,
        "evaluate_target": EVAL_TARGET,
        "evaluate_fraction_of_target": eval_rate / EVAL_TARGET,
        "stide_windows": windows,
        "stide_windows_per_s": stide_rate,
        "stide_target": STIDE_TARGET,
        "stide_fraction_of_target": stide_rate / STIDE_TARGET,
    }


def cmd_bench(args) -> int:
    result = bench(args.events, resolve_seed(args, {}), args.repeats)
    text = json.dumps(result, indent=2, sort_keys=True) + "\n"
    if args.out:
        write_atomic(Path(args.out), text)
    sys.stdout.write(text)
    return EXIT_OK


# -- parser -------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit 2, which is our parse-error code
        raise UsageError(message)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file; flags override it")
    p.add_argument("--seed", type=lambda s: int(s, 0), help="master seed (fallback: $GRIDWARD_SEED)")
    p.add_argument("--threads", type=int, help="worker threads (output is identical for any value)")
    p.add_argument("--profiles", help="directory of extra *.profile files")


def _site_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--workers", type=int)
    p.add_argument("--jobs-per-worker", dest="jobs_per_worker", type=int)
    p.add_argument("--trace-len", dest="trace_len", type=int)
    p.add_argument("--mix", action="append", metavar="PROFILE=P",
                   help="profile mix entry; replaces the config's mix when given")


def _detector_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n", type=int, help=f"window length (default {det.DEFAULT_N})")
    p.add_argument("--dims", "--D", dest="dims", type=int,
                   help=f"hashed feature dimensions (default {det.DEFAULT_DIMS})")
    p.add_argument("--nu", type=float)
    p.add_argument("--target-fpr", dest="target_fpr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--detectors", help="comma list of stide,lfc,ocsvm")


def _enforce_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--policy", help="policy file (default: built-in worker policy)")
    p.add_argument("--visible", help="comma list of visible path prefixes "
                   "(default: the job's own /job/<id> plus shared read-only trees)")
    p.add_argument("--cpu-ms", dest="cpu_ms", type=int)
    p.add_argument("--mem-bytes", dest="mem_bytes", type=int)
    p.add_argument("--max-pids", dest="max_pids", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gridward", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate labelled job traces for a site")
    _common(p)
    _site_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train detectors on normal traces")
    _common(p)
    _detector_flags(p)
    p.add_argument("--normal", required=True, help="directory of normal *.jsonl traces")
    p.add_argument("--out", required=True, help="model file to write")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="classify traces with a trained model")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--traces", required=True)
    p.add_argument("--out", help="results JSONL (default: stdout)")
    p.add_argument("--report", help="metrics JSON path (requires labelled traces)")
    p.add_argument("--figures", help="directory for report figures")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("enforce", help="apply a policy, namespace and limits to traces")
    _common(p)
    _enforce_flags(p)
    p.add_argument("--traces", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--figures", help="directory for report figures")
    p.set_defaults(func=cmd_enforce)

    p = sub.add_parser("run", help="simulate, enforce, score and respond end to end")
    _common(p)
    _site_flags(p)
    _detector_flags(p)
    _enforce_flags(p)
    p.add_argument("--train-jobs", dest="train_jobs", type=int)
    p.add_argument("--warn-ratio", dest="warn_ratio", type=float)
    p.add_argument("--kill-ratio", dest="kill_ratio", type=float)
    p.add_argument("--sink", action="append", help="extra alert sink: file path or tcp://host:port")
    p.add_argument("--out", required=True)
    p.add_argument("--figures", help="directory for report figures")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", help="measure evaluate and stide throughput")
    p.add_argument("--events", type=int, default=200_000)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--seed", type=lambda s: int(s, 0))
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("report", help="metrics JSON and figures from a results file")
    p.add_argument("--results", required=True)
    p.add_argument("--out", required=True, help="metrics JSON path")
    p.add_argument("--model", help="model file, to draw thresholds")
    p.add_argument("--figures", help="directory for figures")
    p.add_argument("--profiles", help="directory of extra *.profile files")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "func", None) is None:
            raise UsageError("a subcommand is required")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="gridward: %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(f"gridward: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"gridward: usage error: no such file: {exc.filename}", file=sys.stderr)
        return EXIT_USAGE
    except (InputError, ProfileParseError) as exc:
        print(f"gridward: input error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except KeyError as exc:
        print(f"gridward: input error: {exc.args[0]}", file=sys.stderr)
        return EXIT_PARSE
    except Exception as exc:  # noqa: BLE001
        print(f"gridward: runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
