"""Anomaly detection over syscall sequences, trained on normal jobs only.

Two independent detectors are combined by OR:

* stide: the set of length-n windows seen in normal traces; a trace is scored
  by its fraction of unseen windows (mismatch rate) and by the densest burst of
  unseen windows in any 20-window frame (locality frame count, LFC).
* a linear one-class model over hashed n-gram count vectors, trained by
  subgradient descent on the nu-parameterised one-class objective.

Thresholds are calibrated to a target false-positive rate on normal scores.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from gridward.rng import SplitMix64
from gridward.trace import (
    MAX_CODE_N,
    Trace,
    decode_gram,
    encode_gram,
    window_codes,
)

DEFAULT_N = 5
DEFAULT_DIMS = 4096
DEFAULT_NU = 0.1
DEFAULT_FRAME = 20
DEFAULT_TARGET_FPR = 0.01
DEFAULT_EPOCHS = 30
DEFAULT_LR = 0.01
DEFAULT_FOLDS = 5
MAX_EVIDENCE = 10
DETECTORS = ("stide", "lfc", "ocsvm")
# Thresholds are floored here so score/threshold ratios stay defined.
MIN_THRESHOLD = 1e-9

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


class DetectorError(ValueError):
    """Raised for unusable detector inputs (e.g. traces with no windows)."""


# -- stide --------------------------------------------------------------------

@dataclass(frozen=True)
class NGramDb:
    n: int
    grams: frozenset[tuple[int, ...]]
    trained_on: int

    def __post_init__(self) -> None:
        if not 1 <= self.n <= MAX_CODE_N:
            raise ValueError(f"n must be in [1, {MAX_CODE_N}]")
        if any(len(g) != self.n for g in self.grams):
            raise ValueError("every gram must have arity n")
        codes = np.array(sorted(encode_gram(g) for g in self.grams), dtype=np.uint64)
        object.__setattr__(self, "_codes", codes)

    def __contains__(self, gram: tuple[int, ...]) -> bool:
        return gram in self.grams

    def known(self, codes: np.ndarray) -> np.ndarray:
        """Boolean mask: which window codes are in the database."""
        db = self._codes
        if db.size == 0:
            return np.zeros(codes.shape, dtype=bool)
        idx = np.searchsorted(db, codes)
        np.minimum(idx, db.size - 1, out=idx)
        return db[idx] == codes


def train_stide(traces: Iterable[Trace], n: int = DEFAULT_N) -> NGramDb:
    codes = []
    total = 0
    for tr in traces:
        c = window_codes(tr.ids, n)
        total += c.size
        codes.append(c)
    if total == 0:
        raise DetectorError(f"no training windows: every trace is shorter than n={n}")
    uniq = np.unique(np.concatenate(codes))
    return NGramDb(n, frozenset(decode_gram(int(c), n) for c in uniq), total)


class StideScore(NamedTuple):
    mismatch_rate: float
    lfc_score: float
    evidence: list[tuple[int, ...]]


def _lfc(mismatch: np.ndarray, frame: int) -> float:
    if mismatch.size <= frame:
        return float(mismatch.sum()) / mismatch.size
    csum = np.concatenate(([0], np.cumsum(mismatch, dtype=np.int64)))
    return float((csum[frame:] - csum[:-frame]).max()) / frame


def stide_score(db: NGramDb, trace: Trace, frame: int = DEFAULT_FRAME) -> StideScore:
    codes = window_codes(trace.ids, db.n)
    if codes.size == 0:
        raise DetectorError(
            f"trace {trace.meta.job_id} has {len(trace)} events, fewer than n={db.n}")
    unseen = ~db.known(codes)
    misses = int(unseen.sum())
    evidence: list[tuple[int, ...]] = []
    if misses:
        vals, counts = np.unique(codes[unseen], return_counts=True)
        order = np.lexsort((vals, -counts))[:MAX_EVIDENCE]
        evidence = [decode_gram(int(vals[i]), db.n) for i in order]
    return StideScore(misses / codes.size, _lfc(unseen, frame), evidence)


# -- hashed features ----------------------------------------------------------

def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h = ((h ^ b) * FNV_PRIME) & _MASK64
    return h


def _fnv1a64_windows(ids: np.ndarray, n: int) -> np.ndarray:
    count = len(ids) - n + 1
    h = np.full(count, FNV_OFFSET, dtype=np.uint64)
    prime = np.uint64(FNV_PRIME)
    ids = np.asarray(ids, dtype=np.uint64)
    for k in range(n):
        h ^= ids[k:k + count]
        h *= prime
    return h


@dataclass(frozen=True)
class HashedFeaturizer:
    n: int = DEFAULT_N
    dims: int = DEFAULT_DIMS

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.dims & (self.dims - 1) or not (1 << 10) <= self.dims <= (1 << 16):
            raise ValueError("dims must be a power of two in [2^10, 2^16]")

    def buckets(self, trace: Trace) -> np.ndarray:
        """Bucket index of every window: FNV-1a over the window's id bytes, mod dims."""
        if len(trace) < self.n:
            raise DetectorError(
                f"trace {trace.meta.job_id} has {len(trace)} events, fewer than n={self.n}")
        return (_fnv1a64_windows(trace.ids, self.n) & np.uint64(self.dims - 1)).astype(np.int64)


def featurize(trace: Trace, f: HashedFeaturizer) -> np.ndarray:
    counts = np.bincount(f.buckets(trace), minlength=f.dims).astype(np.float64)
    return counts / np.linalg.norm(counts)


# -- one-class linear model ---------------------------------------------------

@dataclass(frozen=True)
class OneClassLinearModel:
    w: np.ndarray
    rho: float
    nu: float

    def __post_init__(self) -> None:
        if not 0 < self.nu < 1:
            raise ValueError("nu must be in (0, 1)")
        if not (np.all(np.isfinite(self.w)) and math.isfinite(self.rho)):
            raise ValueError("model parameters must be finite")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, OneClassLinearModel):
            return NotImplemented
        return (self.rho == other.rho and self.nu == other.nu
                and np.array_equal(self.w, other.w))

    __hash__ = None  # type: ignore[assignment]


def objective(w: np.ndarray, rho: float, xs: np.ndarray, nu: float) -> float:
    """½‖w‖² + (1/(nu·m))·Σ max(0, rho − w·x) − rho."""
    slack = np.maximum(0.0, rho - xs @ w)
    return 0.5 * float(w @ w) + float(slack.sum()) / (nu * len(xs)) - rho


def subgradient(w: np.ndarray, rho: float, xs: np.ndarray, nu: float) -> tuple[np.ndarray, float]:
    """A subgradient of :func:`objective`; the gradient wherever no margin is exactly 0."""
    active = (rho - xs @ w) > 0
    scale = 1.0 / (nu * len(xs))
    gw = w - scale * xs[active].sum(axis=0)
    grho = scale * int(active.sum()) - 1.0
    return gw, grho


def train_ocsvm(xs: np.ndarray | Sequence[np.ndarray], nu: float = DEFAULT_NU,
                epochs: int = DEFAULT_EPOCHS, lr: float = DEFAULT_LR, seed: int = 0,
                history: list[float] | None = None) -> OneClassLinearModel:
    """Stochastic subgradient descent from w=0, rho=0.

    Step t uses ``lr / (1 + t/m)``; sample order is reshuffled each epoch by
    splitmix64(seed); the returned parameters are the average of the iterates
    over the final 10% of updates. Should that average score worse on the
    objective than the starting point, the starting point is returned instead.
    If ``history`` is given, the objective at each epoch's mean iterate is
    appended to it.
    """
    if not 0 < nu < 1:
        raise ValueError("nu must be in (0, 1)")
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or len(xs) == 0:
        raise ValueError("need a non-empty 2-D array of training vectors")
    if epochs < 1 or lr <= 0:
        raise ValueError("epochs must be >= 1 and lr > 0")
    m, dims = xs.shape
    w = np.zeros(dims)
    rho = 0.0
    total = epochs * m
    avg_from = total - max(1, math.ceil(0.1 * total))
    w_sum = np.zeros(dims)
    rho_sum = 0.0
    inv_nu = 1.0 / nu
    rng = SplitMix64(seed)
    order = list(range(m))
    t = 0
    for _ in range(epochs):
        rng.shuffle(order)
        ep_w = np.zeros(dims)
        ep_rho = 0.0
        for i in order:
            eta = lr / (1.0 + t / m)
            x = xs[i]
            active = rho - float(w @ x) > 0
            w *= 1.0 - eta
            if active:
                w += (eta * inv_nu) * x
                rho -= eta * (inv_nu - 1.0)
            else:
                rho += eta
            t += 1
            if t > avg_from:
                w_sum += w
                rho_sum += rho
            if history is not None:
                ep_w += w
                ep_rho += rho
        if history is not None:
            history.append(objective(ep_w / m, ep_rho / m, xs, nu))
    k = total - avg_from
    w_avg, rho_avg = w_sum / k, rho_sum / k
    if objective(w_avg, rho_avg, xs, nu) > objective(np.zeros(dims), 0.0, xs, nu):
        return OneClassLinearModel(np.zeros(dims), 0.0, nu)
    return OneClassLinearModel(w_avg, rho_avg, nu)


def ocsvm_score(model: OneClassLinearModel, x: np.ndarray) -> float:
    """rho − w·x; positive means outside the learned region."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != model.w.shape:
        raise ValueError(f"dimension mismatch: model has {model.w.shape[0]}, vector has {x.shape}")
    return model.rho - float(model.w @ x)


# -- calibration --------------------------------------------------------------

def calibrate(normal_scores: Sequence[float], target_fpr: float = DEFAULT_TARGET_FPR) -> float:
    """Nearest-rank (1 − target_fpr) quantile: the ⌈(1 − fpr)·m⌉-th smallest score."""
    if not 0 < target_fpr < 1:
        raise ValueError("target_fpr must be in (0, 1)")
    scores = sorted(float(s) for s in normal_scores)
    if not scores:
        raise ValueError("no scores to calibrate on")
    m = len(scores)
    # round() guards against 0.95*100 landing a hair above an integer.
    rank = max(1, math.ceil(round((1.0 - target_fpr) * m, 9)))
    return scores[min(rank, m) - 1]


# -- bundle -------------------------------------------------------------------

@dataclass(frozen=True)
class DetectorBundle:
    db: NGramDb
    featurizer: HashedFeaturizer
    ocsvm: OneClassLinearModel | None
    thresholds: Mapping[str, float]
    target_fpr: float = DEFAULT_TARGET_FPR
    frame: int = DEFAULT_FRAME

    def __post_init__(self) -> None:
        if self.featurizer.n != self.db.n:
            raise ValueError("featurizer and n-gram database disagree on n")
        for name in self.thresholds:
            if name not in DETECTORS:
                raise ValueError(f"unknown detector {name!r}")
        if "ocsvm" in self.thresholds and self.ocsvm is None:
            raise ValueError("ocsvm threshold given without a model")
        if self.ocsvm is not None and "ocsvm" not in self.thresholds:
            raise ValueError("ocsvm model given without a threshold")

    @property
    def enabled(self) -> tuple[str, ...]:
        return tuple(d for d in DETECTORS if d in self.thresholds)


@dataclass
class DetectionResult:
    job_id: str
    mismatch_rate: float
    lfc_score: float
    ocsvm_score: float | None
    verdict: str
    evidence: list[tuple[int, ...]] = field(default_factory=list)
    truth: str | None = None

    @property
    def scores(self) -> dict[str, float]:
        out = {"stide": self.mismatch_rate, "lfc": self.lfc_score}
        if self.ocsvm_score is not None:
            out["ocsvm"] = self.ocsvm_score
        return out

    def to_json(self) -> dict:
        return {
            "job": self.job_id,
            "truth": self.truth or "",
            "verdict": self.verdict,
            "scores": self.scores,
            "evidence": [list(g) for g in self.evidence],
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "DetectionResult":
        scores = obj["scores"]
        return cls(
            job_id=obj["job"],
            mismatch_rate=float(scores["stide"]),
            lfc_score=float(scores["lfc"]),
            ocsvm_score=float(scores["ocsvm"]) if "ocsvm" in scores else None,
            verdict=obj["verdict"],
            evidence=[tuple(g) for g in obj.get("evidence", [])],
            truth=obj.get("truth") or None,
        )


def _scores(trace: Trace, db: NGramDb, featurizer: HashedFeaturizer,
            model: OneClassLinearModel | None, frame: int) -> tuple[StideScore, float | None]:
    st = stide_score(db, trace, frame)
    oc = ocsvm_score(model, featurize(trace, featurizer)) if model is not None else None
    return st, oc


def classify(trace: Trace, bundle: DetectorBundle) -> DetectionResult:
    st, oc = _scores(trace, bundle.db, bundle.featurizer, bundle.ocsvm, bundle.frame)
    result = DetectionResult(trace.meta.job_id, st.mismatch_rate, st.lfc_score, oc,
                             "normal", st.evidence, trace.meta.profile_label)
    scores = result.scores
    if any(scores[d] > thr for d, thr in bundle.thresholds.items()):
        result.verdict = "malicious"
    return result


def train_bundle(traces: Sequence[Trace], n: int = DEFAULT_N, dims: int = DEFAULT_DIMS,
                 nu: float = DEFAULT_NU, target_fpr: float = DEFAULT_TARGET_FPR,
                 epochs: int = DEFAULT_EPOCHS, lr: float = DEFAULT_LR, seed: int = 0,
                 detectors: Sequence[str] = DETECTORS, folds: int = DEFAULT_FOLDS,
                 frame: int = DEFAULT_FRAME) -> DetectorBundle:
    """Train both detectors on normal traces and calibrate their thresholds.

    Calibration scores are out-of-fold: trace i is scored by detectors trained
    without fold ``i % folds``. In-sample stide scores are identically zero and
    would calibrate every threshold to 0.
    """
    traces = list(traces)
    for d in detectors:
        if d not in DETECTORS:
            raise ValueError(f"unknown detector {d!r}")
    short = [t.meta.job_id for t in traces if len(t) < n]
    if short:
        raise DetectorError(
            f"{len(short)} training trace(s) shorter than n={n} (first: {short[0]}); "
            "they yield zero windows")
    featurizer = HashedFeaturizer(n, dims)
    use_oc = "ocsvm" in detectors
    db = train_stide(traces, n)
    xs = np.array([featurize(t, featurizer) for t in traces]) if use_oc else None
    model = train_ocsvm(xs, nu, epochs, lr, seed) if use_oc else None

    k = min(folds, len(traces))
    oof: dict[str, list[float]] = {d: [] for d in detectors}
    if k < 2:
        fold_sets = [(list(range(len(traces))), list(range(len(traces))))]
    else:
        fold_sets = []
        for f in range(k):
            held = [i for i in range(len(traces)) if i % k == f]
            kept = [i for i in range(len(traces)) if i % k != f]
            fold_sets.append((kept, held))
    for kept, held in fold_sets:
        fdb = train_stide([traces[i] for i in kept], n)
        fmodel = train_ocsvm(xs[kept], nu, epochs, lr, seed) if use_oc else None
        for i in held:
            st = stide_score(fdb, traces[i], frame)
            if "stide" in oof:
                oof["stide"].append(st.mismatch_rate)
            if "lfc" in oof:
                oof["lfc"].append(st.lfc_score)
            if use_oc:
                oof["ocsvm"].append(ocsvm_score(fmodel, xs[i]))
    thresholds = {d: max(calibrate(oof[d], target_fpr), MIN_THRESHOLD) for d in detectors}
    return DetectorBundle(db, featurizer, model, thresholds, target_fpr, frame)


# -- metrics ------------------------------------------------------------------

@dataclass
class Metrics:
    tp: int
    fp: int
    tn: int
    fn: int
    per_profile: dict[str, float]
    per_profile_fpr: dict[str, float]

    @property
    def tpr(self) -> float | None:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else None

    @property
    def fpr(self) -> float | None:
        return self.fp / (self.fp + self.tn) if self.fp + self.tn else None

    @property
    def precision(self) -> float | None:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else None

    def to_json(self) -> dict:
        return {
            "tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn,
            "tpr": self.tpr, "fpr": self.fpr, "precision": self.precision,
            "per_profile": self.per_profile,
            "per_profile_fpr": self.per_profile_fpr,
        }


def evaluate_metrics(results: Sequence[DetectionResult], kinds: Mapping[str, str]) -> Metrics:
    """Confusion counts with attacks as the positive class.

    ``kinds`` maps a profile label to "normal" or "attack".
    """
    if not results:
        raise ValueError("no results to evaluate")
    tp = fp = tn = fn = 0
    hit: dict[str, list[int]] = {}
    for r in results:
        if not r.truth:
            raise ValueError(f"result for {r.job_id} has no ground-truth label")
        if r.truth not in kinds:
            raise ValueError(f"result for {r.job_id}: unknown profile label {r.truth!r}")
        attack = kinds[r.truth] == "attack"
        flagged = r.verdict == "malicious"
        if attack:
            tp += flagged
            fn += not flagged
        else:
            fp += flagged
            tn += not flagged
        stats = hit.setdefault(r.truth, [0, 0])
        stats[0] += flagged
        stats[1] += 1
    per_profile = {k: v[0] / v[1] for k, v in sorted(hit.items()) if kinds[k] == "attack"}
    per_fpr = {k: v[0] / v[1] for k, v in sorted(hit.items()) if kinds[k] != "attack"}
    return Metrics(tp, fp, tn, fn, per_profile, per_fpr)


# -- model file ---------------------------------------------------------------

MODEL_MAGIC = "gridward-model v1"


def _f(x: float) -> str:
    return format(float(x), ".17g")


def render_model(bundle: DetectorBundle) -> str:
    db = bundle.db
    lines = [f"{MODEL_MAGIC} n={db.n} D={bundle.featurizer.dims}", "[stide]",
             f"trained_on {db.trained_on}"]
    lines += [" ".join(map(str, g)) for g in sorted(db.grams)]
    if bundle.ocsvm is not None:
        m = bundle.ocsvm
        lines += ["[ocsvm]", f"nu {_f(m.nu)}", f"rho {_f(m.rho)}"]
        lines += [f"{i} {_f(m.w[i])}" for i in np.flatnonzero(m.w)]
    lines.append("[thresholds]")
    lines += [f"{d} {_f(bundle.thresholds[d])}" for d in bundle.enabled]
    lines.append(f"target_fpr {_f(bundle.target_fpr)}")
    if bundle.frame != DEFAULT_FRAME:
        lines.append(f"frame {bundle.frame}")
    return "\n".join(lines) + "\n"


class ModelParseError(ValueError):
    def __init__(self, line: int, message: str) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


def parse_model(text: str) -> DetectorBundle:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ModelParseError(1, "empty model file")
    head = lines[0].split()
    if " ".join(head[:2]) != MODEL_MAGIC or len(head) != 4:
        raise ModelParseError(1, f"expected '{MODEL_MAGIC} n=<n> D=<D>'")
    try:
        n = int(head[2].removeprefix("n="))
        dims = int(head[3].removeprefix("D="))
    except ValueError:
        raise ModelParseError(1, "bad n/D in header") from None
    section = None
    grams: list[tuple[int, ...]] = []
    trained_on = 0
    nu = rho = None
    weights: dict[int, float] = {}
    thresholds: dict[str, float] = {}
    target_fpr = DEFAULT_TARGET_FPR
    frame = DEFAULT_FRAME
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        if line.startswith("["):
            section = line.strip()
            if section not in ("[stide]", "[ocsvm]", "[thresholds]"):
                raise ModelParseError(lineno, f"unknown section {section}")
            continue
        tok = line.split()
        try:
            if section == "[stide]":
                if tok[0] == "trained_on":
                    trained_on = int(tok[1])
                else:
                    gram = tuple(int(x) for x in tok)
                    if len(gram) != n:
                        raise ModelParseError(lineno, f"gram arity {len(gram)} != n={n}")
                    grams.append(gram)
            elif section == "[ocsvm]":
                if tok[0] == "nu":
                    nu = float(tok[1])
                elif tok[0] == "rho":
                    rho = float(tok[1])
                else:
                    idx = int(tok[0])
                    if not 0 <= idx < dims:
                        raise ModelParseError(lineno, f"weight index {idx} out of range")
                    weights[idx] = float(tok[1])
            elif section == "[thresholds]":
                if tok[0] == "target_fpr":
                    target_fpr = float(tok[1])
                elif tok[0] == "frame":
                    frame = int(tok[1])
                elif tok[0] in DETECTORS:
                    thresholds[tok[0]] = float(tok[1])
                else:
                    raise ModelParseError(lineno, f"unknown threshold {tok[0]!r}")
            else:
                raise ModelParseError(lineno, "content outside any section")
        except (IndexError, ValueError) as exc:
            if isinstance(exc, ModelParseError):
                raise
            raise ModelParseError(lineno, f"malformed line: {line!r}") from None
    model = None
    if nu is not None or rho is not None or weights:
        if nu is None or rho is None:
            raise ModelParseError(len(lines), "[ocsvm] needs both nu and rho")
        w = np.zeros(dims)
        for i, v in weights.items():
            w[i] = v
        model = OneClassLinearModel(w, rho, nu)
    try:
        return DetectorBundle(NGramDb(n, frozenset(grams), trained_on),
                              HashedFeaturizer(n, dims), model, thresholds, target_fpr, frame)
    except ValueError as exc:
        raise ModelParseError(len(lines), str(exc)) from None
