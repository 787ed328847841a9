"""Scoring and metrics for external turn-taking predictors.

Consumes per-session probability streams (p_shift per frame), scores them at
event anchors by summing over a 200 ms window, tunes a decision threshold on
validation folds, and assembles per condition/SNR/fold reports with F1
variants, balanced accuracy, paired t-tests, and 95% confidence intervals.
"""
from __future__ import annotations

import csv
import math
import string
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import t as t_dist

SHIFT_LABEL = 1
HOLD_LABEL = 0

METRIC_SET_SHIFT_HOLD = "shift-vs-hold"
METRIC_SET_SHIFT_MIDTURN = "shift-vs-midturn"
METRIC_SETS = (METRIC_SET_SHIFT_HOLD, METRIC_SET_SHIFT_MIDTURN)

ANCHOR_PRE_SILENCE = "pre-silence"
ANCHOR_IN_SILENCE = "in-silence"

THRESHOLD_GRID_POINTS = 101


class WindowOutOfRange(ValueError):
    """Scoring window does not fit inside the probability stream."""


class PartitionOverlapError(ValueError):
    """Validation and test partitions share events."""


@dataclass
class ProbabilityStream:
    """Per-frame shift probability for one session."""

    p_shift: np.ndarray
    frame_rate_hz: float = 20.0

    def __post_init__(self):
        self.p_shift = np.asarray(self.p_shift, dtype=np.float64)
        if self.p_shift.size and (self.p_shift.min() < 0 or self.p_shift.max() > 1):
            raise ValueError("p_shift values must lie in [0, 1]")
        if self.frame_rate_hz <= 0:
            raise ValueError("frame_rate_hz must be positive")

    @property
    def duration_s(self) -> float:
        return self.p_shift.size / self.frame_rate_hz


def read_stream_csv(path: str | Path, frame_rate_hz: float = 20.0) -> ProbabilityStream:
    """CSV with columns t_s, p_shift on a regular frame grid."""
    ts, ps = [], []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            ts.append(float(rec["t_s"]))
            ps.append(float(rec["p_shift"]))
    if len(ts) >= 2:
        step = ts[1] - ts[0]
        if step > 0:
            frame_rate_hz = 1.0 / step
    return ProbabilityStream(np.asarray(ps), frame_rate_hz)


def write_stream_csv(path: str | Path, stream: ProbabilityStream) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_s", "p_shift"])
        for i, p in enumerate(stream.p_shift):
            writer.writerow([f"{i / stream.frame_rate_hz:.6f}", f"{p:.10g}"])


def score_event(stream: ProbabilityStream, event_time_s: float,
                window_ms: float = 200.0) -> float:
    """Sum of p_shift over frames in [event_time - window, event_time).

    For a pre-silence anchor pass the silence onset; for an in-silence
    anchor pass onset + window.
    """
    rate = stream.frame_rate_hz
    window_s = window_ms / 1000.0
    lo = event_time_s - window_s
    i_lo = int(math.ceil(lo * rate - 1e-9))
    i_hi = int(math.ceil(event_time_s * rate - 1e-9))
    if i_lo < 0 or i_hi > stream.p_shift.size:
        raise WindowOutOfRange(
            f"window [{lo:.3f}, {event_time_s:.3f}) outside stream "
            f"of {stream.duration_s:.3f} s"
        )
    return float(np.sum(stream.p_shift[i_lo:i_hi]))


def anchor_time(silence_start_s: float, anchor: str, window_ms: float = 200.0) -> float:
    """Scoring time for an event under the chosen window anchoring."""
    if anchor == ANCHOR_PRE_SILENCE:
        return silence_start_s
    if anchor == ANCHOR_IN_SILENCE:
        return silence_start_s + window_ms / 1000.0
    raise ValueError(f"unknown anchor {anchor!r}")


def balanced_accuracy(predictions: np.ndarray, truth: np.ndarray) -> float:
    """Mean of per-class recalls over the classes present in `truth`."""
    predictions = np.asarray(predictions)
    truth = np.asarray(truth)
    recalls = []
    for cls in (HOLD_LABEL, SHIFT_LABEL):
        mask = truth == cls
        if np.any(mask):
            recalls.append(float(np.mean(predictions[mask] == cls)))
    return float(np.mean(recalls)) if recalls else 0.0


def tune_threshold(scores, labels) -> float:
    """Grid-search threshold maximizing balanced accuracy.

    The grid is {0, 0.01*max, ..., max} over the observed scores; an event
    is called a shift when its score >= threshold. Ties resolve to the
    smallest threshold.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.size == 0 or labels.size != scores.size:
        raise ValueError("scores and labels must be equal-length and nonempty")
    classes = set(np.unique(labels).tolist())
    if classes != {HOLD_LABEL, SHIFT_LABEL}:
        raise ValueError("threshold tuning needs both classes present")
    max_score = float(np.max(scores))
    grid = np.linspace(0.0, max_score, THRESHOLD_GRID_POINTS)
    best_t, best_acc = 0.0, -1.0
    for t in grid:
        acc = balanced_accuracy((scores >= t).astype(int), labels)
        if acc > best_acc + 1e-15:
            best_t, best_acc = float(t), acc
    return best_t


def classification_metrics(predictions, truth) -> tuple[float, float, float, float]:
    """(f1_weighted, f1_hold, f1_shift, balanced_accuracy).

    Labels are 1 for shift and 0 for hold. Weighted F1 is the
    support-weighted mean of the per-class F1 scores; zero-division cases
    score 0.
    """
    predictions = np.asarray(predictions)
    truth = np.asarray(truth)
    if truth.size == 0 or predictions.size != truth.size:
        raise ValueError("predictions and truth must be equal-length and nonempty")

    def f1_for(cls: int) -> float:
        tp = float(np.sum((predictions == cls) & (truth == cls)))
        fp = float(np.sum((predictions == cls) & (truth != cls)))
        fn = float(np.sum((predictions != cls) & (truth == cls)))
        denom = 2 * tp + fp + fn
        return 2 * tp / denom if denom > 0 else 0.0

    f1_hold = f1_for(HOLD_LABEL)
    f1_shift = f1_for(SHIFT_LABEL)
    n_hold = float(np.sum(truth == HOLD_LABEL))
    n_shift = float(np.sum(truth == SHIFT_LABEL))
    f1_weighted = (n_hold * f1_hold + n_shift * f1_shift) / (n_hold + n_shift)
    return f1_weighted, f1_hold, f1_shift, balanced_accuracy(predictions, truth)


_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def normalize_tokens(words) -> list[str]:
    """Case-fold and strip punctuation; drop tokens that vanish."""
    out = []
    for w in words:
        token = str(w).casefold().translate(_PUNCT_TABLE)
        if token:
            out.append(token)
    return out


def edit_distance(ref: list[str], hyp: list[str]) -> int:
    """Levenshtein distance with two rolling rows."""
    if not ref:
        return len(hyp)
    if not hyp:
        return len(ref)
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, start=1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, start=1):
            cost = 0 if r == h else 1
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost)
        prev = cur
    return prev[-1]


def wer(ref_words, hyp_words) -> float:
    """Word error rate: edit distance over the reference length, on
    case-folded punctuation-stripped tokens. Unclamped; the reporting layer
    clamps at 1.0."""
    ref = normalize_tokens(ref_words)
    hyp = normalize_tokens(hyp_words)
    if not ref:
        raise ValueError("empty reference")
    return edit_distance(ref, hyp) / len(ref)


def fold_ttest(acc_a, acc_b) -> tuple[float, float]:
    """(t, two-sided p): paired t-test when the lists match fold-for-fold in
    length, Welch's otherwise. Zero variance of the paired differences gives
    p=1 when the means agree, else a degenerate (+/-inf, 0) result."""
    a = np.asarray(acc_a, dtype=np.float64)
    b = np.asarray(acc_b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise ValueError("need at least two folds per side")
    if a.size == b.size:
        d = a - b
        n = d.size
        sd = float(np.std(d, ddof=1))
        mean = float(np.mean(d))
        if sd == 0.0:
            if mean == 0.0:
                return 0.0, 1.0
            return math.copysign(math.inf, mean), 0.0
        t = mean / (sd / math.sqrt(n))
        p = 2.0 * float(t_dist.sf(abs(t), df=n - 1))
        return t, p
    va, vb = float(np.var(a, ddof=1)), float(np.var(b, ddof=1))
    na, nb = a.size, b.size
    denom = va / na + vb / nb
    if denom == 0.0:
        if float(np.mean(a)) == float(np.mean(b)):
            return 0.0, 1.0
        return math.copysign(math.inf, float(np.mean(a) - np.mean(b))), 0.0
    t = (float(np.mean(a)) - float(np.mean(b))) / math.sqrt(denom)
    df = denom**2 / ((va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1))
    p = 2.0 * float(t_dist.sf(abs(t), df=df))
    return t, p


def confidence_interval(values, level: float = 0.95) -> tuple[float, float]:
    """t-distribution CI for the mean with n-1 degrees of freedom."""
    v = np.asarray(values, dtype=np.float64)
    mean = float(np.mean(v))
    if v.size < 2:
        return mean, mean
    half = float(t_dist.ppf(0.5 + level / 2, df=v.size - 1)) * float(
        np.std(v, ddof=1)
    ) / math.sqrt(v.size)
    return mean - half, mean + half


# ---------------------------------------------------------------------------
# report assembly


@dataclass(frozen=True)
class ScoredEvent:
    """One scored anchor: an event or mid-turn point with its summed score."""

    session_id: str
    metric_set: str
    condition: str
    snr_db: float | None
    fold: int
    split: str  # val | test
    anchor_t_s: float
    label: int  # 1 shift, 0 hold/mid-turn
    score: float


@dataclass
class ReportRow:
    metric_set: str
    condition: str
    snr_db: float | None
    fold: int
    threshold: float
    f1_weighted: float
    f1_hold: float
    f1_shift: float
    bal_acc: float
    n_shift: int
    n_hold: int


@dataclass
class AggregateRow:
    metric_set: str
    condition: str
    snr_db: float | None
    n_folds: int
    bal_acc_mean: float
    bal_acc_std: float
    bal_acc_ci_low: float
    bal_acc_ci_high: float
    f1_weighted_mean: float
    f1_weighted_std: float


@dataclass
class EvalReport:
    rows: list[ReportRow] = field(default_factory=list)
    aggregates: list[AggregateRow] = field(default_factory=list)
    n_dropped: int = 0

    def fold_accuracies(self, metric_set: str, condition: str,
                        snr_db: float | None) -> list[float]:
        return [r.bal_acc for r in self.rows
                if (r.metric_set, r.condition, r.snr_db) == (metric_set, condition, snr_db)]


def _snr_key(snr_db: float | None):
    return math.inf if snr_db is None else snr_db


def build_report(metric_set: str, scored: list[ScoredEvent],
                 n_dropped: int = 0) -> EvalReport:
    """Tune thresholds on validation scores per (condition, snr, fold) and
    evaluate on the test partition; aggregates are across folds."""
    records = [s for s in scored if s.metric_set == metric_set]
    if not records:
        raise ValueError(f"no scored events for metric set {metric_set!r}")

    val_keys = {(s.session_id, s.anchor_t_s, s.condition, s.snr_db)
                for s in records if s.split == "val"}
    test_keys = {(s.session_id, s.anchor_t_s, s.condition, s.snr_db)
                 for s in records if s.split == "test"}
    shared = val_keys & test_keys
    if shared:
        raise PartitionOverlapError(
            f"{len(shared)} events appear in both validation and test "
            f"partitions, e.g. {sorted(shared)[0]}"
        )

    groups: dict[tuple, dict[str, list[ScoredEvent]]] = {}
    for s in records:
        groups.setdefault((s.condition, s.snr_db), {"val": [], "test": []})[s.split].append(s)

    report = EvalReport(n_dropped=n_dropped)
    for (condition, snr_db) in sorted(groups, key=lambda k: (k[0], _snr_key(k[1]))):
        parts = groups[(condition, snr_db)]
        test = sorted(parts["test"], key=lambda s: (s.session_id, s.anchor_t_s))
        if not test:
            raise ValueError(f"no test events for {condition} @ {snr_db}")
        test_scores = np.asarray([s.score for s in test])
        test_labels = np.asarray([s.label for s in test])
        folds = sorted({s.fold for s in parts["val"]})
        if not folds:
            raise ValueError(f"no validation events for {condition} @ {snr_db}")
        for fold in folds:
            val = [s for s in parts["val"] if s.fold == fold]
            threshold = tune_threshold([s.score for s in val], [s.label for s in val])
            preds = (test_scores >= threshold).astype(int)
            f1w, f1h, f1s, bal = classification_metrics(preds, test_labels)
            report.rows.append(ReportRow(
                metric_set, condition, snr_db, fold, threshold,
                f1w, f1h, f1s, bal,
                int(np.sum(test_labels == SHIFT_LABEL)),
                int(np.sum(test_labels == HOLD_LABEL)),
            ))
        accs = report.fold_accuracies(metric_set, condition, snr_db)
        f1ws = [r.f1_weighted for r in report.rows
                if (r.metric_set, r.condition, r.snr_db) == (metric_set, condition, snr_db)]
        lo, hi = confidence_interval(accs)
        report.aggregates.append(AggregateRow(
            metric_set, condition, snr_db, len(accs),
            float(np.mean(accs)), float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0,
            lo, hi,
            float(np.mean(f1ws)), float(np.std(f1ws, ddof=1)) if len(f1ws) > 1 else 0.0,
        ))
    return report


def _fmt_snr(snr_db: float | None) -> str:
    return "" if snr_db is None else f"{snr_db:g}"


def report_to_csv(report: EvalReport, path: str | Path, config_hash: str = "") -> None:
    """Per-fold rows followed by a separate .aggregate.csv next to it."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        if config_hash:
            fh.write(f"# config_hash={config_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(["metric_set", "condition", "snr_db", "fold", "threshold",
                         "f1_weighted", "f1_hold", "f1_shift", "bal_acc",
                         "n_shift", "n_hold"])
        for r in report.rows:
            writer.writerow([r.metric_set, r.condition, _fmt_snr(r.snr_db), r.fold,
                             f"{r.threshold:.10g}", f"{r.f1_weighted:.6f}",
                             f"{r.f1_hold:.6f}", f"{r.f1_shift:.6f}",
                             f"{r.bal_acc:.6f}", r.n_shift, r.n_hold])
    agg_path = path.with_suffix(".aggregate.csv")
    with open(agg_path, "w", newline="") as fh:
        if config_hash:
            fh.write(f"# config_hash={config_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(["metric_set", "condition", "snr_db", "n_folds",
                         "bal_acc_mean", "bal_acc_std", "bal_acc_ci_low",
                         "bal_acc_ci_high", "f1_weighted_mean", "f1_weighted_std"])
        for a in report.aggregates:
            writer.writerow([a.metric_set, a.condition, _fmt_snr(a.snr_db), a.n_folds,
                             f"{a.bal_acc_mean:.6f}", f"{a.bal_acc_std:.6f}",
                             f"{a.bal_acc_ci_low:.6f}", f"{a.bal_acc_ci_high:.6f}",
                             f"{a.f1_weighted_mean:.6f}", f"{a.f1_weighted_std:.6f}"])


def read_config_hash(path: str | Path) -> str:
    with open(path) as fh:
        first = fh.readline()
    if first.startswith("# config_hash="):
        return first.strip().split("=", 1)[1]
    return ""
