"""Scoring, simulation-out cross-validation and report tables."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

import numpy as np

from .core import CLASS_CODES, N_CLASSES, N_HANDS, N_STATES, DomainError, LabelTimeline, ValidationError
from .ingest import SessionBundle
from .naive import classify_session_naive
from .neural.model import ModelVariant
from .neural.train import TrainConfig, predict_session, train

log = logging.getLogger(__name__)

WORKERS_ENV = "MULTICAM_WORKERS"


class Variant(str, Enum):
    TOP_NAIVE = "top-naive"
    CLOSE_NAIVE = "close-naive"
    BOTH_NAIVE = "both-naive"
    HIGH = "high"
    LOW = "low"
    MCC = "mcc"

    @property
    def trained(self) -> bool:
        return self in (Variant.HIGH, Variant.LOW, Variant.MCC)

    @property
    def title(self) -> str:
        return _TITLES[self]


_TITLES = {
    Variant.TOP_NAIVE: "Top-view",
    Variant.CLOSE_NAIVE: "Close-up",
    Variant.BOTH_NAIVE: "Naive",
    Variant.LOW: "Low fps",
    Variant.HIGH: "High fps",
    Variant.MCC: "MCC",
}
# column order of the aggregate table
VARIANT_ORDER = (Variant.TOP_NAIVE, Variant.CLOSE_NAIVE, Variant.BOTH_NAIVE,
                 Variant.LOW, Variant.HIGH, Variant.MCC)

AGGREGATES = ("accuracy", "f1_weighted", "f1_macro", "f1_macro_min100", "f1_macro_min200")
AGGREGATE_TITLES = {
    "accuracy": "Accuracy",
    "f1_weighted": "F1 weighted",
    "f1_macro": "F1 macro",
    "f1_macro_min100": "F1 macro >100",
    "f1_macro_min200": "F1 macro >200",
}

# published aggregate results, one value per column of VARIANT_ORDER
REFERENCE_RESULTS = {
    "accuracy": (0.88, 0.81, 0.90, 0.90, 0.92, 0.93),
    "f1_weighted": (0.88, 0.83, 0.90, 0.91, 0.93, 0.94),
    "f1_macro": (0.49, 0.41, 0.50, 0.50, 0.53, 0.53),
    "f1_macro_min100": (0.63, 0.55, 0.64, 0.66, 0.68, 0.70),
    "f1_macro_min200": (0.71, 0.64, 0.73, 0.75, 0.78, 0.79),
}


def parse_variants(names: str | Sequence) -> list[Variant]:
    items = names.split(",") if isinstance(names, str) else list(names)
    items = [v.value if isinstance(v, Enum) else str(v).strip() for v in items]
    try:
        chosen = {Variant(v) for v in items if v}
    except ValueError as exc:
        raise ValidationError(f"{exc}; choose from {[v.value for v in Variant]}", field="variants") from None
    if not chosen:
        raise ValidationError("no variants given", field="variants")
    return [v for v in VARIANT_ORDER if v in chosen]


@dataclass
class MetricsReport:
    occurrence: np.ndarray  # (20,) ground-truth hand-frames per class
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    accuracy: float
    f1_weighted: float
    f1_macro: float
    f1_macro_min100: float
    f1_macro_min200: float
    confusion: np.ndarray | None = None

    def aggregate(self, name: str) -> float:
        return getattr(self, name)

    def to_dict(self) -> dict:
        return {
            "classes": {
                code: {"occurrence": int(self.occurrence[i]), "precision": float(self.precision[i]),
                       "recall": float(self.recall[i]), "f1": float(self.f1[i])}
                for i, code in enumerate(CLASS_CODES)
            },
            **{name: float(getattr(self, name)) for name in AGGREGATES},
        }


def confusion_matrix(truth, pred) -> np.ndarray:
    """20x20 counts, rows = true class, columns = predicted class, block-diagonal by hand."""
    t = np.asarray(truth.labels if isinstance(truth, LabelTimeline) else truth, dtype=np.int64)
    p = np.asarray(pred.labels if isinstance(pred, LabelTimeline) else pred, dtype=np.int64)
    if t.shape != p.shape or t.ndim != 2 or t.shape[0] != N_HANDS:
        raise DomainError(f"truth {t.shape} and prediction {p.shape} must both be (4, n)")
    hand = np.arange(N_HANDS)[:, None]
    rows = (hand * N_STATES + t).ravel()
    cols = (hand * N_STATES + p).ravel()
    return np.bincount(rows * N_CLASSES + cols, minlength=N_CLASSES * N_CLASSES).reshape(N_CLASSES, N_CLASSES)


def _safe_div(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.divide(a, b, out=np.zeros(a.shape, float), where=b != 0)


def macro_f1(f1: np.ndarray, occurrence: np.ndarray, min_occurrence: int = 0) -> float:
    keep = occurrence >= min_occurrence
    # fsum is correctly rounded, so aggregates do not depend on summation order
    return math.fsum(f1[keep]) / int(keep.sum()) if keep.any() else 0.0


def score(truth, pred) -> MetricsReport:
    """Hand-frame accuracy plus per-class and aggregate precision/recall/F1.

    Undefined ratios are 0. Macro F1 averages all 20 classes; the thresholded variants
    drop classes with fewer than 100 / 200 ground-truth hand-frames.
    """
    cm = confusion_matrix(truth, pred)
    tp = np.diag(cm).astype(float)
    occurrence = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    precision = _safe_div(tp, predicted.astype(float))
    recall = _safe_div(tp, occurrence.astype(float))
    f1 = _safe_div(2 * precision * recall, precision + recall)
    total = cm.sum()
    return MetricsReport(
        occurrence=occurrence,
        precision=precision,
        recall=recall,
        f1=f1,
        accuracy=float(tp.sum() / total) if total else 0.0,
        f1_weighted=math.fsum(f1 * occurrence) / float(occurrence.sum()) if total else 0.0,
        f1_macro=macro_f1(f1, occurrence),
        f1_macro_min100=macro_f1(f1, occurrence, 100),
        f1_macro_min200=macro_f1(f1, occurrence, 200),
        confusion=cm,
    )


def mean_report(reports: Sequence[MetricsReport]) -> MetricsReport:
    """Average of per-fold metrics; occurrences are summed."""
    if not reports:
        raise DomainError("cannot average zero reports")
    stack = lambda name: np.mean([getattr(r, name) for r in reports], axis=0)
    return MetricsReport(
        occurrence=np.sum([r.occurrence for r in reports], axis=0),
        precision=stack("precision"),
        recall=stack("recall"),
        f1=stack("f1"),
        **{name: float(stack(name)) for name in AGGREGATES},
    )


def make_folds(session_ids: Sequence[str], k: int = 4, seed: int = 0) -> list[tuple[list[str], list[str]]]:
    """Simulation-out folds: whole sessions are held out, each exactly once.

    Assignment depends only on the set of ids and the seed, not on their input order.
    """
    ids = sorted(session_ids)
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate session ids", field="session_ids")
    if k < 2:
        raise ValidationError(f"k={k}: need at least 2 folds for held-out data", field="k")
    if k > len(ids):
        raise ValidationError(f"k={k} exceeds the number of sessions ({len(ids)})", field="k")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(7,)))
    shuffled = [ids[i] for i in rng.permutation(len(ids))]
    folds = []
    for chunk in np.array_split(np.arange(len(ids)), k):
        test = sorted(shuffled[i] for i in chunk)
        test_set = set(test)
        folds.append(([s for s in ids if s not in test_set], test))
    return folds


def fold_train_seed(seed: int, fold: int, variant: Variant) -> int:
    seq = np.random.SeedSequence(entropy=seed, spawn_key=(fold, VARIANT_ORDER.index(variant)))
    return int(seq.generate_state(1, np.uint32)[0])


@dataclass
class ExperimentResult:
    folds: list[tuple[list[str], list[str]]]
    per_fold: dict[Variant, list[MetricsReport]] = field(default_factory=dict)
    loss_history: dict[Variant, list[list[float]]] = field(default_factory=dict)

    @property
    def variants(self) -> list[Variant]:
        return [v for v in VARIANT_ORDER if v in self.per_fold]

    def mean(self, variant: Variant | str) -> MetricsReport:
        return mean_report(self.per_fold[Variant(variant)])

    def to_dict(self) -> dict:
        return {
            "folds": [{"train": tr, "test": te} for tr, te in self.folds],
            "variants": {
                v.value: {
                    "mean": self.mean(v).to_dict(),
                    "per_fold": [r.to_dict() for r in self.per_fold[v]],
                }
                for v in self.variants
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"


def _evaluate_task(args):
    fold, variant, train_sessions, test_sessions, train_cfg = args
    losses: list[float] = []
    if variant.trained:
        result = train(train_sessions, train_cfg, ModelVariant(variant.value))
        losses = result.loss_history
        preds = [predict_session(result.params, s) for s in test_sessions]
    else:
        cams = variant.value.split("-")[0]
        preds = [classify_session_naive(s, cams) for s in test_sessions]
    truth = np.concatenate([s.truth.labels for s in test_sessions], axis=1)
    return fold, variant, score(truth, np.concatenate(preds, axis=1)), losses


def run_experiment(sessions: Sequence[SessionBundle], variants: Sequence[Variant | str],
                   train_cfg: TrainConfig | None = None, k: int = 4, seed: int = 0,
                   workers: int | None = None) -> ExperimentResult:
    """Cross-validate every variant; trained variants get a fresh model per fold.

    Each fold is scored over all frames of its held-out sessions, pooled; the reported
    figure for a variant is the mean over folds.
    """
    variants = parse_variants(variants)
    for s in sessions:
        if s.truth is None:
            raise ValidationError(f"session {s.session_id} has no ground truth", field="truth")
    if any(v.trained for v in variants) and train_cfg is None:
        raise ValidationError("trained variants requested but training is not enabled", field="variants")
    by_id = {s.session_id: s for s in sessions}
    folds = make_folds(list(by_id), k, seed)
    tasks = []
    for i, (tr, te) in enumerate(folds):
        for v in variants:
            cfg = replace(train_cfg, seed=fold_train_seed(train_cfg.seed, i, v)) if v.trained else None
            tasks.append((i, v, [by_id[s] for s in tr], [by_id[s] for s in te], cfg))
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1"))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_evaluate_task, tasks))
    else:
        outcomes = []
        for task in tasks:
            outcomes.append(_evaluate_task(task))
            log.info("fold %d %s: accuracy %.4f", task[0], task[1].value, outcomes[-1][2].accuracy)
    result = ExperimentResult(folds)
    for fold, variant, report, losses in sorted(outcomes, key=lambda o: (o[0], VARIANT_ORDER.index(o[1]))):
        result.per_fold.setdefault(variant, []).append(report)
        result.loss_history.setdefault(variant, []).append(losses)
    return result


def _fmt(x: float) -> str:
    return f"{x:.3f}"


def align_table(rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = []
    for j, r in enumerate(rows):
        cells = [r[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(r[1:], widths[1:])]
        lines.append("  ".join(cells).rstrip())
        if j == 0:
            lines.append("-" * len(lines[0]))
    return "\n".join(lines) + "\n"


def csv_table(rows: list[list[str]]) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def aggregate_rows(means: dict[Variant, MetricsReport], with_reference: bool = False) -> list[list[str]]:
    """Rows of the aggregate table: one per metric, one column per variant."""
    variants = [v for v in VARIANT_ORDER if v in means]
    header = ["Metric"]
    for v in variants:
        header.append(v.title)
        if with_reference:
            header.append(f"{v.title} (ref)")
    rows = [header]
    for name in AGGREGATES:
        row = [AGGREGATE_TITLES[name]]
        for v in variants:
            row.append(_fmt(means[v].aggregate(name)))
            if with_reference:
                row.append(f"{REFERENCE_RESULTS[name][VARIANT_ORDER.index(v)]:.2f}")
        rows.append(row)
    return rows


def per_class_rows(means: dict[Variant, MetricsReport]) -> list[list[str]]:
    """Rows of the per-class table in class-id order: frames, then PR/RE/F1 per variant."""
    variants = [v for v in VARIANT_ORDER if v in means]
    header = ["Class", "Frames"]
    for v in variants:
        header += [f"{v.title} PR", f"{v.title} RE", f"{v.title} F1"]
    rows = [header]
    occurrence = next(iter(means.values())).occurrence
    for i, code in enumerate(CLASS_CODES):
        row = [code, str(int(occurrence[i]))]
        for v in variants:
            m = means[v]
            row += [_fmt(m.precision[i]), _fmt(m.recall[i]), _fmt(m.f1[i])]
        rows.append(row)
    return rows


def render_reports(result: ExperimentResult, with_reference: bool = False) -> dict[str, str]:
    """All report files keyed by file name: aligned text, CSV and JSON."""
    means = {v: result.mean(v) for v in result.variants}
    agg = aggregate_rows(means, with_reference)
    cls = per_class_rows(means)
    return {
        "aggregate.txt": align_table(agg),
        "aggregate.csv": csv_table(agg),
        "per_class.txt": align_table(cls),
        "per_class.csv": csv_table(cls),
        "results.json": result.to_json(),
    }


def means_from_json(text: str) -> dict[Variant, MetricsReport]:
    """Rebuild mean reports from a ``results.json`` written by ``render_reports``."""
    obj = json.loads(text)
    out = {}
    for name, body in obj["variants"].items():
        m = body["mean"]
        classes = [m["classes"][code] for code in CLASS_CODES]
        out[Variant(name)] = MetricsReport(
            occurrence=np.array([c["occurrence"] for c in classes]),
            precision=np.array([c["precision"] for c in classes]),
            recall=np.array([c["recall"] for c in classes]),
            f1=np.array([c["f1"] for c in classes]),
            **{k: m[k] for k in AGGREGATES},
        )
    return out


def reference_rows() -> list[list[str]]:
    rows = [["Metric"] + [v.title for v in VARIANT_ORDER]]
    for name in AGGREGATES:
        rows.append([AGGREGATE_TITLES[name]] + [f"{x:.2f}" for x in REFERENCE_RESULTS[name]])
    return rows


__all__ = [
    "Variant", "MetricsReport", "ExperimentResult", "score", "confusion_matrix", "mean_report",
    "make_folds", "run_experiment", "render_reports", "REFERENCE_RESULTS",
]
