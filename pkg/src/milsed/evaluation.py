"""Event-based and tagging metrics, correlation analysis, overlap accounting.

Event matching follows the collar rule: a prediction matches a reference
iff the onset difference is within the onset collar and the offset
difference is within max(offset collar, offset percentage x reference
length). Matching is greedy, one-to-one, in reference-onset order, taking
the earliest-onset unmatched compatible prediction; on small instances
this provably equals optimal bipartite matching (see the tests).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class MatchConfig:
    """Collar tolerances for event matching."""

    onset_collar_s: float = 0.2
    offset_collar_s: float = 0.2
    offset_pct: float = 0.2

    def __post_init__(self):
        if min(self.onset_collar_s, self.offset_collar_s, self.offset_pct) < 0:
            raise DataError("collar values must be >= 0")


class MatchCounts(NamedTuple):
    tp: int
    fp: int
    fn: int


class ClassScore(NamedTuple):
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f_score: float  # percent


def _compatible(ref, pred, cfg: MatchConfig) -> bool:
    offset_collar = max(cfg.offset_collar_s, cfg.offset_pct * (ref.offset - ref.onset))
    return (abs(pred.onset - ref.onset) <= cfg.onset_collar_s
            and abs(pred.offset - ref.offset) <= offset_collar)


def match_events(ref, pred, cfg: MatchConfig = MatchConfig()):
    """Per-class TP/FP/FN counts for one file.

    Returns a dict mapping each class label present in either list to a
    :class:`MatchCounts`.
    """
    labels = {e.label for e in ref} | {e.label for e in pred}
    counts = {}
    for label in labels:
        refs = sorted((e for e in ref if e.label == label), key=lambda e: e.onset)
        preds = sorted((e for e in pred if e.label == label), key=lambda e: e.onset)
        matched = [False] * len(preds)
        tp = 0
        for r in refs:
            for i, p in enumerate(preds):
                if matched[i]:
                    continue
                if _compatible(r, p, cfg):
                    matched[i] = True
                    tp += 1
                    break
        counts[label] = MatchCounts(tp=tp, fp=len(preds) - tp, fn=len(refs) - tp)
    return counts


def _f_from_counts(tp, fp, fn):
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if tp == 0:
        return precision, recall, 0.0
    return precision, recall, 200.0 * precision * recall / (precision + recall)


@dataclass
class EvalReport:
    """Per-class and macro event-based scores.

    The macro F is the unweighted mean over classes present in the
    reference or the predictions; ``per_file`` optionally holds the raw
    per-file match counts.
    """

    per_class: dict
    macro_f_score: float
    per_file: dict | None = field(default=None, repr=False)

    def to_json_dict(self):
        return {
            "macro_f_score": self.macro_f_score,
            "per_class": {
                str(label): {
                    "tp": s.tp, "fp": s.fp, "fn": s.fn,
                    "precision": s.precision, "recall": s.recall,
                    "f_score": s.f_score,
                }
                for label, s in self.per_class.items()
            },
        }

    def format_table(self):
        rows = [("class", "tp", "fp", "fn", "precision", "recall", "f_score")]
        for label in sorted(self.per_class, key=str):
            s = self.per_class[label]
            rows.append((str(label), str(s.tp), str(s.fp), str(s.fn),
                         f"{s.precision:.3f}", f"{s.recall:.3f}",
                         f"{s.f_score:.2f}"))
        rows.append(("macro", "", "", "", "", "", f"{self.macro_f_score:.2f}"))
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        return "\n".join(
            "  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
            for row in rows
        )


def _as_file_map(events):
    if isinstance(events, dict):
        return events
    return {"": list(events)}


def event_f_score(ref, pred, cfg: MatchConfig = MatchConfig(),
                  include_per_file: bool = False) -> EvalReport:
    """Event-based F-scores (percent) aggregated over files.

    ``ref`` and ``pred`` are either single event lists or mappings of
    filename -> event list.
    """
    ref_map = _as_file_map(ref)
    pred_map = _as_file_map(pred)
    totals = {}
    per_file = {} if include_per_file else None
    for filename in sorted(set(ref_map) | set(pred_map), key=str):
        counts = match_events(ref_map.get(filename, []),
                              pred_map.get(filename, []), cfg)
        if include_per_file:
            per_file[filename] = counts
        for label, c in counts.items():
            prev = totals.get(label, MatchCounts(0, 0, 0))
            totals[label] = MatchCounts(prev.tp + c.tp, prev.fp + c.fp,
                                        prev.fn + c.fn)
    per_class = {}
    for label, c in totals.items():
        precision, recall, f = _f_from_counts(c.tp, c.fp, c.fn)
        per_class[label] = ClassScore(c.tp, c.fp, c.fn, precision, recall, f)
    macro = (sum(s.f_score for s in per_class.values()) / len(per_class)
             if per_class else 0.0)
    return EvalReport(per_class=per_class, macro_f_score=macro, per_file=per_file)


@dataclass
class TaggingReport:
    per_class: dict
    macro_f_score: float

    def to_json_dict(self):
        return {
            "macro_f_score": self.macro_f_score,
            "per_class": {
                str(c): {"tp": s.tp, "fp": s.fp, "fn": s.fn, "f_score": s.f_score}
                for c, s in self.per_class.items()
            },
        }


def tagging_f_score(ref_tags, pred_tags) -> TaggingReport:
    """Multi-label tagging F-scores (percent) over a file set.

    Classes absent from both the reference and the predictions are
    excluded from the macro average.
    """
    ref_tags = np.asarray(ref_tags)
    pred_tags = np.asarray(pred_tags)
    if ref_tags.shape != pred_tags.shape:
        raise DataError(
            f"tag shapes differ: {ref_tags.shape} vs {pred_tags.shape}"
        )
    if ref_tags.ndim == 1:
        ref_tags = ref_tags[None]
        pred_tags = pred_tags[None]
    per_class = {}
    for c in range(ref_tags.shape[1]):
        r = ref_tags[:, c] > 0
        p = pred_tags[:, c] > 0
        tp = int(np.sum(r & p))
        fp = int(np.sum(~r & p))
        fn = int(np.sum(r & ~p))
        if tp + fp + fn == 0:
            continue
        precision, recall, f = _f_from_counts(tp, fp, fn)
        per_class[c] = ClassScore(tp, fp, fn, precision, recall, f)
    macro = (sum(s.f_score for s in per_class.values()) / len(per_class)
             if per_class else 0.0)
    return TaggingReport(per_class=per_class, macro_f_score=macro)


@dataclass
class CorrelationResult:
    """Pearson coefficients between per-class score curves.

    Curves are concatenated across files before correlating. Constant
    curves get zero correlation against everything (their diagonal entry
    included) and are listed in ``constant_classes``.
    """

    matrix: np.ndarray
    constant_classes: tuple

    def to_json_dict(self):
        return {
            "matrix": self.matrix.tolist(),
            "constant_classes": list(self.constant_classes),
        }

    def format_table(self):
        n = self.matrix.shape[0]
        header = ["      "] + [f"c{j:<6d}" for j in range(n)]
        lines = ["".join(header)]
        for i in range(n):
            cells = [f"c{i:<5d}"] + [f"{self.matrix[i, j]:+.3f} " for j in range(n)]
            lines.append("".join(cells))
        return "\n".join(lines)


def correlation_matrix(score_sets) -> CorrelationResult:
    """Pearson correlations between class curves across a set of files."""
    if not score_sets:
        raise DataError("correlation_matrix needs at least one score matrix")
    arrays = []
    for s in score_sets:
        matrix = s.scores if hasattr(s, "scores") else np.asarray(s, dtype=float)
        arrays.append(matrix)
    n_classes = arrays[0].shape[1]
    if any(a.shape[1] != n_classes for a in arrays):
        raise DataError("score matrices disagree on the number of classes")
    curves = np.concatenate(arrays, axis=0).T  # (C, total frames)
    centered = curves - curves.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(centered, axis=1)
    constant = norms <= 1e-12
    safe = np.where(constant, 1.0, norms)
    z = centered / safe[:, None]
    matrix = z @ z.T
    matrix[constant, :] = 0.0
    matrix[:, constant] = 0.0
    np.clip(matrix, -1.0, 1.0, out=matrix)
    for c in range(n_classes):
        if not constant[c]:
            matrix[c, c] = 1.0
    return CorrelationResult(matrix=matrix,
                             constant_classes=tuple(np.flatnonzero(constant)))


def mean_positive_correlation(matrix) -> float:
    """Mean of the strictly positive off-diagonal entries; 0 if none."""
    if isinstance(matrix, CorrelationResult):
        matrix = matrix.matrix
    matrix = np.asarray(matrix, dtype=float)
    off = ~np.eye(matrix.shape[0], dtype=bool)
    values = matrix[off]
    positive = values[values > 0.0]
    return float(positive.mean()) if positive.size else 0.0


def overlap_duration(events) -> float:
    """Total time covered by two or more classes simultaneously (seconds).

    Events of the same class are unioned first, then a sweep line counts
    the time where at least two class-unions are active.
    """
    by_label = {}
    for ev in events:
        by_label.setdefault(ev.label, []).append((ev.onset, ev.offset))
    boundaries = []
    for segments in by_label.values():
        segments.sort()
        merged = []
        for onset, offset in segments:
            if merged and onset <= merged[-1][1]:
                merged[-1] = (merged[-1][0], max(merged[-1][1], offset))
            else:
                merged.append((onset, offset))
        for onset, offset in merged:
            boundaries.append((onset, 1))
            boundaries.append((offset, -1))
    # ends sort before starts at equal times: touching events do not overlap
    boundaries.sort(key=lambda b: (b[0], b[1]))
    depth = 0
    last_t = None
    total = 0.0
    for t, delta in boundaries:
        if depth >= 2 and last_t is not None:
            total += t - last_t
        depth += delta
        last_t = t
    return total


def report_to_json(report) -> str:
    return json.dumps(report.to_json_dict(), indent=2)
