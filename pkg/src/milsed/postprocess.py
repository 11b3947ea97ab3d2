"""Score-matrix to event-list inference chain.

Order of operations: mask columns by audio tags, then per class curve:
rescale to [0, 1], moving-average smoothing, binarize with a single
threshold, and merge segments separated by small gaps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .events import Event, sort_events
from .model import ScoreMatrix

# Frame geometry of the reference setup: 431 frames per 10-second clip.
DEFAULT_HOP_S = 10.0 / 431.0


@dataclass(frozen=True)
class PostprocessConfig:
    """Constants of the inference chain."""

    smooth_window: int = 19
    binarize_threshold: float = 0.03
    merge_gap_s: float = 0.2
    hop_s: float = DEFAULT_HOP_S

    def __post_init__(self):
        if self.smooth_window < 1 or self.smooth_window % 2 == 0:
            raise ConfigError(
                f"smooth_window must be odd and >= 1, got {self.smooth_window}"
            )
        if not 0.0 < self.binarize_threshold < 1.0:
            raise ConfigError(
                f"binarize_threshold must be in (0, 1), got {self.binarize_threshold}"
            )
        if self.merge_gap_s < 0.0:
            raise ConfigError(f"merge_gap_s must be >= 0, got {self.merge_gap_s}")
        if not self.hop_s > 0.0:
            raise ConfigError(f"hop_s must be > 0, got {self.hop_s}")


def mask_by_tags(scores, tags):
    """Zero the score columns of classes whose tag is 0."""
    scores = np.asarray(scores, dtype=float)
    tags = np.asarray(tags)
    if tags.shape != (scores.shape[1],):
        raise ConfigError(
            f"tags shape {tags.shape} does not match {scores.shape[1]} classes"
        )
    return scores * (tags > 0)


def rescale(curve):
    """Map a curve onto [0, 1] per min/max; a constant curve maps to zeros."""
    curve = np.asarray(curve, dtype=float)
    lo = curve.min()
    hi = curve.max()
    if hi == lo:
        return np.zeros_like(curve)
    return (curve - lo) / (hi - lo)


def smooth(curve, window: int):
    """Centered moving average with edge truncation.

    Near the edges the average runs over the in-range part of the window
    only, so constant curves are preserved exactly.
    """
    curve = np.asarray(curve, dtype=float)
    n = curve.shape[0]
    if window % 2 == 0:
        raise ConfigError(f"smoothing window must be odd, got {window}")
    if window < 1 or window > 2 * n - 1:
        raise ConfigError(f"smoothing window {window} out of range for T={n}")
    if window == 1:
        return curve.copy()
    if curve.min() == curve.max():
        # a constant curve must come back bit-identical, not rounded
        return curve.copy()
    sums = np.convolve(curve, np.ones(window), mode="same")
    counts = np.convolve(np.ones(n), np.ones(window), mode="same")
    return sums / counts


def binarize_and_segment(curve, threshold: float, hop_s: float):
    """Maximal runs of frames strictly above the threshold, in seconds.

    A frame whose value equals the threshold exactly is excluded.
    """
    curve = np.asarray(curve, dtype=float)
    if not 0.0 < threshold < 1.0:
        raise ConfigError(f"threshold must be in (0, 1), got {threshold}")
    active = np.concatenate([[0], (curve > threshold).astype(int), [0]])
    edges = np.flatnonzero(np.diff(active))
    starts, ends = edges[::2], edges[1::2]
    return [(float(s * hop_s), float(e * hop_s)) for s, e in zip(starts, ends)]


def merge_gaps(segments, gap_s: float):
    """Fuse adjacent segments separated by less than ``gap_s``; idempotent."""
    segments = list(segments)
    for a, b in zip(segments, segments[1:]):
        if b[0] < a[0] or b[0] < a[1]:
            raise DataError("segments must be sorted and non-overlapping")
    if not segments:
        return []
    merged = [segments[0]]
    for onset, offset in segments[1:]:
        last_onset, last_offset = merged[-1]
        if onset - last_offset < gap_s:
            merged[-1] = (last_onset, max(last_offset, offset))
        else:
            merged.append((onset, offset))
    return merged


def pipeline(scores, tags, config: PostprocessConfig, class_names=None):
    """Full inference chain from a score matrix to an event list.

    ``scores`` may be a :class:`ScoreMatrix` (its hop wins) or a bare
    (T, C) array (the config's hop applies). ``class_names`` maps column
    indices to labels; bare column indices are used when omitted.
    """
    if isinstance(scores, ScoreMatrix):
        hop = scores.frame_hop_s
        matrix = scores.scores
    else:
        hop = config.hop_s
        matrix = np.asarray(scores, dtype=float)
    masked = mask_by_tags(matrix, tags)
    events = []
    for c in range(masked.shape[1]):
        curve = smooth(rescale(masked[:, c]), config.smooth_window)
        segments = binarize_and_segment(curve, config.binarize_threshold, hop)
        segments = merge_gaps(segments, config.merge_gap_s)
        label = class_names[c] if class_names is not None else c
        events.extend(Event(onset, offset, label) for onset, offset in segments)
    return sort_events(events)
