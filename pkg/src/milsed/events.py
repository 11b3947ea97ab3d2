"""Event lists (onset, offset, class label) and their TSV interchange format.

The TSV layout is the DCASE-style four-column form: filename, onset,
offset, event_label, tab-separated, times with three decimals, no header.
The reader tolerates one header line starting with "filename".
"""

from __future__ import annotations

from typing import Hashable, NamedTuple

from ._util import atomic_write_text
from .errors import DataError


class Event(NamedTuple):
    """One detected or annotated segment."""

    onset: float
    offset: float
    label: Hashable


def sort_events(events):
    """Canonical ordering: by class label, then onset, then offset."""
    return sorted(events, key=lambda e: (str(e.label), e.onset, e.offset))


def validate_events(events, clip_duration=None):
    """Check the event-list invariants; raises DataError on violation.

    Onset must precede offset, times must be non-negative (and within the
    clip when its duration is given), and segments of the same class must
    not overlap.
    """
    by_label = {}
    for ev in events:
        if not 0.0 <= ev.onset < ev.offset:
            raise DataError(f"bad event boundaries: {ev}")
        if clip_duration is not None and ev.offset > clip_duration + 1e-9:
            raise DataError(f"event exceeds clip duration {clip_duration}: {ev}")
        by_label.setdefault(ev.label, []).append(ev)
    for label, group in by_label.items():
        group.sort(key=lambda e: e.onset)
        for a, b in zip(group, group[1:]):
            if b.onset < a.offset:
                raise DataError(f"overlapping events for class {label!r}: {a}, {b}")


def write_events_tsv(events_by_file, path):
    """Write a mapping of filename -> event list as four-column TSV."""
    lines = []
    for filename in sorted(events_by_file):
        for ev in sort_events(events_by_file[filename]):
            lines.append(
                f"{filename}\t{ev.onset:.3f}\t{ev.offset:.3f}\t{ev.label}"
            )
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def read_events_tsv(path):
    """Parse an event TSV back into a dict of filename -> list of events.

    Labels come back as strings. Raises DataError with the offending line
    number on malformed rows.
    """
    events_by_file = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw_lines = fh.readlines()
    except FileNotFoundError:
        raise DataError(f"event file not found: {path}")
    for num, line in enumerate(raw_lines, start=1):
        line = line.rstrip("\n")
        if not line.strip():
            continue
        if num == 1 and line.startswith("filename"):
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise DataError(
                f"{path}:{num}: expected 4 tab-separated columns, got {len(parts)}"
            )
        filename, onset_s, offset_s, label = parts
        try:
            onset, offset = float(onset_s), float(offset_s)
        except ValueError:
            raise DataError(f"{path}:{num}: non-numeric onset/offset")
        if not onset < offset:
            raise DataError(f"{path}:{num}: onset must precede offset")
        events_by_file.setdefault(filename, []).append(Event(onset, offset, label))
    return {name: sort_events(evs) for name, evs in events_by_file.items()}
