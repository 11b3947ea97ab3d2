"""Synthetic weakly-labeled bags with controllable class co-occurrence.

Bags are built from class prototype vectors: event frames carry the
prototype (scaled by the class amplitude) plus Gaussian noise, background
frames carry noise only. Weak labels always agree with the hidden strong
labels. The canonical ``confound_scenario`` couples a short-event class
to a full-length class in 90% of its bags, which is the failure mode the
cosine penalty is meant to fix.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ._util import atomic_write_text
from .errors import ConfigError, DataError
from .events import Event
from .model import FrameFeatures

DATASET_FORMAT = "milsed-dataset"
DATASET_VERSION = 1

DURATION_MODELS = ("short", "full_length")


@dataclass(frozen=True)
class ClassSpec:
    """One sound class: its feature signature and duration behaviour.

    Short classes place 1..max_events events of random length up to
    ``duration_fraction`` of the clip; full-length classes place exactly
    one event spanning the whole clip.
    """

    class_id: int
    prototype: np.ndarray
    duration_model: str = "short"
    amplitude: float = 1.0
    duration_fraction: float = 0.12
    name: str = ""

    def __post_init__(self):
        prototype = np.asarray(self.prototype, dtype=float)
        if prototype.ndim != 1 or prototype.size < 1:
            raise ConfigError("prototype must be a non-empty vector")
        if not np.all(np.isfinite(prototype)):
            raise ConfigError("prototype contains non-finite values")
        if self.duration_model not in DURATION_MODELS:
            raise ConfigError(
                f"duration_model must be one of {DURATION_MODELS}, "
                f"got {self.duration_model!r}"
            )
        if not 0.0 < self.duration_fraction <= 1.0:
            raise ConfigError("duration_fraction must be in (0, 1]")
        object.__setattr__(self, "prototype", prototype)
        if not self.name:
            object.__setattr__(self, "name", f"class{self.class_id}")


@dataclass(frozen=True)
class DatasetSpec:
    """Everything needed to sample a dataset of bags."""

    classes: tuple
    cooccurrence: np.ndarray  # P[a][b]: chance b is added when a is primary
    n_frames: int
    frame_hop_s: float
    noise_sigma: float = 0.3
    primary_weights: np.ndarray | None = None
    min_event_frames: int = 3
    min_event_gap_frames: int = 8
    max_events: int = 3

    def __post_init__(self):
        classes = tuple(self.classes)
        if not classes:
            raise ConfigError("dataset needs at least one class")
        n = len(classes)
        matrix = np.asarray(self.cooccurrence, dtype=float)
        if matrix.shape != (n, n):
            raise ConfigError(
                f"cooccurrence must be {n}x{n}, got {matrix.shape}"
            )
        if matrix.min() < 0.0 or matrix.max() > 1.0:
            raise ConfigError("cooccurrence entries must lie in [0, 1]")
        if self.n_frames < 1:
            raise ConfigError("n_frames must be >= 1")
        if not self.frame_hop_s > 0:
            raise ConfigError("frame_hop_s must be > 0")
        if not self.noise_sigma >= 0:
            raise ConfigError("noise_sigma must be >= 0")
        if self.min_event_frames < 1:
            raise ConfigError("min_event_frames must be >= 1")
        n_features = classes[0].prototype.size
        protos = np.stack([c.prototype for c in classes])
        if protos.shape[1] != n_features or any(
                c.prototype.size != n_features for c in classes):
            raise ConfigError("all prototypes must share one feature size")
        if np.linalg.matrix_rank(protos) < n:
            raise ConfigError("class prototypes must be linearly independent")
        weights = self.primary_weights
        if weights is not None:
            weights = np.asarray(weights, dtype=float)
            if weights.shape != (n,) or weights.min() < 0 or weights.sum() <= 0:
                raise ConfigError("primary_weights must be non-negative, length C")
            weights = weights / weights.sum()
        object.__setattr__(self, "classes", classes)
        object.__setattr__(self, "cooccurrence", matrix)
        object.__setattr__(self, "primary_weights", weights)

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def n_features(self) -> int:
        return self.classes[0].prototype.size

    @property
    def class_names(self):
        return [c.name for c in self.classes]

    @property
    def clip_duration_s(self) -> float:
        return self.n_frames * self.frame_hop_s


@dataclass
class SynthBag:
    """One generated recording: features, weak tags and hidden strong labels."""

    bag_id: str
    features: FrameFeatures
    weak: np.ndarray
    strong: list


def _place_short_events(rng, spec: DatasetSpec, cls: ClassSpec):
    """Sample 1..max_events disjoint frame intervals for a short class."""
    max_len = max(cls.duration_fraction * spec.n_frames, spec.min_event_frames)
    max_len = min(int(round(max_len)), spec.n_frames)
    n_events = int(rng.integers(1, spec.max_events + 1))
    placed = []
    for _ in range(n_events):
        length = int(rng.integers(spec.min_event_frames, max_len + 1))
        length = min(length, spec.n_frames)
        for _attempt in range(100):
            start = int(rng.integers(0, spec.n_frames - length + 1))
            lo = start - spec.min_event_gap_frames
            hi = start + length + spec.min_event_gap_frames
            if all(e <= lo or s >= hi for s, e in placed):
                placed.append((start, start + length))
                break
        # if no gap-respecting slot exists the event is dropped; at least
        # one always fits because the first placement cannot collide
    placed.sort()
    return placed


def _generate_bag(rng, spec: DatasetSpec, bag_id: str) -> SynthBag:
    n = spec.n_classes
    primary = int(rng.choice(n, p=spec.primary_weights))
    present = [primary]
    for other in range(n):
        if other == primary:
            continue
        if rng.random() < spec.cooccurrence[primary, other]:
            present.append(other)

    weak = np.zeros(n, dtype=int)
    strong = []
    frames = rng.normal(0.0, spec.noise_sigma,
                        size=(spec.n_frames, spec.n_features))
    hop = spec.frame_hop_s
    for c in sorted(present):
        cls = spec.classes[c]
        if cls.duration_model == "full_length":
            intervals = [(0, spec.n_frames)]
        else:
            intervals = _place_short_events(rng, spec, cls)
        if not intervals:
            continue
        weak[c] = 1
        for start, end in intervals:
            frames[start:end] += cls.amplitude * cls.prototype
            strong.append(Event(start * hop, end * hop, cls.name))
    return SynthBag(
        bag_id=bag_id,
        features=FrameFeatures(frames, hop),
        weak=weak,
        strong=sorted(strong, key=lambda e: (str(e.label), e.onset)),
    )


def generate(spec: DatasetSpec, n_bags: int, seed) -> list:
    """Generate ``n_bags`` bags, deterministically derived from ``seed``.

    Each bag draws from its own seed stream (seed, bag index), so
    generation could run per bag in parallel without changing results.
    """
    if n_bags < 1:
        raise ConfigError(f"n_bags must be >= 1, got {n_bags}")
    root = seed if isinstance(seed, np.random.SeedSequence) \
        else np.random.SeedSequence(seed)
    bags = []
    for i in range(n_bags):
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=root.entropy, spawn_key=(i,)))
        bags.append(_generate_bag(rng, spec, bag_id=f"bag{i:05d}"))
    return bags


def realized_cooccurrence(bags, n_classes: int) -> np.ndarray:
    """R[a][b]: fraction of bags containing a that also contain b."""
    counts = np.zeros((n_classes, n_classes))
    present_counts = np.zeros(n_classes)
    for bag in bags:
        present = np.flatnonzero(bag.weak)
        present_counts[present] += 1
        for a in present:
            counts[a, present] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = counts / present_counts[:, None]
    return np.where(present_counts[:, None] > 0, ratio, 0.0)


def manifest(bags, spec: DatasetSpec) -> dict:
    """Summary statistics of a generated dataset (JSON-serializable)."""
    weak = np.stack([bag.weak for bag in bags])
    return {
        "schema_version": DATASET_VERSION,
        "n_bags": len(bags),
        "n_classes": spec.n_classes,
        "class_names": spec.class_names,
        "class_counts": weak.sum(axis=0).tolist(),
        "realized_cooccurrence": realized_cooccurrence(
            bags, spec.n_classes).tolist(),
    }


@dataclass
class ConfoundScenario:
    """The canonical dishes/frying-style confound at desk scale.

    ``dishes`` (class 0) is a short-event class that co-occurs with the
    full-length ``frying`` (class 1) in 90% of its bags; ``speech``
    (class 2) co-occurs broadly; ``dog`` (class 3) is an independent
    short-event control.
    """

    spec: DatasetSpec
    train_bags: list
    test_bags: list
    confounded_short: int = 0   # "dishes"
    confounder_full: int = 1    # "frying"
    broad_class: int = 2        # "speech"
    short_control: int = 3      # "dog"
    train_manifest: dict = field(default_factory=dict)


def confound_scenario(seed, n_train: int = 400, n_test: int = 100,
                      noise_sigma: float = 0.3) -> ConfoundScenario:
    """Build the four-class confound dataset (400 train / 100 test bags).

    Frying is rarely drawn as the primary class, so few bags disambiguate
    dishes from frying; the wide event spacing keeps distinct events
    separable after smoothing and gap merging downstream.
    """
    n_frames, n_features, hop = 100, 8, 0.04
    prototypes = np.zeros((4, n_features))
    for c in range(4):
        prototypes[c, c] = 1.0
    classes = (
        ClassSpec(0, prototypes[0], "short", duration_fraction=0.08,
                  name="dishes"),
        ClassSpec(1, prototypes[1], "full_length", name="frying"),
        ClassSpec(2, prototypes[2], "short", duration_fraction=0.6,
                  name="speech"),
        ClassSpec(3, prototypes[3], "short", duration_fraction=0.12,
                  name="dog"),
    )
    cooccurrence = np.zeros((4, 4))
    cooccurrence[0, 1] = 0.9   # dishes bags almost always carry frying
    cooccurrence[0, 2] = 0.5
    cooccurrence[1, 2] = 0.5
    # nothing adds dishes or dog, so their realized statistics stay clean
    spec = DatasetSpec(
        classes=classes,
        cooccurrence=cooccurrence,
        n_frames=n_frames,
        frame_hop_s=hop,
        noise_sigma=noise_sigma,
        primary_weights=np.array([0.35, 0.05, 0.30, 0.30]),
        min_event_frames=4,
        min_event_gap_frames=24,
    )
    root = np.random.SeedSequence(seed)
    train_ss, test_ss = root.spawn(2)
    train_bags = generate(spec, n_train, train_ss)
    test_bags = generate(spec, n_test, test_ss)
    return ConfoundScenario(
        spec=spec,
        train_bags=train_bags,
        test_bags=test_bags,
        train_manifest=manifest(train_bags, spec),
    )


def oracle_frame_accuracy(bags, spec: DatasetSpec) -> float:
    """Matched-filter frame classification accuracy on hidden strong labels.

    For each frame and class, presence is declared when the projection on
    the class prototype exceeds half the event amplitude; this is the
    Bayes rule for orthogonal prototypes and isotropic noise, and bounds
    how learnable the dataset is.
    """
    correct = 0
    total = 0
    hop = spec.frame_hop_s
    for bag in bags:
        x = bag.features.values
        truth = np.zeros((spec.n_frames, spec.n_classes), dtype=bool)
        name_to_id = {c.name: c.class_id for c in spec.classes}
        for ev in bag.strong:
            c = name_to_id[ev.label]
            lo = int(round(ev.onset / hop))
            hi = int(round(ev.offset / hop))
            truth[lo:hi, c] = True
        for c, cls in enumerate(spec.classes):
            proto = cls.amplitude * cls.prototype
            score = x @ proto / float(proto @ proto)
            predicted = score > 0.5
            correct += int(np.sum(predicted == truth[:, c]))
            total += spec.n_frames
    return correct / total


def export_dataset(bags, path, spec: DatasetSpec | None = None):
    """Write bags as line-delimited JSON: a meta record, then one per bag."""
    records = []
    meta = {
        "format": DATASET_FORMAT,
        "schema_version": DATASET_VERSION,
    }
    if spec is not None:
        meta["class_names"] = spec.class_names
    records.append(json.dumps(meta))
    for bag in bags:
        records.append(json.dumps({
            "bag_id": bag.bag_id,
            "n_frames": bag.features.n_frames,
            "n_features": bag.features.n_features,
            "frame_hop_s": bag.features.frame_hop_s,
            "features": bag.features.values.tolist(),
            "weak": bag.weak.tolist(),
            "strong": [[ev.onset, ev.offset, ev.label] for ev in bag.strong],
        }))
    atomic_write_text(path, "\n".join(records) + "\n")


def import_dataset(path):
    """Read a dataset written by :func:`export_dataset`.

    Returns ``(bags, class_names)``; ``class_names`` is None when the
    file carries no meta record. A malformed line aborts the whole import
    with its line number; no partial dataset is ever returned.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except FileNotFoundError:
        raise DataError(f"dataset not found: {path}")
    bags = []
    class_names = None
    for num, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{num}: malformed record: {exc.msg}")
        if record.get("format") == DATASET_FORMAT:
            class_names = record.get("class_names")
            continue
        try:
            features = np.asarray(record["features"], dtype=float)
            bag = SynthBag(
                bag_id=record["bag_id"],
                features=FrameFeatures(features, record["frame_hop_s"]),
                weak=np.asarray(record["weak"], dtype=int),
                strong=[Event(o, f, label) for o, f, label in record["strong"]],
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}:{num}: invalid bag record: {exc}")
        if features.shape[0] != record["n_frames"] \
                or features.shape[1] != record["n_features"]:
            raise DataError(f"{path}:{num}: feature matrix shape mismatch")
        bags.append(bag)
    return bags, class_names
