"""Command-line entry point wiring the library into experiment flows.

Subcommands: gen-data, train, infer, postprocess, eval, corr,
optimize-thresholds. Exit codes: 0 ok, 2 configuration error, 3 data
error, 4 numeric error. All file outputs are written atomically.
"""

from __future__ import annotations

import argparse
import dataclasses
import io
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from ._util import atomic_write_bytes, atomic_write_text
from .config import (SCHEMA_VERSION, load_experiment_config, load_section)
from .errors import ConfigError, DataError, NumericError
from .evaluation import (MatchConfig, correlation_matrix, event_f_score,
                         match_events, mean_positive_correlation,
                         report_to_json)
from .events import read_events_tsv, write_events_tsv
from .losses import LossConfig
from .model import forward, load_checkpoint, save_checkpoint, train
from .postprocess import pipeline
from .synthdata import (ClassSpec, DatasetSpec, confound_scenario,
                        export_dataset, generate, import_dataset, manifest)
from .threshold_opt import SearchConfig, optimize

SCORES_META = "scores_meta.json"
TAGS_FILE = "tags.json"


def _write_json(path, payload):
    payload = {"schema_version": SCHEMA_VERSION, **payload}
    atomic_write_text(path, json.dumps(payload, indent=2) + "\n")


def _load_json(path, what: str):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise DataError(f"{what} not found: {path}")
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed {what} {path}: {exc}")


def _save_scores(out_dir: Path, bag_id: str, scores):
    buffer = io.BytesIO()
    np.save(buffer, scores)
    atomic_write_bytes(out_dir / f"{bag_id}.npy", buffer.getvalue())


def _load_scores_dir(path):
    """Scores directory -> (ordered dict bag_id -> (T, C) array, meta)."""
    path = Path(path)
    meta_path = path / SCORES_META
    if not meta_path.exists():
        raise DataError(f"scores directory {path} is missing {SCORES_META}")
    meta = _load_json(meta_path, "scores metadata")
    scores = {}
    for bag_id in meta["bag_ids"]:
        npy = path / f"{bag_id}.npy"
        if not npy.exists():
            raise DataError(f"missing score matrix {npy}")
        scores[bag_id] = np.load(npy)
    return scores, meta


def _load_tags_file(path, what="tags file"):
    payload = _load_json(path, what)
    tags = payload.get("tags", payload)
    if not isinstance(tags, dict):
        raise DataError(f"{what} {path} must map bag ids to tag vectors")
    return {bag_id: np.asarray(vec, dtype=int) for bag_id, vec in tags.items()}


def cmd_gen_data(args) -> int:
    if (args.spec is None) == (args.preset is None):
        raise ConfigError("gen-data needs exactly one of --spec or --preset")
    out = Path(args.out)
    if args.preset is not None:
        scenario = confound_scenario(seed=args.seed)
        export_dataset(scenario.train_bags, out / "train.jsonl", scenario.spec)
        export_dataset(scenario.test_bags, out / "test.jsonl", scenario.spec)
        _write_json(out / "manifest.json", scenario.train_manifest)
        print(f"wrote {len(scenario.train_bags)} train / "
              f"{len(scenario.test_bags)} test bags to {out}")
        return 0

    raw = _load_json(args.spec, "dataset spec")
    if not isinstance(raw, dict):
        raise ConfigError(f"dataset spec {args.spec} must be a JSON object")
    raw = dict(raw)
    try:
        n_bags = int(raw.pop("n_bags"))
        class_entries = raw.pop("classes")
        n_features = int(raw.pop("n_features", len(class_entries)))
        classes = []
        for i, entry in enumerate(class_entries):
            entry = dict(entry)
            if "prototype" not in entry:
                prototype = np.zeros(n_features)
                prototype[i] = 1.0
                entry["prototype"] = prototype
            classes.append(ClassSpec(class_id=i, **entry))
        spec = DatasetSpec(classes=tuple(classes), **raw)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"invalid dataset spec {args.spec}: {exc}")
    bags = generate(spec, n_bags, seed=args.seed)
    export_dataset(bags, out / "data.jsonl", spec)
    _write_json(out / "manifest.json", manifest(bags, spec))
    print(f"wrote {len(bags)} bags to {out}")
    return 0


def cmd_train(args) -> int:
    config = load_experiment_config(args.config)
    train_path = config.data.get("train")
    if not train_path:
        raise ConfigError("config.data.train is required for training")
    bags, _ = import_dataset(train_path)
    if not bags:
        raise DataError(f"training dataset {train_path} is empty")
    n_features = bags[0].features.n_features
    n_classes = bags[0].weak.shape[0]
    model_config = config.model_config(n_features, n_classes)

    stopping = config.early_stopping
    if stopping is None and config.loss.variant == "fsl":
        # frame-supervised baselines train long with patience-based stopping
        from .model import EarlyStopping
        stopping = EarlyStopping(patience=15, min_delta=1e-4)

    result = train(bags, config.loss, model_config, epochs=config.epochs,
                   seed=config.seed, batch_size=config.batch_size,
                   learning_rate=config.learning_rate, early_stopping=stopping)
    out = Path(args.out)
    save_checkpoint(result.params, out)
    trace_path = out.with_name(out.stem + ".trace.json")
    _write_json(trace_path, {
        "loss_trace": result.loss_trace,
        "epochs_run": len(result.loss_trace),
        "stopped_early": result.stopped_early,
    })
    print(f"checkpoint: {out}\ntrace: {trace_path} "
          f"({len(result.loss_trace)} epochs)")
    return 0


def _parse_tags_source(value: str):
    if value == "oracle":
        return ("oracle", None)
    if value == "model":
        return ("model", None)
    if value.startswith("model:"):
        return ("model", value[len("model:"):])
    if value.startswith("file:"):
        return ("file", value[len("file:"):])
    raise ConfigError(
        f"--tags must be 'model', 'model:THRESHOLDS', 'file:PATH' or "
        f"'oracle', got {value!r}"
    )


def cmd_infer(args) -> int:
    params = load_checkpoint(args.checkpoint)
    bags, class_names = import_dataset(args.data)
    if not bags:
        raise DataError(f"dataset {args.data} is empty")
    source, source_path = _parse_tags_source(args.tags)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def score_bag(bag):
        return forward(params, bag.features).scores

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            all_scores = list(pool.map(score_bag, bags))
    else:
        all_scores = [score_bag(bag) for bag in bags]

    for bag, scores in zip(bags, all_scores):
        _save_scores(out, bag.bag_id, scores)
    _write_json(out / SCORES_META, {
        "bag_ids": [bag.bag_id for bag in bags],
        "frame_hop_s": bags[0].features.frame_hop_s,
        "n_classes": params.config.n_classes,
        "class_names": class_names,
    })

    if source == "oracle":
        tags = {bag.bag_id: bag.weak.tolist() for bag in bags}
    elif source == "file":
        loaded = _load_tags_file(source_path)
        tags = {}
        for bag in bags:
            if bag.bag_id not in loaded:
                raise DataError(f"tags file missing entry for {bag.bag_id}")
            tags[bag.bag_id] = loaded[bag.bag_id].tolist()
    else:
        if source_path is not None:
            payload = _load_json(source_path, "threshold file")
            thresholds = np.asarray(payload["thresholds"], dtype=float)
            if thresholds.shape != (params.config.n_classes,):
                raise ConfigError(
                    f"threshold file has {thresholds.shape} entries, model "
                    f"has {params.config.n_classes} classes")
        else:
            thresholds = np.full(params.config.n_classes, 0.5)
        tags = {
            bag.bag_id: (scores.max(axis=0) > thresholds).astype(int).tolist()
            for bag, scores in zip(bags, all_scores)
        }
    _write_json(out / TAGS_FILE, {"source": args.tags, "tags": tags})
    print(f"wrote scores for {len(bags)} bags and {TAGS_FILE} to {out}")
    return 0


def cmd_postprocess(args) -> int:
    post = load_section(args.config, "postprocess")
    scores, meta = _load_scores_dir(args.scores)
    tags = _load_tags_file(args.tags)
    class_names = meta.get("class_names")
    hop = meta.get("frame_hop_s")
    if hop is not None and hop != post.hop_s:
        # the hop recorded next to the scores wins over the config default
        post = dataclasses.replace(post, hop_s=hop)
    events_by_file = {}
    for bag_id, matrix in scores.items():
        if bag_id not in tags:
            raise DataError(f"tags file has no entry for {bag_id}")
        events_by_file[bag_id] = pipeline(matrix, tags[bag_id], post,
                                          class_names)
    write_events_tsv(events_by_file, args.out)
    total = sum(len(v) for v in events_by_file.values())
    print(f"wrote {total} events for {len(events_by_file)} files to {args.out}")
    return 0


def cmd_eval(args) -> int:
    ref = read_events_tsv(args.ref)
    pred = read_events_tsv(args.pred)
    cfg = MatchConfig()
    if args.jobs > 1:
        # per-file matching in parallel, reduced in deterministic file order
        files = sorted(set(ref) | set(pred), key=str)
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            per_file = dict(zip(files, pool.map(
                lambda f: match_events(ref.get(f, []), pred.get(f, []), cfg),
                files)))
        report = _report_from_counts(per_file)
    else:
        report = event_f_score(ref, pred, cfg)
    print(report.format_table())
    print()
    print(report_to_json(report))
    if args.plot_data:
        _write_plot_data(ref, pred, Path(args.plot_data))
    return 0


def _report_from_counts(per_file):
    """Aggregate per-file match counts into an EvalReport."""
    from .evaluation import ClassScore, EvalReport, MatchCounts, _f_from_counts

    totals = {}
    for filename in sorted(per_file, key=str):
        for label, c in per_file[filename].items():
            prev = totals.get(label, MatchCounts(0, 0, 0))
            totals[label] = MatchCounts(prev.tp + c.tp, prev.fp + c.fp,
                                        prev.fn + c.fn)
    per_class = {}
    for label, c in totals.items():
        precision, recall, f = _f_from_counts(c.tp, c.fp, c.fn)
        per_class[label] = ClassScore(c.tp, c.fp, c.fn, precision, recall, f)
    macro = (sum(s.f_score for s in per_class.values()) / len(per_class)
             if per_class else 0.0)
    return EvalReport(per_class=per_class, macro_f_score=macro,
                      per_file=per_file)


def _write_plot_data(ref, pred, out_dir: Path, step: float = 0.01):
    """Per-file CSVs of reference/prediction activity curves."""
    out_dir.mkdir(parents=True, exist_ok=True)
    for filename in sorted(set(ref) | set(pred), key=str):
        r = ref.get(filename, [])
        p = pred.get(filename, [])
        labels = sorted({e.label for e in r} | {e.label for e in p}, key=str)
        end = max((e.offset for e in list(r) + list(p)), default=0.0)
        n = int(round(end / step)) + 1
        times = np.arange(n) * step
        columns = {}
        for label in labels:
            for kind, events in (("ref", r), ("pred", p)):
                active = np.zeros(n, dtype=int)
                for e in events:
                    if e.label == label:
                        lo = int(round(e.onset / step))
                        hi = int(round(e.offset / step))
                        active[lo:hi] = 1
                columns[f"{kind}_{label}"] = active
        header = "time_s," + ",".join(columns)
        rows = [header]
        for i in range(n):
            rows.append(f"{times[i]:.2f}," +
                        ",".join(str(col[i]) for col in columns.values()))
        atomic_write_text(out_dir / f"{filename}.csv", "\n".join(rows) + "\n")


def cmd_corr(args) -> int:
    scores, _meta = _load_scores_dir(args.scores)
    result = correlation_matrix(list(scores.values()))
    if args.mean_positive:
        print(f"{mean_positive_correlation(result):.6f}")
        return 0
    print(result.format_table())
    print()
    print(json.dumps(result.to_json_dict(), indent=2))
    return 0


def cmd_optimize_thresholds(args) -> int:
    search = load_section(args.config, "search")
    if not isinstance(search, SearchConfig):
        raise ConfigError("config.search section is invalid")
    path = Path(args.scores)
    if path.is_dir():
        scores, meta = _load_scores_dir(path)
        bag_ids = list(scores)
        pooled = np.stack([scores[b].max(axis=0) for b in bag_ids])
    else:
        payload = _load_json(path, "scores file")
        entries = payload.get("scores", payload)
        bag_ids = sorted(entries)
        pooled = np.stack([np.asarray(entries[b], dtype=float)
                           for b in bag_ids])
    tags_map = _load_tags_file(args.tags)
    try:
        tags = np.stack([tags_map[b] for b in bag_ids])
    except KeyError as exc:
        raise DataError(f"tags file has no entry for bag {exc}")
    result = optimize(pooled, tags, search)
    _write_json(args.out, {
        "thresholds": result.thresholds.tolist(),
        "best_fitness": result.best_fitness,
        "trace": result.trace,
    })
    print(f"best fitness {result.best_fitness:.3f}; thresholds -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="milsed",
        description="Weakly-supervised sound event detection toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--spec", help="dataset spec JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--preset", choices=["confound"],
                   help="use a built-in scenario instead of --spec")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="score a dataset with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--tags", required=True,
                   help="model | model:THRESHOLDS.json | file:PATH | oracle")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("postprocess", help="turn score matrices into events")
    p.add_argument("--scores", required=True, help="scores directory")
    p.add_argument("--tags", required=True, help="tags JSON")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output TSV")
    p.set_defaults(func=cmd_postprocess)

    p = sub.add_parser("eval", help="event-based scores of predictions")
    p.add_argument("--ref", required=True, help="reference events TSV")
    p.add_argument("--pred", required=True, help="predicted events TSV")
    p.add_argument("--plot-data", dest="plot_data",
                   help="directory for per-class activity CSVs")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("corr", help="correlations between class curves")
    p.add_argument("--scores", required=True, help="scores directory")
    p.add_argument("--mean-positive", dest="mean_positive",
                   action="store_true",
                   help="print only the mean positive off-diagonal value")
    p.set_defaults(func=cmd_corr)

    p = sub.add_parser("optimize-thresholds",
                       help="search class-dependent tagging thresholds")
    p.add_argument("--scores", required=True,
                   help="scores directory or pooled-scores JSON")
    p.add_argument("--tags", required=True, help="ground-truth tags JSON")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_optimize_thresholds)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
