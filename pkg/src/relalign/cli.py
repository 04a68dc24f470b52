"""Command-line entry point.

Subcommands: extract, group-clips, make-synthetic, shard, train, eval,
trace, dump-match. Configuration resolves as defaults < config file <
flags; flags and config keys mirror the config dataclass field names
verbatim (``--base_lr``, ``--num_concepts``, ...). Every run banner-logs
its fully resolved configuration and seed to standard error. Exit codes:
0 success, 1 validation error, 2 runtime failure. All file outputs go
through write-temp-then-rename, so an interrupted run never leaves a
partial shard, checkpoint, or report under its final name.

Config files are flat ``key = value`` lines; ``#`` starts a comment.
Booleans are ``true``/``false``; everything else parses by the field's
declared type.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np
import torch

from . import clips as clips_mod
from .encoders import DualPathwayModel, ModelConfig, load_checkpoint
from .errors import ConfigError, RelalignError
from .evaluation import alignment_trace, retrieval_eval, segment_sample
from .extraction import HttpLLMClient, MockLLMClient, extract_corpus
from .matching import optimal_assignment
from .relations import RelationTriplet, RelationSet, VideoSample, format_triplet
from .shards import ShardReader, write_shards
from .synthetic import SyntheticConfig, generate_synthetic
from .training import TrainConfig, train


class _UsageError(Exception):
    """Raised for bad invocations; mapped to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise _UsageError(message)


def _write_text_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def _write_json_atomic(path: Path, payload) -> None:
    _write_text_atomic(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


_BOOL_WORDS = {"true": True, "false": False, "1": True, "0": False}


def _coerce(raw: str, target_type) -> object:
    if target_type is bool:
        word = raw.strip().lower()
        if word not in _BOOL_WORDS:
            raise ConfigError(f"expected true/false, got {raw!r}")
        return _BOOL_WORDS[word]
    if target_type is int:
        return int(raw)
    if target_type is float:
        return float(raw)
    return raw


def _parse_config_file(path: str) -> dict[str, str]:
    file = Path(path)
    if not file.exists():
        raise ConfigError(f"config file not found: {path}")
    values: dict[str, str] = {}
    for lineno, line in enumerate(file.read_text().splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = stripped.split("=", 1)
        values[key.strip()] = value.strip()
    return values


# dataclass field types are stored as strings under `from __future__ import
# annotations`; resolve the primitives by name once.
def _resolve_types(*dcs) -> dict[str, type]:
    names = {"int": int, "float": float, "str": str, "bool": bool}
    table: dict[str, type] = {}
    for dc in dcs:
        for f in dataclasses.fields(dc):
            if f.name == "model":
                continue
            t = f.type if isinstance(f.type, type) else names.get(str(f.type))
            if t is not None:
                table[f.name] = t
    return table


_TRAIN_FIELDS = _resolve_types(TrainConfig, ModelConfig)
_SYNTH_FIELDS = _resolve_types(SyntheticConfig)


def _add_config_flags(parser: argparse.ArgumentParser, table: dict[str, type]) -> None:
    for name, ftype in sorted(table.items()):
        parser.add_argument(f"--{name}", type=str, default=None, metavar="V")


def _resolved_settings(args, table: dict[str, type]) -> dict[str, object]:
    settings: dict[str, object] = {}
    file_values = _parse_config_file(args.config) if getattr(args, "config", None) else {}
    for key, raw in file_values.items():
        if key not in table:
            raise ConfigError(f"unknown config key: {key}")
        settings[key] = _coerce(raw, table[key])
    for name, ftype in table.items():
        raw = getattr(args, name, None)
        if raw is not None:
            settings[name] = _coerce(raw, ftype)
    return settings


def _build_train_config(settings: dict[str, object]) -> TrainConfig:
    model_fields = {f.name for f in dataclasses.fields(ModelConfig)}
    model_kwargs = {k: v for k, v in settings.items() if k in model_fields}
    train_kwargs = {k: v for k, v in settings.items() if k not in model_fields}
    return TrainConfig(model=ModelConfig(**model_kwargs), **train_kwargs)


def _banner(command: str, resolved: dict, seed) -> None:
    print(
        f"[relalign] {command} seed={seed} config={json.dumps(resolved, sort_keys=True, default=str)}",
        file=sys.stderr,
    )


def _triplet_to_dict(t: RelationTriplet) -> dict:
    return {"subject": t.subject, "predicate": t.predicate, "object": t.object}


# ---------------------------------------------------------------- commands


def _cmd_extract(args) -> int:
    captions = json.loads(Path(args.captions).read_text())
    if args.endpoint:
        client = HttpLLMClient(args.endpoint)
    elif args.responses:
        client = MockLLMClient(json.loads(Path(args.responses).read_text()))
    else:
        raise ConfigError("extract needs --endpoint or --responses")
    _banner("extract", {"captions": args.captions, "out": args.out,
                        "max_in_flight": args.max_in_flight}, seed="n/a")
    results, stats = extract_corpus(captions, client, args.max_in_flight)
    payload = {
        vid: [_triplet_to_dict(t) for t in triplets]
        for vid, triplets in results.items()
    }
    _write_json_atomic(Path(args.out), payload)
    print(json.dumps(stats.as_dict()), file=sys.stderr)
    return 0


def _cmd_group_clips(args) -> int:
    _banner("group-clips", {"annotations": args.annotations, "out": args.out}, "n/a")
    annotations = json.loads(Path(args.annotations).read_text())
    out: dict[str, list] = {}
    for video_id, rows in annotations.items():
        relations = [
            clips_mod.TemporalRelation(
                triplet=RelationTriplet(
                    r["subject"], r["predicate"], r.get("object")
                ),
                start_frame=int(r["start_frame"]),
                end_frame=int(r["end_frame"]),
            )
            for r in rows
        ]
        grouped = clips_mod.group_clips(relations)
        out[video_id] = [
            {
                "range": list(frame_range),
                "relations": [
                    {**_triplet_to_dict(m.triplet),
                     "start_frame": m.start_frame, "end_frame": m.end_frame}
                    for m in members
                ],
            }
            for frame_range, members in grouped
        ]
    _write_json_atomic(Path(args.out), out)
    return 0


def _cmd_make_synthetic(args) -> int:
    settings = _resolved_settings(args, _SYNTH_FIELDS)
    config = SyntheticConfig(**settings)
    _banner("make-synthetic", dataclasses.asdict(config), args.seed)
    rng = np.random.default_rng(args.seed)
    samples, truth = generate_synthetic(config, rng)
    out_dir = Path(args.out)
    paths = write_shards(samples, args.shard_size, out_dir)
    _write_json_atomic(
        out_dir / "truth.json",
        {
            "config": dataclasses.asdict(config),
            "concepts": [format_triplet(t) for t in truth.concepts],
            "concept_vectors": truth.concept_vectors.tolist(),
            "embedding_map": truth.embedding_map.tolist(),
            "sample_concepts": [list(c) for c in truth.sample_concepts],
            "fast_primaries": [list(p) for p in truth.fast_primaries],
            "slow_primaries": [list(p) for p in truth.slow_primaries],
        },
    )
    print(f"wrote {len(paths)} shards + truth to {out_dir}", file=sys.stderr)
    return 0


def _cmd_shard(args) -> int:
    _banner("shard", {"features": args.features, "triplets": args.triplets,
                      "out": args.out, "shard_size": args.shard_size}, "n/a")
    triplet_map = json.loads(Path(args.triplets).read_text())
    feature_dir = Path(args.features)
    samples: list[VideoSample] = []
    for video_id in sorted(triplet_map):
        feature_file = feature_dir / f"{video_id}.npz"
        if not feature_file.exists():
            raise ConfigError(f"missing feature file: {feature_file}")
        arrays = np.load(feature_file)
        triplets = tuple(
            RelationTriplet(t["subject"], t["predicate"], t.get("object"))
            for t in triplet_map[video_id]
        )
        samples.append(
            VideoSample(
                video_id=video_id,
                fast_tokens=arrays["fast"],
                slow_tokens=arrays["slow"],
                relations=RelationSet(triplets, video_id=video_id),
            )
        )
    paths = write_shards(samples, args.shard_size, Path(args.out))
    print(f"wrote {len(paths)} shards", file=sys.stderr)
    return 0


def _cmd_train(args) -> int:
    settings = _resolved_settings(args, _TRAIN_FIELDS)
    cfg = _build_train_config(settings)
    _banner("train", dataclasses.asdict(cfg), cfg.seed)
    # Seed before the model is built so freshly initialised weights are
    # reproducible across processes; train() re-seeds for the data order.
    torch.manual_seed(cfg.seed)
    model = DualPathwayModel(cfg.model)
    result = train(model, args.data, cfg, out_dir=args.out)
    print(
        json.dumps(
            {
                "optimizer_steps": result.optimizer_steps,
                "final_loss": result.final_loss,
                "checkpoint": str(result.checkpoint_path),
            }
        )
    )
    return 0


def _cmd_eval(args) -> int:
    _banner("eval", {"checkpoint": args.checkpoint, "data": args.data,
                     "batch_size": args.batch_size}, args.seed)
    model = load_checkpoint(args.checkpoint)
    reader = ShardReader(args.data, shuffle_buffer=1)
    samples = list(reader)
    rng = np.random.default_rng(args.seed) if args.seed is not None else None
    report = retrieval_eval(
        model, samples, batch_size=args.batch_size, rng=rng,
        relation_cap=args.relation_cap,
    )
    print(json.dumps(report.as_dict(), indent=2, sort_keys=True))
    return 0


def _cmd_trace(args) -> int:
    _banner("trace", {"checkpoint": args.checkpoint, "data": args.data,
                      "video_id": args.video_id, "segments": args.segments}, "n/a")
    model = load_checkpoint(args.checkpoint)
    sample = None
    for candidate in ShardReader(args.data, shuffle_buffer=1):
        if candidate.video_id == args.video_id:
            sample = candidate
            break
    if sample is None:
        raise ConfigError(f"video id not found in shards: {args.video_id}")
    segments = segment_sample(sample, args.segments)
    texts = [format_triplet(t) for t in sample.relations]
    trace = alignment_trace(model, segments, texts, plot_path=args.plot)
    _write_text_atomic(Path(args.out), trace.to_csv())
    return 0


def _cmd_dump_match(args) -> int:
    _banner("dump-match", {"relations": args.relations, "queries": args.queries,
                           "out": args.out}, args.seed)
    if args.relations > args.queries:
        raise ConfigError("relations cannot exceed queries")
    rng = np.random.default_rng(args.seed)
    sim = rng.uniform(-1.0, 1.0, size=(args.relations, args.queries))
    assignment = optimal_assignment(torch.from_numpy(sim))
    lines = ["# similarity"]
    for row in sim:
        lines.append(",".join(f"{v:.12f}" for v in row))
    lines.append("# assignment relation,query")
    for rel, query in sorted(assignment.pairs):
        lines.append(f"{rel},{query}")
    text = "\n".join(lines) + "\n"
    if args.out:
        _write_text_atomic(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------- wiring


def _build_parser() -> _Parser:
    parser = _Parser(prog="relalign", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="captions to triplets via an LLM client")
    p.add_argument("--captions", required=True, help="JSON {video_id: caption}")
    p.add_argument("--out", required=True)
    p.add_argument("--endpoint", default=None, help="HTTP serving endpoint")
    p.add_argument("--responses", default=None,
                   help="JSON {caption: canned response} for the mock client")
    p.add_argument("--max_in_flight", type=int, default=1)
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("group-clips", help="split annotated relations into clips")
    p.add_argument("--annotations", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_group_clips)

    p = sub.add_parser("make-synthetic", help="generate a synthetic shard set")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--shard_size", type=int, default=128)
    p.add_argument("--config", default=None)
    _add_config_flags(p, _SYNTH_FIELDS)
    p.set_defaults(func=_cmd_make_synthetic)

    p = sub.add_parser("shard", help="pack feature files + triplets into shards")
    p.add_argument("--features", required=True, help="dir of <video_id>.npz")
    p.add_argument("--triplets", required=True, help="JSON from extract")
    p.add_argument("--out", required=True)
    p.add_argument("--shard_size", type=int, default=128)
    p.set_defaults(func=_cmd_shard)

    p = sub.add_parser("train", help="pretrain on shards")
    p.add_argument("--data", required=True, help="shard directory")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="flat key=value config file")
    _add_config_flags(p, _TRAIN_FIELDS)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="in-batch retrieval report")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--batch_size", type=int, default=16)
    p.add_argument("--relation_cap", type=int, default=8)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("trace", help="per-segment alignment trace CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--video_id", required=True)
    p.add_argument("--segments", type=int, default=8)
    p.add_argument("--out", required=True)
    p.add_argument("--plot", default=None)
    p.set_defaults(func=_cmd_trace)

    p = sub.add_parser("dump-match", help="dump a seeded similarity matrix and "
                                          "its assignment as CSV")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--relations", type=int, default=3)
    p.add_argument("--queries", type=int, default=5)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_dump_match)

    return parser


def run(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (RelalignError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
