"""Caption-to-shard ingestion demo with the offline mock client.

Walks the full data path on a tiny hand-written corpus: caption JSON in,
triplet extraction through canned responses, temporal clip grouping, feature
packing, and a shard read-back. Everything lands under --out.

Usage:
    python scripts/run_pipeline_demo.py --out /tmp/pipeline_demo
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

import numpy as np

from relalign.cli import run

CAPTIONS = {
    "vid_kitchen": "A person stirs soup in a pot",
    "vid_park": "A dog chases a ball across the grass",
}

RESPONSES = {
    "A person stirs soup in a pot": (
        "- subject: person, predicate: stirs, object: soup\n"
        "- subject: soup, predicate: in, object: pot"
    ),
    "A dog chases a ball across the grass": (
        "- subject: dog, predicate: chases, object: ball\n"
        "- subject: dog, predicate: runs across, object: grass"
    ),
}

ANNOTATIONS = {
    "vid_kitchen": [
        {"subject": "person", "predicate": "stirs", "object": "soup",
         "start_frame": 0, "end_frame": 40},
        {"subject": "soup", "predicate": "in", "object": "pot",
         "start_frame": 5, "end_frame": 45},
        {"subject": "person", "predicate": "tastes", "object": "soup",
         "start_frame": 200, "end_frame": 230},
    ],
}


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True)
    parser.add_argument("--d_vis", type=int, default=32)
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    (out / "captions.json").write_text(json.dumps(CAPTIONS, indent=2))
    (out / "responses.json").write_text(json.dumps(RESPONSES, indent=2))
    (out / "annotations.json").write_text(json.dumps(ANNOTATIONS, indent=2))

    assert run(["extract",
                "--captions", str(out / "captions.json"),
                "--responses", str(out / "responses.json"),
                "--out", str(out / "triplets.json")]) == 0
    print("triplets:", (out / "triplets.json").read_text())

    assert run(["group-clips",
                "--annotations", str(out / "annotations.json"),
                "--out", str(out / "clips.json")]) == 0
    print("clips:", (out / "clips.json").read_text())

    # Stand-in visual features: in a real run these come from frozen video
    # backbones; random matrices keep the demo self-contained.
    rng = np.random.default_rng(0)
    feature_dir = out / "features"
    feature_dir.mkdir(exist_ok=True)
    for vid in CAPTIONS:
        np.savez(feature_dir / f"{vid}.npz",
                 fast=rng.normal(size=(12, args.d_vis)).astype(np.float32),
                 slow=rng.normal(size=(6, args.d_vis)).astype(np.float32))

    assert run(["shard",
                "--features", str(feature_dir),
                "--triplets", str(out / "triplets.json"),
                "--out", str(out / "shards"),
                "--shard_size", "64"]) == 0

    from relalign.shards import ShardReader
    for sample in ShardReader(out / "shards", shuffle_buffer=1):
        print(f"shard sample {sample.video_id}: "
              f"fast {sample.fast_tokens.shape}, "
              f"slow {sample.slow_tokens.shape}, "
              f"{len(sample.relations)} relations")


if __name__ == "__main__":
    main()
