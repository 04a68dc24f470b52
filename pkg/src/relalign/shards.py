"""TAR-based sample shards with a streaming shuffle-buffer reader.

Layout, fixed so shards are byte-reproducible and readable without this
package: each sample contributes three consecutive members named
``<video_id>.json``, ``<video_id>.fast.bin``, ``<video_id>.slow.bin``. The
JSON sidecar is UTF-8 ``{"video_id": ..., "triplets": [{"subject": ...,
"predicate": ..., "object": ... or null}]}`` with sorted keys. Each ``.bin``
is little-endian: a 32-bit unsigned rank, one 32-bit unsigned length per
dimension, then the row-major float32 payload (so a matrix carries a
12-byte header). All tar metadata (mtime, uid, gid, mode) is zeroed or
fixed, making writes byte-identical across runs.

Reading streams samples through a bounded shuffle buffer: items fill the
buffer, and once it holds ``initial_fill`` items one random occupant is
emitted per incoming item while the buffer keeps growing toward its
capacity; at end of stream the buffer drains in random order. A buffer of
one is the identity order. Corrupt members are skipped and counted, never
raised mid-stream.
"""

from __future__ import annotations

import io
import json
import struct
import tarfile
from math import prod
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import CorruptSample
from .relations import RelationSet, RelationTriplet, VideoSample

_MAX_RANK = 8


def encode_tensor(array: np.ndarray) -> bytes:
    array = np.ascontiguousarray(array, dtype="<f4")
    if array.ndim < 1 or array.ndim > _MAX_RANK:
        raise ValueError(f"rank {array.ndim} outside [1, {_MAX_RANK}]")
    header = struct.pack("<I", array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    return header + array.tobytes()


def decode_tensor(data: bytes) -> np.ndarray:
    if len(data) < 8:
        raise CorruptSample("tensor blob shorter than any valid header")
    (rank,) = struct.unpack_from("<I", data, 0)
    if rank < 1 or rank > _MAX_RANK:
        raise CorruptSample(f"tensor rank {rank} outside [1, {_MAX_RANK}]")
    if len(data) < 4 + 4 * rank:
        raise CorruptSample("tensor blob truncated inside its header")
    dims = struct.unpack_from(f"<{rank}I", data, 4)
    expected = 4 + 4 * rank + 4 * prod(dims)
    if len(data) != expected:
        raise CorruptSample(
            f"tensor payload is {len(data)} bytes, expected {expected}"
        )
    flat = np.frombuffer(data, dtype="<f4", offset=4 + 4 * rank)
    return flat.reshape(dims).copy()


def _sidecar_bytes(sample: VideoSample) -> bytes:
    doc = {
        "video_id": sample.video_id,
        "triplets": [
            {"subject": t.subject, "predicate": t.predicate, "object": t.object}
            for t in sample.relations
        ],
    }
    return json.dumps(doc, sort_keys=True, ensure_ascii=False).encode("utf-8")


def _sample_from_parts(parts: dict[str, bytes]) -> VideoSample:
    try:
        doc = json.loads(parts["json"].decode("utf-8"))
        triplets = tuple(
            RelationTriplet(t["subject"], t["predicate"], t.get("object"))
            for t in doc["triplets"]
        )
        return VideoSample(
            video_id=doc["video_id"],
            fast_tokens=decode_tensor(parts["fast.bin"]),
            slow_tokens=decode_tensor(parts["slow.bin"]),
            relations=RelationSet(triplets, video_id=doc["video_id"]),
        )
    except CorruptSample:
        raise
    except (KeyError, ValueError, TypeError, UnicodeDecodeError) as exc:
        raise CorruptSample(f"sample does not deserialize: {exc}") from exc


def _tar_member(name: str, payload: bytes) -> tuple[tarfile.TarInfo, io.BytesIO]:
    info = tarfile.TarInfo(name=name)
    info.size = len(payload)
    info.mtime = 0
    info.uid = 0
    info.gid = 0
    info.uname = ""
    info.gname = ""
    info.mode = 0o644
    return info, io.BytesIO(payload)


def write_shards(
    samples: Iterable[VideoSample],
    shard_size: int,
    out_dir: str | Path,
    prefix: str = "shard",
) -> list[Path]:
    """Write fixed-size shards (last may be short); returns paths written.

    Each shard lands via write-to-temp-then-rename so a crash never leaves
    a partial shard under its final name.
    """
    if shard_size < 1:
        raise ValueError("shard_size must be >= 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    paths: list[Path] = []
    batch: list[VideoSample] = []

    def flush() -> None:
        if not batch:
            return
        path = out_dir / f"{prefix}-{len(paths):05d}.tar"
        tmp = path.with_name(path.name + ".tmp")
        with tarfile.open(tmp, "w", format=tarfile.USTAR_FORMAT) as tar:
            for sample in batch:
                for suffix, payload in (
                    ("json", _sidecar_bytes(sample)),
                    ("fast.bin", encode_tensor(sample.fast_tokens)),
                    ("slow.bin", encode_tensor(sample.slow_tokens)),
                ):
                    info, fileobj = _tar_member(
                        f"{sample.video_id}.{suffix}", payload
                    )
                    tar.addfile(info, fileobj)
        tmp.replace(path)
        paths.append(path)
        batch.clear()

    for sample in samples:
        batch.append(sample)
        if len(batch) == shard_size:
            flush()
    flush()
    return paths


def _shard_files(path: str | Path | list[str | Path]) -> list[Path]:
    if isinstance(path, (list, tuple)):
        return [Path(p) for p in path]
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("*.tar"))
        if not files:
            raise FileNotFoundError(f"no .tar shards under {path}")
        return files
    return [path]


def _split_member_name(name: str) -> tuple[str, str] | None:
    for suffix in ("json", "fast.bin", "slow.bin"):
        if name.endswith("." + suffix):
            return name[: -len(suffix) - 1], suffix
    return None


class ShardReader:
    """Single-consumer streaming reader over one or more shard files."""

    def __init__(
        self,
        path: str | Path | list[str | Path],
        shuffle_buffer: int = 5000,
        initial_fill: int = 1000,
        rng: np.random.Generator | None = None,
    ):
        if shuffle_buffer < 1:
            raise ValueError("shuffle_buffer must be >= 1")
        self.files = _shard_files(path)
        self.shuffle_buffer = shuffle_buffer
        self.initial_fill = max(1, min(initial_fill, shuffle_buffer))
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.corrupt_samples = 0

    def _raw_samples(self) -> Iterator[VideoSample]:
        for file in self.files:
            with tarfile.open(file, "r") as tar:
                prefix: str | None = None
                parts: dict[str, bytes] = {}
                for member in tar:
                    split = _split_member_name(member.name)
                    if split is None:
                        self.corrupt_samples += 1
                        continue
                    base, kind = split
                    if prefix is not None and base != prefix and parts:
                        self.corrupt_samples += 1  # incomplete sample
                        parts = {}
                    prefix = base
                    blob = tar.extractfile(member)
                    if blob is None:
                        self.corrupt_samples += 1
                        parts = {}
                        continue
                    parts[kind] = blob.read()
                    if len(parts) == 3:
                        try:
                            yield _sample_from_parts(parts)
                        except CorruptSample:
                            self.corrupt_samples += 1
                        parts = {}
                        prefix = None
                if parts:
                    self.corrupt_samples += 1

    def __iter__(self) -> Iterator[VideoSample]:
        stream = self._raw_samples()
        buffer: list[VideoSample] = []

        def pick() -> VideoSample:
            k = int(self.rng.integers(len(buffer)))
            item = buffer[k]
            buffer[k] = buffer[-1]
            buffer.pop()
            return item

        for sample in stream:
            buffer.append(sample)
            if len(buffer) < self.shuffle_buffer:
                # Consume a second item per emission so the buffer keeps
                # growing toward capacity after emission starts.
                extra = next(stream, None)
                if extra is not None:
                    buffer.append(extra)
            if len(buffer) >= self.initial_fill:
                yield pick()
        while buffer:
            yield pick()


def read_shards(
    path: str | Path | list[str | Path],
    shuffle_buffer: int = 5000,
    initial_fill: int = 1000,
    rng: np.random.Generator | None = None,
) -> ShardReader:
    """Open shards for streaming; iterate the result to get VideoSamples."""
    return ShardReader(path, shuffle_buffer, initial_fill, rng)
