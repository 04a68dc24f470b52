"""Pretraining loop: accumulate, clip, step, log.

One validated record holds every recipe and architecture knob. Each
optimizer step accumulates gradients over several micro-batches, clips the
global gradient norm, and applies a decoupled-weight-decay adaptive-moment
update under the warmup-plus-cosine schedule. Parameters with fewer than
two dimensions (biases, norm gains, the logit scale) are excluded from
weight decay; optimizer betas (0.9, 0.999) and eps 1e-8 are pinned repo
conventions. Runs are fully deterministic given the seed and a single
worker: sample order, relation subsampling, and parameter updates all
derive from the configured seed.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np
import torch

from .encoders import (
    DualPathwayModel,
    ModelConfig,
    encode_relations,
    save_checkpoint,
)
from .errors import ConfigError
from .losses import (
    BatchAlignment,
    loss_q_to_r,
    loss_r_to_q,
    matched_mse_loss,
)
from .matching import cosine_matrix, optimal_assignment
from .relations import RelationSet, VideoSample, format_triplet, sample_relations
from .schedule import lr_at
from .shards import ShardReader

PATHWAY_MODES = ("per-pathway", "pooled")
RELATION_ENCODER_MODES = ("trainable", "frozen")
LOSS_KINDS = ("mm-nce", "matched-mse")
REDUCTIONS = ("mean", "sum")


@dataclass(frozen=True)
class TrainConfig:
    """All optimization, schedule, and architecture knobs in one record."""

    base_lr: float = 5e-5
    warmup_fraction: float = 0.20
    final_lr_fraction: float = 0.05
    epochs: int = 5
    grad_accum_steps: int = 4
    grad_clip_norm: float = 1.0
    weight_decay: float = 0.1
    seed: int = 0
    relation_cap: int = 8
    batch_size: int = 16
    pathway_mode: str = "per-pathway"
    relation_encoder_mode: str = "trainable"
    loss: str = "mm-nce"
    reduction: str = "mean"
    max_steps: int = 0  # optimizer steps; 0 means no cap
    log_every: int = 10
    checkpoint_every: int = 0  # optimizer steps; 0 means final only
    shuffle_buffer: int = 5000
    initial_fill: int = 1000
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self) -> None:
        for name in ("base_lr", "final_lr_fraction", "grad_clip_norm"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in (
            "epochs",
            "grad_accum_steps",
            "relation_cap",
            "batch_size",
            "log_every",
            "shuffle_buffer",
        ):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if not 0 < self.warmup_fraction < 1:
            raise ConfigError("warmup_fraction must lie in (0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        if self.max_steps < 0 or self.checkpoint_every < 0:
            raise ConfigError("step counts cannot be negative")
        if self.pathway_mode not in PATHWAY_MODES:
            raise ConfigError(f"pathway_mode must be one of {PATHWAY_MODES}")
        if self.relation_encoder_mode not in RELATION_ENCODER_MODES:
            raise ConfigError(
                f"relation_encoder_mode must be one of {RELATION_ENCODER_MODES}"
            )
        if self.loss not in LOSS_KINDS:
            raise ConfigError(f"loss must be one of {LOSS_KINDS}")
        if self.reduction not in REDUCTIONS:
            raise ConfigError(f"reduction must be one of {REDUCTIONS}")
        if self.relation_cap > self.model.queries_per_pathway:
            raise ConfigError(
                "relation_cap cannot exceed queries_per_pathway; relations "
                "must remain assignable"
            )


class MetricsSink(Protocol):
    def emit(self, record: dict) -> None: ...

    def close(self) -> None: ...


class JsonlSink:
    """JSON-lines metrics, one record per emit; stdout when path is None."""

    def __init__(self, path: str | Path | None = None):
        self._own = path is not None
        self._fh = open(path, "w") if path is not None else sys.stdout

    def emit(self, record: dict) -> None:
        self._fh.write(json.dumps(record, sort_keys=True) + "\n")
        self._fh.flush()

    def close(self) -> None:
        if self._own:
            self._fh.close()


class NullSink:
    def emit(self, record: dict) -> None:
        pass

    def close(self) -> None:
        pass


def build_optimizer(model: DualPathwayModel, cfg: TrainConfig) -> torch.optim.AdamW:
    """AdamW with decay only on matrix-shaped parameters."""
    decay, no_decay = [], []
    for p in model.parameters():
        if not p.requires_grad:
            continue
        (decay if p.ndim >= 2 else no_decay).append(p)
    groups = [
        {"params": decay, "weight_decay": cfg.weight_decay},
        {"params": no_decay, "weight_decay": 0.0},
    ]
    return torch.optim.AdamW(groups, lr=cfg.base_lr, betas=(0.9, 0.999), eps=1e-8)


def _capped(
    samples: Sequence[VideoSample], cap: int, rng: np.random.Generator
) -> list[tuple[VideoSample, RelationSet]]:
    return [(s, sample_relations(s.relations, cap, rng)) for s in samples]


def _encode_pathway_batch(
    encoder, token_matrices: list[np.ndarray], dtype: torch.dtype
) -> list[torch.Tensor]:
    """Encode per-sample token matrices, stacking equal shapes into one pass."""
    shapes = {m.shape for m in token_matrices}
    if len(shapes) == 1:
        stacked = torch.from_numpy(np.stack(token_matrices)).to(dtype)
        _, projected = encoder(stacked)
        return list(projected)
    out = []
    for m in token_matrices:
        _, projected = encoder(torch.from_numpy(m).to(dtype).unsqueeze(0))
        out.append(projected.squeeze(0))
    return out


def _encode_relation_sets(
    model: DualPathwayModel, relation_sets: list[RelationSet]
) -> list[torch.Tensor]:
    """Encode all batch relations with one backend pass over unique texts."""
    texts: list[str] = []
    index: dict[str, int] = {}
    per_set: list[list[int]] = []
    for rs in relation_sets:
        rows = []
        for t in rs:
            key = format_triplet(t)
            if key not in index:
                index[key] = len(texts)
                texts.append(key)
            rows.append(index[key])
        per_set.append(rows)
    embedded = model.relation_encoder(texts)
    return [embedded[rows] for rows in per_set]


def encode_batch(
    model: DualPathwayModel,
    samples: Sequence[VideoSample],
    relation_sets: list[RelationSet],
) -> tuple[list[torch.Tensor], list[torch.Tensor], list[torch.Tensor]]:
    """(fast queries, slow queries, relation embeddings), per sample."""
    dtype = model.log_temperature.dtype
    fast = _encode_pathway_batch(model.fast, [s.fast_tokens for s in samples], dtype)
    slow = _encode_pathway_batch(model.slow, [s.slow_tokens for s in samples], dtype)
    rel = _encode_relation_sets(model, relation_sets)
    return fast, slow, rel


def build_alignments(
    model: DualPathwayModel,
    fast: list[torch.Tensor],
    slow: list[torch.Tensor],
    rel: list[torch.Tensor],
    pathway_mode: str,
) -> list[BatchAlignment]:
    """Solve matching on detached similarities and package the batch.

    Per-pathway mode returns one alignment per pathway, each against the
    same relation targets; pooled mode concatenates both query sets before
    a single matching.
    """
    log_tau = model.effective_log_temperature()
    if pathway_mode == "pooled":
        query_sets = [[torch.cat([f, s], dim=0) for f, s in zip(fast, slow)]]
    else:
        query_sets = [fast, slow]
    alignments = []
    for queries in query_sets:
        assigns = [
            optimal_assignment(cosine_matrix(r.detach(), q.detach()))
            for r, q in zip(rel, queries)
        ]
        alignments.append(
            BatchAlignment(
                queries=list(queries),
                relations=list(rel),
                assignments=assigns,
                log_temperature=log_tau,
            )
        )
    return alignments


def batch_loss(
    model: DualPathwayModel,
    samples: Sequence[VideoSample],
    relation_sets: list[RelationSet],
    cfg: TrainConfig,
) -> tuple[torch.Tensor, dict[str, float]]:
    """Loss for one micro-batch plus its logging components."""
    fast, slow, rel = encode_batch(model, samples, relation_sets)
    alignments = build_alignments(model, fast, slow, rel, cfg.pathway_mode)
    if cfg.loss == "matched-mse":
        total = sum(matched_mse_loss(a) for a in alignments)
        return total, {"loss": float(total.detach())}
    q2r = sum(loss_q_to_r(a, cfg.reduction) for a in alignments)
    r2q = sum(loss_r_to_q(a, cfg.reduction) for a in alignments)
    total = q2r + r2q
    return total, {
        "loss": float(total.detach()),
        "loss_q2r": float(q2r.detach()),
        "loss_r2q": float(r2q.detach()),
    }


@dataclass
class TrainResult:
    optimizer_steps: int
    final_loss: float
    checkpoint_path: Path | None
    metrics_path: Path | None


def _count_samples(shards: str | Path | list) -> int:
    return sum(1 for _ in ShardReader(shards, shuffle_buffer=1))


def _epoch_stream(
    data: str | Path | list, cfg: TrainConfig, epoch: int
) -> Iterable[VideoSample]:
    rng = np.random.default_rng([cfg.seed, epoch])
    if isinstance(data, (str, Path)) or (
        isinstance(data, list) and data and isinstance(data[0], (str, Path))
    ):
        return ShardReader(
            data,
            shuffle_buffer=cfg.shuffle_buffer,
            initial_fill=cfg.initial_fill,
            rng=rng,
        )
    order = rng.permutation(len(data))
    return [data[i] for i in order]


def train(
    model: DualPathwayModel,
    data: str | Path | list[VideoSample],
    cfg: TrainConfig,
    out_dir: str | Path | None = None,
    metrics: MetricsSink | None = None,
) -> TrainResult:
    """Run the full recipe over shard files or an in-memory sample list.

    A DegenerateVector from collapsing embeddings propagates and aborts the
    run; metrics emitted so far remain on disk for diagnosis.
    """
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
    metrics_path = out_path / "metrics.jsonl" if out_path is not None else None
    sink = metrics if metrics is not None else (
        JsonlSink(metrics_path) if metrics_path is not None else NullSink()
    )

    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng([cfg.seed, 0xC0FFEE])

    if isinstance(data, (str, Path)):
        num_samples = _count_samples(data)
    else:
        num_samples = len(data)
    if num_samples < 1:
        raise ConfigError("training data is empty")

    batches_per_epoch = -(-num_samples // cfg.batch_size)
    steps_per_epoch = -(-batches_per_epoch // cfg.grad_accum_steps)
    total_steps = cfg.epochs * steps_per_epoch
    if cfg.max_steps:
        total_steps = min(total_steps, cfg.max_steps)

    if cfg.relation_encoder_mode == "frozen":
        model.set_relation_encoder_trainable(False)
    optimizer = build_optimizer(model, cfg)
    trainable = [p for p in model.parameters() if p.requires_grad]

    model.train()
    step = 0
    micro_in_step = 0
    last_components: dict[str, float] = {"loss": float("nan")}
    checkpoint_path = out_path / "checkpoint.pt" if out_path is not None else None
    done = False

    for epoch in range(cfg.epochs):
        if done:
            break
        batch: list[VideoSample] = []
        for sample in _epoch_stream(data, cfg, epoch):
            batch.append(sample)
            if len(batch) < cfg.batch_size:
                continue
            micro_in_step, step, done = _micro_step(
                model, batch, cfg, optimizer, trainable, rng, sink,
                micro_in_step, step, total_steps, epoch, checkpoint_path,
                last_components,
            )
            batch = []
            if done:
                break
        if batch and not done:
            micro_in_step, step, done = _micro_step(
                model, batch, cfg, optimizer, trainable, rng, sink,
                micro_in_step, step, total_steps, epoch, checkpoint_path,
                last_components,
            )
        # Accumulation windows never span epochs: flush the trailing
        # partial window so each epoch contributes ceil(batches/accum)
        # steps, matching the total-step arithmetic above.
        if not done and micro_in_step > 0 and step < total_steps:
            _apply_step(model, cfg, optimizer, trainable, step, total_steps,
                        sink, epoch, last_components, checkpoint_path)
            step += 1
            micro_in_step = 0
            done = step >= total_steps

    if checkpoint_path is not None:
        save_checkpoint(model, checkpoint_path)
    sink.close()
    return TrainResult(
        optimizer_steps=step,
        final_loss=last_components.get("loss", float("nan")),
        checkpoint_path=checkpoint_path,
        metrics_path=metrics_path,
    )


def _micro_step(
    model, batch, cfg, optimizer, trainable, rng, sink,
    micro_in_step, step, total_steps, epoch, checkpoint_path, last_components,
):
    capped = _capped(batch, cfg.relation_cap, rng)
    loss, components = batch_loss(
        model, [s for s, _ in capped], [r for _, r in capped], cfg
    )
    (loss / cfg.grad_accum_steps).backward()
    last_components.clear()
    last_components.update(components)
    micro_in_step += 1
    done = False
    if micro_in_step == cfg.grad_accum_steps:
        _apply_step(model, cfg, optimizer, trainable, step, total_steps, sink,
                    epoch, last_components, checkpoint_path)
        step += 1
        micro_in_step = 0
        if step >= total_steps:
            done = True
    return micro_in_step, step, done


def _apply_step(
    model, cfg, optimizer, trainable, step, total_steps, sink,
    epoch, components, checkpoint_path,
):
    grad_norm = float(
        torch.nn.utils.clip_grad_norm_(trainable, cfg.grad_clip_norm)
    )
    lr = lr_at(
        step + 1, total_steps, cfg.base_lr, cfg.warmup_fraction,
        cfg.final_lr_fraction,
    )
    for group in optimizer.param_groups:
        group["lr"] = lr
    optimizer.step()
    optimizer.zero_grad(set_to_none=True)
    if (step + 1) % cfg.log_every == 0 or step + 1 == total_steps:
        record = {
            "step": step + 1,
            "epoch": epoch,
            "lr": lr,
            "grad_norm": grad_norm,
            "temperature": float(model.effective_log_temperature().detach().exp()),
        }
        record.update(components)
        sink.emit(record)
    if (
        checkpoint_path is not None
        and cfg.checkpoint_every
        and (step + 1) % cfg.checkpoint_every == 0
    ):
        save_checkpoint(model, checkpoint_path)
