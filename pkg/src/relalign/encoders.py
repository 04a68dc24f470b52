"""Query and relation encoders.

Each pathway turns a token matrix of any length into a fixed set of query
embeddings: project tokens to the hidden width, add fixed sinusoidal
positions, run a self-attention temporal encoder, then let learnable query
vectors cross-attend to the tokens through a transformer decoder stack and
pass through a feed-forward projection head. The fast and slow pathways are
architecturally identical but share no parameters. Relation texts go
through a swappable backend (pretrained sentence embedder or a deterministic
hashed bag-of-words) plus a one-layer adapter into the shared embedding
width.

The vision backbone is deliberately outside the model: token matrices are
precomputed inputs, and the input projection accepts any token width.
"""

from __future__ import annotations

import hashlib
import json
import math
import zlib
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Protocol

import numpy as np
import torch
from torch import nn

from .errors import BackendError, ConfigError, CorruptSample, ShapeError
from .relations import RelationTriplet, VideoSample, format_triplet, sample_relations

# The contrastive logit scale (1/temperature) starts at 1/0.07; stored as
# the log of the temperature itself so the clamp range below contains it.
LOG_TEMPERATURE_INIT = math.log(0.07)
LOG_TEMPERATURE_RANGE = (math.log(0.01), math.log(1.0))

CHECKPOINT_SCHEMA = 1


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters for both pathways and the relation side."""

    d_vis: int = 768
    hidden: int = 768
    heads: int = 8
    temporal_layers: int = 2
    qformer_layers: int = 12
    queries_per_pathway: int = 8
    d_rel: int = 1024
    relation_backend: str = "toy"
    pretrained_name: str = "sentence-transformers/all-mpnet-base-v2"
    clamp_log_temperature: bool = True

    def __post_init__(self) -> None:
        positive = (
            "d_vis",
            "hidden",
            "heads",
            "temporal_layers",
            "qformer_layers",
            "queries_per_pathway",
            "d_rel",
        )
        for name in positive:
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.hidden % self.heads != 0:
            raise ConfigError("hidden width must be divisible by head count")
        if self.hidden % 2 != 0:
            raise ConfigError("hidden width must be even for sinusoidal positions")
        if self.relation_backend not in ("toy", "pretrained"):
            raise ConfigError(
                f"relation_backend must be 'toy' or 'pretrained', "
                f"got {self.relation_backend!r}"
            )


def sinusoidal_positions(
    length: int, dim: int, dtype: torch.dtype, device: torch.device
) -> torch.Tensor:
    """Fixed 1-D sine/cosine position table, [length x dim]."""
    position = torch.arange(length, dtype=dtype, device=device).unsqueeze(1)
    half = torch.arange(dim // 2, dtype=dtype, device=device)
    inv_freq = torch.exp(half * (-math.log(10000.0) * 2.0 / dim))
    angles = position * inv_freq
    table = torch.zeros(length, dim, dtype=dtype, device=device)
    table[:, 0::2] = torch.sin(angles)
    table[:, 1::2] = torch.cos(angles)
    return table


def _init_weights(module: nn.Module) -> None:
    if isinstance(module, nn.Linear):
        nn.init.normal_(module.weight, mean=0.0, std=0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.MultiheadAttention):
        if module.in_proj_weight is not None:
            nn.init.normal_(module.in_proj_weight, mean=0.0, std=0.02)
        if module.in_proj_bias is not None:
            nn.init.zeros_(module.in_proj_bias)
    elif isinstance(module, nn.LayerNorm):
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)


class PathwayEncoder(nn.Module):
    """One pathway: tokens in, a fixed-size set of query embeddings out."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        h = config.hidden
        self.input_projection = nn.Linear(config.d_vis, h)
        encoder_layer = nn.TransformerEncoderLayer(
            d_model=h,
            nhead=config.heads,
            dim_feedforward=4 * h,
            dropout=0.0,
            activation="gelu",
            batch_first=True,
        )
        self.temporal_encoder = nn.TransformerEncoder(
            encoder_layer, num_layers=config.temporal_layers
        )
        self.queries = nn.Parameter(torch.empty(config.queries_per_pathway, h))
        decoder_layer = nn.TransformerDecoderLayer(
            d_model=h,
            nhead=config.heads,
            dim_feedforward=4 * h,
            dropout=0.0,
            activation="gelu",
            batch_first=True,
        )
        self.q_former = nn.TransformerDecoder(
            decoder_layer, num_layers=config.qformer_layers
        )
        self.projection_head = nn.Sequential(
            nn.Linear(h, 4 * h), nn.GELU(), nn.Linear(4 * h, config.d_rel)
        )
        self.apply(_init_weights)
        nn.init.orthogonal_(self.queries)
        self.use_positions = True

    def forward(self, tokens: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Encode [batch x N x d_vis] tokens.

        Returns (hidden, projected): the query states before the projection
        head, [batch x M x hidden], and after it, [batch x M x d_rel]. Both
        stay in one graph so either can serve as the alignment target.
        """
        if tokens.ndim != 3:
            raise ShapeError("expected [batch x tokens x d_vis] input")
        if tokens.shape[1] < 1:
            raise ShapeError("need at least one token")
        if tokens.shape[2] != self.config.d_vis:
            raise ShapeError(
                f"token width {tokens.shape[2]} does not match "
                f"d_vis {self.config.d_vis}"
            )
        x = self.input_projection(tokens)
        if self.use_positions:
            x = x + sinusoidal_positions(
                x.shape[1], x.shape[2], x.dtype, x.device
            )
        context = self.temporal_encoder(x)
        queries = self.queries.unsqueeze(0).expand(tokens.shape[0], -1, -1)
        hidden = self.q_former(queries, context)
        return hidden, self.projection_head(hidden)


def encode_pathway(encoder: PathwayEncoder, tokens: torch.Tensor) -> torch.Tensor:
    """Encode one sample's [N x d_vis] token matrix to [M x d_rel] queries."""
    if tokens.ndim != 2:
        raise ShapeError("expected a 2-D token matrix")
    _, projected = encoder(tokens.unsqueeze(0))
    return projected.squeeze(0)


def toy_text_embedding(text: str, dim: int) -> np.ndarray:
    """Deterministic hashed bag-of-words: a signed count sketch, L2-normalized.

    Pure function of the text. Whitespace tokens are hashed into one of
    ``dim`` buckets with a pseudo-random sign, so the embedding is
    order-insensitive and stable across runs and platforms.
    """
    if dim < 1:
        raise ConfigError("embedding dimension must be positive")
    sketch = np.zeros(dim, dtype=np.float64)
    for token in text.split():
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=16).digest()
        index = int.from_bytes(digest[:8], "little") % dim
        sign = 1.0 if digest[8] & 1 else -1.0
        sketch[index] += sign
    norm = float(np.linalg.norm(sketch))
    if norm < 1e-12:
        raise BackendError(f"toy embedding collapsed to zero for {text!r}")
    return (sketch / norm).astype(np.float32)


class TextBackend(Protocol):
    dim: int

    def embed(self, texts: list[str]) -> torch.Tensor: ...


class ToyBackend:
    """Hashed bag-of-words backend embedding straight into the target width."""

    def __init__(self, dim: int):
        self.dim = dim

    def embed(self, texts: list[str]) -> torch.Tensor:
        rows = np.stack([toy_text_embedding(t, self.dim) for t in texts])
        return torch.from_numpy(rows)


class PretrainedBackend(nn.Module):
    """Sentence-embedder backend, loaded at construction."""

    def __init__(self, model_name: str):
        super().__init__()
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:
            raise BackendError(
                "sentence-transformers is not installed; install the 'sbert' "
                "extra or use the toy backend"
            ) from exc
        try:
            self.model = SentenceTransformer(model_name)
        except Exception as exc:
            raise BackendError(f"could not load {model_name!r}: {exc}") from exc
        self.dim = int(self.model.get_sentence_embedding_dimension())

    def embed(self, texts: list[str]) -> torch.Tensor:
        features = self.model.tokenize(texts)
        return self.model(features)["sentence_embedding"]


class RelationEncoder(nn.Module):
    """Text backend plus a one-layer adapter into the relation width.

    With the toy backend the adapter is square and starts as the identity,
    so a fresh (or frozen) encoder emits exactly the backend's unit-norm
    sketches; training in trainable mode may then move it.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        if config.relation_backend == "toy":
            self.backend: TextBackend = ToyBackend(config.d_rel)
        else:
            self.backend = PretrainedBackend(config.pretrained_name)
        self.adapter = nn.Linear(self.backend.dim, config.d_rel)
        if self.backend.dim == config.d_rel:
            with torch.no_grad():
                self.adapter.weight.copy_(torch.eye(config.d_rel))
                self.adapter.bias.zero_()
        else:
            _init_weights(self.adapter)

    def forward(self, texts: list[str]) -> torch.Tensor:
        if not texts:
            raise ShapeError("need at least one text")
        embedded = self.backend.embed(texts)
        embedded = embedded.to(dtype=self.adapter.weight.dtype)
        return self.adapter(embedded)


def encode_relations(
    encoder: RelationEncoder, triplets: list[RelationTriplet]
) -> torch.Tensor:
    """Embed triplets through their flat text form, [J x d_rel]."""
    return encoder([format_triplet(t) for t in triplets])


class DualPathwayModel(nn.Module):
    """Fast and slow pathway encoders, relation encoder, shared temperature."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.fast = PathwayEncoder(config)
        self.slow = PathwayEncoder(config)
        self.relation_encoder = RelationEncoder(config)
        self.log_temperature = nn.Parameter(
            torch.tensor(LOG_TEMPERATURE_INIT, dtype=torch.float32)
        )

    def effective_log_temperature(self) -> torch.Tensor:
        if self.config.clamp_log_temperature:
            low, high = LOG_TEMPERATURE_RANGE
            return self.log_temperature.clamp(min=low, max=high)
        return self.log_temperature

    def set_relation_encoder_trainable(self, trainable: bool) -> None:
        for p in self.relation_encoder.parameters():
            p.requires_grad_(trainable)

    def forward_sample(
        self,
        sample: VideoSample,
        relation_cap: int = 8,
        rng: np.random.Generator | None = None,
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Encode one sample: (fast queries, slow queries, relation matrix).

        The relation cap is applied before encoding; pass an rng for
        reproducible subsampling (defaults to a generator derived from the
        video id so evaluation is stable).
        """
        relations = sample.relations
        if len(relations) > relation_cap:
            if rng is None:
                rng = np.random.default_rng(zlib.crc32(sample.video_id.encode()))
            relations = sample_relations(relations, relation_cap, rng)
        dtype = self.log_temperature.dtype
        fast = encode_pathway(self.fast, torch.from_numpy(sample.fast_tokens).to(dtype))
        slow = encode_pathway(self.slow, torch.from_numpy(sample.slow_tokens).to(dtype))
        rel = encode_relations(self.relation_encoder, list(relations))
        return fast, slow, rel


def save_checkpoint(model: DualPathwayModel, path: str | Path) -> None:
    """Write a checkpoint archive: schema version, config JSON, tensors."""
    payload = {
        "schema": CHECKPOINT_SCHEMA,
        "model_config": json.dumps(asdict(model.config)),
        "state": model.state_dict(),
    }
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> DualPathwayModel:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except FileNotFoundError:
        raise
    except Exception as exc:  # torch raises backend-specific errors here
        raise CorruptSample(f"unreadable checkpoint: {path}") from exc
    if not isinstance(payload, dict) or payload.get("schema") != CHECKPOINT_SCHEMA:
        raise ConfigError(
            f"unsupported checkpoint schema: {payload.get('schema')!r}"
        )
    config = ModelConfig(**json.loads(payload["model_config"]))
    model = DualPathwayModel(config)
    model.load_state_dict(payload["state"])
    return model
