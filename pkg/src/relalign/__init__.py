"""Set-to-set alignment of video query embeddings with relation triplets."""

from .clips import TemporalRelation, group_clips
from .encoders import (
    DualPathwayModel,
    ModelConfig,
    PathwayEncoder,
    RelationEncoder,
    encode_pathway,
    encode_relations,
    load_checkpoint,
    save_checkpoint,
    toy_text_embedding,
)
from .errors import (
    BackendError,
    ClientError,
    ConfigError,
    CorruptSample,
    DegenerateVector,
    MalformedLine,
    RelalignError,
    ShapeError,
    TooManyRelations,
)
from .evaluation import (
    AlignmentTrace,
    RetrievalReport,
    alignment_trace,
    retrieval_eval,
    segment_sample,
)
from .extraction import (
    HttpLLMClient,
    LLMClient,
    MockLLMClient,
    extract_corpus,
    extract_triplets,
    render_prompt,
)
from .losses import (
    BatchAlignment,
    loss_q_to_r,
    loss_r_to_q,
    matched_mse_loss,
    mm_nce_loss,
    nce_loss_from_logits,
)
from .matching import SimilarityMatrix, cosine_matrix, optimal_assignment
from .relations import (
    Assignment,
    RelationSet,
    RelationTriplet,
    VideoSample,
    format_triplet,
    parse_triplet_line,
    sample_relations,
)
from .schedule import lr_at, warmup_steps
from .shards import ShardReader, read_shards, write_shards
from .synthetic import SyntheticConfig, SyntheticTruth, generate_synthetic
from .training import TrainConfig, TrainResult, train

__version__ = "0.1.0"
