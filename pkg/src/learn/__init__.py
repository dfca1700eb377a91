"""Story-driven layout-to-image generation for instructional content.

The package splits the pipeline into small pieces: geometry and embeddings
(:mod:`learn.boxes`), text/image encoders (:mod:`learn.encoders`), the
contrastive and alignment losses (:mod:`learn.losses`), a caption-to-layout
decoder (:mod:`learn.layout_decoder`), a layout-conditioned denoising
generator (:mod:`learn.diffusion`), concept-graph traversal
(:mod:`learn.graph`), evaluation metrics (:mod:`learn.metrics`), synthetic
data (:mod:`learn.dataset`), and background prompt tuning
(:mod:`learn.prompts`).  ``learn.cli`` wires everything into the ``learn``
command.
"""

__version__ = "0.1.0"

from .boxes import (
    BoundingBox,
    Embedding,
    Layout,
    LayoutElement,
    box_contains,
    box_iou,
    encode_position,
    layout_from_dict,
    layout_from_json,
    layout_to_dict,
    layout_to_json,
    validate_box,
)
from .encoders import (
    EncoderHandle,
    encode_image,
    encode_region,
    encode_text,
    pretrained_encoder,
    toy_encoder,
)
from .errors import LearnError
from .graph import (
    ConceptGraph,
    ConceptNode,
    TraversalFrame,
    TraversalPlan,
    curriculum_order,
    learn_traverse,
    load_concept_graph,
    traverse_with,
)
from .losses import (
    LossConfig,
    combined_layout_loss,
    cosine_similarity,
    intra_concept_loss,
    layout_contrastive_loss,
    semantic_alignment_loss,
    token_alignment_loss,
)
from .metrics import (
    DEFINITIONS_VERSION,
    MetricReport,
    build_report,
    clarity_metrics,
    crop_clip_score,
    fid_score,
    intra_concept_similarity_stats,
    sam_iou,
)
from .seeding import derive_rng, derive_seed

__all__ = [
    "__version__",
    "BoundingBox",
    "Embedding",
    "Layout",
    "LayoutElement",
    "box_contains",
    "box_iou",
    "encode_position",
    "layout_from_dict",
    "layout_from_json",
    "layout_to_dict",
    "layout_to_json",
    "validate_box",
    "EncoderHandle",
    "encode_image",
    "encode_region",
    "encode_text",
    "pretrained_encoder",
    "toy_encoder",
    "LearnError",
    "ConceptGraph",
    "ConceptNode",
    "TraversalFrame",
    "TraversalPlan",
    "curriculum_order",
    "learn_traverse",
    "load_concept_graph",
    "traverse_with",
    "LossConfig",
    "combined_layout_loss",
    "cosine_similarity",
    "intra_concept_loss",
    "layout_contrastive_loss",
    "semantic_alignment_loss",
    "token_alignment_loss",
    "DEFINITIONS_VERSION",
    "MetricReport",
    "build_report",
    "clarity_metrics",
    "crop_clip_score",
    "fid_score",
    "intra_concept_similarity_stats",
    "sam_iou",
    "derive_rng",
    "derive_seed",
]
