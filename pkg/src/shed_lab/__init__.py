"""shed-lab: style-homogenized embedding alignment over embedding datasets.

Library layout:

- core: vector primitives and the embedding dataset container
- homogenize: domain centroids, centering, class text banks
- zeroshot: plain and centered zero-shot probability models
- trainer: affine adapter training with checked analytic gradients
- inference: projected centroids, soft assignment, aggregation, fusion
- synthgen: synthetic benchmark generator with ground-truth metadata
- dataio / harness / cli: file formats, experiments, command line
"""

from .backend import numba_enabled
from .core import (
    EmbeddingDataset,
    LabeledEmbedding,
    cosine_sim,
    l2_normalize,
    mean_vector,
    tempered_softmax,
)
from .errors import ShedLabError
from .harness import (
    EvalReport,
    ExperimentConfig,
    default_experiment_config,
    evaluate,
    export_similarity_heatmap,
    run_ablation_suite,
)
from .homogenize import (
    ClassTextBank,
    build_text_bank,
    center_and_normalize,
    compute_domain_centroid,
    compute_text_domain_centroid,
)
from .inference import (
    CentroidBank,
    InferenceConfig,
    PredictionRecord,
    aggregate_predictions,
    build_centroid_bank,
    fuse_with_zeroshot,
    per_centroid_probs,
    predict,
    predict_batch,
    project_cpm,
    project_swm,
    soft_assign,
)
from .synthgen import GenConfig, generate_benchmark
from .trainer import (
    AdapterParams,
    TrainConfig,
    forward_adapter,
    grad_total,
    loss_align,
    loss_reg,
    train,
)
from .zeroshot import clip_zeroshot_probs, sh_zeroshot_probs

__version__ = "0.1.0"

__all__ = [
    "AdapterParams",
    "CentroidBank",
    "ClassTextBank",
    "EmbeddingDataset",
    "EvalReport",
    "ExperimentConfig",
    "GenConfig",
    "InferenceConfig",
    "LabeledEmbedding",
    "PredictionRecord",
    "ShedLabError",
    "TrainConfig",
    "aggregate_predictions",
    "build_centroid_bank",
    "build_text_bank",
    "center_and_normalize",
    "clip_zeroshot_probs",
    "compute_domain_centroid",
    "compute_text_domain_centroid",
    "cosine_sim",
    "default_experiment_config",
    "evaluate",
    "export_similarity_heatmap",
    "forward_adapter",
    "fuse_with_zeroshot",
    "generate_benchmark",
    "grad_total",
    "l2_normalize",
    "loss_align",
    "loss_reg",
    "mean_vector",
    "numba_enabled",
    "per_centroid_probs",
    "predict",
    "predict_batch",
    "project_cpm",
    "project_swm",
    "run_ablation_suite",
    "sh_zeroshot_probs",
    "soft_assign",
    "tempered_softmax",
    "train",
]
