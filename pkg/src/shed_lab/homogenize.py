"""Style removal: domain centroids, centered embeddings, text prototypes.

The image side subtracts a per-domain mean and renormalizes; the text
side aggregates per-template class vectors into one prototype per class,
subtracts the global text mean and renormalizes. Centroids themselves
are plain means and are never renormalized.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import DEFAULT_EPS, EmbeddingDataset, as_vector, l2_normalize
from .errors import (
    DegenerateEmbedding,
    DimMismatch,
    EmptyDomain,
    MissingTemplateClassPair,
    UnknownDomain,
    ValidationError,
)


def compute_domain_centroid(dataset: EmbeddingDataset, domain_id: int) -> np.ndarray:
    """Mean of one domain's unit vectors.

    Computed once on the base embeddings and kept frozen afterwards;
    training never touches it (the dedicated moving-average ablation is
    the only exception and lives in the trainer).
    """
    if not 0 <= domain_id < dataset.num_domains:
        raise UnknownDomain(f"domain id {domain_id} not in [0, {dataset.num_domains})")
    idx = dataset.domain_indices(domain_id)
    if idx.size < 2:
        raise EmptyDomain(
            f"domain {dataset.domain_names[domain_id]!r} has {idx.size} samples; "
            "need at least 2 for a nontrivial centroid"
        )
    return np.mean(dataset.vectors[idx], axis=0)


def compute_all_domain_centroids(dataset: EmbeddingDataset) -> np.ndarray:
    """Stack of centroids for every declared domain, in declaration order."""
    return np.stack(
        [compute_domain_centroid(dataset, s) for s in range(dataset.num_domains)]
    )


def center_and_normalize(v, centroid, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Subtract a centroid and rescale the residual to unit norm."""
    vec = as_vector(v)
    cen = as_vector(centroid)
    if vec.shape[0] != cen.shape[0]:
        raise DimMismatch(
            f"vector dim {vec.shape[0]} does not match centroid dim {cen.shape[0]}"
        )
    residual = vec - cen
    norm = float(np.linalg.norm(residual))
    if norm < eps:
        raise DegenerateEmbedding("vector coincides with the centroid")
    return residual / norm


def center_rows(matrix: np.ndarray, centroid: np.ndarray, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Row-wise center_and_normalize for a matrix of embeddings."""
    residual = matrix - centroid
    norms = np.linalg.norm(residual, axis=1)
    bad = np.flatnonzero(norms < eps)
    if bad.size:
        raise DegenerateEmbedding(f"row {bad[0]} coincides with the centroid")
    return residual / norms[:, None]


@dataclass
class ClassTextBank:
    """Per-template class text vectors plus their aggregate prototypes.

    per_template maps a template id to a [C, d] matrix of unit vectors
    (one row per class, in class_names order). t_agg holds the mean over
    the source templates per class, mu_text the mean of t_agg over
    classes, and t_hat the unit-normalized rows of (t_agg - mu_text).
    An optional plain template supports the generic-prompt variants.
    """

    dim: int
    class_names: list[str]
    source_templates: list[str]
    additional_templates: list[str]
    per_template: dict[str, np.ndarray]
    t_agg: np.ndarray = field(init=False)
    mu_text: np.ndarray = field(init=False)
    t_hat: np.ndarray = field(init=False)
    plain_template: str | None = None

    def __post_init__(self):
        if not self.source_templates:
            raise ValidationError("at least one source template is required")
        overlap = set(self.source_templates) & set(self.additional_templates)
        if overlap:
            raise ValidationError(f"templates listed as both source and additional: {sorted(overlap)}")
        declared = list(self.source_templates) + list(self.additional_templates)
        if self.plain_template is not None:
            declared.append(self.plain_template)
        for tid in declared:
            mat = self.per_template.get(tid)
            if mat is None or mat.shape[0] != len(self.class_names):
                raise MissingTemplateClassPair(
                    f"template {tid!r} is missing vectors for some classes"
                )
            if mat.shape[1] != self.dim:
                raise DimMismatch(f"template {tid!r} vectors have wrong dimension")
        stack = np.stack([self.per_template[t] for t in self.source_templates])
        self.t_agg = np.mean(stack, axis=0)
        self.mu_text = np.mean(self.t_agg, axis=0)
        self.t_hat = center_rows(self.t_agg, self.mu_text)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def zero_shot_texts(self, source: str = "aggregated") -> np.ndarray:
        """Unit-normalized class prototypes for plain cosine scoring.

        source='aggregated' renormalizes the template-averaged prototypes;
        source='plain' uses the generic template's vectors directly.
        """
        if source == "aggregated":
            return np.stack([l2_normalize(row) for row in self.t_agg])
        if source == "plain":
            if self.plain_template is None:
                raise ValidationError("bank has no plain template")
            return self.per_template[self.plain_template]
        raise ValidationError(f"unknown zero-shot text source {source!r}")

    def recenter(self, mu_text: np.ndarray) -> "ClassTextBank":
        """Copy of this bank with a caller-supplied global text centroid."""
        clone = ClassTextBank(
            dim=self.dim,
            class_names=list(self.class_names),
            source_templates=list(self.source_templates),
            additional_templates=list(self.additional_templates),
            per_template=self.per_template,
            plain_template=self.plain_template,
        )
        clone.mu_text = as_vector(mu_text, self.dim)
        clone.t_hat = center_rows(clone.t_agg, clone.mu_text)
        return clone


def build_text_bank(
    raw: Mapping,
    class_names: Sequence[str],
    source_templates: Sequence[str],
    additional_templates: Sequence[str],
    plain_template: str | None = None,
) -> ClassTextBank:
    """Assemble a ClassTextBank from per-(template, class) vectors.

    ``raw`` maps (template_id, class_index) to a vector; vectors are
    unit-normalized here. Every declared template must cover every class.
    """
    class_names = list(class_names)
    dim = None
    per_template: dict[str, np.ndarray] = {}
    declared = list(source_templates) + list(additional_templates)
    if plain_template is not None and plain_template not in declared:
        declared.append(plain_template)
    for tid in declared:
        rows = []
        for cid in range(len(class_names)):
            key = (tid, cid)
            if key not in raw:
                raise MissingTemplateClassPair(
                    f"missing vector for template {tid!r}, class {class_names[cid]!r}"
                )
            vec = l2_normalize(raw[key])
            if dim is None:
                dim = vec.shape[0]
            elif vec.shape[0] != dim:
                raise DimMismatch(
                    f"template {tid!r} class {class_names[cid]!r} has dim "
                    f"{vec.shape[0]}, expected {dim}"
                )
            rows.append(vec)
        per_template[tid] = np.stack(rows)
    if dim is None:
        raise ValidationError("text bank has no templates")
    return ClassTextBank(
        dim=dim,
        class_names=class_names,
        source_templates=list(source_templates),
        additional_templates=list(additional_templates),
        per_template=per_template,
        plain_template=plain_template,
    )


def compute_text_domain_centroid(bank: ClassTextBank, template_id: str) -> np.ndarray:
    """Mean over classes of one template's vectors (not renormalized)."""
    mat = bank.per_template.get(template_id)
    if mat is None:
        raise MissingTemplateClassPair(f"template {template_id!r} not in bank")
    return np.mean(mat, axis=0)
