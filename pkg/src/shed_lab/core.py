"""Vector primitives and the embedding dataset container.

All math runs in float64. Means rely on numpy's pairwise summation so
they are permutation-stable to ~1e-12. Every embedding entering the
system is unit-normalized at ingestion; centroids are means of unit
vectors and are deliberately not re-normalized.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import (
    DegenerateEmbedding,
    DimMismatch,
    EmptyInput,
    InvalidTemperature,
    LengthMismatch,
    ValidationError,
)

DEFAULT_EPS = 1e-12


def as_vector(v, dim: int | None = None) -> np.ndarray:
    """Coerce to a finite float64 1-D array, optionally checking length."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise DimMismatch(f"expected a 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("vector contains NaN or infinite entries")
    if dim is not None and arr.shape[0] != dim:
        raise DimMismatch(f"expected dimension {dim}, got {arr.shape[0]}")
    return arr


def l2_normalize(v, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Scale a vector to unit Euclidean norm."""
    arr = as_vector(v)
    norm = float(np.linalg.norm(arr))
    if norm < eps:
        raise DegenerateEmbedding(f"cannot normalize vector with norm {norm!r}")
    return arr / norm


def mean_vector(vs: Iterable) -> np.ndarray:
    """Componentwise arithmetic mean of equal-length vectors."""
    rows = [as_vector(v) for v in vs]
    if not rows:
        raise EmptyInput("mean_vector needs at least one vector")
    dim = rows[0].shape[0]
    for row in rows[1:]:
        if row.shape[0] != dim:
            raise DimMismatch("mean_vector inputs differ in dimension")
    return np.mean(np.stack(rows), axis=0)


def cosine_sim(a, b) -> float:
    """Dot product of two unit vectors (callers keep inputs normalized)."""
    va = as_vector(a)
    vb = as_vector(b)
    if va.shape[0] != vb.shape[0]:
        raise DimMismatch(f"dimensions {va.shape[0]} and {vb.shape[0]} differ")
    return float(va @ vb)


def tempered_softmax(scores, tau: float) -> np.ndarray:
    """softmax(scores / tau), computed with max-subtraction."""
    if not tau > 0:
        raise InvalidTemperature(f"temperature must be positive, got {tau}")
    arr = as_vector(scores)
    if arr.size == 0:
        raise EmptyInput("tempered_softmax needs at least one score")
    z = (arr - arr.max()) / tau
    e = np.exp(z)
    return e / e.sum()


@dataclass(frozen=True)
class LabeledEmbedding:
    """One unit-norm embedding with its class and optional domain tag."""

    vec: np.ndarray
    class_id: int
    domain_id: int | None = None


class EmbeddingDataset:
    """Labeled, domain-tagged, unit-normalized embedding collection.

    Vectors are stored as one float64 matrix in stable (file) order.
    ``domain_ids`` uses -1 for untagged samples (typical for test sets
    whose domain identity is withheld from inference).
    """

    def __init__(
        self,
        dim: int,
        class_names: Sequence[str],
        domain_names: Sequence[str],
        vectors: np.ndarray,
        class_ids: Sequence[int],
        domain_ids: Sequence[int],
        *,
        normalize: bool = False,
        eps: float = DEFAULT_EPS,
    ):
        if dim <= 0:
            raise ValidationError(f"dimension must be positive, got {dim}")
        if len(set(class_names)) != len(class_names):
            raise ValidationError("duplicate class names")
        if len(set(domain_names)) != len(domain_names):
            raise ValidationError("duplicate domain names")
        self.dim = int(dim)
        self.class_names = list(class_names)
        self.domain_names = list(domain_names)

        mat = np.asarray(vectors, dtype=np.float64)
        if mat.ndim != 2 or mat.shape[1] != self.dim:
            raise DimMismatch(
                f"vector matrix shape {mat.shape} does not match dim {self.dim}"
            )
        if not np.all(np.isfinite(mat)):
            raise ValidationError("dataset contains non-finite vector entries")
        cls = np.asarray(class_ids, dtype=np.int64)
        dom = np.asarray(domain_ids, dtype=np.int64)
        if not (len(cls) == len(dom) == mat.shape[0]):
            raise LengthMismatch(
                f"vectors ({mat.shape[0]}), class ids ({len(cls)}) and domain ids "
                f"({len(dom)}) must have equal length"
            )
        if cls.size and (cls.min() < 0 or cls.max() >= len(self.class_names)):
            raise ValidationError("class id out of range")
        if dom.size and (dom.min() < -1 or dom.max() >= max(len(self.domain_names), 1)):
            raise ValidationError("domain id out of range")

        if normalize:
            norms = np.linalg.norm(mat, axis=1)
            bad = np.flatnonzero(norms < eps)
            if bad.size:
                raise DegenerateEmbedding(f"sample {bad[0]} has near-zero norm")
            mat = mat / norms[:, None]
        else:
            norms = np.linalg.norm(mat, axis=1)
            if mat.shape[0] and np.abs(norms - 1.0).max() > 1e-6:
                worst = int(np.abs(norms - 1.0).argmax())
                raise ValidationError(
                    f"sample {worst} has norm {norms[worst]:.8f}, expected 1"
                )
        self.vectors = mat
        self.class_ids = cls
        self.domain_ids = dom

    def __len__(self) -> int:
        return self.vectors.shape[0]

    def __iter__(self) -> Iterator[LabeledEmbedding]:
        for i in range(len(self)):
            dom = int(self.domain_ids[i])
            yield LabeledEmbedding(
                self.vectors[i], int(self.class_ids[i]), None if dom < 0 else dom
            )

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def num_domains(self) -> int:
        return len(self.domain_names)

    def domain_indices(self, domain_id: int) -> np.ndarray:
        return np.flatnonzero(self.domain_ids == domain_id)

    def class_indices(self, class_id: int) -> np.ndarray:
        return np.flatnonzero(self.class_ids == class_id)

    def require_source_domains(self) -> None:
        """Check that every declared domain holds at least two samples."""
        for did, name in enumerate(self.domain_names):
            count = int((self.domain_ids == did).sum())
            if count < 2:
                raise ValidationError(
                    f"source domain {name!r} has {count} samples; at least 2 required"
                )
