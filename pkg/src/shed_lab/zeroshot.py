"""Zero-shot probability models: plain cosine and style-homogenized."""

from __future__ import annotations

import numpy as np

from .core import DEFAULT_EPS, as_vector, tempered_softmax
from .errors import DimMismatch, InvalidTemperature
from .homogenize import ClassTextBank, center_and_normalize, center_rows
from . import kernels


def clip_zeroshot_probs(x_vec, class_texts, tau: float) -> np.ndarray:
    """Tempered softmax over cosine similarities to class text vectors.

    Both the sample and the class texts are expected unit-norm, so the
    similarity is a plain dot product.
    """
    x = as_vector(x_vec)
    texts = np.asarray(class_texts, dtype=np.float64)
    if texts.ndim != 2 or texts.shape[1] != x.shape[0]:
        raise DimMismatch(
            f"class texts shape {texts.shape} does not match sample dim {x.shape[0]}"
        )
    return tempered_softmax(texts @ x, tau)


def sh_zeroshot_probs(
    x_vec,
    domain_centroid,
    text_bank: ClassTextBank,
    tau: float,
    eps: float = DEFAULT_EPS,
) -> np.ndarray:
    """Zero-shot probabilities after removing a domain centroid.

    Centers the sample with the given centroid, renormalizes, and scores
    it against the bank's centered class prototypes.
    """
    centered = center_and_normalize(x_vec, domain_centroid, eps)
    return clip_zeroshot_probs(centered, text_bank.t_hat, tau)


def clip_zeroshot_batch(x_rows: np.ndarray, class_texts: np.ndarray, tau: float) -> np.ndarray:
    """Row-batched clip_zeroshot_probs."""
    if not tau > 0:
        raise InvalidTemperature(f"temperature must be positive, got {tau}")
    return kernels.softmax_rows(x_rows @ class_texts.T, tau)


def sh_zeroshot_batch(
    x_rows: np.ndarray,
    domain_centroid: np.ndarray,
    text_bank: ClassTextBank,
    tau: float,
    eps: float = DEFAULT_EPS,
) -> np.ndarray:
    """Row-batched sh_zeroshot_probs with a shared centroid."""
    if not tau > 0:
        raise InvalidTemperature(f"temperature must be positive, got {tau}")
    centered = center_rows(x_rows, domain_centroid, eps)
    return kernels.softmax_rows(centered @ text_bank.t_hat.T, tau)
