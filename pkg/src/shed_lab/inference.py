"""Domain-agnostic inference: projected centroids, soft assignment, fusion.

A test sample's domain is unknown, so candidate visual centroids are
synthesized from text-space style centroids in two ways (offset transfer
and similarity-weighted sample pooling), pooled with the source
centroids, and soft-assigned per sample. Predictions centered on each
candidate are mixed by the assignment weights and finally fused with the
plain zero-shot prediction, gated by its own confidence.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, asdict
from typing import Sequence

import numpy as np

from . import kernels
from .core import DEFAULT_EPS, EmbeddingDataset, as_vector, tempered_softmax
from .errors import (
    DegenerateEmbedding,
    DimMismatch,
    EmptyPool,
    InvalidConfig,
    InvalidDistribution,
    InvalidTemperature,
    LengthMismatch,
    ValidationError,
)
from .homogenize import (
    ClassTextBank,
    compute_all_domain_centroids,
    compute_text_domain_centroid,
)
from .trainer import AdapterParams, forward_adapter_rows
from .zeroshot import clip_zeroshot_probs, sh_zeroshot_probs

log = logging.getLogger("shed_lab")


@dataclass
class InferenceConfig:
    """Inference temperatures and sample-pool settings.

    tau matches the training alignment temperature. tau_swm and tau_c
    default to 1/100; tau_c is the knob that per-dataset configs
    override when the assignment should spread over more centroids.
    """

    tau: float = 1.0 / 20.0
    tau_swm: float = 1.0 / 100.0
    tau_c: float = 1.0 / 100.0
    swm_sample_count: int = 256
    seed: int = 0
    eps: float = DEFAULT_EPS

    def validate(self) -> None:
        if not (self.tau > 0 and self.tau_swm > 0 and self.tau_c > 0):
            raise InvalidTemperature("all inference temperatures must be positive")
        if self.swm_sample_count <= 0:
            raise InvalidConfig("swm_sample_count must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PredictionRecord:
    """Per-sample prediction bundle with its inline sanity checks."""

    p_clip: np.ndarray
    p_mu: np.ndarray
    p_final: np.ndarray
    pi: np.ndarray
    lambda_: float

    def validate(self, atol: float = 1e-9) -> None:
        for name, vec in (("p_clip", self.p_clip), ("p_mu", self.p_mu), ("p_final", self.p_final)):
            if (vec < 0).any() or abs(float(vec.sum()) - 1.0) > atol:
                raise InvalidDistribution(f"{name} is not a probability vector")
        if abs(float(self.pi.sum()) - 1.0) > atol or (self.pi < 0).any():
            raise InvalidDistribution("membership weights are not a distribution")
        c = self.p_clip.shape[0]
        if not (1.0 / c - atol <= self.lambda_ <= 1.0 + atol):
            raise InvalidDistribution(f"lambda {self.lambda_} outside [1/C, 1]")
        recon = self.lambda_ * self.p_clip + (1.0 - self.lambda_) * self.p_mu
        if np.abs(recon - self.p_final).max() > atol:
            raise InvalidDistribution("p_final is not the lambda-blend of its parts")

    @property
    def argmax(self) -> int:
        return int(np.argmax(self.p_final))


@dataclass
class CentroidBank:
    """All candidate visual centroids, in fixed [sources, offset-projected,
    sample-weighted] order, plus the frozen sample pool that produced the
    sample-weighted block."""

    domain_names: list[str]
    mu_s: np.ndarray  # [S, d]
    mu_text_s: np.ndarray  # [S, d]
    template_ids: list[str]
    mu_t: np.ndarray  # [N, d]
    mu_cpm: np.ndarray  # [N_cpm, d]
    mu_swm: np.ndarray  # [N_swm, d]
    pool: np.ndarray  # [K, d]
    pool_indices: np.ndarray  # [K]
    seed: int = 0

    def __post_init__(self):
        d = self.mu_s.shape[1]
        for name, mat in (
            ("mu_text_s", self.mu_text_s),
            ("mu_t", self.mu_t),
            ("mu_cpm", self.mu_cpm),
            ("mu_swm", self.mu_swm),
            ("pool", self.pool),
        ):
            if mat.size and mat.shape[1] != d:
                raise DimMismatch(f"{name} has dimension {mat.shape[1]}, expected {d}")
            if mat.size and not np.all(np.isfinite(mat)):
                raise ValidationError(f"{name} contains non-finite entries")

    @property
    def mu_v(self) -> np.ndarray:
        blocks = [self.mu_s]
        if self.mu_cpm.size:
            blocks.append(self.mu_cpm)
        if self.mu_swm.size:
            blocks.append(self.mu_swm)
        return np.concatenate(blocks, axis=0)

    @property
    def num_centroids(self) -> int:
        return self.mu_s.shape[0] + self.mu_cpm.shape[0] + self.mu_swm.shape[0]


def project_cpm(mu_t, mu_s_list, mu_text_s_list) -> np.ndarray:
    """Transfer a text-space style offset onto the visual centroids.

    Averages, over the source domains, the visual centroid shifted by the
    gap between the style text centroid and that source's text centroid:
    mean_s(mu_s) + mu_t - mean_s(mu_text_s).
    """
    mu = as_vector(mu_t)
    vis = np.asarray(mu_s_list, dtype=np.float64)
    txt = np.asarray(mu_text_s_list, dtype=np.float64)
    if vis.ndim != 2 or txt.ndim != 2 or vis.shape != txt.shape:
        raise DimMismatch("visual and text source centroid stacks must align")
    if vis.shape[1] != mu.shape[0]:
        raise DimMismatch("style centroid dimension does not match source centroids")
    return vis.mean(axis=0) + mu - txt.mean(axis=0)


def project_swm(mu_t, v_pool, tau_swm: float) -> np.ndarray:
    """Similarity-weighted mixture of pooled sample embeddings.

    Weights are a tempered softmax of the pool's dot products with the
    style text centroid; the result is a convex combination of pool rows.
    """
    mu = as_vector(mu_t)
    pool = np.asarray(v_pool, dtype=np.float64)
    if pool.ndim != 2 or pool.shape[0] == 0:
        raise EmptyPool("sample pool is empty")
    if pool.shape[1] != mu.shape[0]:
        raise DimMismatch("pool dimension does not match style centroid")
    weights = tempered_softmax(pool @ mu, tau_swm)
    return weights @ pool


def sample_pool(
    dataset: EmbeddingDataset, count: int, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Draw the frozen sample pool: uniform, without replacement, seeded."""
    n = len(dataset)
    if n == 0:
        raise EmptyPool("dataset has no samples to pool")
    take = min(count, n)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x700C]))
    idx = np.sort(rng.choice(n, size=take, replace=False))
    return dataset.vectors[idx], idx


def build_centroid_bank(
    dataset: EmbeddingDataset,
    text_bank: ClassTextBank,
    config: InferenceConfig,
    *,
    mu_s: np.ndarray | None = None,
    num_additional: int | None = None,
    include_cpm: bool = True,
    include_swm: bool = True,
) -> CentroidBank:
    """Assemble every candidate centroid from one pass over the inputs.

    The sample pool is drawn once with the config seed, so rebuilding
    with identical inputs reproduces the bank bit for bit. ``mu_s``
    overrides the frozen source centroids (used by the moving-average
    ablation); block switches implement the projection ablations.
    """
    config.validate()
    if mu_s is None:
        mu_s = compute_all_domain_centroids(dataset)
    mu_text_s = np.stack(
        [compute_text_domain_centroid(text_bank, t) for t in text_bank.source_templates]
    )
    if mu_s.shape[0] != mu_text_s.shape[0]:
        raise LengthMismatch(
            f"{mu_s.shape[0]} source domains but {mu_text_s.shape[0]} source templates; "
            "offset transfer needs one text centroid per source domain"
        )

    template_ids = list(text_bank.additional_templates)
    if num_additional is not None:
        if num_additional < 0 or num_additional > len(template_ids):
            raise InvalidConfig(
                f"num_additional {num_additional} outside [0, {len(template_ids)}]"
            )
        template_ids = template_ids[:num_additional]

    dim = dataset.dim
    if template_ids:
        mu_t = np.stack(
            [compute_text_domain_centroid(text_bank, t) for t in template_ids]
        )
    else:
        mu_t = np.zeros((0, dim))

    pool, pool_idx = sample_pool(dataset, config.swm_sample_count, config.seed)

    if include_cpm and len(template_ids):
        mu_cpm = np.stack([project_cpm(m, mu_s, mu_text_s) for m in mu_t])
    else:
        mu_cpm = np.zeros((0, dim))
    if include_swm and len(template_ids):
        mu_swm = np.stack([project_swm(m, pool, config.tau_swm) for m in mu_t])
    else:
        mu_swm = np.zeros((0, dim))

    return CentroidBank(
        domain_names=list(dataset.domain_names),
        mu_s=mu_s,
        mu_text_s=mu_text_s,
        template_ids=template_ids,
        mu_t=mu_t,
        mu_cpm=mu_cpm,
        mu_swm=mu_swm,
        pool=pool,
        pool_indices=pool_idx,
        seed=config.seed,
    )


def soft_assign(x_base, bank: CentroidBank, tau_c: float) -> np.ndarray:
    """Membership weights of a base embedding over all candidate centroids."""
    x = as_vector(x_base)
    mu_v = bank.mu_v
    if mu_v.shape[0] == 0:
        raise EmptyPool("centroid bank is empty")
    return tempered_softmax(mu_v @ x, tau_c)


def per_centroid_probs(
    x_adapted,
    centroid,
    text_bank: ClassTextBank,
    tau: float,
    eps: float = DEFAULT_EPS,
) -> np.ndarray:
    """Centered prediction for one candidate centroid.

    Raises DegenerateEmbedding when the sample coincides with the
    centroid; predict() substitutes a uniform distribution in that case
    so inference always returns an answer.
    """
    return sh_zeroshot_probs(x_adapted, centroid, text_bank, tau, eps)


def aggregate_predictions(per_centroid: Sequence[np.ndarray], pi) -> np.ndarray:
    """Convex combination of per-centroid distributions under pi."""
    weights = as_vector(pi)
    if len(per_centroid) != weights.shape[0]:
        raise LengthMismatch(
            f"{len(per_centroid)} distributions but {weights.shape[0]} weights"
        )
    stack = np.asarray(per_centroid, dtype=np.float64)
    return weights @ stack


def fuse_with_zeroshot(p_clip, p_mu) -> tuple[np.ndarray, float]:
    """Confidence-gated blend of the zero-shot and aggregated predictions.

    The gate is the zero-shot maximum probability: a confident zero-shot
    prediction dominates the blend, an uncertain one defers to the
    centroid-aggregated prediction.
    """
    pc = as_vector(p_clip)
    pm = as_vector(p_mu)
    if pc.shape[0] != pm.shape[0]:
        raise DimMismatch("fused distributions must share the class count")
    for name, vec in (("p_clip", pc), ("p_mu", pm)):
        if (vec < 0).any() or abs(float(vec.sum()) - 1.0) > 1e-6:
            raise InvalidDistribution(f"{name} is not a probability vector")
    lam = float(pc.max())
    return lam * pc + (1.0 - lam) * pm, lam


def predict(
    x_base,
    adapter: AdapterParams,
    bank: CentroidBank,
    text_bank: ClassTextBank,
    config: InferenceConfig,
) -> PredictionRecord:
    """Full single-sample inference pass.

    Order: zero-shot on the base embedding, soft assignment of the base
    embedding over the bank, adapter forward, per-centroid centered
    predictions, weighted aggregation, confidence-gated fusion.
    """
    config.validate()
    x = as_vector(x_base, bank.mu_s.shape[1])
    texts = text_bank.zero_shot_texts()
    p_clip = clip_zeroshot_probs(x, texts, config.tau)
    pi = soft_assign(x, bank, config.tau_c)
    x_adapted = forward_adapter_rows(adapter, x[None, :], config.eps)[0]
    mu_v = bank.mu_v
    c = text_bank.num_classes
    per_cent = []
    for v in range(mu_v.shape[0]):
        try:
            per_cent.append(
                per_centroid_probs(x_adapted, mu_v[v], text_bank, config.tau, config.eps)
            )
        except DegenerateEmbedding:
            log.warning("sample coincides with centroid %d; using uniform", v)
            per_cent.append(np.full(c, 1.0 / c))
    p_mu = aggregate_predictions(per_cent, pi)
    p_final, lam = fuse_with_zeroshot(p_clip, p_mu)
    record = PredictionRecord(p_clip=p_clip, p_mu=p_mu, p_final=p_final, pi=pi, lambda_=lam)
    record.validate()
    return record


@dataclass
class BatchPredictions:
    """Vectorized predict() over a sample matrix."""

    p_clip: np.ndarray  # [n, C]
    p_mu: np.ndarray  # [n, C]
    p_final: np.ndarray  # [n, C]
    pi: np.ndarray  # [n, M]
    lambda_: np.ndarray  # [n]
    degenerate_substitutions: int = 0

    def record(self, i: int) -> PredictionRecord:
        return PredictionRecord(
            p_clip=self.p_clip[i],
            p_mu=self.p_mu[i],
            p_final=self.p_final[i],
            pi=self.pi[i],
            lambda_=float(self.lambda_[i]),
        )


def predict_batch(
    x_rows: np.ndarray,
    adapter: AdapterParams,
    bank: CentroidBank,
    text_bank: ClassTextBank,
    config: InferenceConfig,
) -> BatchPredictions:
    """predict() over rows, through the hot aggregation kernel."""
    config.validate()
    x = np.ascontiguousarray(x_rows, dtype=np.float64)
    texts = text_bank.zero_shot_texts()
    p_clip = kernels.softmax_rows(x @ texts.T, config.tau)
    mu_v = np.ascontiguousarray(bank.mu_v)
    if mu_v.shape[0] == 0:
        raise EmptyPool("centroid bank is empty")
    pi = kernels.softmax_rows(x @ mu_v.T, config.tau_c)
    x_adapted = (
        x if adapter.is_identity() else forward_adapter_rows(adapter, x, config.eps)
    )
    p_mu, degen = kernels.aggregate_sh_probs(
        np.ascontiguousarray(x_adapted),
        mu_v,
        np.ascontiguousarray(text_bank.t_hat),
        pi,
        config.tau,
        config.eps,
    )
    n_degen = int(degen.sum())
    if n_degen:
        log.warning("%d degenerate sample/centroid pairs replaced with uniform", n_degen)
    lam = p_clip.max(axis=1)
    p_final = lam[:, None] * p_clip + (1.0 - lam)[:, None] * p_mu
    return BatchPredictions(
        p_clip=p_clip,
        p_mu=p_mu,
        p_final=p_final,
        pi=pi,
        lambda_=lam,
        degenerate_substitutions=n_degen,
    )
