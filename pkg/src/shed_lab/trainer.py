"""Adapter training loop with hand-derived, finite-difference-checked gradients.

The trainable object is an affine map z = A x + b applied to frozen base
embeddings and renormalized; it stands in for encoder fine-tuning while
keeping every loss term and gradient path intact. The objective is the
centered-cosine cross-entropy plus an elementwise L1 anchor that ties
both the adapted embedding and its centered form to their frozen base
counterparts. Optimization is adaptive-moment with decoupled weight
decay and a cosine learning-rate schedule, all in numpy so runs are
deterministic for a given seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from . import kernels
from .core import DEFAULT_EPS, EmbeddingDataset, as_vector
from .errors import (
    DegenerateEmbedding,
    InvalidConfig,
    NonFiniteLoss,
    UnknownDomain,
)
from .homogenize import ClassTextBank


@dataclass
class AdapterParams:
    """Affine adapter: matrix plus bias, applied before renormalization.

    Starts at identity/zero so the initial adapted embedding equals the
    base embedding; the frozen centroids and the anchor loss are exact
    at step 0 because of this.
    """

    a_mat: np.ndarray
    bias: np.ndarray

    @classmethod
    def identity(cls, dim: int) -> "AdapterParams":
        return cls(np.eye(dim), np.zeros(dim))

    @property
    def dim(self) -> int:
        return self.bias.shape[0]

    def copy(self) -> "AdapterParams":
        return AdapterParams(self.a_mat.copy(), self.bias.copy())

    def is_identity(self, tol: float = 0.0) -> bool:
        return (
            np.abs(self.a_mat - np.eye(self.dim)).max() <= tol
            and np.abs(self.bias).max() <= tol
        )


@dataclass
class TrainConfig:
    """Training hyperparameters.

    Defaults mirror the large-benchmark regime (tau 1/20, 500 iterations
    per epoch, cosine decay); desk-scale experiment configs override
    them. reg_weight exists for the no-anchor ablation only and stays at
    1.0 otherwise.
    """

    tau: float = 1.0 / 20.0
    epochs: int = 10
    iterations_per_epoch: int = 500
    batch_size: int = 64
    learning_rate: float = 1e-5
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    schedule: str = "cosine"
    seed: int = 0
    eps: float = DEFAULT_EPS
    reg_weight: float = 1.0
    balanced_domains: bool = False
    ema_momentum: float = 0.9

    def validate(self) -> None:
        if not self.tau > 0:
            raise InvalidConfig(f"tau must be positive, got {self.tau}")
        if self.epochs < 0 or self.iterations_per_epoch <= 0 or self.batch_size <= 0:
            raise InvalidConfig("epochs must be >= 0; iteration and batch counts positive")
        if self.learning_rate < 0 or self.weight_decay < 0 or self.reg_weight < 0:
            raise InvalidConfig("learning rate, weight decay and reg weight must be >= 0")
        if self.schedule not in ("cosine", "constant"):
            raise InvalidConfig(f"unknown schedule {self.schedule!r}")
        if not 0.0 <= self.ema_momentum < 1.0:
            raise InvalidConfig("ema momentum must be in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    params: AdapterParams
    trace: np.ndarray  # [iterations, 2] columns (loss_align, loss_reg)
    centroids: np.ndarray  # the centroids inference should use afterwards
    epoch_mean_align: np.ndarray

    @property
    def iterations(self) -> int:
        return self.trace.shape[0]


def forward_adapter(params: AdapterParams, base_vec, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Adapted embedding: normalize(A x + b)."""
    x = as_vector(base_vec, params.dim)
    z = params.a_mat @ x + params.bias
    norm = float(np.linalg.norm(z))
    if norm < eps:
        raise DegenerateEmbedding("adapter output has near-zero norm")
    return z / norm


def forward_adapter_rows(params: AdapterParams, x_rows: np.ndarray, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Row-batched forward_adapter."""
    z = x_rows @ params.a_mat.T + params.bias
    norms = np.linalg.norm(z, axis=1)
    bad = np.flatnonzero(norms < eps)
    if bad.size:
        raise DegenerateEmbedding(f"adapter output for row {bad[0]} has near-zero norm")
    return z / norms[:, None]


def softmax_cross_entropy(logits, label: int) -> tuple[float, np.ndarray]:
    """Stable cross-entropy over one logit row plus its logit gradient.

    The gradient is softmax(logits) minus the one-hot target.
    """
    arr = as_vector(logits)
    mx = arr.max()
    e = np.exp(arr - mx)
    denom = e.sum()
    p = e / denom
    loss = float(mx + math.log(denom) - arr[label])
    grad = p.copy()
    grad[label] -= 1.0
    return loss, grad


def _gather_centroids(centroids: np.ndarray, domain_ids: np.ndarray) -> np.ndarray:
    dom = np.asarray(domain_ids, dtype=np.int64)
    if dom.size and (dom.min() < 0 or dom.max() >= centroids.shape[0]):
        raise UnknownDomain("batch contains a domain id without a centroid")
    return centroids[dom]


def _batch_eval(
    x_base: np.ndarray,
    class_ids: np.ndarray,
    domain_ids: np.ndarray,
    params: AdapterParams,
    centroids: np.ndarray,
    t_mat: np.ndarray,
    tau: float,
    reg_weight: float,
    align_sh: bool,
    eps: float,
):
    cent = _gather_centroids(centroids, domain_ids)
    # anchor for the centered form uses the per-sample frozen centroid
    residual = x_base - cent
    norms = np.linalg.norm(residual, axis=1)
    bad = np.flatnonzero(norms < eps)
    if bad.size:
        raise DegenerateEmbedding(f"base sample {bad[0]} coincides with its centroid")
    x_sh = residual / norms[:, None]
    out = kernels.batch_loss_grad(
        params.a_mat,
        params.bias,
        np.ascontiguousarray(x_base),
        x_sh,
        cent,
        np.ascontiguousarray(t_mat),
        np.asarray(class_ids, dtype=np.int64),
        tau,
        reg_weight,
        align_sh,
        eps,
    )
    loss_align, loss_reg, grad_a, grad_b, f_rows, status = out
    if status == kernels.STATUS_DEGENERATE_ADAPTER:
        raise DegenerateEmbedding("adapter output collapsed to zero norm")
    if status == kernels.STATUS_DEGENERATE_CENTERING:
        raise DegenerateEmbedding("adapted embedding coincides with its centroid")
    return loss_align, loss_reg, grad_a, grad_b, f_rows


def loss_align(
    x_base: np.ndarray,
    class_ids: np.ndarray,
    domain_ids: np.ndarray,
    params: AdapterParams,
    centroids: np.ndarray,
    text_bank: ClassTextBank,
    tau: float,
    eps: float = DEFAULT_EPS,
) -> float:
    """Mean centered-cosine cross-entropy over a batch."""
    la, _, _, _, _ = _batch_eval(
        x_base, class_ids, domain_ids, params, centroids, text_bank.t_hat,
        tau, 0.0, True, eps,
    )
    return la


def loss_reg(
    x_base: np.ndarray,
    domain_ids: np.ndarray,
    params: AdapterParams,
    centroids: np.ndarray,
    eps: float = DEFAULT_EPS,
) -> float:
    """Mean elementwise-L1 anchor loss tying adapted rows to base rows."""
    dummy_labels = np.zeros(x_base.shape[0], dtype=np.int64)
    dummy_t = np.zeros((1, x_base.shape[1]))
    _, lr, _, _, _ = _batch_eval(
        x_base, dummy_labels, domain_ids, params, centroids, dummy_t,
        1.0, 1.0, True, eps,
    )
    return lr


def grad_total(
    x_base: np.ndarray,
    class_ids: np.ndarray,
    domain_ids: np.ndarray,
    params: AdapterParams,
    centroids: np.ndarray,
    text_bank: ClassTextBank,
    tau: float,
    reg_weight: float = 1.0,
    align_sh: bool = True,
    eps: float = DEFAULT_EPS,
):
    """Batch losses and gradients of (alignment + reg_weight * anchor).

    Returns (grad_a, grad_b, loss_align, loss_reg). When ``align_sh`` is
    false the cross-entropy runs on uncentered embeddings against the
    renormalized aggregate prototypes (the direct-alignment ablation).
    """
    t_mat = text_bank.t_hat if align_sh else text_bank.zero_shot_texts()
    la, lr, ga, gb, _ = _batch_eval(
        x_base, class_ids, domain_ids, params, centroids, t_mat,
        tau, reg_weight, align_sh, eps,
    )
    return ga, gb, la, lr


class _AdamW:
    """Adaptive-moment update with decoupled weight decay."""

    def __init__(self, shapes, beta1, beta2, eps, weight_decay):
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray], lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1**self.t
        bias2 = 1.0 - b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= lr * self.weight_decay * p
            p -= lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)


def _lr_at(config: TrainConfig, iteration: int, total: int) -> float:
    if config.schedule == "constant" or total <= 1:
        return config.learning_rate
    return config.learning_rate * 0.5 * (1.0 + math.cos(math.pi * iteration / total))


class _BatchSampler:
    """Deterministic batch index stream over the training samples."""

    def __init__(self, dataset: EmbeddingDataset, batch_size: int, seed: int, balanced: bool):
        self.rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5A17]))
        self.batch_size = batch_size
        self.balanced = balanced
        if balanced:
            self.groups = [
                dataset.domain_indices(s) for s in range(dataset.num_domains)
            ]
            self.cursors = [len(g) for g in self.groups]  # force shuffle on first use
            self.orders = [np.arange(len(g)) for g in self.groups]
        else:
            self.indices = np.arange(len(dataset))
            self.cursor = len(self.indices)  # force shuffle on first use
            self.order = np.arange(len(self.indices))

    def _draw_plain(self, count: int) -> np.ndarray:
        out = np.empty(count, dtype=np.int64)
        filled = 0
        while filled < count:
            if self.cursor >= len(self.order):
                self.order = self.rng.permutation(len(self.indices))
                self.cursor = 0
            take = min(count - filled, len(self.order) - self.cursor)
            sel = self.order[self.cursor : self.cursor + take]
            out[filled : filled + take] = self.indices[sel]
            self.cursor += take
            filled += take
        return out

    def _draw_group(self, gid: int, count: int) -> np.ndarray:
        group = self.groups[gid]
        out = np.empty(count, dtype=np.int64)
        filled = 0
        while filled < count:
            if self.cursors[gid] >= len(self.orders[gid]):
                self.orders[gid] = self.rng.permutation(len(group))
                self.cursors[gid] = 0
            take = min(count - filled, len(self.orders[gid]) - self.cursors[gid])
            sel = self.orders[gid][self.cursors[gid] : self.cursors[gid] + take]
            out[filled : filled + take] = group[sel]
            self.cursors[gid] += take
            filled += take
        return out

    def next_batch(self) -> np.ndarray:
        if not self.balanced:
            return self._draw_plain(self.batch_size)
        n_groups = len(self.groups)
        base = self.batch_size // n_groups
        extra = self.batch_size % n_groups
        parts = [
            self._draw_group(g, base + (1 if g < extra else 0))
            for g in range(n_groups)
        ]
        return np.concatenate(parts)


def train(
    dataset: EmbeddingDataset,
    text_bank: ClassTextBank,
    centroids: np.ndarray,
    config: TrainConfig,
    *,
    align_sh: bool = True,
    reg_weight: float | None = None,
    ema_centroids: bool = False,
) -> TrainResult:
    """Run the full training loop and return the adapter plus loss trace.

    ``centroids`` are the frozen per-domain means of the base embeddings
    (row s for domain id s). With ``ema_centroids`` the loop instead
    drifts a copy of them toward the per-batch means of the adapted
    embeddings; this exists to reproduce the degradation of the
    moving-average variant and the drifted centroids are returned so
    inference can use what training used.
    """
    config.validate()
    dataset.require_source_domains()
    if centroids.shape != (dataset.num_domains, dataset.dim):
        raise InvalidConfig(
            f"centroid matrix shape {centroids.shape} does not match dataset"
        )
    w_reg = config.reg_weight if reg_weight is None else reg_weight

    params = AdapterParams.identity(dataset.dim)
    live_centroids = centroids.copy()
    total_iters = config.epochs * config.iterations_per_epoch
    trace = np.zeros((total_iters, 2))
    if total_iters == 0:
        return TrainResult(params, trace, live_centroids, np.zeros(0))

    sampler = _BatchSampler(dataset, config.batch_size, config.seed, config.balanced_domains)
    opt = _AdamW(
        [params.a_mat.shape, params.bias.shape],
        config.beta1,
        config.beta2,
        config.adam_eps,
        config.weight_decay,
    )
    t_mat = text_bank.t_hat if align_sh else text_bank.zero_shot_texts()

    it = 0
    for _epoch in range(config.epochs):
        for _step in range(config.iterations_per_epoch):
            idx = sampler.next_batch()
            xb = dataset.vectors[idx]
            yb = dataset.class_ids[idx]
            db = dataset.domain_ids[idx]
            la, lr_loss, ga, gb, f_rows = _batch_eval(
                xb, yb, db, params, live_centroids, t_mat,
                config.tau, w_reg, align_sh, config.eps,
            )
            if not (math.isfinite(la) and math.isfinite(lr_loss)):
                raise NonFiniteLoss(
                    f"iteration {it}: loss_align={la!r} loss_reg={lr_loss!r}"
                )
            trace[it, 0] = la
            trace[it, 1] = lr_loss
            lr_now = _lr_at(config, it, total_iters)
            opt.step([params.a_mat, params.bias], [ga, gb], lr_now)
            if ema_centroids:
                m = config.ema_momentum
                for dom in np.unique(db):
                    rows = f_rows[db == dom]
                    live_centroids[dom] = (
                        m * live_centroids[dom] + (1.0 - m) * rows.mean(axis=0)
                    )
            it += 1

    epoch_means = trace[:, 0].reshape(config.epochs, config.iterations_per_epoch).mean(axis=1)
    return TrainResult(params, trace, live_centroids, epoch_means)
