"""Synthetic embedding benchmarks with controllable class/style geometry.

Image samples live on the unit sphere around class directions shifted by
per-domain style offsets; text vectors share the class directions but
sit across a fixed modality gap, carry a per-template style component,
and get per-(template, class) jitter. Style offsets default to the
orthogonal complement of the class span, which makes exact centering
recover class directions exactly; a confounded mode drops that
constraint to stress the method.

Every random draw comes from a named counter-based generator (Philox)
keyed by (seed, purpose, indices), so adding classes, domains or
templates never reshuffles the draws of existing ones.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, asdict, field

import numpy as np

from .core import EmbeddingDataset, l2_normalize
from .errors import InvalidConfig
from .homogenize import ClassTextBank, build_text_bank
from .templates import (
    ADDITIONAL_STYLE_TEMPLATES,
    PLAIN_TEMPLATE,
    source_template_for,
    style_word,
)

# stream tags for the per-purpose generators
_S_CLASS = 1
_S_OFFSET = 2
_S_GAP = 3
_S_STYLE = 4
_S_IMAGE = 5
_S_TEXT = 6


@dataclass
class GenConfig:
    """Benchmark geometry and sampling controls.

    alpha scales the class signal, beta the domain style offset, sigma
    the isotropic image noise, gamma the image/text modality gap, and
    template_noise the per-(template, class) text jitter. The defaults
    are the standard desk-scale benchmark.
    """

    dim: int = 64
    num_classes: int = 10
    num_source_domains: int = 3
    num_target_domains: int = 1
    samples_per_domain_class: int = 50
    alpha: float = 1.0
    beta: float = 1.5
    sigma: float = 0.3
    gamma: float = 1.0
    template_noise: float = 0.1
    num_source_templates: int | None = None
    num_additional_templates: int = 58
    seed: int = 0
    confounded: bool = False

    def validate(self) -> None:
        if self.dim < 1 or self.num_classes < 1:
            raise InvalidConfig("dim and num_classes must be at least 1")
        if self.num_source_domains < 1 or self.num_target_domains < 1:
            raise InvalidConfig("need at least one source and one target domain")
        if self.samples_per_domain_class < 1:
            raise InvalidConfig("samples_per_domain_class must be at least 1")
        for name in ("alpha", "beta", "sigma", "gamma", "template_noise"):
            if getattr(self, name) < 0:
                raise InvalidConfig(f"{name} must be >= 0")
        if self.num_additional_templates < 0:
            raise InvalidConfig("num_additional_templates must be >= 0")
        if (
            self.num_source_templates is not None
            and self.num_source_templates != self.num_source_domains
        ):
            raise InvalidConfig(
                "num_source_templates must equal num_source_domains: the offset "
                "projection pairs one source text centroid with each source domain"
            )
        if self.dim < self.num_classes:
            warnings.warn(
                f"dim {self.dim} < num_classes {self.num_classes}: class "
                "directions cannot be orthogonalized",
                stacklevel=2,
            )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class GeneratedBenchmark:
    train: EmbeddingDataset
    test: EmbeddingDataset
    text_bank: ClassTextBank
    raw_text: dict  # (template_id, class_index) -> vector, pre-normalization
    metadata: dict = field(default_factory=dict)


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *key])))


def _template_key(template_id: str) -> int:
    digest = hashlib.blake2s(template_id.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def _class_directions(cfg: GenConfig) -> np.ndarray:
    """Unit class directions, Gram-Schmidt orthogonalized in class order.

    Sequential orthogonalization keeps earlier classes unchanged when
    more classes are added.
    """
    dirs = np.zeros((cfg.num_classes, cfg.dim))
    for c in range(cfg.num_classes):
        raw = _stream(cfg.seed, _S_CLASS, c).standard_normal(cfg.dim)
        if c < cfg.dim:
            for prev in dirs[:c]:
                raw = raw - (raw @ prev) * prev
        dirs[c] = l2_normalize(raw)
    return dirs


def _random_offset(rng: np.random.Generator, class_dirs: np.ndarray, confounded: bool) -> np.ndarray:
    dim = class_dirs.shape[1]
    raw = rng.standard_normal(dim)
    if not confounded and dim > class_dirs.shape[0]:
        raw = raw - class_dirs.T @ (class_dirs @ raw)
    return l2_normalize(raw)


def _domain_words(total: int) -> list[str]:
    words = [style_word(t) for t in ADDITIONAL_STYLE_TEMPLATES]
    if total <= len(words):
        return words[:total]
    extra = [f"style{k:02d}" for k in range(total - len(words))]
    return words + extra


def generate_benchmark(cfg: GenConfig) -> GeneratedBenchmark:
    """Draw the full benchmark: train/test datasets, text bank, metadata.

    Source domains take the first style words of the bundled template
    bank and target domains the following ones, so the bundled prompt
    for a target style exists among the additional templates and carries
    that held-out style in text space, exactly the coverage effect the
    additional centroids rely on.
    """
    cfg.validate()
    class_dirs = _class_directions(cfg)
    class_names = [f"class{c:02d}" for c in range(cfg.num_classes)]
    gap = l2_normalize(_stream(cfg.seed, _S_GAP).standard_normal(cfg.dim))

    n_domains = cfg.num_source_domains + cfg.num_target_domains
    words = _domain_words(n_domains)
    source_words = words[: cfg.num_source_domains]
    target_words = words[cfg.num_source_domains :]
    offsets = {
        w: _random_offset(_stream(cfg.seed, _S_OFFSET, i), class_dirs, cfg.confounded)
        for i, w in enumerate(words)
    }

    def make_split(domain_words: list[str], base_index: int) -> EmbeddingDataset:
        vecs, cls_ids, dom_ids = [], [], []
        for local_id, word in enumerate(domain_words):
            delta = offsets[word]
            for c in range(cfg.num_classes):
                rng = _stream(cfg.seed, _S_IMAGE, base_index + local_id, c)
                noise = rng.standard_normal((cfg.samples_per_domain_class, cfg.dim))
                raw = (
                    cfg.alpha * class_dirs[c]
                    + cfg.beta * delta
                    + cfg.sigma * noise
                )
                for row in raw:
                    vecs.append(l2_normalize(row))
                    cls_ids.append(c)
                    dom_ids.append(local_id)
        return EmbeddingDataset(
            dim=cfg.dim,
            class_names=class_names,
            domain_names=domain_words,
            vectors=np.stack(vecs),
            class_ids=cls_ids,
            domain_ids=dom_ids,
        )

    train = make_split(source_words, 0)
    test = make_split(target_words, cfg.num_source_domains)

    # templates: one source prompt per source domain, then the bundled
    # additional prompts minus any whose style word names a source domain
    source_templates = [source_template_for(w) for w in source_words]
    additional: list[str] = []
    pool = list(ADDITIONAL_STYLE_TEMPLATES)
    k = 0
    while len(additional) < cfg.num_additional_templates:
        if k < len(pool):
            cand = pool[k]
            k += 1
            if style_word(cand) in source_words:
                continue
        else:
            cand = f"a style{k:02d} photo of a {{}}"
            k += 1
        additional.append(cand)

    style_amp = cfg.beta / cfg.alpha if cfg.alpha > 0 else cfg.beta
    style_dirs: dict[str, np.ndarray] = {}

    def template_style(template_id: str, index: int) -> np.ndarray:
        word = style_word(template_id)
        if word in offsets:
            vec = offsets[word]
        else:
            vec = _random_offset(
                _stream(cfg.seed, _S_STYLE, index), class_dirs, cfg.confounded
            )
        style_dirs[template_id] = vec
        return vec

    raw_text: dict[tuple[str, int], np.ndarray] = {}
    all_templates = (
        [(t, template_style(t, i)) for i, t in enumerate(source_templates)]
        + [
            (t, template_style(t, len(source_templates) + i))
            for i, t in enumerate(additional)
        ]
        + [(PLAIN_TEMPLATE, np.zeros(cfg.dim))]
    )
    style_dirs[PLAIN_TEMPLATE] = np.zeros(cfg.dim)
    for template_id, style_vec in all_templates:
        tkey = _template_key(template_id)
        for c in range(cfg.num_classes):
            rng = _stream(cfg.seed, _S_TEXT, tkey, c)
            jitter = cfg.template_noise * rng.standard_normal(cfg.dim)
            raw_text[(template_id, c)] = (
                class_dirs[c] + cfg.gamma * gap + style_amp * style_vec + jitter
            )

    bank = build_text_bank(
        raw_text,
        class_names,
        source_templates,
        additional,
        plain_template=PLAIN_TEMPLATE,
    )
    metadata = {
        "config": cfg.to_dict(),
        "class_names": class_names,
        "source_domains": source_words,
        "target_domains": target_words,
        "class_dirs": class_dirs.tolist(),
        "domain_offsets": {w: offsets[w].tolist() for w in words},
        "gap": gap.tolist(),
        "style_amp": style_amp,
        "template_style_dirs": {t: v.tolist() for t, v in style_dirs.items()},
    }
    return GeneratedBenchmark(
        train=train, test=test, text_bank=bank, raw_text=raw_text, metadata=metadata
    )
