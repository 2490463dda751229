"""Experiment harness: configs, evaluation, ablation suite, heatmaps.

Ties generation, training and inference into seeded, reproducible runs.
Report artifacts contain only deterministic values; wall-clock timings
are kept separate so identical seeds produce byte-identical reports.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace, asdict
from typing import Callable

import numpy as np

from .core import EmbeddingDataset
from .dataio import load_dataset, load_text_bank
from .errors import (
    EmptyClass,
    EmptyDataset,
    InvalidConfig,
    ShedLabError,
    ValidationError,
)
from .homogenize import (
    ClassTextBank,
    center_rows,
    compute_all_domain_centroids,
    compute_text_domain_centroid,
)
from .inference import (
    CentroidBank,
    InferenceConfig,
    build_centroid_bank,
    predict_batch,
)
from .synthgen import GenConfig, generate_benchmark
from .trainer import AdapterParams, TrainConfig, TrainResult, forward_adapter_rows, train
from .zeroshot import clip_zeroshot_batch

ABLATION_NAMES = (
    "no_sh_alignment",
    "no_reg",
    "no_fusion",
    "no_additional_centroids",
    "no_cpm",
    "no_swm",
    "ema_centroids",
    "single_template_centering",
)


@dataclass
class AblationFlags:
    no_sh_alignment: bool = False
    no_reg: bool = False
    no_fusion: bool = False
    no_additional_centroids: bool = False
    no_cpm: bool = False
    no_swm: bool = False
    ema_centroids: bool = False
    single_template_centering: bool = False

    def enabled(self) -> list[str]:
        return [name for name in ABLATION_NAMES if getattr(self, name)]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ExperimentConfig:
    """One experiment: data source, training, inference, variants, seeds."""

    gen: GenConfig | None = None
    train_path: str | None = None
    test_path: str | None = None
    text_bank_path: str | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    ablations: AblationFlags = field(default_factory=AblationFlags)
    seeds: list[int] = field(default_factory=lambda: [0])
    output_dir: str = "runs/experiment"

    def validate(self) -> None:
        if not self.seeds:
            raise InvalidConfig("at least one seed is required")
        has_paths = self.train_path and self.test_path and self.text_bank_path
        if self.gen is None and not has_paths:
            raise InvalidConfig(
                "either a generation config or train/test/text-bank paths are required"
            )
        self.train.validate()
        self.inference.validate()
        if self.gen is not None:
            self.gen.validate()

    def to_dict(self) -> dict:
        return {
            "gen": self.gen.to_dict() if self.gen is not None else None,
            "data": {
                "train": self.train_path,
                "test": self.test_path,
                "text_bank": self.text_bank_path,
            },
            "train": self.train.to_dict(),
            "inference": self.inference.to_dict(),
            "ablations": self.ablations.to_dict(),
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
        }


def default_experiment_config() -> ExperimentConfig:
    """Desk-scale defaults for the synthetic benchmark.

    Training shrinks to a few hundred iterations and both softmax
    temperatures relax to 1/5, the small-regime settings; the assignment
    temperature follows the per-dataset override convention.
    """
    return ExperimentConfig(
        gen=GenConfig(),
        train=TrainConfig(
            tau=0.2,
            epochs=4,
            iterations_per_epoch=50,
            batch_size=128,
            learning_rate=2e-3,
            weight_decay=0.01,
        ),
        inference=InferenceConfig(tau=0.2, tau_c=0.2),
        seeds=list(range(10)),
    )


def experiment_config_from_dict(doc: dict) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if doc.get("gen") is not None:
        cfg.gen = GenConfig(**doc["gen"])
    else:
        cfg.gen = None
    data = doc.get("data") or {}
    cfg.train_path = data.get("train")
    cfg.test_path = data.get("test")
    cfg.text_bank_path = data.get("text_bank")
    if "train" in doc:
        cfg.train = TrainConfig(**doc["train"])
    if "inference" in doc:
        cfg.inference = InferenceConfig(**doc["inference"])
    if "ablations" in doc:
        unknown = set(doc["ablations"]) - set(ABLATION_NAMES)
        if unknown:
            raise InvalidConfig(f"unknown ablation flags: {sorted(unknown)}")
        cfg.ablations = AblationFlags(**doc["ablations"])
    if "seeds" in doc:
        cfg.seeds = [int(s) for s in doc["seeds"]]
    if "output_dir" in doc:
        cfg.output_dir = doc["output_dir"]
    return cfg


def apply_override(doc: dict, dotted: str, raw_value: str) -> None:
    """Set a nested config key through its dotted path, parsing the value
    as JSON when possible."""
    import json

    keys = dotted.split(".")
    node = doc
    for key in keys[:-1]:
        nxt = node.get(key)
        if not isinstance(nxt, dict):
            nxt = {}
            node[key] = nxt
        node = nxt
    try:
        value = json.loads(raw_value)
    except json.JSONDecodeError:
        value = raw_value
    node[keys[-1]] = value


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    """Per-domain and mean top-1 accuracy for one evaluation pass."""

    per_domain: dict[str, float]
    mean_accuracy: float
    num_samples: int
    timing_ms_per_sample: float | None = None

    def to_dict(self, include_timing: bool = False) -> dict:
        doc = {
            "per_domain": dict(self.per_domain),
            "mean_accuracy": self.mean_accuracy,
            "num_samples": self.num_samples,
        }
        if include_timing and self.timing_ms_per_sample is not None:
            doc["timing_ms_per_sample"] = self.timing_ms_per_sample
        return doc


def evaluate(
    test: EmbeddingDataset,
    predictor: Callable[[EmbeddingDataset], np.ndarray],
) -> EvalReport:
    """Score a predictor; the mean is the arithmetic mean over domains.

    The predictor maps a dataset to an [n, C] matrix of class
    probabilities (any row-monotone score works for top-1).
    """
    if len(test) == 0:
        raise EmptyDataset("cannot evaluate an empty dataset")
    t0 = time.perf_counter()
    probs = predictor(test)
    elapsed_ms = (time.perf_counter() - t0) * 1000.0
    probs = np.asarray(probs)
    if probs.shape != (len(test), test.num_classes):
        raise ValidationError(
            f"predictor returned shape {probs.shape}, expected "
            f"({len(test)}, {test.num_classes})"
        )
    hits = probs.argmax(axis=1) == test.class_ids

    per_domain: dict[str, float] = {}
    tagged = test.domain_ids >= 0
    if tagged.any():
        for did, name in enumerate(test.domain_names):
            mask = test.domain_ids == did
            if mask.any():
                per_domain[name] = float(hits[mask].mean() * 100.0)
    if (~tagged).any():
        per_domain["(untagged)"] = float(hits[~tagged].mean() * 100.0)
    mean_acc = float(np.mean(list(per_domain.values())))
    return EvalReport(
        per_domain=per_domain,
        mean_accuracy=mean_acc,
        num_samples=len(test),
        timing_ms_per_sample=elapsed_ms / len(test),
    )


def mean_std(values: list[float]) -> tuple[float, float]:
    """Sample mean and standard deviation (ddof 1; zero for n < 2)."""
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return mean, std


# ---------------------------------------------------------------------------
# per-seed pipeline
# ---------------------------------------------------------------------------

@dataclass
class PreparedData:
    train: EmbeddingDataset
    test: EmbeddingDataset
    text_bank: ClassTextBank
    centroids: np.ndarray
    metadata: dict | None = None


def prepare_data(config: ExperimentConfig, seed: int) -> PreparedData:
    """Generate or load the data for one seed and freeze source centroids."""
    if config.gen is not None:
        bench = generate_benchmark(replace(config.gen, seed=seed))
        train_ds, test_ds, bank = bench.train, bench.test, bench.text_bank
        metadata = bench.metadata
    else:
        train_ds = load_dataset(config.train_path, expect_source=True)
        test_ds = load_dataset(config.test_path)
        bank = load_text_bank(config.text_bank_path)
        metadata = None
    if bank.class_names != train_ds.class_names:
        raise ValidationError("text bank and training data disagree on classes")
    if test_ds.class_names != train_ds.class_names:
        raise ValidationError("train and test data disagree on classes")
    if len(bank.source_templates) != train_ds.num_domains:
        raise ValidationError(
            f"{len(bank.source_templates)} source templates for "
            f"{train_ds.num_domains} source domains"
        )
    centroids = compute_all_domain_centroids(train_ds)
    return PreparedData(train_ds, test_ds, bank, centroids, metadata)


@dataclass
class VariantOutcome:
    name: str
    report: EvalReport
    trace: np.ndarray | None = None
    epoch_mean_align: np.ndarray | None = None
    error: str | None = None


def _fused_predictor(adapter, bank, text_bank, inf_cfg, score: str):
    def predictor(ds: EmbeddingDataset) -> np.ndarray:
        batch = predict_batch(ds.vectors, adapter, bank, text_bank, inf_cfg)
        return getattr(batch, score)

    return predictor


def run_seed_variants(
    config: ExperimentConfig,
    seed: int,
    variants: list[str],
    prepared: PreparedData | None = None,
) -> dict[str, VariantOutcome]:
    """Run the requested variants for one seed over shared data.

    Retraining happens only where the variant changes the training
    objective; inference-only variants reuse the baseline adapter.
    Recognized names: ``full``, ``zeroshot_raw``, ``zeroshot_sh`` and the
    ablation flags.
    """
    if prepared is None:
        prepared = prepare_data(config, seed)
    train_ds, test_ds = prepared.train, prepared.test
    bank_text = prepared.text_bank
    centroids = prepared.centroids
    train_cfg = replace(config.train, seed=seed)
    inf_cfg = replace(config.inference, seed=seed)
    identity = AdapterParams.identity(train_ds.dim)

    bank_cache: dict[tuple, CentroidBank] = {}

    def get_bank(
        mu_s_key: str = "frozen",
        mu_s: np.ndarray | None = None,
        num_additional: int | None = None,
        include_cpm: bool = True,
        include_swm: bool = True,
        text: ClassTextBank | None = None,
    ) -> CentroidBank:
        key = (mu_s_key, num_additional, include_cpm, include_swm, id(text))
        if key not in bank_cache:
            bank_cache[key] = build_centroid_bank(
                train_ds,
                text if text is not None else bank_text,
                inf_cfg,
                mu_s=centroids if mu_s is None else mu_s,
                num_additional=num_additional,
                include_cpm=include_cpm,
                include_swm=include_swm,
            )
        return bank_cache[key]

    train_cache: dict[str, TrainResult] = {}

    def get_training(kind: str, text: ClassTextBank | None = None) -> TrainResult:
        if kind not in train_cache:
            kwargs: dict = {}
            if kind == "no_sh_alignment":
                kwargs["align_sh"] = False
            elif kind == "no_reg":
                kwargs["reg_weight"] = 0.0
            elif kind == "ema_centroids":
                kwargs["ema_centroids"] = True
            train_cache[kind] = train(
                train_ds,
                text if text is not None else bank_text,
                centroids,
                train_cfg,
                **kwargs,
            )
        return train_cache[kind]

    outcomes: dict[str, VariantOutcome] = {}
    for name in variants:
        try:
            outcomes[name] = _run_one_variant(
                name, config, test_ds, bank_text, inf_cfg, identity,
                get_bank, get_training,
            )
        except ShedLabError as exc:
            outcomes[name] = VariantOutcome(
                name=name,
                report=EvalReport(per_domain={}, mean_accuracy=float("nan"), num_samples=0),
                error=f"{type(exc).__name__}: {exc}",
            )
    return outcomes


def _run_one_variant(
    name, config, test_ds, bank_text, inf_cfg, identity, get_bank, get_training
) -> VariantOutcome:
    if name == "zeroshot_raw":
        texts = bank_text.zero_shot_texts()
        predictor = lambda ds: clip_zeroshot_batch(ds.vectors, texts, inf_cfg.tau)
        return VariantOutcome(name, evaluate(test_ds, predictor))
    if name == "zeroshot_sh":
        predictor = _fused_predictor(identity, get_bank(), bank_text, inf_cfg, "p_mu")
        return VariantOutcome(name, evaluate(test_ds, predictor))
    if name == "full":
        result = get_training("full")
        predictor = _fused_predictor(result.params, get_bank(), bank_text, inf_cfg, "p_final")
        return VariantOutcome(
            name, evaluate(test_ds, predictor), result.trace, result.epoch_mean_align
        )
    if name == "no_sh_alignment" or name == "no_reg":
        result = get_training(name)
        predictor = _fused_predictor(result.params, get_bank(), bank_text, inf_cfg, "p_final")
        return VariantOutcome(
            name, evaluate(test_ds, predictor), result.trace, result.epoch_mean_align
        )
    if name == "no_fusion":
        result = get_training("full")
        predictor = _fused_predictor(result.params, get_bank(), bank_text, inf_cfg, "p_mu")
        return VariantOutcome(name, evaluate(test_ds, predictor))
    if name == "no_additional_centroids":
        result = get_training("full")
        bank = get_bank(num_additional=0)
        predictor = _fused_predictor(result.params, bank, bank_text, inf_cfg, "p_final")
        return VariantOutcome(name, evaluate(test_ds, predictor))
    if name == "no_cpm":
        result = get_training("full")
        bank = get_bank(include_cpm=False)
        predictor = _fused_predictor(result.params, bank, bank_text, inf_cfg, "p_final")
        return VariantOutcome(name, evaluate(test_ds, predictor))
    if name == "no_swm":
        result = get_training("full")
        bank = get_bank(include_swm=False)
        predictor = _fused_predictor(result.params, bank, bank_text, inf_cfg, "p_final")
        return VariantOutcome(name, evaluate(test_ds, predictor))
    if name == "ema_centroids":
        result = get_training("ema_centroids")
        bank = get_bank(mu_s_key="ema", mu_s=result.centroids)
        predictor = _fused_predictor(result.params, bank, bank_text, inf_cfg, "p_final")
        return VariantOutcome(
            name, evaluate(test_ds, predictor), result.trace, result.epoch_mean_align
        )
    if name == "single_template_centering":
        if bank_text.plain_template is None:
            raise InvalidConfig(
                "single_template_centering needs a plain template in the text bank"
            )
        mu_plain = compute_text_domain_centroid(bank_text, bank_text.plain_template)
        recentered = bank_text.recenter(mu_plain)
        result = get_training("single_template_centering", text=recentered)
        bank = get_bank(text=recentered)
        predictor = _fused_predictor(result.params, bank, recentered, inf_cfg, "p_final")
        return VariantOutcome(
            name, evaluate(test_ds, predictor), result.trace, result.epoch_mean_align
        )
    raise InvalidConfig(f"unknown variant {name!r}")


# ---------------------------------------------------------------------------
# ablation suite
# ---------------------------------------------------------------------------

@dataclass
class SuiteRow:
    name: str
    per_seed_mean: list[float]
    mean: float
    std: float
    delta_vs_full: float
    per_domain_mean: dict[str, float]
    errors: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SuiteResult:
    rows: list[SuiteRow]
    seeds: list[int]

    def to_dict(self) -> dict:
        return {"seeds": list(self.seeds), "rows": [r.to_dict() for r in self.rows]}

    def row(self, name: str) -> SuiteRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)


def run_ablation_suite(
    config: ExperimentConfig, extra_variants: list[str] | None = None
) -> SuiteResult:
    """Baseline plus each enabled ablation, sharing seeds and data.

    A failing variant becomes a row with an error note instead of
    aborting the suite. Deltas are against the full method's per-seed
    means.
    """
    config.validate()
    variant_names = ["full"] + (extra_variants or []) + config.ablations.enabled()
    per_variant: dict[str, list[float]] = {v: [] for v in variant_names}
    per_domain_acc: dict[str, dict[str, list[float]]] = {v: {} for v in variant_names}
    errors: dict[str, list[str]] = {v: [] for v in variant_names}

    for seed in config.seeds:
        prepared = prepare_data(config, seed)
        outcomes = run_seed_variants(config, seed, variant_names, prepared)
        for v in variant_names:
            out = outcomes[v]
            if out.error is not None:
                errors[v].append(f"seed {seed}: {out.error}")
                continue
            per_variant[v].append(out.report.mean_accuracy)
            for dom, acc in out.report.per_domain.items():
                per_domain_acc[v].setdefault(dom, []).append(acc)

    full_mean, _ = mean_std(per_variant["full"]) if per_variant["full"] else (float("nan"), 0.0)
    rows = []
    for v in variant_names:
        vals = per_variant[v]
        mean, std = mean_std(vals) if vals else (float("nan"), 0.0)
        rows.append(
            SuiteRow(
                name=v,
                per_seed_mean=vals,
                mean=mean,
                std=std,
                delta_vs_full=mean - full_mean,
                per_domain_mean={
                    d: mean_std(a)[0] for d, a in sorted(per_domain_acc[v].items())
                },
                errors=errors[v],
            )
        )
    return SuiteResult(rows=rows, seeds=list(config.seeds))


# ---------------------------------------------------------------------------
# similarity heatmap
# ---------------------------------------------------------------------------

def export_similarity_heatmap(
    dataset: EmbeddingDataset,
    text_bank: ClassTextBank,
    mode: str = "raw",
    adapter: AdapterParams | None = None,
) -> np.ndarray:
    """C x C cosine matrix between class image centroids and class texts.

    raw: plain class means against aggregate prototypes. homogenized:
    domain-centered unit embeddings against centered prototypes.
    post-training: the adapter runs first, centering still uses the base
    domain centroids. Rows index image classes, columns text classes.
    """
    if mode not in ("raw", "homogenized", "post-training"):
        raise InvalidConfig(f"unknown heatmap mode {mode!r}")
    c = dataset.num_classes
    for cid in range(c):
        if dataset.class_indices(cid).size == 0:
            raise EmptyClass(f"class {dataset.class_names[cid]!r} has no samples")

    if mode == "raw":
        img_rows = dataset.vectors
        txt = text_bank.t_agg
    else:
        if (dataset.domain_ids < 0).any():
            raise ValidationError(
                "homogenized heatmaps need domain tags on every sample"
            )
        centroids = compute_all_domain_centroids(dataset)
        base = dataset.vectors
        rows = base
        if mode == "post-training":
            if adapter is None:
                raise InvalidConfig("post-training heatmap needs an adapter")
            rows = forward_adapter_rows(adapter, base)
        img_rows = np.vstack(
            [
                center_rows(rows[dataset.domain_ids == s], centroids[s])
                for s in range(dataset.num_domains)
            ]
        )
        order = np.concatenate(
            [np.flatnonzero(dataset.domain_ids == s) for s in range(dataset.num_domains)]
        )
        img_cls = dataset.class_ids[order]
        txt = text_bank.t_hat
        img_cent = np.stack([img_rows[img_cls == cid].mean(axis=0) for cid in range(c)])
        return _cosine_grid(img_cent, txt)

    img_cent = np.stack(
        [img_rows[dataset.class_ids == cid].mean(axis=0) for cid in range(c)]
    )
    return _cosine_grid(img_cent, txt)


def _cosine_grid(rows_a: np.ndarray, rows_b: np.ndarray) -> np.ndarray:
    na = np.linalg.norm(rows_a, axis=1, keepdims=True)
    nb = np.linalg.norm(rows_b, axis=1, keepdims=True)
    return (rows_a / na) @ (rows_b / nb).T


def heatmap_to_csv(matrix: np.ndarray, class_names: list[str]) -> str:
    lines = ["# classes: " + ",".join(class_names)]
    for row in matrix:
        lines.append(",".join(repr(float(x)) for x in row))
    return "\n".join(lines) + "\n"


def diagonal_dominance(matrix: np.ndarray) -> float:
    """Mean diagonal similarity minus mean off-diagonal similarity."""
    c = matrix.shape[0]
    diag = float(np.trace(matrix) / c)
    off = float((matrix.sum() - np.trace(matrix)) / (c * c - c)) if c > 1 else 0.0
    return diag - off


# ---------------------------------------------------------------------------
# report rendering
# ---------------------------------------------------------------------------

def render_suite_csv(result: SuiteResult) -> str:
    domains = sorted({d for r in result.rows for d in r.per_domain_mean})
    header = ["variant", *domains, "mean", "std", "delta_vs_full"]
    lines = [",".join(header)]
    for r in result.rows:
        cells = [r.name]
        cells += [f"{r.per_domain_mean.get(d, float('nan')):.4f}" for d in domains]
        cells += [f"{r.mean:.4f}", f"{r.std:.4f}", f"{r.delta_vs_full:+.4f}"]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def render_suite_markdown(result: SuiteResult) -> str:
    domains = sorted({d for r in result.rows for d in r.per_domain_mean})
    header = ["variant", *domains, "mean", "std", "delta"]
    lines = [
        "| " + " | ".join(header) + " |",
        "|" + "---|" * len(header),
    ]
    for r in result.rows:
        cells = [r.name]
        cells += [f"{r.per_domain_mean.get(d, float('nan')):.2f}" for d in domains]
        cells += [f"{r.mean:.2f}", f"{r.std:.2f}", f"{r.delta_vs_full:+.2f}"]
        lines.append("| " + " | ".join(cells) + " |")
        for err in r.errors:
            lines.append(f"| {r.name} (error) | {err} |")
    return "\n".join(lines) + "\n"
