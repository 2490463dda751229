"""shed-lab command line interface.

Subcommands: gen, train, zeroshot, eval, ablate, heatmap, report. Every
run writes a manifest (resolved config, config hash, seeds, versions)
next to its outputs. Any config field can be overridden with a flag of
its dotted name (``--train.epochs 2``) or with ``--set
train.epochs=2``. Exit codes: 0 success, 2 validation error, 3 runtime
error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import dataio
from .errors import ComputeError, ShedLabError, ValidationError
from .harness import (
    ExperimentConfig,
    apply_override,
    default_experiment_config,
    evaluate,
    experiment_config_from_dict,
    export_similarity_heatmap,
    heatmap_to_csv,
    mean_std,
    prepare_data,
    render_suite_csv,
    render_suite_markdown,
    run_ablation_suite,
    run_seed_variants,
)
from .inference import predict_batch
from .synthgen import generate_benchmark
from .trainer import AdapterParams, train
from .zeroshot import clip_zeroshot_batch

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


def _split_overrides(argv: list[str]) -> tuple[list[str], list[tuple[str, str]]]:
    """Pull dotted-name flags out of argv before argparse sees them."""
    rest: list[str] = []
    overrides: list[tuple[str, str]] = []
    i = 0
    while i < len(argv):
        tok = argv[i]
        if tok.startswith("--") and "." in tok.split("=", 1)[0]:
            body = tok[2:]
            if "=" in body:
                key, value = body.split("=", 1)
                overrides.append((key, value))
            else:
                if i + 1 >= len(argv):
                    raise ValidationError(f"flag {tok} needs a value")
                overrides.append((body, argv[i + 1]))
                i += 1
        else:
            rest.append(tok)
        i += 1
    return rest, overrides


def _load_config(args, overrides) -> ExperimentConfig:
    if args.config:
        doc = dataio.load_json(args.config)
    else:
        doc = default_experiment_config().to_dict()
    for key, value in list(getattr(args, "set", []) or []):
        apply_override(doc, key, value)
    for key, value in overrides:
        apply_override(doc, key, value)
    if args.seed is not None:
        doc["seeds"] = [args.seed]
    if args.out:
        doc["output_dir"] = args.out
    cfg = experiment_config_from_dict(doc)
    cfg.validate()
    return cfg


def _outdir(cfg: ExperimentConfig) -> str:
    os.makedirs(cfg.output_dir, exist_ok=True)
    return cfg.output_dir


def _manifest(cfg: ExperimentConfig, command: str) -> None:
    path = os.path.join(cfg.output_dir, "manifest.json")
    dataio.write_manifest(path, command, cfg.to_dict(), cfg.seeds)


def cmd_gen(args, overrides) -> int:
    cfg = _load_config(args, overrides)
    if cfg.gen is None:
        raise ValidationError("gen requires a generation config")
    out = _outdir(cfg)
    seed = cfg.seeds[0]
    bench = generate_benchmark(replace(cfg.gen, seed=seed))
    suffix = ".bin" if args.format == "binary" else ".jsonl"
    dataio.save_dataset(bench.train, os.path.join(out, "train" + suffix))
    dataio.save_dataset(bench.test, os.path.join(out, "test" + suffix))
    dataio.save_text_bank(bench.text_bank, os.path.join(out, "text_bank.jsonl"))
    dataio.save_json(os.path.join(out, "metadata.json"), bench.metadata)
    _manifest(cfg, "gen")
    print(
        f"gen: wrote {len(bench.train)} train / {len(bench.test)} test samples, "
        f"{len(bench.text_bank.per_template)} templates to {out}"
    )
    return EXIT_OK


def cmd_train(args, overrides) -> int:
    cfg = _load_config(args, overrides)
    out = _outdir(cfg)
    seed = cfg.seeds[0]
    prepared = prepare_data(cfg, seed)
    train_cfg = replace(cfg.train, seed=seed)
    result = train(
        prepared.train,
        prepared.text_bank,
        prepared.centroids,
        train_cfg,
        align_sh=not cfg.ablations.no_sh_alignment,
        reg_weight=0.0 if cfg.ablations.no_reg else None,
        ema_centroids=cfg.ablations.ema_centroids,
    )
    dataio.save_checkpoint(
        result.params, os.path.join(out, "checkpoint.json"), train_cfg.to_dict()
    )
    dataio.save_json(
        os.path.join(out, "loss_trace.json"),
        {
            "columns": ["loss_align", "loss_reg"],
            "trace": result.trace.tolist(),
            "epoch_mean_align": result.epoch_mean_align.tolist(),
        },
    )
    _manifest(cfg, "train")
    first = result.epoch_mean_align[0] if result.iterations else float("nan")
    last = result.epoch_mean_align[-1] if result.iterations else float("nan")
    print(f"train: {result.iterations} iterations, epoch-mean alignment loss "
          f"{first:.4f} -> {last:.4f}; checkpoint in {out}")
    return EXIT_OK


def cmd_zeroshot(args, overrides) -> int:
    cfg = _load_config(args, overrides)
    out = _outdir(cfg)
    rows = []
    for seed in cfg.seeds:
        prepared = prepare_data(cfg, seed)
        inf_cfg = replace(cfg.inference, seed=seed)
        texts = prepared.text_bank.zero_shot_texts(args.class_texts)
        raw_report = evaluate(
            prepared.test,
            lambda ds: clip_zeroshot_batch(ds.vectors, texts, inf_cfg.tau),
        )
        if args.sh_mode == "oracle":
            sh_report = evaluate(
                prepared.test, _oracle_sh_predictor(prepared, inf_cfg)
            )
        else:
            outcome = run_seed_variants(cfg, seed, ["zeroshot_sh"], prepared)["zeroshot_sh"]
            sh_report = outcome.report
        rows.append(
            {
                "seed": seed,
                "raw": raw_report.to_dict(),
                "sh": sh_report.to_dict(),
            }
        )
        print(
            f"zeroshot seed {seed}: raw {raw_report.mean_accuracy:.2f}% | "
            f"sh {sh_report.mean_accuracy:.2f}%"
        )
    raw_mean, raw_std = mean_std([r["raw"]["mean_accuracy"] for r in rows])
    sh_mean, sh_std = mean_std([r["sh"]["mean_accuracy"] for r in rows])
    doc = {
        "per_seed": rows,
        "raw_mean": raw_mean,
        "raw_std": raw_std,
        "sh_mean": sh_mean,
        "sh_std": sh_std,
        "sh_mode": args.sh_mode,
        "class_texts": args.class_texts,
    }
    dataio.save_json(os.path.join(out, "zeroshot_report.json"), doc)
    _manifest(cfg, "zeroshot")
    print(f"zeroshot: raw {raw_mean:.2f}+-{raw_std:.2f} | sh {sh_mean:.2f}+-{sh_std:.2f}")
    return EXIT_OK


def _oracle_sh_predictor(prepared, inf_cfg):
    """Transductive diagnostic: center each test domain by its own mean."""
    from .homogenize import center_rows, compute_all_domain_centroids
    from . import kernels

    def predictor(ds):
        if (ds.domain_ids < 0).any():
            raise ValidationError("oracle sh mode needs domain tags on the test set")
        cents = compute_all_domain_centroids(ds)
        probs = np.zeros((len(ds), ds.num_classes))
        for s in range(ds.num_domains):
            mask = ds.domain_ids == s
            centered = center_rows(ds.vectors[mask], cents[s])
            probs[mask] = kernels.softmax_rows(
                centered @ prepared.text_bank.t_hat.T, inf_cfg.tau
            )
        return probs

    return predictor


def cmd_eval(args, overrides) -> int:
    cfg = _load_config(args, overrides)
    out = _outdir(cfg)
    seed = cfg.seeds[0]
    prepared = prepare_data(cfg, seed)
    inf_cfg = replace(cfg.inference, seed=seed)
    if args.checkpoint:
        adapter, _ = dataio.load_checkpoint(args.checkpoint)
    else:
        adapter = AdapterParams.identity(prepared.train.dim)
    if args.bank:
        bank = dataio.load_centroid_bank(args.bank)
    else:
        from .inference import build_centroid_bank

        bank = build_centroid_bank(
            prepared.train,
            prepared.text_bank,
            inf_cfg,
            mu_s=prepared.centroids,
            num_additional=0 if cfg.ablations.no_additional_centroids else None,
            include_cpm=not cfg.ablations.no_cpm,
            include_swm=not cfg.ablations.no_swm,
        )
        dataio.save_centroid_bank(bank, os.path.join(out, "centroid_bank.json"))
    holder = {}

    def predictor(ds):
        holder["batch"] = predict_batch(
            ds.vectors, adapter, bank, prepared.text_bank, inf_cfg
        )
        return holder["batch"].p_mu if cfg.ablations.no_fusion else holder["batch"].p_final

    report = evaluate(prepared.test, predictor)
    batch = holder["batch"]
    score = batch.p_mu if cfg.ablations.no_fusion else batch.p_final
    argmaxes = score.argmax(axis=1)
    dataio.save_predictions(
        os.path.join(out, "predictions.jsonl"),
        (
            {
                "index": i,
                "lambda": float(batch.lambda_[i]),
                "argmax": prepared.test.class_names[int(argmaxes[i])],
                "p_final": batch.p_final[i].tolist(),
            }
            for i in range(len(prepared.test))
        ),
    )
    dataio.save_json(os.path.join(out, "eval_report.json"), report.to_dict())
    dataio.save_json(
        os.path.join(out, "timing.json"),
        {"per_sample_ms": report.timing_ms_per_sample},
    )
    _manifest(cfg, "eval")
    print(f"eval: mean accuracy {report.mean_accuracy:.2f}% over {report.num_samples} samples")
    for dom, acc in report.per_domain.items():
        print(f"  {dom}: {acc:.2f}%")
    return EXIT_OK


def cmd_ablate(args, overrides) -> int:
    cfg = _load_config(args, overrides)
    if args.all:
        from .harness import AblationFlags

        cfg.ablations = AblationFlags(**{k: True for k in cfg.ablations.to_dict()})
    out = _outdir(cfg)
    result = run_ablation_suite(cfg)
    dataio.save_json(os.path.join(out, "suite_report.json"), result.to_dict())
    dataio.atomic_write_text(os.path.join(out, "suite_report.csv"), render_suite_csv(result))
    dataio.atomic_write_text(os.path.join(out, "suite_report.md"), render_suite_markdown(result))
    _manifest(cfg, "ablate")
    for row in result.rows:
        note = f"  ({row.errors[0]})" if row.errors else ""
        print(
            f"ablate {row.name}: {row.mean:.2f}+-{row.std:.2f} "
            f"(delta {row.delta_vs_full:+.2f}){note}"
        )
    return EXIT_OK


def cmd_heatmap(args, overrides) -> int:
    cfg = _load_config(args, overrides)
    out = _outdir(cfg)
    seed = cfg.seeds[0]
    prepared = prepare_data(cfg, seed)
    adapter = None
    if args.checkpoint:
        adapter, _ = dataio.load_checkpoint(args.checkpoint)
    dataset = prepared.test if args.split == "test" else prepared.train
    matrix = export_similarity_heatmap(dataset, prepared.text_bank, args.mode, adapter)
    path = os.path.join(out, f"heatmap_{args.mode}.csv")
    dataio.atomic_write_text(path, heatmap_to_csv(matrix, dataset.class_names))
    _manifest(cfg, "heatmap")
    print(f"heatmap: wrote {matrix.shape[0]}x{matrix.shape[1]} grid to {path}")
    return EXIT_OK


def cmd_report(args, overrides) -> int:
    rows = []
    for path in args.inputs:
        doc = dataio.load_json(path)
        if "rows" in doc:  # ablation suite
            for row in doc["rows"]:
                rows.append(
                    {
                        "source": os.path.basename(path),
                        "name": row["name"],
                        "mean": row["mean"],
                        "std": row["std"],
                    }
                )
        elif "mean_accuracy" in doc:  # single eval report
            rows.append(
                {
                    "source": os.path.basename(path),
                    "name": "eval",
                    "mean": doc["mean_accuracy"],
                    "std": 0.0,
                }
            )
        else:
            raise ValidationError(f"{path}: not a recognized report document")
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    csv_lines = ["source,name,mean,std"] + [
        f"{r['source']},{r['name']},{r['mean']:.4f},{r['std']:.4f}" for r in rows
    ]
    md_lines = ["| source | name | mean | std |", "|---|---|---|---|"] + [
        f"| {r['source']} | {r['name']} | {r['mean']:.2f} | {r['std']:.2f} |" for r in rows
    ]
    dataio.atomic_write_text(os.path.join(out, "report.csv"), "\n".join(csv_lines) + "\n")
    dataio.atomic_write_text(os.path.join(out, "report.md"), "\n".join(md_lines) + "\n")
    print(f"report: consolidated {len(rows)} rows into {out}/report.csv")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shed-lab",
        description="Style-homogenized embedding alignment experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="experiment config JSON")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", default=[],
                       help="dotted config override, e.g. train.epochs=2")
        p.add_argument("--seed", type=int, default=None, help="single seed shortcut")
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("gen", help="generate a synthetic benchmark")
    common(p)
    p.add_argument("--format", choices=["jsonl", "binary"], default="jsonl")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train the adapter")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("zeroshot", help="raw and style-homogenized zero-shot accuracy")
    common(p)
    p.add_argument("--class-texts", choices=["aggregated", "plain"], default="aggregated")
    p.add_argument("--sh-mode", choices=["aggregate", "oracle"], default="aggregate")
    p.set_defaults(func=cmd_zeroshot)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    common(p)
    p.add_argument("--checkpoint", help="adapter checkpoint (identity if omitted)")
    p.add_argument("--bank", help="load a saved centroid bank instead of building")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the ablation suite")
    common(p)
    p.add_argument("--all", action="store_true", help="enable every ablation flag")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("heatmap", help="export cross-modal class similarity grid")
    common(p)
    p.add_argument("--mode", choices=["raw", "homogenized", "post-training"], default="raw")
    p.add_argument("--split", choices=["train", "test"], default="test")
    p.add_argument("--checkpoint", help="adapter checkpoint for post-training mode")
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("report", help="consolidate report JSONs into CSV/Markdown")
    p.add_argument("inputs", nargs="+", help="eval or suite report JSON files")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        rest, overrides = _split_overrides(argv)
        parser = build_parser()
        args = parser.parse_args(rest)
        return args.func(args, overrides)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ComputeError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ShedLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
