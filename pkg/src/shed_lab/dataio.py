"""File formats: datasets, text banks, checkpoints, centroid banks, dumps.

The canonical dataset format is newline-delimited JSON: one header
record, then one record per sample. It round-trips float64 exactly. A
binary sidecar format stores vectors as little-endian float32 (row
major) after the same JSON header line for large runs; it is lossy by
design and documented in the README. All writes are atomic
(temp file + rename).
"""

from __future__ import annotations

import hashlib
import json
import os
import platform
import sys
import tempfile
from typing import Iterable

import numpy as np

from .core import EmbeddingDataset
from .errors import ParseError, SchemaVersionMismatch, ValidationError
from .homogenize import ClassTextBank, build_text_bank
from .inference import CentroidBank
from .trainer import AdapterParams

SCHEMA_VERSION = 1
BINARY_SUFFIXES = (".bin", ".sbin")


def atomic_write_text(path: str, text: str) -> None:
    _atomic_write(path, text.encode("utf-8"))


def atomic_write_bytes(path: str, payload: bytes) -> None:
    _atomic_write(path, payload)


def _atomic_write(path: str, payload: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def config_hash(obj) -> str:
    """sha256 of the canonical JSON rendering of a config object."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _check_finite_vec(vec, line_no: int) -> list[float]:
    if not isinstance(vec, list) or not vec:
        raise ParseError(f"line {line_no}: 'vec' must be a non-empty list")
    for x in vec:
        if not isinstance(x, (int, float)) or isinstance(x, bool) or not np.isfinite(x):
            raise ParseError(f"line {line_no}: non-finite or non-numeric vector entry")
    return [float(x) for x in vec]


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

def save_dataset(dataset: EmbeddingDataset, path: str) -> None:
    """Write a dataset; binary layout is chosen by file suffix."""
    header = {
        "schema": SCHEMA_VERSION,
        "dim": dataset.dim,
        "classes": dataset.class_names,
        "domains": dataset.domain_names,
    }
    if path.endswith(BINARY_SUFFIXES):
        header["format"] = "binary-f32le"
        header["count"] = len(dataset)
        header["class_ids"] = dataset.class_ids.tolist()
        header["domain_ids"] = dataset.domain_ids.tolist()
        payload = json.dumps(header).encode("utf-8") + b"\n"
        payload += np.ascontiguousarray(dataset.vectors, dtype="<f4").tobytes()
        atomic_write_bytes(path, payload)
        return
    lines = [json.dumps(header)]
    for i in range(len(dataset)):
        dom = int(dataset.domain_ids[i])
        lines.append(
            json.dumps(
                {
                    "domain": dataset.domain_names[dom] if dom >= 0 else None,
                    "class": dataset.class_names[int(dataset.class_ids[i])],
                    "vec": dataset.vectors[i].tolist(),
                }
            )
        )
    atomic_write_text(path, "\n".join(lines) + "\n")


def _parse_header(line: str, path: str) -> dict:
    try:
        header = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path} line 1: invalid JSON header ({exc})") from None
    if not isinstance(header, dict) or "schema" not in header:
        raise ParseError(f"{path} line 1: header must be an object with 'schema'")
    if header["schema"] != SCHEMA_VERSION:
        raise SchemaVersionMismatch(
            f"{path}: schema {header['schema']!r}, this build reads {SCHEMA_VERSION}"
        )
    return header


def load_dataset(path: str, *, expect_source: bool = False) -> EmbeddingDataset:
    """Parse and validate a dataset file, normalizing vectors on ingest.

    ``expect_source`` additionally enforces that every declared domain
    holds at least two samples, the precondition for domain centroids.
    """
    if path.endswith(BINARY_SUFFIXES):
        dataset = _load_dataset_binary(path)
    else:
        dataset = _load_dataset_ndjson(path)
    if expect_source:
        dataset.require_source_domains()
    return dataset


def _load_dataset_ndjson(path: str) -> EmbeddingDataset:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError(f"{path}: empty file")
    header = _parse_header(lines[0], path)
    for key in ("dim", "classes", "domains"):
        if key not in header:
            raise ParseError(f"{path} line 1: header missing {key!r}")
    dim = header["dim"]
    class_names = list(header["classes"])
    domain_names = list(header["domains"])
    class_index = {name: i for i, name in enumerate(class_names)}
    domain_index = {name: i for i, name in enumerate(domain_names)}

    vecs, cls_ids, dom_ids = [], [], []
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path} line {line_no}: invalid JSON ({exc})") from None
        if not isinstance(rec, dict):
            raise ParseError(f"{path} line {line_no}: record must be an object")
        vec = _check_finite_vec(rec.get("vec"), line_no)
        if len(vec) != dim:
            raise ParseError(
                f"{path} line {line_no}: vector has {len(vec)} entries, header says {dim}"
            )
        cname = rec.get("class")
        if cname not in class_index:
            raise ParseError(f"{path} line {line_no}: unknown class {cname!r}")
        dname = rec.get("domain")
        if dname is None:
            dom_ids.append(-1)
        elif dname in domain_index:
            dom_ids.append(domain_index[dname])
        else:
            raise ParseError(f"{path} line {line_no}: unknown domain {dname!r}")
        cls_ids.append(class_index[cname])
        vecs.append(vec)
    if not vecs:
        raise ParseError(f"{path}: no sample records")
    try:
        return EmbeddingDataset(
            dim=dim,
            class_names=class_names,
            domain_names=domain_names,
            vectors=np.asarray(vecs, dtype=np.float64),
            class_ids=cls_ids,
            domain_ids=dom_ids,
            normalize=True,
        )
    except ValidationError as exc:
        raise ParseError(f"{path}: {exc}") from None


def _load_dataset_binary(path: str) -> EmbeddingDataset:
    with open(path, "rb") as fh:
        blob = fh.read()
    nl = blob.find(b"\n")
    if nl < 0:
        raise ParseError(f"{path}: missing header line")
    header = _parse_header(blob[:nl].decode("utf-8"), path)
    for key in ("dim", "classes", "domains", "count", "class_ids", "domain_ids"):
        if key not in header:
            raise ParseError(f"{path} line 1: header missing {key!r}")
    if header.get("format") != "binary-f32le":
        raise ParseError(f"{path}: unknown binary format {header.get('format')!r}")
    count, dim = header["count"], header["dim"]
    body = blob[nl + 1 :]
    expected = count * dim * 4
    if len(body) != expected:
        raise ParseError(f"{path}: payload is {len(body)} bytes, expected {expected}")
    mat = np.frombuffer(body, dtype="<f4").reshape(count, dim).astype(np.float64)
    if not np.all(np.isfinite(mat)):
        raise ParseError(f"{path}: non-finite vector entries in binary payload")
    try:
        return EmbeddingDataset(
            dim=dim,
            class_names=list(header["classes"]),
            domain_names=list(header["domains"]),
            vectors=mat,
            class_ids=header["class_ids"],
            domain_ids=header["domain_ids"],
            normalize=True,
        )
    except ValidationError as exc:
        raise ParseError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# text banks
# ---------------------------------------------------------------------------

def save_text_bank(bank: ClassTextBank, path: str) -> None:
    header = {
        "schema": SCHEMA_VERSION,
        "dim": bank.dim,
        "classes": bank.class_names,
        "source_templates": bank.source_templates,
        "additional_templates": bank.additional_templates,
        "plain_template": bank.plain_template,
    }
    lines = [json.dumps(header)]
    ordered = list(bank.source_templates) + list(bank.additional_templates)
    if bank.plain_template is not None and bank.plain_template not in ordered:
        ordered.append(bank.plain_template)
    for tid in ordered:
        mat = bank.per_template[tid]
        for cid, cname in enumerate(bank.class_names):
            lines.append(
                json.dumps({"template": tid, "class": cname, "vec": mat[cid].tolist()})
            )
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_text_bank(path: str) -> ClassTextBank:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError(f"{path}: empty file")
    header = _parse_header(lines[0], path)
    for key in ("dim", "classes", "source_templates", "additional_templates"):
        if key not in header:
            raise ParseError(f"{path} line 1: header missing {key!r}")
    class_names = list(header["classes"])
    class_index = {name: i for i, name in enumerate(class_names)}
    dim = header["dim"]
    raw: dict[tuple[str, int], np.ndarray] = {}
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path} line {line_no}: invalid JSON ({exc})") from None
        vec = _check_finite_vec(rec.get("vec"), line_no)
        if len(vec) != dim:
            raise ParseError(
                f"{path} line {line_no}: vector has {len(vec)} entries, header says {dim}"
            )
        cname = rec.get("class")
        if cname not in class_index:
            raise ParseError(f"{path} line {line_no}: unknown class {cname!r}")
        tid = rec.get("template")
        if not isinstance(tid, str):
            raise ParseError(f"{path} line {line_no}: missing template id")
        raw[(tid, class_index[cname])] = np.asarray(vec)
    try:
        return build_text_bank(
            raw,
            class_names,
            header["source_templates"],
            header["additional_templates"],
            plain_template=header.get("plain_template"),
        )
    except ValidationError as exc:
        raise ParseError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# checkpoints and centroid banks
# ---------------------------------------------------------------------------

def save_checkpoint(params: AdapterParams, path: str, train_config: dict | None = None) -> None:
    doc = {
        "schema": SCHEMA_VERSION,
        "kind": "adapter-checkpoint",
        "dim": params.dim,
        "a_mat": params.a_mat.tolist(),
        "bias": params.bias.tolist(),
        "config": train_config or {},
        "config_hash": config_hash(train_config or {}),
    }
    atomic_write_text(path, json.dumps(doc, indent=1) + "\n")


def load_checkpoint(path: str) -> tuple[AdapterParams, dict]:
    doc = _load_json_doc(path, "adapter-checkpoint")
    a_mat = np.asarray(doc["a_mat"], dtype=np.float64)
    bias = np.asarray(doc["bias"], dtype=np.float64)
    if a_mat.shape != (doc["dim"], doc["dim"]) or bias.shape != (doc["dim"],):
        raise ParseError(f"{path}: adapter shapes do not match declared dim")
    if doc.get("config_hash") != config_hash(doc.get("config", {})):
        raise ParseError(f"{path}: config hash mismatch; file was edited or corrupted")
    return AdapterParams(a_mat, bias), doc.get("config", {})


def save_centroid_bank(bank: CentroidBank, path: str) -> None:
    doc = {
        "schema": SCHEMA_VERSION,
        "kind": "centroid-bank",
        "domain_names": bank.domain_names,
        "template_ids": bank.template_ids,
        "seed": bank.seed,
        "mu_s": bank.mu_s.tolist(),
        "mu_text_s": bank.mu_text_s.tolist(),
        "mu_t": bank.mu_t.tolist(),
        "mu_cpm": bank.mu_cpm.tolist(),
        "mu_swm": bank.mu_swm.tolist(),
        "pool": bank.pool.tolist(),
        "pool_indices": bank.pool_indices.tolist(),
    }
    atomic_write_text(path, json.dumps(doc) + "\n")


def load_centroid_bank(path: str) -> CentroidBank:
    doc = _load_json_doc(path, "centroid-bank")
    dim = len(doc["mu_s"][0]) if doc["mu_s"] else 0

    def mat(key: str) -> np.ndarray:
        rows = doc[key]
        if not rows:
            return np.zeros((0, dim))
        return np.asarray(rows, dtype=np.float64)

    return CentroidBank(
        domain_names=list(doc["domain_names"]),
        mu_s=mat("mu_s"),
        mu_text_s=mat("mu_text_s"),
        template_ids=list(doc["template_ids"]),
        mu_t=mat("mu_t"),
        mu_cpm=mat("mu_cpm"),
        mu_swm=mat("mu_swm"),
        pool=mat("pool"),
        pool_indices=np.asarray(doc["pool_indices"], dtype=np.int64),
        seed=doc.get("seed", 0),
    )


def _load_json_doc(path: str, kind: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: expected a JSON object")
    if doc.get("schema") != SCHEMA_VERSION:
        raise SchemaVersionMismatch(
            f"{path}: schema {doc.get('schema')!r}, this build reads {SCHEMA_VERSION}"
        )
    if doc.get("kind") != kind:
        raise ParseError(f"{path}: kind {doc.get('kind')!r}, expected {kind!r}")
    return doc


# ---------------------------------------------------------------------------
# prediction dumps, metadata, manifests
# ---------------------------------------------------------------------------

def save_predictions(path: str, records: Iterable[dict]) -> None:
    """One JSON line per sample: index, lambda, argmax, full p_final."""
    lines = [json.dumps(rec) for rec in records]
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def save_json(path: str, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=1, sort_keys=True) + "\n")


def load_json(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def write_manifest(path: str, command: str, config: dict, seeds: list[int]) -> None:
    """Reproducibility record: resolved config, its hash, seeds, versions."""
    import numba

    manifest = {
        "command": command,
        "config": config,
        "config_hash": config_hash(config),
        "seeds": seeds,
        "versions": {
            "python": sys.version.split()[0],
            "numpy": np.__version__,
            "numba": numba.__version__,
            "platform": platform.platform(),
        },
    }
    save_json(path, manifest)
