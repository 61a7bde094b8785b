"""On-disk formats: binary tensor files, dataset manifests, concept-label CSV.

Tensor file layout (all little-endian)::

    b"MICN" | version: u16 | rank: u32 | dims: rank x u32 | payload: float32, row-major

Values are computed in float64 and narrowed to float32 on save.
"""

from __future__ import annotations

import csv
import io
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .alignment import ConceptSet

MAGIC = b"MICN"
VERSION = 1
MAX_RANK = 32
_HEADER = struct.Struct("<4sHI")


class TensorFormatError(ValueError):
    pass


class BadMagicError(TensorFormatError):
    pass


class UnsupportedVersionError(TensorFormatError):
    pass


class TruncatedTensorError(TensorFormatError):
    def __init__(self, expected: int, actual: int, what: str = "payload"):
        self.expected = expected
        self.actual = actual
        super().__init__(f"truncated {what}: expected {expected} bytes, got {actual}")


class DimOverflowError(TensorFormatError):
    pass


class ManifestError(ValueError):
    pass


def tensor_to_bytes(array) -> bytes:
    a = np.asarray(array, dtype=np.float64)
    if a.ndim > MAX_RANK or any(d >= 2**32 for d in a.shape):
        raise DimOverflowError(f"shape {a.shape} does not fit the header")
    with np.errstate(over="ignore"):
        narrow = a.astype("<f4")
    if np.any(np.isinf(narrow) & np.isfinite(a)):
        raise DimOverflowError("value out of float32 range")
    header = _HEADER.pack(MAGIC, VERSION, a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return header + narrow.tobytes(order="C")


def tensor_from_bytes(blob: bytes) -> np.ndarray:
    if len(blob) < _HEADER.size:
        raise TruncatedTensorError(_HEADER.size, len(blob), "header")
    magic, version, rank = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported tensor format version {version}")
    if rank > MAX_RANK:
        raise DimOverflowError(f"rank {rank} exceeds {MAX_RANK}")
    dims_end = _HEADER.size + 4 * rank
    if len(blob) < dims_end:
        raise TruncatedTensorError(dims_end, len(blob), "dims")
    dims = struct.unpack_from(f"<{rank}I", blob, _HEADER.size)
    count = 1
    for d in dims:
        count *= d
    expected = 4 * count
    if expected > 2**48:
        raise DimOverflowError(f"dims {dims} describe an implausibly large tensor")
    actual = len(blob) - dims_end
    if actual != expected:
        raise TruncatedTensorError(expected, actual) if actual < expected else TensorFormatError(
            f"trailing bytes: expected {expected} payload bytes, got {actual}"
        )
    data = np.frombuffer(blob, dtype="<f4", count=count, offset=dims_end)
    return data.astype(np.float64).reshape(dims)


def save_tensor(path, array) -> None:
    Path(path).write_bytes(tensor_to_bytes(array))


def load_tensor(path) -> np.ndarray:
    return tensor_from_bytes(Path(path).read_bytes())


def write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


# --- concept-label CSV -------------------------------------------------------


def labels_to_csv(sample_ids: Sequence[str], names: Sequence[str], labels: np.ndarray) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["sample_id", *names])
    for sid, row in zip(sample_ids, np.asarray(labels)):
        writer.writerow([sid, *("1" if v else "0" for v in row)])
    return buf.getvalue()


def save_concept_labels(path, sample_ids, names, labels) -> None:
    Path(path).write_text(labels_to_csv(sample_ids, names, labels), encoding="utf-8")


def load_concept_labels(path):
    """Returns ``(sample_ids, names, labels)``."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:1] != ["sample_id"]:
        raise ManifestError(f"{path}: missing 'sample_id' header")
    names = rows[0][1:]
    ids, values = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(names) + 1:
            raise ManifestError(f"{path}:{lineno}: expected {len(names) + 1} fields, got {len(row)}")
        bad = [v for v in row[1:] if v not in ("0", "1")]
        if bad:
            raise ManifestError(f"{path}:{lineno}: concept labels must be 0/1, got {bad[0]!r}")
        ids.append(row[0])
        values.append([int(v) for v in row[1:]])
    labels = np.array(values, dtype=np.int64).reshape(len(ids), len(names))
    return ids, names, labels


# --- concept sets -------------------------------------------------------------


def save_concept_set(path, concepts: ConceptSet, class_names=None, class_embeddings=None) -> None:
    path = Path(path)
    stem = path.stem
    emb_file = f"{stem}_embeddings.micn"
    save_tensor(path.parent / emb_file, concepts.embeddings)
    doc = {"names": list(concepts.names), "embeddings": emb_file}
    if class_embeddings is not None:
        cls_file = f"{stem}_class_embeddings.micn"
        save_tensor(path.parent / cls_file, class_embeddings)
        doc["class_names"] = list(class_names or [])
        doc["class_embeddings"] = cls_file
    if concepts.provenance:
        doc["provenance"] = dict(concepts.provenance)
    write_json(path, doc)


def load_concept_set(path):
    """Returns ``(ConceptSet, class_names, class_embeddings or None)``."""
    path = Path(path)
    doc = read_json(path)
    emb = load_tensor(path.parent / doc["embeddings"])
    concepts = ConceptSet(doc["names"], emb, dict(doc.get("provenance", {})))
    cls_emb = None
    if doc.get("class_embeddings"):
        cls_emb = load_tensor(path.parent / doc["class_embeddings"])
    return concepts, list(doc.get("class_names", [])), cls_emb


# --- datasets and manifests -----------------------------------------------------


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    concept_labels: Optional[np.ndarray] = None
    concept_names: List[str] = field(default_factory=list)
    class_names: List[str] = field(default_factory=list)
    sample_ids: List[str] = field(default_factory=list)
    feature_maps: Optional[np.ndarray] = None

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        m = self.features.shape[0]
        if self.labels.shape[0] != m:
            raise ValueError(f"{m} feature rows but {self.labels.shape[0]} labels")
        if self.concept_labels is not None:
            self.concept_labels = np.asarray(self.concept_labels, dtype=np.int64).reshape(m, -1)
        if not self.sample_ids:
            self.sample_ids = [f"s{i:05d}" for i in range(m)]
        if len(self.sample_ids) != m:
            raise ValueError("sample id count does not match sample count")
        if not self.class_names:
            self.class_names = [f"class_{j}" for j in range(int(self.labels.max()) + 1 if m else 0)]

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def num_concepts(self) -> int:
        if self.concept_labels is not None:
            return self.concept_labels.shape[1]
        return len(self.concept_names)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            self.features[idx],
            self.labels[idx],
            None if self.concept_labels is None else self.concept_labels[idx],
            list(self.concept_names),
            list(self.class_names),
            [self.sample_ids[i] for i in idx],
            None if self.feature_maps is None else self.feature_maps[idx],
        )


def save_manifest(directory, dataset: Dataset, concepts: Optional[ConceptSet] = None, class_embeddings=None) -> Path:
    """Write tensors, CSV and ``manifest.json`` into ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_tensor(d / "features.micn", dataset.features)
    num_concepts = dataset.num_concepts
    if dataset.concept_labels is None and concepts is not None:
        num_concepts = len(concepts)
    doc = {
        "version": VERSION,
        "sample_ids": list(dataset.sample_ids),
        "labels": [int(v) for v in dataset.labels],
        "class_names": list(dataset.class_names),
        "features": "features.micn",
        "feature_maps": None,
        "concept_labels": None,
        "concepts": None,
        "dims": {
            "num_samples": len(dataset),
            "feature_dim": int(dataset.features.shape[1]),
            "num_concepts": int(num_concepts),
            "num_classes": int(dataset.num_classes),
        },
    }
    if dataset.feature_maps is not None:
        save_tensor(d / "feature_maps.micn", dataset.feature_maps)
        doc["feature_maps"] = "feature_maps.micn"
    if dataset.concept_labels is not None:
        save_concept_labels(d / "concept_labels.csv", dataset.sample_ids, dataset.concept_names, dataset.concept_labels)
        doc["concept_labels"] = "concept_labels.csv"
    if concepts is not None:
        save_concept_set(d / "concepts.json", concepts, dataset.class_names, class_embeddings)
        doc["concepts"] = "concepts.json"
    write_json(d / "manifest.json", doc)
    return d / "manifest.json"


def _resolve(base: Path, rel: str, what: str) -> Path:
    p = base / rel
    if not p.exists():
        raise ManifestError(f"manifest references missing {what} file: {p}")
    return p


def load_manifest(path) -> Dataset:
    path = Path(path)
    try:
        doc = read_json(path)
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    base = path.parent
    features = load_tensor(_resolve(base, doc["features"], "features"))
    dims = doc.get("dims", {})
    ids = list(doc["sample_ids"])
    labels = np.asarray(doc["labels"], dtype=np.int64)
    if features.ndim != 2 or features.shape[0] != len(ids) or len(labels) != len(ids):
        raise ManifestError(
            f"dims conflict: {len(ids)} sample ids, {len(labels)} labels, features {features.shape}"
        )
    if dims.get("feature_dim", features.shape[1]) != features.shape[1]:
        raise ManifestError(f"dims conflict: feature_dim {dims['feature_dim']} vs tensor {features.shape[1]}")
    class_names = list(doc.get("class_names") or [])
    if class_names and labels.size and labels.max() >= len(class_names):
        raise ManifestError(f"label {labels.max()} out of range for {len(class_names)} classes")

    concept_names: List[str] = []
    if doc.get("concepts"):
        concepts, _, _ = load_concept_set(_resolve(base, doc["concepts"], "concept set"))
        concept_names = concepts.names
    concept_labels = None
    if doc.get("concept_labels"):
        csv_ids, csv_names, concept_labels = load_concept_labels(_resolve(base, doc["concept_labels"], "concept label"))
        if csv_ids != ids:
            raise ManifestError("concept-label CSV sample ids do not match the manifest")
        if concept_names and csv_names != concept_names:
            raise ManifestError("concept-label CSV header does not match the concept set")
        concept_names = csv_names
    if len(set(concept_names)) != len(concept_names):
        raise ManifestError("concept names must be unique")
    if "num_concepts" in dims and concept_names and dims["num_concepts"] != len(concept_names):
        raise ManifestError(f"dims conflict: num_concepts {dims['num_concepts']} vs {len(concept_names)}")
    fmaps = None
    if doc.get("feature_maps"):
        fmaps = load_tensor(_resolve(base, doc["feature_maps"], "feature map"))
        if fmaps.ndim != 4 or fmaps.shape[0] != len(ids):
            raise ManifestError(f"feature maps must be M x H x W x D with M={len(ids)}, got {fmaps.shape}")
    return Dataset(features, labels, concept_labels, concept_names, class_names, ids, fmaps)


def manifest_concepts(path):
    """Concept set referenced by a manifest, or ``(None, [], None)``."""
    path = Path(path)
    doc = read_json(path)
    if not doc.get("concepts"):
        return None, [], None
    return load_concept_set(_resolve(path.parent, doc["concepts"], "concept set"))


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    if not os.access(p, os.W_OK):
        raise PermissionError(f"output directory {p} is not writable")
    return p
