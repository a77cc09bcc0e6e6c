"""Dataset manifests, image loading, and deterministic JSON serialization.

The manifest schema is a strict subset of COCO annotations (images,
annotations with xywh boxes, categories), so converted pose-benchmark
annotations load unmodified. Unknown keys are ignored with a warning.
All JSON emitted by this module has sorted keys and floats rounded to six
decimals, so identical inputs always produce identical bytes.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .assignment import InstanceAnnotation
from .geometry import Box2D

FLOAT_DECIMALS = 6

_KNOWN_IMAGE_KEYS = {"id", "file_name", "width", "height"}
_KNOWN_ANNOTATION_KEYS = {"id", "image_id", "category_id", "bbox"}
_KNOWN_CATEGORY_KEYS = {"id", "name"}


class ManifestError(ValueError):
    """A manifest failed validation; the message names the offending record."""


class ImageLoadError(ValueError):
    """An image file could not be loaded in a supported format."""


@dataclass(frozen=True)
class ImageEntry:
    id: int
    width: int
    height: int
    file_name: str | None = None


@dataclass(frozen=True)
class CategoryEntry:
    id: int
    name: str


@dataclass
class DatasetManifest:
    images: dict[int, ImageEntry]
    annotations: list[InstanceAnnotation]
    categories: dict[int, CategoryEntry]
    warnings: list[str] = field(default_factory=list)


def _require(record: dict, key: str, kind: str, index: int):
    if key not in record:
        raise ManifestError(f"{kind} record {index}: missing key '{key}'")
    return record[key]


def manifest_from_dict(data: dict) -> DatasetManifest:
    """Validate a parsed manifest; boxes are clamped to their image with a warning."""
    warnings: list[str] = []
    images: dict[int, ImageEntry] = {}
    for i, rec in enumerate(data.get("images", [])):
        unknown = set(rec) - _KNOWN_IMAGE_KEYS
        if unknown:
            warnings.append(f"image record {i}: ignoring unknown keys {sorted(unknown)}")
        img_id = int(_require(rec, "id", "image", i))
        if img_id in images:
            raise ManifestError(f"image record {i}: duplicate image id {img_id}")
        width = int(_require(rec, "width", "image", i))
        height = int(_require(rec, "height", "image", i))
        if width < 1 or height < 1:
            raise ManifestError(f"image record {i}: non-positive size {width}x{height}")
        images[img_id] = ImageEntry(
            id=img_id, width=width, height=height, file_name=rec.get("file_name")
        )

    categories: dict[int, CategoryEntry] = {}
    for i, rec in enumerate(data.get("categories", [])):
        unknown = set(rec) - _KNOWN_CATEGORY_KEYS
        if unknown:
            warnings.append(f"category record {i}: ignoring unknown keys {sorted(unknown)}")
        cat_id = int(_require(rec, "id", "category", i))
        if cat_id in categories:
            raise ManifestError(f"category record {i}: duplicate category id {cat_id}")
        categories[cat_id] = CategoryEntry(id=cat_id, name=str(rec.get("name", "")))

    annotations: list[InstanceAnnotation] = []
    seen_ids: set[int] = set()
    for i, rec in enumerate(data.get("annotations", [])):
        unknown = set(rec) - _KNOWN_ANNOTATION_KEYS
        if unknown:
            warnings.append(f"annotation record {i}: ignoring unknown keys {sorted(unknown)}")
        ann_id = int(_require(rec, "id", "annotation", i))
        if ann_id in seen_ids:
            raise ManifestError(f"annotation record {i}: duplicate annotation id {ann_id}")
        seen_ids.add(ann_id)
        image_id = int(_require(rec, "image_id", "annotation", i))
        if image_id not in images:
            raise ManifestError(f"annotation record {i}: dangling image_id {image_id}")
        category_id = int(_require(rec, "category_id", "annotation", i))
        if category_id not in categories:
            raise ManifestError(f"annotation record {i}: dangling category_id {category_id}")
        bbox = _require(rec, "bbox", "annotation", i)
        if len(bbox) != 4:
            raise ManifestError(f"annotation record {i}: bbox must have 4 entries, got {bbox}")
        x, y, w, h = (float(v) for v in bbox)
        if w <= 0 or h <= 0:
            raise ManifestError(f"annotation record {i}: non-positive bbox size {w}x{h}")
        img = images[image_id]
        box = Box2D.from_xywh(x, y, w, h)
        clamped = box.clipped(0.0, 0.0, float(img.width), float(img.height))
        if clamped != box:
            warnings.append(
                f"annotation record {i} (id {ann_id}): bbox clamped to image {image_id} bounds"
            )
        if clamped.is_degenerate():
            raise ManifestError(
                f"annotation record {i}: bbox lies entirely outside image {image_id}"
            )
        annotations.append(
            InstanceAnnotation(
                instance_id=ann_id, image_id=image_id, category_id=category_id, box=clamped
            )
        )
    return DatasetManifest(
        images=images, annotations=annotations, categories=categories, warnings=warnings
    )


def load_manifest(path: str | Path) -> DatasetManifest:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ManifestError(f"{path}: manifest root must be a JSON object")
    return manifest_from_dict(data)


def manifest_to_dict(manifest: DatasetManifest) -> dict:
    """Inverse of manifest_from_dict up to key order and float precision."""
    return {
        "images": [
            {
                "id": img.id,
                **({"file_name": img.file_name} if img.file_name is not None else {}),
                "width": img.width,
                "height": img.height,
            }
            for img in sorted(manifest.images.values(), key=lambda im: im.id)
        ],
        "annotations": [
            {
                "id": a.instance_id,
                "image_id": a.image_id,
                "category_id": a.category_id,
                "bbox": list(a.box.to_xywh()),
            }
            for a in sorted(manifest.annotations, key=lambda a: a.instance_id)
        ],
        "categories": [
            {"id": c.id, "name": c.name}
            for c in sorted(manifest.categories.values(), key=lambda c: c.id)
        ],
    }


@dataclass(frozen=True)
class PredictionRecord:
    image_id: int
    category_id: int
    bbox: tuple[float, float, float, float]
    cls_score: float
    confidence: float


@dataclass(frozen=True)
class FusedRecord:
    image_id: int
    category_id: int
    bbox: tuple[float, float, float, float]
    score: float
    cluster_size: int


def predictions_from_list(data: list, manifest: DatasetManifest | None = None) -> list[PredictionRecord]:
    records: list[PredictionRecord] = []
    for i, rec in enumerate(data):
        bbox = _require(rec, "bbox", "prediction", i)
        if len(bbox) != 4:
            raise ManifestError(f"prediction record {i}: bbox must have 4 entries")
        x, y, w, h = (float(v) for v in bbox)
        if w < 0 or h < 0:
            raise ManifestError(f"prediction record {i}: negative bbox size")
        cls_score = float(_require(rec, "cls_score", "prediction", i))
        confidence = float(_require(rec, "confidence", "prediction", i))
        if not 0.0 <= cls_score <= 1.0 or not 0.0 <= confidence <= 1.0:
            raise ManifestError(f"prediction record {i}: scores must lie in [0, 1]")
        image_id = int(_require(rec, "image_id", "prediction", i))
        if manifest is not None and image_id not in manifest.images:
            raise ManifestError(f"prediction record {i}: dangling image_id {image_id}")
        records.append(
            PredictionRecord(
                image_id=image_id,
                category_id=int(_require(rec, "category_id", "prediction", i)),
                bbox=(x, y, w, h),
                cls_score=cls_score,
                confidence=confidence,
            )
        )
    return records


def load_predictions(path: str | Path, manifest: DatasetManifest | None = None) -> list[PredictionRecord]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(data, list):
        raise ManifestError(f"{path}: prediction file root must be a JSON array")
    return predictions_from_list(data, manifest)


def detections_from_list(data: list) -> list[FusedRecord]:
    records: list[FusedRecord] = []
    for i, rec in enumerate(data):
        bbox = _require(rec, "bbox", "detection", i)
        x, y, w, h = (float(v) for v in bbox)
        records.append(
            FusedRecord(
                image_id=int(_require(rec, "image_id", "detection", i)),
                category_id=int(_require(rec, "category_id", "detection", i)),
                bbox=(x, y, w, h),
                score=float(_require(rec, "score", "detection", i)),
                cluster_size=int(rec.get("cluster_size", 1)),
            )
        )
    return records


def load_detections(path: str | Path) -> list[FusedRecord]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(data, list):
        raise ManifestError(f"{path}: detection file root must be a JSON array")
    return detections_from_list(data)


def fused_to_list(records: list[FusedRecord]) -> list[dict]:
    return [
        {
            "image_id": r.image_id,
            "category_id": r.category_id,
            "bbox": list(r.bbox),
            "score": r.score,
            "cluster_size": r.cluster_size,
        }
        for r in records
    ]


def round_floats(obj, decimals: int = FLOAT_DECIMALS):
    """Recursively round floats so serialized JSON is byte-stable."""
    if isinstance(obj, float):
        return round(obj, decimals)
    if isinstance(obj, dict):
        return {k: round_floats(v, decimals) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [round_floats(v, decimals) for v in obj]
    return obj


def dumps_json(obj) -> str:
    return json.dumps(round_floats(obj), sort_keys=True, indent=2) + "\n"


def write_json(path: str | Path, obj) -> None:
    Path(path).write_text(dumps_json(obj), encoding="utf-8")


def image_to_array(img: Image.Image, source: str = "<memory>") -> np.ndarray:
    """PIL image to an (H, W, 3) uint8 array, replicating grayscale."""
    if img.format not in (None, "PNG", "PPM"):
        raise ImageLoadError(f"{source}: unsupported format {img.format}, expected PNG or PPM")
    if img.mode == "L":
        arr = np.asarray(img, dtype=np.uint8)
        return np.repeat(arr[:, :, None], 3, axis=2)
    if img.mode in ("P", "LA", "RGBA"):
        img = img.convert("RGB")
    if img.mode != "RGB":
        raise ImageLoadError(f"{source}: unsupported mode {img.mode}, expected 8-bit gray or RGB")
    return np.asarray(img, dtype=np.uint8)


def load_image(path: str | Path) -> np.ndarray:
    """Load an 8-bit PNG or binary PPM (P6) as an (H, W, 3) uint8 array."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            return image_to_array(img, source=str(path))
    except FileNotFoundError:
        raise
    except ImageLoadError:
        raise
    except Exception as exc:
        raise ImageLoadError(f"{path}: cannot decode image ({exc})") from exc


def decode_image_bytes(data: bytes, source: str = "<memory>") -> np.ndarray:
    try:
        with Image.open(io.BytesIO(data)) as img:
            return image_to_array(img, source=source)
    except ImageLoadError:
        raise
    except Exception as exc:
        raise ImageLoadError(f"{source}: cannot decode image ({exc})") from exc


def load_image_for(entry: ImageEntry, images_dir: str | Path) -> np.ndarray:
    """Load the file behind a manifest entry and verify its dimensions."""
    if entry.file_name is None:
        raise ImageLoadError(f"image {entry.id}: manifest entry has no file_name")
    arr = load_image(Path(images_dir) / entry.file_name)
    h, w, _ = arr.shape
    if (w, h) != (entry.width, entry.height):
        raise ImageLoadError(
            f"image {entry.id} ({entry.file_name}): manifest says {entry.width}x{entry.height}, "
            f"file is {w}x{h}"
        )
    return arr
