"""File formats: grayscale images, landmark JSON documents and dataset manifests."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .landmarks import CORNER_LABELS, ORIENTATIONS, VERTEBRA_LABELS, LandmarkError, LandmarkSet, Vertebra

SCHEMA_VERSION = 1


# ---------------------------------------------------------------- images

def read_image(path) -> np.ndarray:
    """Load an 8- or 16-bit grayscale PGM/PNG as float64 in [0, 1]."""
    with Image.open(path) as im:
        mode = im.mode
        if mode in ("L", "P", "RGB", "RGBA", "LA"):
            arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
        elif mode in ("I;16", "I;16B", "I;16L", "I"):
            arr = np.asarray(im, dtype=np.float64) / 65535.0
        elif mode == "1":
            arr = np.asarray(im, dtype=np.float64)
        else:
            raise ValueError(f"{path}: unsupported image mode {mode}")
    if arr.ndim != 2:
        raise ValueError(f"{path}: expected a grayscale image")
    return np.clip(arr, 0.0, 1.0)


def write_image(path, image: np.ndarray, bits: int = 8) -> None:
    """Save a [0, 1] grayscale array (or an (H, W, 3) uint8 RGB array) as PGM/PNG."""
    arr = np.asarray(image)
    if arr.ndim == 3:
        Image.fromarray(arr.astype(np.uint8), "RGB").save(path)
        return
    arr = np.clip(arr, 0.0, 1.0)
    if bits == 16:
        Image.fromarray(np.rint(arr * 65535).astype(np.uint16)).save(path)
    else:
        Image.fromarray(np.rint(arr * 255).astype(np.uint8), "L").save(path)


# ---------------------------------------------------------------- landmark documents

@dataclass
class LandmarkDocument:
    image_id: str
    landmarks: LandmarkSet
    guides: list[dict] | None = None
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        lm = self.landmarks
        doc = {
            "schema_version": self.schema_version,
            "image_id": self.image_id,
            "image_dims": [int(lm.image_size[0]), int(lm.image_size[1])],
            "orientation": lm.orientation,
            "complete": bool(lm.complete),
            "vertebrae": [
                {
                    "label": v.label,
                    "center": [float(c) for c in v.center],
                    "corners": {name: [float(c) for c in v.corners[i]] for i, name in enumerate(CORNER_LABELS)},
                    "confidence": float(v.confidence),
                }
                for v in lm.vertebrae
            ],
        }
        if self.guides is not None:
            doc["guides"] = self.guides
        return doc

    @classmethod
    def from_dict(cls, d: dict) -> "LandmarkDocument":
        try:
            version = int(d["schema_version"])
            if version != SCHEMA_VERSION:
                raise LandmarkError(f"unsupported schema_version {version}")
            H, W = (int(v) for v in d["image_dims"])
            orientation = d.get("orientation", "anterior-right")
            if orientation not in ORIENTATIONS:
                raise LandmarkError(f"unknown orientation {orientation!r}")
            verts = []
            for i, v in enumerate(d["vertebrae"]):
                if v["label"] not in VERTEBRA_LABELS:
                    raise LandmarkError(f"vertebra {i}: unknown label {v['label']!r}")
                corners = [v["corners"][name] for name in CORNER_LABELS]
                verts.append(Vertebra(v["label"], v["center"], corners, float(v.get("confidence", 1.0))))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, LandmarkError):
                raise
            raise LandmarkError(f"malformed landmark document: {exc!r}") from None
        lm = LandmarkSet(verts, (H, W), orientation, bool(d.get("complete", True)))
        return cls(str(d["image_id"]), lm, d.get("guides"), version)


def dumps_landmarks(doc: LandmarkDocument) -> str:
    return json.dumps(doc.to_dict(), indent=2) + "\n"


def save_landmarks(path, doc: LandmarkDocument) -> None:
    Path(path).write_text(dumps_landmarks(doc))


def load_landmarks(path, validate: bool = True) -> LandmarkDocument:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise LandmarkError(f"{path}: invalid JSON ({exc})") from None
    doc = LandmarkDocument.from_dict(data)
    if validate:
        doc.landmarks.validate()
    return doc


# ---------------------------------------------------------------- manifests

@dataclass
class ManifestEntry:
    entry_id: str
    image: Path
    landmarks: Path
    crop_label: bool | None = None
    extra: dict = field(default_factory=dict)


def _entry(d: dict, base: Path) -> ManifestEntry:
    try:
        label = d.get("crop_label")
        return ManifestEntry(str(d.get("id", Path(d["image"]).stem)), base / d["image"], base / d["landmarks"],
                             None if label is None else bool(label))
    except (KeyError, TypeError) as exc:
        raise ValueError(f"manifest entry {d!r} is missing {exc}") from None


def load_manifest(path) -> list[ManifestEntry]:
    """Read a dataset manifest.

    Either a single per-image document ``{"image", "landmarks", "crop_label"}``
    or a set ``{"entries": [...]}`` whose items are such documents or paths
    to them. Relative paths resolve against the referring file.
    """
    path = Path(path)
    data = json.loads(path.read_text())
    base = path.parent
    if "entries" not in data:
        return [_entry(data, base)]
    out = []
    for item in data["entries"]:
        if isinstance(item, str):
            out.extend(load_manifest(base / item))
        else:
            out.append(_entry(item, base))
    return out


def write_manifest(path, entries: list[ManifestEntry]) -> None:
    base = Path(path).parent
    items = [{"id": e.entry_id, "image": os.path.relpath(e.image, base),
              "landmarks": os.path.relpath(e.landmarks, base), "crop_label": e.crop_label}
             for e in entries]
    Path(path).write_text(json.dumps({"entries": items}, indent=2) + "\n")
