"""VQA sample records: the pipe-separated record format and answer normalization.

Record format (UTF-8, LF line endings)::

    image_id|question|answer

One file per question category (``<category>.txt`` or ``*_<category>.txt``),
images stored alongside as ``<image_id>.png`` / ``.jpg`` in an image folder.
"""

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

CATEGORIES = ("modality", "plane", "organ", "abnormality")

# Aliases seen in the wild for the organ-system category file names.
_CATEGORY_ALIASES = {
    "modality": "modality",
    "plane": "plane",
    "organ": "organ",
    "organ_system": "organ",
    "abnormality": "abnormality",
}

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")


class DatasetFormatError(ValueError):
    """Raised when a dataset directory or record file violates the format."""


@dataclass
class VqaSample:
    """One (image, question, answer, category) record.

    ``image`` is an H x W x 3 float array with values in [0, 1]. Samples of
    the same image share the array; treat it as read-only after load.
    """

    image_id: str
    image: np.ndarray
    question: str
    answer: str
    category: str

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}, expected one of {CATEGORIES}")
        if not self.question.strip():
            raise ValueError(f"empty question for image {self.image_id!r}")
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise ValueError(f"image for {self.image_id!r} must be HxWx3, got {self.image.shape}")
        if self.image.shape[0] < 1 or self.image.shape[1] < 1:
            raise ValueError(f"image for {self.image_id!r} has non-positive dimensions")
        lo, hi = float(self.image.min()), float(self.image.max())
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"image for {self.image_id!r} has pixel values outside [0, 1] ({lo}..{hi})")


_WS = re.compile(r"\s+")
# Punctuation stripped from the ends of an answer; internal punctuation is kept
# ("t2-weighted" survives, trailing "?" does not).
_EDGE_PUNCT = "\"'`.,;:!?()[]{}<>"


def normalize_answer(raw: str, synonyms: dict[str, str] | None = None) -> str:
    """Canonical answer form: lowercase, collapsed whitespace, edge punctuation stripped.

    ``synonyms`` maps normalized raw forms to canonical forms (exact-match
    lookup, applied once). Total function: any string input is accepted.
    """
    text = _WS.sub(" ", raw.lower()).strip()
    text = text.strip(_EDGE_PUNCT).strip()
    if synonyms:
        text = synonyms.get(text, text)
    return text


def load_synonyms(path) -> dict[str, str]:
    """Read a ``raw|canonical`` synonym table (UTF-8, one pair per line)."""
    table = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("|")
        if len(parts) != 2:
            raise DatasetFormatError(f"{path}:{lineno}: expected 'raw|canonical', got {line!r}")
        table[normalize_answer(parts[0])] = normalize_answer(parts[1])
    return table


def _load_image(path: Path, image_size: int | None) -> np.ndarray:
    with Image.open(path) as im:
        im = im.convert("RGB")
        if image_size is not None and im.size != (image_size, image_size):
            im = im.resize((image_size, image_size), Image.BILINEAR)
        return np.asarray(im, dtype=np.float32) / 255.0


def _find_record_files(root: Path) -> dict[Path, str]:
    """Map record files to categories, inferred from the file name."""
    files = {}
    for path in sorted(root.glob("*.txt")):
        stem = path.stem.lower()
        for alias, category in _CATEGORY_ALIASES.items():
            if stem == alias or stem.endswith("_" + alias) or stem.endswith("-" + alias):
                files[path] = category
                break
    return files


def load_vqamed(root_dir, image_size: int | None = 224) -> list[VqaSample]:
    """Load a VQA-Med-format directory into a list of samples.

    Expects per-category record files at the top level and an ``images/``
    folder (or images next to the record files) keyed by image_id. Images
    are resized to ``image_size`` square (bilinear); pass ``None`` to keep
    native sizes. One image referenced by several records is loaded once
    and shared.
    """
    root = Path(root_dir)
    if not root.is_dir():
        raise DatasetFormatError(f"{root} is not a directory")
    record_files = _find_record_files(root)
    if not record_files:
        raise DatasetFormatError(
            f"no per-category record files found in {root}; expected files named "
            f"after one of {CATEGORIES} (e.g. plane.txt or train_plane.txt)"
        )

    image_dirs = [root / "images", root]
    records: list[tuple[str, str, str, str]] = []  # (image_id, question, answer, category)
    for path, category in sorted(record_files.items()):
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
            if not line.strip():
                continue
            parts = line.split("|")
            if len(parts) != 3:
                raise DatasetFormatError(
                    f"{path}:{lineno}: expected 3 pipe-separated fields, got {len(parts)}"
                )
            image_id, question, answer = (p.strip() for p in parts)
            if not question:
                raise DatasetFormatError(f"{path}:{lineno}: empty question")
            records.append((image_id, question, answer, category))

    # Resolve image paths up front so all missing ids are reported together.
    paths: dict[str, Path] = {}
    missing = []
    for image_id in sorted({r[0] for r in records}):
        for directory in image_dirs:
            candidates = [directory / (image_id + ext) for ext in IMAGE_EXTENSIONS]
            found = next((c for c in candidates if c.is_file()), None)
            if found is not None:
                paths[image_id] = found
                break
        else:
            missing.append(image_id)
    if missing:
        shown = ", ".join(missing[:20]) + (" ..." if len(missing) > 20 else "")
        raise DatasetFormatError(f"{len(missing)} image file(s) missing under {root}: {shown}")

    cache: dict[str, np.ndarray] = {}
    samples = []
    for image_id, question, answer, category in records:
        if image_id not in cache:
            cache[image_id] = _load_image(paths[image_id], image_size)
        samples.append(VqaSample(image_id, cache[image_id], question, answer, category))
    return samples


def save_dataset(samples: list[VqaSample], out_dir) -> None:
    """Persist samples in the pipe-separated format plus PNG images.

    Writes one ``<category>.txt`` per category present and an ``images/``
    folder, so the output round-trips through :func:`load_vqamed`.
    """
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    by_category: dict[str, list[VqaSample]] = {}
    for s in samples:
        by_category.setdefault(s.category, []).append(s)
    for category, rows in sorted(by_category.items()):
        lines = [f"{s.image_id}|{s.question}|{s.answer}" for s in rows]
        (out / f"{category}.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    written = set()
    for s in samples:
        if s.image_id in written:
            continue
        written.add(s.image_id)
        arr = np.clip(np.rint(s.image * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(arr).save(out / "images" / f"{s.image_id}.png")
