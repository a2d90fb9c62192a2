"""Desk-scale synthetic VQA data.

Every image carries four independently controllable visual attributes, one
per question category, so ground truth is recoverable from pixels:

* background texture style      -> modality  (ct / mri / ultrasound / xray)
* orientation bar near a border -> plane     (axial / sagittal / coronal)
* central filled shape          -> organ     (heart / lung / liver / brain)
* small bright dot, top/bottom  -> abnormality (present + location)

Questions come from a fixed template table mirroring the rigid first-words
structure of the real data; all answers are single words.
"""

import math
import re
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .records import VqaSample

MODALITY_STYLES = ("ct", "mri", "ultrasound", "xray")
PLANES = ("axial", "sagittal", "coronal")
SHAPE_TO_ORGAN = {"circle": "heart", "square": "lung", "triangle": "liver", "cross": "brain"}
ORGANS = tuple(SHAPE_TO_ORGAN.values())
MARKER_LOCATIONS = ("top", "bottom")


@dataclass(frozen=True)
class SyntheticLatents:
    """Generator attributes an oracle can read back instead of pixels."""

    image_id: str
    style: str
    plane: str
    shape: str
    marker_present: bool
    marker_location: str | None  # None when no marker

    @property
    def organ(self) -> str:
        return SHAPE_TO_ORGAN[self.shape]


def _background(size: int, style: str, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32)
    c = (size - 1) / 2.0
    if style == "ct":
        r = np.hypot(yy - c, xx - c) / c
        img = 0.20 + 0.25 * np.clip(1.0 - r, 0.0, 1.0) ** 1.5
    elif style == "mri":
        period = rng.uniform(6.0, 10.0)
        phase = rng.uniform(0.0, 2.0 * math.pi)
        img = 0.30 + 0.12 * np.sin(2.0 * math.pi * yy / period + phase)
    elif style == "ultrasound":
        img = rng.random((size, size)).astype(np.float32)
        img = 0.18 + 0.35 * ndimage.gaussian_filter(img, 0.7)
    elif style == "xray":
        img = 0.62 - 0.25 * (yy / size) + rng.normal(0.0, 0.02, (size, size))
    else:
        raise ValueError(f"unknown style {style!r}")
    return img.astype(np.float32)


def _plane_bar(img: np.ndarray, plane: str) -> None:
    size = img.shape[0]
    m = max(3, size // 16)  # margin from the border
    t = max(2, size // 24)  # bar thickness
    span = slice(size // 8, size - size // 8)
    if plane == "axial":
        img[m : m + t, span] = 0.95
    elif plane == "sagittal":
        img[span, m : m + t] = 0.95
    elif plane == "coronal":
        yy, xx = np.mgrid[0:size, 0:size]
        band = np.abs((xx + yy) - size * 0.45) < t
        corner = (xx < size * 0.55) & (yy < size * 0.55)
        img[band & corner] = 0.95
    else:
        raise ValueError(f"unknown plane {plane!r}")


def _organ_shape(img: np.ndarray, shape: str, rng: np.random.Generator) -> None:
    size = img.shape[0]
    a = size * 0.20
    jitter = size * 0.05
    cy = (size - 1) / 2.0 + rng.uniform(-jitter, jitter)
    cx = (size - 1) / 2.0 + rng.uniform(-jitter, jitter)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32)
    dy, dx = yy - cy, xx - cx
    if shape == "circle":
        mask = np.hypot(dy, dx) <= a
    elif shape == "square":
        mask = np.maximum(np.abs(dy), np.abs(dx)) <= a * 0.88
    elif shape == "triangle":
        mask = (dy >= -a) & (dy <= a * 0.8) & (np.abs(dx) <= (dy + a) * 0.55)
    elif shape == "cross":
        arm = a * 0.36
        mask = ((np.abs(dx) <= arm) & (np.abs(dy) <= a)) | ((np.abs(dy) <= arm) & (np.abs(dx) <= a))
    else:
        raise ValueError(f"unknown shape {shape!r}")
    img[mask] = 0.70 + 0.10 * img[mask]


def _marker(img: np.ndarray, location: str, rng: np.random.Generator) -> None:
    size = img.shape[0]
    if location == "top":
        y = rng.uniform(0.16 * size, 0.30 * size)
    else:
        y = rng.uniform(0.70 * size, 0.84 * size)
    x = rng.uniform(0.20 * size, 0.80 * size)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32)
    img[np.hypot(yy - y, xx - x) <= max(2.0, size / 24.0)] = 1.0


def render_synthetic_image(
    lat: SyntheticLatents, size: int, rng: np.random.Generator, intensity_jitter: float = 0.06
) -> np.ndarray:
    """Render one HxWx3 image in [0, 1] from latent attributes."""
    img = _background(size, lat.style, rng)
    _plane_bar(img, lat.plane)
    _organ_shape(img, lat.shape, rng)
    if lat.marker_present:
        _marker(img, lat.marker_location, rng)
    img = img * rng.uniform(1.0 - intensity_jitter, 1.0 + intensity_jitter)
    img = img + rng.uniform(-intensity_jitter / 2.0, intensity_jitter / 2.0)
    rgb = np.repeat(img[:, :, None], 3, axis=2)
    rgb += rng.uniform(-0.02, 0.02, size=3).astype(np.float32)  # faint tint, pure nuisance
    return np.clip(rgb, 0.0, 1.0).astype(np.float32)


# Question templates. Answers are single words drawn from the latents.
Q_MODALITY_OPEN = "what modality was used to take this image?"
Q_MODALITY_YESNO = "is this a {x} image?"
Q_MODALITY_CHOICE = "is this a {x} or a {y} image?"
Q_PLANE_OPEN = "which plane is this image taken in?"
Q_PLANE_CHOICE = "was this image taken in the {x} or the {y} plane?"
Q_ORGAN_OPEN = "which organ system is shown in this image?"
Q_ORGAN_OPEN2 = "what organ is this image of?"
Q_ABNORMAL_PRESENCE = "is there something abnormal in this image?"
Q_ABNORMAL_WHERE = "is the lesion in the top or the bottom of this image?"


def _make_qa(category: str, lat: SyntheticLatents, rng: np.random.Generator) -> tuple[str, str]:
    if category == "modality":
        u = rng.random()
        if u < 0.6:
            return Q_MODALITY_OPEN, lat.style
        if u < 0.8:
            x = lat.style if rng.random() < 0.5 else _other(MODALITY_STYLES, lat.style, rng)
            return Q_MODALITY_YESNO.format(x=x), "yes" if x == lat.style else "no"
        x, y = lat.style, _other(MODALITY_STYLES, lat.style, rng)
        if rng.random() < 0.5:
            x, y = y, x
        return Q_MODALITY_CHOICE.format(x=x, y=y), lat.style
    if category == "plane":
        if rng.random() < 0.7:
            return Q_PLANE_OPEN, lat.plane
        x, y = lat.plane, _other(PLANES, lat.plane, rng)
        if rng.random() < 0.5:
            x, y = y, x
        return Q_PLANE_CHOICE.format(x=x, y=y), lat.plane
    if category == "organ":
        template = Q_ORGAN_OPEN if rng.random() < 0.5 else Q_ORGAN_OPEN2
        return template, lat.organ
    if category == "abnormality":
        if lat.marker_present and rng.random() < 0.4:
            return Q_ABNORMAL_WHERE, lat.marker_location
        return Q_ABNORMAL_PRESENCE, "yes" if lat.marker_present else "no"
    raise ValueError(f"unknown category {category!r}")


def _other(values, current, rng: np.random.Generator) -> str:
    rest = [v for v in values if v != current]
    return rest[int(rng.integers(0, len(rest)))]


def make_synthetic_dataset(
    n: int,
    seed: int,
    size: int = 64,
    qa_per_image: int = 3,
    return_latents: bool = False,
):
    """Generate ``n`` synthetic samples (images shared by ~``qa_per_image`` QA pairs).

    Deterministic in ``seed``. With ``return_latents=True`` also returns the
    per-image :class:`SyntheticLatents`, keyed by image_id.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    n_images = -(-n // qa_per_image)
    samples: list[VqaSample] = []
    latents: dict[str, SyntheticLatents] = {}
    for i in range(n_images):
        marker = bool(rng.random() < 0.5)
        lat = SyntheticLatents(
            image_id=f"synth{i:05d}",
            style=str(rng.choice(MODALITY_STYLES)),
            plane=str(rng.choice(PLANES)),
            shape=str(rng.choice(list(SHAPE_TO_ORGAN))),
            marker_present=marker,
            marker_location=str(rng.choice(MARKER_LOCATIONS)) if marker else None,
        )
        latents[lat.image_id] = lat
        image = render_synthetic_image(lat, size, rng)
        cats = [str(c) for c in rng.permutation(["modality", "plane", "organ", "abnormality"])]
        for j in range(qa_per_image):
            if len(samples) >= n:
                break
            question, answer = _make_qa(cats[j % 4], lat, rng)
            samples.append(VqaSample(lat.image_id, image, question, answer, cats[j % 4]))
    if return_latents:
        return samples, latents
    return samples


_RE_MOD_YESNO = re.compile(r"^is this a (\w+) image\?$")
_RE_MOD_CHOICE = re.compile(r"^is this a (\w+) or a (\w+) image\?$")
_RE_PLANE_CHOICE = re.compile(r"^was this image taken in the (\w+) or the (\w+) plane\?$")


def oracle_answer(question: str, lat: SyntheticLatents) -> str:
    """Answer a generated question from latents alone (no pixels).

    The generator's ground truth is well-posed exactly when this oracle
    reproduces every stored answer.
    """
    if question == Q_MODALITY_OPEN:
        return lat.style
    if question == Q_PLANE_OPEN:
        return lat.plane
    if question in (Q_ORGAN_OPEN, Q_ORGAN_OPEN2):
        return lat.organ
    if question == Q_ABNORMAL_PRESENCE:
        return "yes" if lat.marker_present else "no"
    if question == Q_ABNORMAL_WHERE:
        assert lat.marker_location is not None
        return lat.marker_location
    m = _RE_MOD_YESNO.match(question)
    if m:
        return "yes" if m.group(1) == lat.style else "no"
    m = _RE_MOD_CHOICE.match(question)
    if m:
        assert lat.style in m.groups()
        return lat.style
    m = _RE_PLANE_CHOICE.match(question)
    if m:
        assert lat.plane in m.groups()
        return lat.plane
    raise ValueError(f"unrecognized synthetic question: {question!r}")


def make_cluster_images(
    n: int,
    seed: int,
    size: int = 64,
    styles: tuple[str, ...] = MODALITY_STYLES,
    nuisance: float = 0.35,
):
    """Unlabeled-style image clusters for contrastive pretraining experiments.

    Returns ``(images, labels)`` where ``labels[i]`` indexes ``styles``. The
    cluster identity is the background texture; heavy global brightness,
    contrast and tint jitter (``nuisance``) keeps first-order pixel statistics
    uninformative so that only structure-sensitive features separate clusters.
    """
    rng = np.random.default_rng(seed)
    images, labels = [], []
    for i in range(n):
        k = int(rng.integers(0, len(styles)))
        img = _background(size, styles[k], rng)
        # clutter: random bar and shape, independent of the cluster
        _plane_bar(img, str(rng.choice(PLANES)))
        lat_shape = str(rng.choice(list(SHAPE_TO_ORGAN)))
        _organ_shape(img, lat_shape, rng)
        gain = rng.uniform(1.0 - nuisance, 1.0 + nuisance)
        bias = rng.uniform(-nuisance / 2.0, nuisance / 2.0)
        img = (img - img.mean()) * gain + img.mean() + bias
        rgb = np.repeat(img[:, :, None], 3, axis=2)
        rgb += rng.uniform(-nuisance / 4.0, nuisance / 4.0, size=3).astype(np.float32)
        images.append(np.clip(rgb, 0.0, 1.0).astype(np.float32))
        labels.append(k)
    return images, np.asarray(labels, dtype=np.int64)
