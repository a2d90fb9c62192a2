"""Contrastive self-supervised pretraining of the image encoder.

Two independently augmented views of every image in a batch are embedded and
pushed together by the normalized temperature-scaled cross entropy
(NT-Xent): for views (i, j) of one image among 2N embeddings,

    l(i, j) = -log  exp(cos(z_i, z_j) / t) / sum_{k != i} exp(cos(z_i, z_k) / t)

averaged over all 2N ordered positive pairs. Views are interleaved: rows 2t
and 2t+1 belong to image t. The projection head used during pretraining is
dropped when the encoder weights are saved.
"""

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .data.augment import PRETRAIN_AUGMENT, AugmentConfig, augment
from .data.records import IMAGE_EXTENSIONS
from .encoders.image import ImageEncoder, ImageEncoderConfig, build_image_encoder
from . import weights as weights_io


@dataclass
class ContrastiveConfig:
    temperature: float = 0.1
    batch_size: int = 128
    epochs: int = 80
    projection_dim: int = 128
    learning_rate: float = 1e-3  # Adam, cosine-decayed to 0 over all steps
    augmentations: AugmentConfig = field(default_factory=lambda: PRETRAIN_AUGMENT)

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.epochs < 1 or self.projection_dim < 1:
            raise ValueError("epochs and projection_dim must be positive")


def nt_xent_loss(z: torch.Tensor, temperature: float) -> torch.Tensor:
    """NT-Xent over an interleaved (2N, D) batch of projected embeddings."""
    if z.ndim != 2 or z.shape[0] % 2 != 0 or z.shape[0] < 4:
        raise ValueError(f"expected (2N, D) embeddings with N >= 2, got {tuple(z.shape)}")
    norms = z.norm(dim=1)
    if bool((norms == 0).any()):
        raise ValueError("zero-norm embedding: cosine similarity undefined")
    zn = z / norms.unsqueeze(1)
    sim = (zn @ zn.T) / temperature
    anchor = torch.eye(z.shape[0], dtype=torch.bool, device=z.device)
    sim = sim.masked_fill(anchor, float("-inf"))  # k != i excludes only the anchor itself
    targets = torch.arange(z.shape[0], device=z.device) ^ 1  # 2t <-> 2t+1
    return F.cross_entropy(sim, targets)


class ProjectionHead(nn.Module):
    """Two affine layers mapping trunk features into the contrastive space."""

    def __init__(self, in_dim: int, projection_dim: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(in_dim, in_dim), nn.ReLU(inplace=True), nn.Linear(in_dim, projection_dim)
        )

    def forward(self, x):
        return self.net(x)


def _two_views(images: list[np.ndarray], cfg: AugmentConfig, rng) -> torch.Tensor:
    views = []
    for img in images:
        for _ in range(2):
            v = augment(img, cfg, rng)
            views.append(torch.from_numpy(v).permute(2, 0, 1))
    return torch.stack(views)


def pretrain_encoder_on_images(
    images: list[np.ndarray],
    encoder_cfg: ImageEncoderConfig,
    cfg: ContrastiveConfig,
    seed: int = 0,
) -> tuple[ImageEncoder, list[float]]:
    """Run the contrastive loop over in-memory images.

    Returns the trained encoder and the per-epoch mean loss curve. All
    randomness (shuffling, augmentation, init, dropout) is derived from
    ``seed``, so single-worker runs reproduce bit for bit.
    """
    if len(images) < cfg.batch_size:
        raise ValueError(f"need at least batch_size={cfg.batch_size} images, got {len(images)}")
    torch.manual_seed(seed)
    encoder = ImageEncoder(encoder_cfg)
    head = ProjectionHead(encoder.native_dim, cfg.projection_dim)
    encoder.train()
    head.train()
    params = list(encoder.parameters()) + list(head.parameters())
    opt = torch.optim.Adam(params, lr=cfg.learning_rate)
    rng = np.random.default_rng(seed)

    n = len(images)
    steps_per_epoch = n // cfg.batch_size
    total_steps = max(1, cfg.epochs * steps_per_epoch)
    step = 0
    curve = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        losses = []
        for b in range(steps_per_epoch):
            batch_idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            batch = _two_views([images[i] for i in batch_idx], cfg.augmentations, rng)
            for group in opt.param_groups:
                group["lr"] = cfg.learning_rate * 0.5 * (1 + math.cos(math.pi * step / total_steps))
            z = head(encoder.pooled_trunk_features(batch))
            loss = nt_xent_loss(z, cfg.temperature)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss.detach()))
            step += 1
        curve.append(float(np.mean(losses)))
    encoder.eval()
    return encoder, curve


def trunk_archive(encoder: ImageEncoder) -> dict[str, np.ndarray]:
    """Encoder weights with the projection head and dense heads dropped."""
    return {
        name: arr
        for name, arr in weights_io.module_to_archive(encoder).items()
        if name.startswith("trunk.")
    }


def _load_image_file(path: Path, size: int) -> np.ndarray | None:
    from PIL import Image

    try:
        with Image.open(path) as im:
            im = im.convert("RGB").resize((size, size), Image.BILINEAR)
            return np.asarray(im, dtype=np.float32) / 255.0
    except Exception as exc:  # unreadable file: skip with warning
        warnings.warn(f"skipping unreadable image {path}: {exc}")
        return None


def pretrain_encoder(
    image_dir,
    encoder_cfg: ImageEncoderConfig,
    cfg: ContrastiveConfig,
    seed: int = 0,
    out_weights=None,
    out_log=None,
) -> tuple[dict[str, np.ndarray], list[float]]:
    """Pretrain on a flat folder of JPEG/PNG images.

    Saves the trunk weight archive to ``out_weights`` and a JSON loss log
    (epoch -> mean loss) to ``out_log`` when given; returns both in memory.
    """
    image_dir = Path(image_dir)
    files = sorted(p for p in image_dir.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS)
    images = [img for p in files if (img := _load_image_file(p, encoder_cfg.input_size)) is not None]
    if files and not images:
        raise ValueError(f"all {len(files)} image files under {image_dir} were unreadable")
    if not files:
        raise ValueError(f"no image files found under {image_dir}")
    encoder, curve = pretrain_encoder_on_images(images, encoder_cfg, cfg, seed=seed)
    archive = trunk_archive(encoder)
    if out_weights is not None:
        weights_io.save_archive(archive, out_weights)
    if out_log is not None:
        Path(out_log).write_text(
            json.dumps({"epoch_mean_loss": curve}, indent=1), encoding="utf-8"
        )
    return archive, curve


def linear_probe(
    encoder: ImageEncoder,
    images: list[np.ndarray],
    labels: np.ndarray,
    train_frac: float = 0.7,
    epochs: int = 300,
    seed: int = 0,
) -> float:
    """Frozen-encoder representation quality: held-out accuracy of a single
    affine classifier trained on pooled trunk features."""
    labels = np.asarray(labels, dtype=np.int64)
    encoder.eval()
    with torch.no_grad():
        batch = torch.stack([torch.from_numpy(img).permute(2, 0, 1) for img in images])
        feats = encoder.pooled_trunk_features(batch)

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(images))
    n_train = max(1, int(round(train_frac * len(images))))
    train_idx, test_idx = order[:n_train], order[n_train:]
    if len(test_idx) == 0:
        train_idx = test_idx = order
    mean = feats[train_idx].mean(0, keepdim=True)
    std = feats[train_idx].std(0, keepdim=True).clamp_min(1e-6)
    feats = (feats - mean) / std
    x_tr, y_tr = feats[train_idx], torch.from_numpy(labels[train_idx])
    x_te, y_te = feats[test_idx], torch.from_numpy(labels[test_idx])

    torch.manual_seed(seed)
    clf = nn.Linear(feats.shape[1], int(labels.max()) + 1)
    opt = torch.optim.Adam(clf.parameters(), lr=0.01, weight_decay=1e-4)
    for _ in range(epochs):
        loss = F.cross_entropy(clf(x_tr), y_tr)
        opt.zero_grad()
        loss.backward()
        opt.step()
    with torch.no_grad():
        acc = float((clf(x_te).argmax(1) == y_te).float().mean())
    return acc
