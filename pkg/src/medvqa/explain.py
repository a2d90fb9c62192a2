"""Evidence verification: GradCAM saliency and attention-map rendering.

The saliency map for a target answer class weights each channel of the final
convolutional activations by the spatial mean of the class logit's gradient
into that channel, sums, rectifies, upsamples to the input size and
normalizes by the maximum. Gradients flow through the image path only; the
question is held fixed.
"""

import io
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image, PngImagePlugin

from .fusion import AttentionDistribution
from .model import VqaModel

COLORMAP = "viridis"


@dataclass
class Heatmap:
    """Per-pixel saliency in [0, 1]; ``degenerate`` marks an all-zero map
    (no activation survived the ReLU for this class)."""

    values: np.ndarray
    target_class: int
    layer_name: str
    degenerate: bool = False

    def to_json(self) -> dict:
        h, w = self.values.shape
        return {
            "h": int(h),
            "w": int(w),
            "values": [float(v) for v in self.values.reshape(-1)],
            "target_class": self.target_class,
            "layer_name": self.layer_name,
            "degenerate": self.degenerate,
        }


def target_layer_name(model: VqaModel) -> str:
    arch = model.cfg.image_encoder.arch
    if arch.startswith("vgg"):
        return f"{arch}.trunk.blocks.4 (last conv of block 5)"
    return f"{arch}.trunk.stages.3 (last residual block)"


def gradcam(
    model: VqaModel, image: np.ndarray, question: str, target_class: int | None = None
) -> Heatmap:
    """Saliency heatmap over ``image`` for ``target_class`` (default: predicted).

    Model parameters and buffers are never written; gradients are taken with
    respect to the target-layer activations only.
    """
    model.eval()
    x = model.prepare_image(image)
    ids, lengths = model.tokenize_question(question)
    acts = model.image_encoder.conv_features(x).detach().requires_grad_(True)
    logits, _ = model.forward_from_conv(acts, ids, lengths)
    n_classes = logits.shape[1]
    if target_class is None:
        row = logits[0].detach().numpy()
        target_class = int(np.lexsort((np.arange(n_classes), -row))[0])
    elif not 0 <= target_class < n_classes:
        raise ValueError(f"target_class {target_class} out of range [0, {n_classes})")
    grad = torch.autograd.grad(logits[0, target_class], acts)[0]  # (1, K, h, w)
    channel_weights = grad.mean(dim=(2, 3))  # spatial mean per channel
    cam = torch.relu((channel_weights[:, :, None, None] * acts.detach()).sum(dim=1, keepdim=True))
    h, w = image.shape[0], image.shape[1]
    cam = F.interpolate(cam, size=(h, w), mode="bilinear", align_corners=False)[0, 0]
    cam = cam.numpy()
    peak = float(cam.max())
    if peak <= 0.0:
        return Heatmap(np.zeros((h, w), dtype=np.float32), target_class, target_layer_name(model), True)
    return Heatmap((cam / peak).astype(np.float32), target_class, target_layer_name(model), False)


def gradcam_channel_weights(
    model: VqaModel, image: np.ndarray, question: str, target_class: int
) -> np.ndarray:
    """The per-channel gradient means feeding the heatmap (verification hook)."""
    model.eval()
    x = model.prepare_image(image)
    ids, lengths = model.tokenize_question(question)
    acts = model.image_encoder.conv_features(x).detach().requires_grad_(True)
    logits, _ = model.forward_from_conv(acts, ids, lengths)
    grad = torch.autograd.grad(logits[0, target_class], acts)[0]
    return grad.mean(dim=(2, 3))[0].numpy()


def _target_probability(model: VqaModel, image: np.ndarray, question: str, target_class: int) -> float:
    ids, lengths = model.tokenize_question(question)
    with torch.no_grad():
        logits = model(model.prepare_image(image), ids, lengths)
    return float(torch.softmax(logits[0], dim=-1)[target_class])


def deletion_check(
    model: VqaModel,
    image: np.ndarray,
    question: str,
    heatmap: Heatmap,
    fraction: float = 0.2,
    rng: np.random.Generator | None = None,
    fill: float | None = None,
) -> tuple[float, float]:
    """Probability drop when masking the most-salient vs. random pixels.

    Masked pixels are set to ``fill`` (default: the image mean). Returns
    ``(drop_top, drop_random)``; a faithful heatmap should usually satisfy
    drop_top > drop_random.
    """
    if heatmap.values.shape != image.shape[:2]:
        raise ValueError(
            f"heatmap {heatmap.values.shape} does not match image {image.shape[:2]}"
        )
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must be in [0, 1]")
    rng = rng if rng is not None else np.random.default_rng(0)
    fill_value = float(image.mean()) if fill is None else fill
    n_pixels = image.shape[0] * image.shape[1]
    k = int(round(fraction * n_pixels))
    p0 = _target_probability(model, image, question, heatmap.target_class)

    flat_order = np.argsort(-heatmap.values.reshape(-1), kind="stable")
    top_idx = flat_order[:k]
    rand_idx = rng.choice(n_pixels, size=k, replace=False)

    drops = []
    for idx in (top_idx, rand_idx):
        masked = image.copy()
        ys, xs = np.unravel_index(idx, image.shape[:2])
        masked[ys, xs, :] = fill_value
        drops.append(p0 - _target_probability(model, masked, question, heatmap.target_class))
    return drops[0], drops[1]


def _colormap_lut() -> np.ndarray:
    from matplotlib import colormaps

    lut = colormaps[COLORMAP](np.linspace(0.0, 1.0, 256))[:, :3]
    return (lut * 255.0 + 0.5).astype(np.uint8)


def render_overlay(heatmap_values: np.ndarray, image: np.ndarray, alpha: float = 0.5) -> bytes:
    """Colormapped map alpha-blended over the grayscale image; PNG bytes.

    alpha=0 reproduces the (grayscale) image, alpha=1 the pure colormap. The
    colormap name is recorded in the PNG text metadata for reproducibility.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must be in [0, 1]")
    if heatmap_values.shape != image.shape[:2]:
        raise ValueError(
            f"heatmap {heatmap_values.shape} does not match image {image.shape[:2]}"
        )
    gray = image[:, :, 0] * 0.299 + image[:, :, 1] * 0.587 + image[:, :, 2] * 0.114
    base = np.repeat(gray[:, :, None], 3, axis=2)
    lut = _colormap_lut().astype(np.float32) / 255.0
    colored = lut[np.clip(heatmap_values * 255.0, 0, 255).astype(np.uint8)]
    blended = (1.0 - alpha) * base + alpha * colored
    arr = np.clip(np.rint(blended * 255.0), 0, 255).astype(np.uint8)
    info = PngImagePlugin.PngInfo()
    info.add_text("colormap", COLORMAP)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG", pnginfo=info)
    return buf.getvalue()


def render_attention(
    attentions: list[AttentionDistribution], image: np.ndarray, alpha: float = 0.5
) -> list[bytes]:
    """One overlay PNG per attention layer, upsampled to the image size.

    Each layer's region weights are rescaled by their maximum before
    colormapping (they are a distribution over m regions, not pixels).
    """
    if not attentions:
        raise ValueError("no attention distributions: model does not use stacked attention")
    h, w = image.shape[0], image.shape[1]
    out = []
    for dist in attentions:
        gh, gw = dist.grid
        grid = torch.from_numpy(dist.weights.reshape(1, 1, gh, gw).astype(np.float32))
        up = F.interpolate(grid, size=(h, w), mode="bilinear", align_corners=False)[0, 0].numpy()
        peak = float(up.max())
        if peak > 0:
            up = up / peak
        out.append(render_overlay(up, image, alpha))
    return out


def attention_maps(model: VqaModel, image: np.ndarray, question: str) -> list[AttentionDistribution]:
    """Run the model and collect every SAN layer's attention distribution."""
    if model.san is None:
        raise ValueError("model uses concatenation fusion; no attention maps exist")
    model.eval()
    ids, lengths = model.tokenize_question(question)
    with torch.no_grad():
        acts = model.image_encoder.conv_features(model.prepare_image(image))
        _, attns = model.forward_from_conv(acts, ids, lengths)
    grid = model.image_encoder.grid_shape
    return [AttentionDistribution(weights=p[0].numpy(), grid=grid) for p in attns]
