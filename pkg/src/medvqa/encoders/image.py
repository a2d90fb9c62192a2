"""Image encoders: VGG-style and residual CNNs in pooled or spatial mode.

``pooled`` yields one feature vector per image (dense head retained);
``spatial`` discards the dense layers and yields a grid of region features so
attention-based fusion keeps positional information. Every architecture
exposes ``conv_features`` (the activations of its pinned final convolutional
layer, the GradCAM target) and ``from_conv_features`` (the rest of the
forward pass), so saliency code never needs framework hooks.
"""

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from ..errors import ConfigError
from .. import weights as weights_io

IMAGE_ARCHS = ("vgg_small", "vgg16", "resnet_small", "resnet50", "resnet152")
OUTPUT_MODES = ("pooled", "spatial")

# conv widths per block; vgg16 is the standard 13-conv layout
_VGG_PLANS = {
    "vgg_small": ([(16, 2), (32, 2), (64, 2), (128, 2), (256, 2)], 512),
    "vgg16": ([(64, 2), (128, 2), (256, 3), (512, 3), (512, 3)], 4096),
}
# (block type, blocks per stage, base width)
_RESNET_PLANS = {
    "resnet_small": ("basic", [2, 2, 2, 2], 16),
    "resnet50": ("bottleneck", [3, 4, 6, 3], 64),
    "resnet152": ("bottleneck", [3, 8, 36, 3], 64),
}


@dataclass
class FeatureVector:
    """1-D pooled image or question encoding."""

    values: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.values.shape[-1])


@dataclass
class FeatureMap:
    """Region-major spatial encoding: ``values[m, d]`` over an ``h x w`` grid,
    regions ordered row-major from the top-left."""

    values: np.ndarray
    grid: tuple[int, int]

    @property
    def m(self) -> int:
        return int(self.values.shape[0])

    @property
    def d(self) -> int:
        return int(self.values.shape[1])


@dataclass
class ImageEncoderConfig:
    arch: str = "vgg_small"
    output_mode: str = "pooled"
    feature_dim: int = 128
    input_size: int = 224
    pretrained_weights: str | None = None
    fine_tune: bool = True  # False freezes the conv trunk; heads stay trainable

    def __post_init__(self):
        if self.arch not in IMAGE_ARCHS:
            raise ConfigError(f"unknown image arch {self.arch!r}, expected one of {IMAGE_ARCHS}")
        if self.output_mode not in OUTPUT_MODES:
            raise ConfigError(f"unknown output_mode {self.output_mode!r}")
        if self.feature_dim <= 0:
            raise ConfigError("feature_dim must be positive")
        if self.input_size < 32 or self.input_size % 32 != 0:
            raise ConfigError("input_size must be a positive multiple of 32")


def _conv_block(in_ch: int, out_ch: int, n_convs: int) -> nn.Sequential:
    layers = []
    for i in range(n_convs):
        layers += [nn.Conv2d(in_ch if i == 0 else out_ch, out_ch, 3, padding=1), nn.ReLU(inplace=True)]
    return nn.Sequential(*layers)


class _VggTrunk(nn.Module):
    """Five conv blocks with a max-pool after each; ``conv_features`` stops
    before the final pool (the last conv activation is the saliency target)."""

    def __init__(self, plan):
        super().__init__()
        blocks = []
        in_ch = 3
        for out_ch, n_convs in plan:
            blocks.append(_conv_block(in_ch, out_ch, n_convs))
            in_ch = out_ch
        self.blocks = nn.ModuleList(blocks)
        self.pool = nn.MaxPool2d(2)
        self.out_channels = in_ch

    def conv_features(self, x):
        for block in self.blocks[:-1]:
            x = self.pool(block(x))
        return self.blocks[-1](x)

    def post(self, acts):
        return self.pool(acts)


class _BasicBlock(nn.Module):
    expansion = 1

    def __init__(self, in_ch, planes, stride=1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, planes, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(planes)
        self.conv2 = nn.Conv2d(planes, planes, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(planes)
        self.relu = nn.ReLU(inplace=True)
        self.down = None
        if stride != 1 or in_ch != planes:
            self.down = nn.Sequential(
                nn.Conv2d(in_ch, planes, 1, stride=stride, bias=False), nn.BatchNorm2d(planes)
            )

    def forward(self, x):
        identity = x if self.down is None else self.down(x)
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + identity)


class _Bottleneck(nn.Module):
    expansion = 4

    def __init__(self, in_ch, planes, stride=1):
        super().__init__()
        out_ch = planes * self.expansion
        self.conv1 = nn.Conv2d(in_ch, planes, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(planes)
        self.conv2 = nn.Conv2d(planes, planes, 3, stride=stride, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(planes)
        self.conv3 = nn.Conv2d(planes, out_ch, 1, bias=False)
        self.bn3 = nn.BatchNorm2d(out_ch)
        self.relu = nn.ReLU(inplace=True)
        self.down = None
        if stride != 1 or in_ch != out_ch:
            self.down = nn.Sequential(
                nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False), nn.BatchNorm2d(out_ch)
            )

    def forward(self, x):
        identity = x if self.down is None else self.down(x)
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.relu(self.bn2(self.conv2(out)))
        out = self.bn3(self.conv3(out))
        return self.relu(out + identity)


class _ResNetTrunk(nn.Module):
    def __init__(self, block_kind, layers, base_width):
        super().__init__()
        block = _BasicBlock if block_kind == "basic" else _Bottleneck
        self.stem = nn.Sequential(
            nn.Conv2d(3, base_width, 7, stride=2, padding=3, bias=False),
            nn.BatchNorm2d(base_width),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(3, stride=2, padding=1),
        )
        stages = []
        in_ch = base_width
        for i, n_blocks in enumerate(layers):
            planes = base_width * (2**i)
            stride = 1 if i == 0 else 2
            blocks = []
            for j in range(n_blocks):
                blocks.append(block(in_ch, planes, stride if j == 0 else 1))
                in_ch = planes * block.expansion
            stages.append(nn.Sequential(*blocks))
        self.stages = nn.ModuleList(stages)
        self.out_channels = in_ch

    def conv_features(self, x):
        x = self.stem(x)
        for stage in self.stages:
            x = stage(x)
        return x

    def post(self, acts):
        return acts


class ImageEncoder(nn.Module):
    """Configured CNN; forward input is (B, 3, S, S) in [0, 1]."""

    def __init__(self, cfg: ImageEncoderConfig):
        super().__init__()
        self.cfg = cfg
        if cfg.arch in _VGG_PLANS:
            plan, dense_hidden = _VGG_PLANS[cfg.arch]
            self.trunk = _VggTrunk(plan)
            side = cfg.input_size // 32
            flat = self.trunk.out_channels * side * side
            if cfg.arch == "vgg16":
                # standard three dense layers
                self.pooled_head = nn.Sequential(
                    nn.Linear(flat, dense_hidden),
                    nn.ReLU(inplace=True),
                    nn.Linear(dense_hidden, dense_hidden),
                    nn.ReLU(inplace=True),
                    nn.Linear(dense_hidden, cfg.feature_dim),
                )
            else:
                self.pooled_head = nn.Sequential(
                    nn.Linear(flat, dense_hidden),
                    nn.ReLU(inplace=True),
                    nn.Linear(dense_hidden, cfg.feature_dim),
                )
        else:
            kind, layers, width = _RESNET_PLANS[cfg.arch]
            self.trunk = _ResNetTrunk(kind, layers, width)
            self.pooled_head = nn.Linear(self.trunk.out_channels, cfg.feature_dim)
        if cfg.output_mode == "spatial":
            self.region_proj = nn.Conv2d(self.trunk.out_channels, cfg.feature_dim, 1)
        self._init_weights()
        if cfg.pretrained_weights:
            self.load_pretrained(cfg.pretrained_weights)
        if not cfg.fine_tune:
            for p in self.trunk.parameters():
                p.requires_grad_(False)

    def _init_weights(self):
        # He init keeps activation scale through the unnormalized VGG stack
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, mode="fan_out", nonlinearity="relu")
                if m.bias is not None:
                    nn.init.zeros_(m.bias)
            elif isinstance(m, nn.Linear):
                nn.init.xavier_uniform_(m.weight)
                nn.init.zeros_(m.bias)

    def train(self, mode: bool = True):
        super().train(mode)
        if mode and not self.cfg.fine_tune:
            self.trunk.eval()  # keep frozen batch-norm statistics fixed
        return self

    @property
    def grid_shape(self) -> tuple[int, int]:
        side = self.cfg.input_size // 32
        return (side, side)

    @property
    def native_dim(self) -> int:
        """Channel count entering the pooled head (2048 for resnet50/152)."""
        return self.trunk.out_channels

    def load_pretrained(self, path) -> dict:
        report = weights_io.load_into_module(self, weights_io.load_archive(path), strict=False)
        return report

    def _check_input(self, x):
        s = self.cfg.input_size
        if x.ndim != 4 or x.shape[1] != 3 or x.shape[2] != s or x.shape[3] != s:
            raise ValueError(f"expected image batch of shape (B, 3, {s}, {s}), got {tuple(x.shape)}")

    def conv_features(self, x):
        """Activations at the saliency target layer (last conv / last stage)."""
        self._check_input(x)
        return self.trunk.conv_features(x * 2.0 - 1.0)

    def pooled_trunk_features(self, x):
        """Globally average-pooled trunk features (contrastive/probe hook point)."""
        acts = self.trunk.post(self.conv_features(x))
        return acts.mean(dim=(2, 3))

    def from_conv_features(self, acts):
        acts = self.trunk.post(acts)
        if self.cfg.output_mode == "pooled":
            if isinstance(self.pooled_head, nn.Linear):  # resnet: GAP then project
                return self.pooled_head(acts.mean(dim=(2, 3)))
            return self.pooled_head(acts.flatten(1))
        proj = self.region_proj(acts)  # (B, d, h, w)
        return proj.flatten(2).transpose(1, 2)  # (B, m, d) row-major regions

    def forward(self, x):
        return self.from_conv_features(self.conv_features(x))

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def build_image_encoder(cfg: ImageEncoderConfig, seed: int | None = None) -> ImageEncoder:
    """Construct an encoder; with ``seed`` the initial parameters are
    reproducible across builds."""
    if seed is not None:
        torch.manual_seed(seed)
    enc = ImageEncoder(cfg)
    enc.eval()
    return enc


def image_to_tensor(image: np.ndarray) -> torch.Tensor:
    """One HxWx3 [0,1] array -> (1, 3, H, W) float tensor."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected HxWx3 image, got shape {tuple(image.shape)}")
    return torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32)).permute(2, 0, 1).unsqueeze(0)


def encode_image(encoder: ImageEncoder, image: np.ndarray) -> FeatureVector | FeatureMap:
    """Encode one preprocessed HxWx3 image per the encoder's output mode."""
    encoder.eval()
    with torch.no_grad():
        out = encoder(image_to_tensor(image))
    if encoder.cfg.output_mode == "pooled":
        return FeatureVector(values=out[0].numpy())
    return FeatureMap(values=out[0].numpy(), grid=encoder.grid_shape)
