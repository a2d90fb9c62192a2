"""Whole-model assembly: encoders + fusion + two-layer classification head."""

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .data.vocab import AnswerClassMap, Vocabulary
from .encoders.image import ImageEncoder, ImageEncoderConfig, image_to_tensor
from .encoders.question import (
    LstmQuestionEncoder,
    QuestionEncoderConfig,
    TransformerQuestionEncoder,
    pad_token_batch,
)
from .errors import ConfigError
from .fusion import SanConfig, SanFusion
from . import weights as weights_io

FUSIONS = ("concat", "san")


@dataclass
class ModelConfig:
    image_encoder: ImageEncoderConfig
    question_encoder: QuestionEncoderConfig
    n_classes: int
    fusion: str = "concat"
    san: SanConfig | None = None
    head_hidden_dim: int = 1024
    dropout: float = 0.5

    def __post_init__(self):
        if self.n_classes < 2:
            raise ConfigError("n_classes must be >= 2")
        if self.fusion not in FUSIONS:
            raise ConfigError(f"unknown fusion {self.fusion!r}, expected one of {FUSIONS}")
        if self.fusion == "san" and self.image_encoder.output_mode != "spatial":
            raise ConfigError("san fusion requires image output_mode='spatial'")
        if self.fusion == "concat" and self.image_encoder.output_mode != "pooled":
            raise ConfigError("concat fusion requires image output_mode='pooled'")
        if self.fusion == "san":
            if self.san is None:
                self.san = SanConfig(feature_dim=self.image_encoder.feature_dim)
            if self.san.feature_dim != self.image_encoder.feature_dim:
                raise ConfigError(
                    f"san feature_dim {self.san.feature_dim} must equal image encoder "
                    f"feature_dim {self.image_encoder.feature_dim}"
                )
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        return d

    @classmethod
    def from_json(cls, payload: dict) -> "ModelConfig":
        payload = dict(payload)
        payload["image_encoder"] = ImageEncoderConfig(**payload["image_encoder"])
        payload["question_encoder"] = QuestionEncoderConfig(**payload["question_encoder"])
        if payload.get("san") is not None:
            payload["san"] = SanConfig(**payload["san"])
        return cls(**payload)


@dataclass
class AnswerPrediction:
    """Ranked answer classes; probabilities descend, ties broken by class id."""

    top_k: list[tuple[int, str, float]]
    predicted_class: int


class VqaModel(nn.Module):
    """Joint-embedding VQA classifier over (image, tokenized question) pairs."""

    def __init__(self, cfg: ModelConfig, vocab: Vocabulary, answer_map: AnswerClassMap):
        super().__init__()
        if answer_map.n_classes != cfg.n_classes:
            raise ConfigError(
                f"answer map has {answer_map.n_classes} classes but config says {cfg.n_classes}"
            )
        self.cfg = cfg
        self.vocab = vocab
        self.answer_map = answer_map
        self.image_encoder = ImageEncoder(cfg.image_encoder)
        qe_cls = LstmQuestionEncoder if cfg.question_encoder.arch == "lstm" else TransformerQuestionEncoder
        self.question_encoder = qe_cls(cfg.question_encoder, vocab)

        if cfg.fusion == "san":
            self.san = SanFusion(cfg.san)
            qdim = cfg.question_encoder.hidden_dim
            self.query_proj = (
                nn.Identity() if qdim == cfg.san.feature_dim else nn.Linear(qdim, cfg.san.feature_dim)
            )
            fused_dim = cfg.san.feature_dim
        else:
            self.san = None
            fused_dim = cfg.image_encoder.feature_dim + cfg.question_encoder.hidden_dim
        self.head = nn.Sequential(
            nn.Linear(fused_dim, cfg.head_hidden_dim),
            nn.ReLU(inplace=True),
            nn.Dropout(cfg.dropout),
            nn.Linear(cfg.head_hidden_dim, cfg.n_classes),
        )

    def forward_from_conv(self, conv_acts, token_ids, lengths):
        """Forward from the image trunk's target activations onward.

        Returns (logits, attention list); the attention list is empty for
        concatenation fusion. Saliency code differentiates w.r.t.
        ``conv_acts`` through this path while the question stays fixed.
        """
        img_feat = self.image_encoder.from_conv_features(conv_acts)
        q_vec = self.question_encoder(token_ids, lengths)
        if self.san is not None:
            u, attns = self.san(img_feat, self.query_proj(q_vec))
            fused = u
        else:
            fused = torch.cat([img_feat, q_vec], dim=1)
            attns = []
        return self.head(fused), attns

    def forward(self, images, token_ids, lengths):
        acts = self.image_encoder.conv_features(images)
        return self.forward_from_conv(acts, token_ids, lengths)[0]

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def prepare_image(self, image: np.ndarray) -> torch.Tensor:
        """HxWx3 [0,1] array -> (1,3,S,S) tensor, bilinearly resized if needed."""
        x = image_to_tensor(image)
        s = self.cfg.image_encoder.input_size
        if x.shape[-2:] != (s, s):
            x = F.interpolate(x, size=(s, s), mode="bilinear", align_corners=False)
        return x

    def tokenize_question(self, question: str) -> tuple[torch.Tensor, torch.Tensor]:
        ids = self.vocab.encode(question)
        if not ids:
            raise ValueError("question has no tokens")
        return pad_token_batch([ids], self.cfg.question_encoder.max_tokens, self.vocab.pad_id)


def build_model(
    cfg: ModelConfig, vocab: Vocabulary, answer_map: AnswerClassMap, seed: int | None = None
) -> VqaModel:
    """Assemble a model; a fixed seed reproduces the initial parameters."""
    if seed is not None:
        torch.manual_seed(seed)
    model = VqaModel(cfg, vocab, answer_map)
    model.eval()
    return model


def predict(model: VqaModel, image: np.ndarray, question: str, k: int = 5) -> AnswerPrediction:
    """Tokenize, forward, softmax and rank the top-k answers."""
    if k < 1 or k > model.cfg.n_classes:
        raise ValueError(f"k must be in [1, {model.cfg.n_classes}]")
    ids, lengths = model.tokenize_question(question)
    model.eval()
    with torch.no_grad():
        logits = model(model.prepare_image(image), ids, lengths)[0]
        probs = torch.softmax(logits, dim=-1).numpy()
    # sort by descending probability, ties by lower class id
    order = np.lexsort((np.arange(len(probs)), -probs))
    top = [
        (int(c), model.answer_map.class_to_answer[int(c)], float(probs[c])) for c in order[:k]
    ]
    return AnswerPrediction(top_k=top, predicted_class=int(order[0]))


WEIGHTS_FILE = "weights.bin"
SIDECAR_FILE = "checkpoint.json"


def save_checkpoint(
    model: VqaModel,
    directory,
    answer_categories: dict[str, str] | None = None,
    metadata: dict | None = None,
) -> None:
    """Write ``weights.bin`` (tensor archive) + ``checkpoint.json`` sidecar."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    weights_io.save_archive(weights_io.module_to_archive(model), directory / WEIGHTS_FILE)
    sidecar = {
        "model_config": model.cfg.to_json(),
        "vocab": model.vocab.to_json(),
        "answer_map": model.answer_map.to_json(),
        "answer_categories": answer_categories or {},
        "metadata": metadata or {},
    }
    (directory / SIDECAR_FILE).write_text(json.dumps(sidecar, indent=1), encoding="utf-8")


def load_checkpoint(directory) -> tuple[VqaModel, dict]:
    """Rebuild a model from a checkpoint directory; returns (model, sidecar)."""
    directory = Path(directory)
    sidecar = json.loads((directory / SIDECAR_FILE).read_text(encoding="utf-8"))
    cfg = ModelConfig.from_json(sidecar["model_config"])
    # weight paths were already baked into the archive; do not re-trigger loads
    cfg.image_encoder.pretrained_weights = None
    cfg.question_encoder.pretrained_embeddings = None
    cfg.question_encoder.pretrained_transformer = None
    vocab = Vocabulary.from_json(sidecar["vocab"])
    answer_map = AnswerClassMap.from_json(sidecar["answer_map"])
    model = VqaModel(cfg, vocab, answer_map)
    weights_io.load_into_module(model, weights_io.load_archive(directory / WEIGHTS_FILE), strict=True)
    model.eval()
    return model, sidecar
