"""Question encoders: embedding + LSTM, or a self-attention encoder stack.

Both map a padded token-id sequence to one fixed-length vector. The LSTM
variant reads true sequence lengths so padding never changes the result; the
transformer variant prepends a learned summary token and masks padding. Word
vectors and full transformer weights can be preloaded from external files.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from ..data.vocab import Vocabulary
from ..errors import ConfigError
from .. import weights as weights_io
from .image import FeatureVector

QUESTION_ARCHS = ("lstm", "transformer")


@dataclass
class QuestionEncoderConfig:
    arch: str = "lstm"
    embedding_dim: int = 64
    hidden_dim: int = 128
    layers: int = 1
    max_tokens: int = 24
    pretrained_embeddings: str | None = None
    pretrained_transformer: str | None = None

    def __post_init__(self):
        if self.arch not in QUESTION_ARCHS:
            raise ConfigError(f"unknown question arch {self.arch!r}, expected one of {QUESTION_ARCHS}")
        if min(self.embedding_dim, self.hidden_dim, self.layers, self.max_tokens) <= 0:
            raise ConfigError("embedding_dim, hidden_dim, layers and max_tokens must be positive")


def load_word_vectors(path, vocab: Vocabulary, embedding_dim: int) -> tuple[np.ndarray, int]:
    """Read a text embedding file (token then values, space-separated).

    Returns an (n_vocab, embedding_dim) matrix with rows for known tokens
    replaced, plus the number of tokens covered. Dimension mismatches are
    configuration errors.
    """
    rng = np.random.default_rng(0)
    matrix = rng.normal(0.0, 0.1, size=(len(vocab), embedding_dim)).astype(np.float32)
    covered = 0
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        parts = line.rstrip().split(" ")
        if len(parts) < 2:
            continue
        token, values = parts[0], parts[1:]
        if len(values) != embedding_dim:
            raise ConfigError(
                f"{path}:{lineno}: embedding width {len(values)} != configured embedding_dim {embedding_dim}"
            )
        idx = vocab.token_to_id.get(token)
        if idx is not None:
            matrix[idx] = np.asarray([float(v) for v in values], dtype=np.float32)
            covered += 1
    matrix[vocab.pad_id] = 0.0
    return matrix, covered


class LstmQuestionEncoder(nn.Module):
    def __init__(self, cfg: QuestionEncoderConfig, vocab: Vocabulary):
        super().__init__()
        self.cfg = cfg
        self.vocab = vocab
        self.embedding = nn.Embedding(len(vocab), cfg.embedding_dim, padding_idx=vocab.pad_id)
        self.lstm = nn.LSTM(
            cfg.embedding_dim, cfg.hidden_dim, num_layers=cfg.layers, batch_first=True
        )
        if cfg.pretrained_embeddings:
            matrix, _ = load_word_vectors(cfg.pretrained_embeddings, vocab, cfg.embedding_dim)
            with torch.no_grad():
                self.embedding.weight.copy_(torch.from_numpy(matrix))

    def forward(self, token_ids: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        """(B, T) padded ids + (B,) true lengths -> (B, hidden_dim).

        The question vector is the last layer's final hidden state at each
        sequence's true end, so trailing padding is inert.
        """
        emb = self.embedding(token_ids)
        packed = nn.utils.rnn.pack_padded_sequence(
            emb, lengths.cpu(), batch_first=True, enforce_sorted=False
        )
        _, (h_n, _) = self.lstm(packed)
        return h_n[-1]


class TransformerQuestionEncoder(nn.Module):
    def __init__(self, cfg: QuestionEncoderConfig, vocab: Vocabulary):
        super().__init__()
        self.cfg = cfg
        self.vocab = vocab
        nhead = next(h for h in (8, 4, 2, 1) if cfg.embedding_dim % h == 0)
        self.embedding = nn.Embedding(len(vocab), cfg.embedding_dim, padding_idx=vocab.pad_id)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, cfg.embedding_dim))
        self.pos_embedding = nn.Parameter(torch.zeros(1, cfg.max_tokens + 1, cfg.embedding_dim))
        layer = nn.TransformerEncoderLayer(
            d_model=cfg.embedding_dim,
            nhead=nhead,
            dim_feedforward=4 * cfg.embedding_dim,
            batch_first=True,
            dropout=0.1,
        )
        self.encoder = nn.TransformerEncoder(layer, num_layers=cfg.layers, enable_nested_tensor=False)
        self.summary_proj = nn.Linear(cfg.embedding_dim, cfg.hidden_dim)
        nn.init.normal_(self.cls_token, std=0.02)
        nn.init.normal_(self.pos_embedding, std=0.02)
        if cfg.pretrained_embeddings:
            matrix, _ = load_word_vectors(cfg.pretrained_embeddings, vocab, cfg.embedding_dim)
            with torch.no_grad():
                self.embedding.weight.copy_(torch.from_numpy(matrix))
        if cfg.pretrained_transformer:
            # domain-pretrained stacks (e.g. biomedical-corpus weights) ship as
            # the same flat archive format; shape mismatches raise here
            weights_io.load_into_module(self, weights_io.load_archive(cfg.pretrained_transformer))

    def forward(self, token_ids: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        """(B, T) padded ids + (B,) lengths -> (B, hidden_dim) via the summary token."""
        b, t = token_ids.shape
        emb = self.embedding(token_ids)
        x = torch.cat([self.cls_token.expand(b, 1, -1), emb], dim=1)
        x = x + self.pos_embedding[:, : t + 1]
        positions = torch.arange(t, device=token_ids.device).unsqueeze(0)
        pad_mask = positions >= lengths.unsqueeze(1)  # (B, T), True where padded
        pad_mask = torch.cat([torch.zeros(b, 1, dtype=torch.bool, device=pad_mask.device), pad_mask], dim=1)
        out = self.encoder(x, src_key_padding_mask=pad_mask)
        return self.summary_proj(out[:, 0])


QuestionEncoder = LstmQuestionEncoder | TransformerQuestionEncoder


def build_question_encoder(
    cfg: QuestionEncoderConfig, vocab: Vocabulary, seed: int | None = None
) -> "QuestionEncoder":
    if seed is not None:
        torch.manual_seed(seed)
    enc = LstmQuestionEncoder(cfg, vocab) if cfg.arch == "lstm" else TransformerQuestionEncoder(cfg, vocab)
    enc.eval()
    return enc


def pad_token_batch(
    token_lists: list[list[int]], max_tokens: int, pad_id: int
) -> tuple[torch.Tensor, torch.Tensor]:
    """Truncate/pad id lists into (B, T) ids + (B,) lengths tensors."""
    if any(len(t) == 0 for t in token_lists):
        raise ValueError("cannot encode an empty token sequence")
    clipped = [t[:max_tokens] for t in token_lists]
    t_max = max(len(t) for t in clipped)
    ids = torch.full((len(clipped), t_max), pad_id, dtype=torch.long)
    lengths = torch.zeros(len(clipped), dtype=torch.long)
    for i, toks in enumerate(clipped):
        ids[i, : len(toks)] = torch.tensor(toks, dtype=torch.long)
        lengths[i] = len(toks)
    return ids, lengths


def encode_question(encoder: "QuestionEncoder", token_ids: list[int]) -> FeatureVector:
    """Encode one token-id sequence to a fixed-length vector (eval mode)."""
    ids, lengths = pad_token_batch([list(token_ids)], encoder.cfg.max_tokens, encoder.vocab.pad_id)
    encoder.eval()
    with torch.no_grad():
        out = encoder(ids, lengths)
    return FeatureVector(values=out[0].numpy())
