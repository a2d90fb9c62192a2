"""Feature fusion: concatenation and the stacked attention network.

The stacked attention path refines a query vector over image regions. With
region features ``v_I`` (m regions x d channels) and query ``u0 = v_Q``,
layer k computes

    h   = tanh(W_I v_I + (W_Q u_{k-1} + b))     # query term broadcast over regions
    p   = softmax(w_P h + b_P)                  # one weight per region
    v~  = sum_i p_i * v_I[i]                    # attended image summary
    u_k = v~ + u_{k-1}

so each layer adds an attention-weighted image summary to the running query.
All layer distributions are kept for visualization.
"""

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .encoders.image import FeatureMap, FeatureVector
from .errors import ConfigError


@dataclass
class AttentionDistribution:
    """Non-negative weights over image regions summing to 1."""

    weights: np.ndarray
    grid: tuple[int, int]

    def to_json(self) -> dict:
        return {"grid": list(self.grid), "weights": [float(w) for w in self.weights]}


@dataclass
class SanConfig:
    layers: int = 3
    attention_hidden_dim: int = 512
    feature_dim: int = 1024  # shared channel dim d of regions and query

    def __post_init__(self):
        if self.layers < 0:
            raise ConfigError("layers must be >= 0 (0 is the degenerate passthrough)")
        if self.attention_hidden_dim <= 0 or self.feature_dim <= 0:
            raise ConfigError("attention_hidden_dim and feature_dim must be positive")


def concat_fuse(v_img: FeatureVector, v_q: FeatureVector) -> FeatureVector:
    """Plain concatenation: output[0..a) is the image vector, output[a..a+b) the question."""
    return FeatureVector(values=np.concatenate([v_img.values, v_q.values]))


class _SanLayer(nn.Module):
    def __init__(self, d: int, hidden: int):
        super().__init__()
        self.w_i = nn.Linear(d, hidden, bias=False)
        self.w_q = nn.Linear(d, hidden, bias=True)
        self.w_p = nn.Linear(hidden, 1, bias=True)

    def forward(self, v_i: torch.Tensor, u: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = torch.tanh(self.w_i(v_i) + self.w_q(u).unsqueeze(1))  # (B, m, hidden)
        p = torch.softmax(self.w_p(h).squeeze(-1), dim=-1)  # (B, m)
        v_tilde = torch.bmm(p.unsqueeze(1), v_i).squeeze(1)  # (B, d)
        return v_tilde + u, p


class SanFusion(nn.Module):
    """Stack of attention layers; ``forward`` returns the refined query and
    every layer's attention distribution."""

    def __init__(self, cfg: SanConfig):
        super().__init__()
        self.cfg = cfg
        self.layers = nn.ModuleList(
            _SanLayer(cfg.feature_dim, cfg.attention_hidden_dim) for _ in range(cfg.layers)
        )

    def forward(self, v_i: torch.Tensor, v_q: torch.Tensor) -> tuple[torch.Tensor, list[torch.Tensor]]:
        if v_i.shape[-1] != self.cfg.feature_dim or v_q.shape[-1] != self.cfg.feature_dim:
            raise ValueError(
                f"region/query channel dim must be {self.cfg.feature_dim}, "
                f"got regions {tuple(v_i.shape)} and query {tuple(v_q.shape)}"
            )
        u = v_q
        attentions = []
        for layer in self.layers:
            u, p = layer(v_i, u)
            attentions.append(p)
        return u, attentions


def san_fuse(
    v_img: FeatureMap, v_q: FeatureVector, san: SanFusion
) -> tuple[FeatureVector, list[AttentionDistribution]]:
    """Single-sample fusion over spec-level feature types (eval mode)."""
    if v_img.d != v_q.dim:
        raise ValueError(f"region channel dim {v_img.d} != query dim {v_q.dim}")
    san.eval()
    with torch.no_grad():
        u, attns = san(
            torch.from_numpy(v_img.values).float().unsqueeze(0),
            torch.from_numpy(v_q.values).float().unsqueeze(0),
        )
    dists = [AttentionDistribution(weights=p[0].numpy(), grid=v_img.grid) for p in attns]
    return FeatureVector(values=u[0].numpy()), dists


def san_gradients(
    san: SanFusion,
    v_i: torch.Tensor,
    v_q: torch.Tensor,
    upstream: torch.Tensor,
) -> dict[str, torch.Tensor]:
    """Gradients of the scalar loss ``sum(upstream * u)`` w.r.t. parameters and inputs.

    Inputs may be double precision (``san.double()``) for verification against
    finite differences. Keys: parameter names plus ``"v_i"`` and ``"v_q"``.
    """
    v_i = v_i.detach().requires_grad_(True)
    v_q = v_q.detach().requires_grad_(True)
    u, _ = san(v_i, v_q)
    loss = (u * upstream).sum()
    named = list(san.named_parameters())
    tensors = [p for _, p in named] + [v_i, v_q]
    grads = torch.autograd.grad(loss, tensors, allow_unused=True)
    grads = [torch.zeros_like(t) if g is None else g for t, g in zip(tensors, grads)]
    out = {name: g for (name, _), g in zip(named, grads)}
    out["v_i"] = grads[-2]
    out["v_q"] = grads[-1]
    return out
