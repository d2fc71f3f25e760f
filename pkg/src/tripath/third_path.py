"""Fine-grained context path.

Query, key and value streams come from summed bi-temporal intermediate
features (shallow tap -> Q, mid -> K, deep -> V). The streams are flattened
to token sequences, projected, given 2-D sinusoidal positions on Q/K, and
mixed by multi-head attention; extra blocks (if configured) are standard
pre-norm self-attention layers over the mixed sequence.
"""

from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import InvalidArg, ShapeMismatch
from .layers import sincos_position_encoding


@dataclass
class ThirdPathConfig:
    d_model: int = 64
    heads: int = 4
    blocks: int = 1
    out_channels: int = 64

    def __post_init__(self):
        if self.blocks < 1:
            raise InvalidArg("blocks must be >= 1")
        if self.d_model % self.heads != 0:
            raise InvalidArg("d_model must be divisible by heads")


def multi_head_attention(q, k, v, num_heads=1, return_weights=False):
    """Scaled dot-product attention over (..., n, d) token sequences.

    Pure function with no projections; the scale is 1/sqrt(d / num_heads).
    """
    if q.shape[-1] != k.shape[-1] or q.shape[-1] != v.shape[-1]:
        raise ShapeMismatch("q, k, v must share the model width")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeMismatch("k and v must have the same token count")
    d = q.shape[-1]
    if d % num_heads != 0:
        raise ShapeMismatch("width must be divisible by num_heads")
    d_head = d // num_heads

    def split(x):
        return x.reshape(*x.shape[:-1], num_heads, d_head).transpose(-3, -2)

    qh, kh, vh = split(q), split(k), split(v)
    scores = qh @ kh.transpose(-2, -1) / d_head ** 0.5
    weights = scores.softmax(dim=-1)
    out = weights @ vh
    out = out.transpose(-3, -2).reshape(*q.shape[:-1], d)
    if return_weights:
        return out, weights
    return out


class CrossStreamAttention(nn.Module):
    """Projection + multi-head attention over three distinct input streams."""

    def __init__(self, d_model, heads):
        super().__init__()
        self.heads = heads
        self.wq = nn.Linear(d_model, d_model)
        self.wk = nn.Linear(d_model, d_model)
        self.wv = nn.Linear(d_model, d_model)
        self.wo = nn.Linear(d_model, d_model)

    def forward(self, q, k, v):
        out = multi_head_attention(self.wq(q), self.wk(k), self.wv(v), self.heads)
        return self.wo(out)


class SelfAttentionBlock(nn.Module):
    """Pre-norm residual self-attention + feed-forward block."""

    def __init__(self, d_model, heads):
        super().__init__()
        self.norm1 = nn.LayerNorm(d_model)
        self.attn = CrossStreamAttention(d_model, heads)
        self.norm2 = nn.LayerNorm(d_model)
        self.ff = nn.Sequential(
            nn.Linear(d_model, d_model * 2), nn.GELU(), nn.Linear(d_model * 2, d_model)
        )

    def forward(self, x):
        h = self.norm1(x)
        x = x + self.attn(h, h, h)
        x = x + self.ff(self.norm2(x))
        return x


class ThirdPath(nn.Module):
    def __init__(self, config: ThirdPathConfig, in_channels):
        super().__init__()
        self.config = config
        self.q_in = nn.Linear(in_channels, config.d_model)
        self.k_in = nn.Linear(in_channels, config.d_model)
        self.v_in = nn.Linear(in_channels, config.d_model)
        self.cross = CrossStreamAttention(config.d_model, config.heads)
        self.blocks = nn.ModuleList(
            SelfAttentionBlock(config.d_model, config.heads)
            for _ in range(config.blocks - 1)
        )
        self.out_proj = nn.Conv2d(config.d_model, config.out_channels, 1)
        self.out_channels = config.out_channels

    @staticmethod
    def _flatten(feature_map):
        # (b, c, h, w) -> (b, h*w, c)
        return feature_map.flatten(-2).transpose(-1, -2)

    def form_qkv(self, c_taps, d_taps):
        """Sum paired taps, flatten to tokens and project to d_model.

        Returns (q, k, v, (h, w)). Shallow taps feed Q, mid K, deep V.
        """
        maps = list(c_taps) + list(d_taps)
        if len(c_taps) != 3 or len(d_taps) != 3:
            raise ShapeMismatch("expected three taps per temporal branch")
        shape = maps[0].shape
        for m in maps[1:]:
            if m.shape != shape:
                raise ShapeMismatch("all six tap maps must be shape-identical")
        q_map = c_taps[0] + d_taps[0]
        k_map = c_taps[1] + d_taps[1]
        v_map = c_taps[2] + d_taps[2]
        h, w = q_map.shape[-2:]
        q = self.q_in(self._flatten(q_map))
        k = self.k_in(self._flatten(k_map))
        v = self.v_in(self._flatten(v_map))
        return q, k, v, (h, w)

    def attend(self, q, k, v, grid):
        """Attention over projected token streams; returns an (out_c, h, w) map."""
        h, w = grid
        if q.shape[-2] != h * w:
            raise ShapeMismatch(f"token count {q.shape[-2]} does not match grid {h}x{w}")
        single = q.dim() == 2
        if single:
            q, k, v = q.unsqueeze(0), k.unsqueeze(0), v.unsqueeze(0)
        pe = sincos_position_encoding(h, w, self.config.d_model,
                                      device=q.device, dtype=q.dtype)
        x = self.cross(q + pe, k + pe, v)
        for blk in self.blocks:
            x = blk(x)
        maps = x.transpose(-1, -2).reshape(x.shape[0], self.config.d_model, h, w)
        out = self.out_proj(maps)
        return out[0] if single else out

    def forward(self, c_taps, d_taps):
        q, k, v, grid = self.form_qkv(c_taps, d_taps)
        return self.attend(q, k, v, grid)
