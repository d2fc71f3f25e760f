"""Weight-shared ViT encoder with frozen base weights and LoRA/adapter inserts.

The same module is applied to both temporal images, so the two branches are
the identical function by construction. Base weights (patch embedding, class
token, attention, MLP, norms) are frozen when ``freeze_base`` is set; only
the LoRA matrices and adapter bottlenecks train.
"""

from collections import OrderedDict
from dataclasses import dataclass, field

import torch
import torch.nn as nn

from .errors import InvalidArg, MissingTensor, ShapeError, ShapeMismatch
from .layers import BottleneckAdapter, LoRALinear, sincos_position_encoding


@dataclass
class BackboneConfig:
    patch_size: int = 8
    embed_dim: int = 64
    depth: int = 6
    heads: int = 4
    tap_layers: tuple = (1, 3, 5)
    lora_rank: int = 4
    adapter_dim: int = 16
    freeze_base: bool = True

    def __post_init__(self):
        self.tap_layers = tuple(int(t) for t in self.tap_layers)
        if len(self.tap_layers) != 3:
            raise InvalidArg("tap_layers must name exactly three blocks")
        if list(self.tap_layers) != sorted(set(self.tap_layers)):
            raise InvalidArg("tap_layers must be strictly increasing")
        if self.tap_layers[-1] >= self.depth or self.tap_layers[0] < 0:
            raise InvalidArg("tap_layers must lie in [0, depth)")
        if not 0 <= self.lora_rank < self.embed_dim:
            raise InvalidArg("lora_rank must satisfy 0 <= rank < embed_dim")
        if not 0 <= self.adapter_dim < self.embed_dim:
            raise InvalidArg("adapter_dim must satisfy 0 <= dim < embed_dim")
        if self.embed_dim % self.heads != 0:
            raise InvalidArg("embed_dim must be divisible by heads")


@dataclass
class FeatureBundle:
    """Final feature map plus the three intermediate tap maps, all (d, h, w)."""

    S: torch.Tensor
    C2: torch.Tensor
    C3: torch.Tensor
    C4: torch.Tensor

    def taps(self):
        return (self.C2, self.C3, self.C4)


class SelfAttention(nn.Module):
    def __init__(self, dim, heads, lora_rank):
        super().__init__()
        self.heads = heads
        self.q = LoRALinear(dim, dim, lora_rank)
        self.k = nn.Linear(dim, dim)
        self.v = LoRALinear(dim, dim, lora_rank)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x):
        b, n, d = x.shape
        h = self.heads
        q = self.q(x).reshape(b, n, h, d // h).transpose(1, 2)
        k = self.k(x).reshape(b, n, h, d // h).transpose(1, 2)
        v = self.v(x).reshape(b, n, h, d // h).transpose(1, 2)
        attn = (q @ k.transpose(-2, -1)) / (d // h) ** 0.5
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, d)
        return self.proj(out)


class Mlp(nn.Module):
    def __init__(self, dim, hidden):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(self.act(self.fc1(x)))


class EncoderBlock(nn.Module):
    """Pre-norm transformer block with an optional adapter after the MLP."""

    def __init__(self, dim, heads, lora_rank, adapter_dim):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = SelfAttention(dim, heads, lora_rank)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, dim * 4)
        self.adapter = BottleneckAdapter(dim, adapter_dim) if adapter_dim > 0 else None

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        x = x + self.mlp(self.norm2(x))
        if self.adapter is not None:
            x = self.adapter(x)
        return x


def _is_insert_param(name):
    return "lora_a" in name or "lora_b" in name or ".adapter." in name


class SiameseBackbone(nn.Module):
    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.config = config
        d = config.embed_dim
        self.patch_embed = nn.Conv2d(3, d, config.patch_size, stride=config.patch_size)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, d))
        nn.init.normal_(self.cls_token, std=0.02)
        self.blocks = nn.ModuleList(
            EncoderBlock(d, config.heads, config.lora_rank, config.adapter_dim)
            for _ in range(config.depth)
        )
        self.norm = nn.LayerNorm(d)
        if config.freeze_base:
            for name, p in self.named_parameters():
                if not _is_insert_param(name):
                    p.requires_grad_(False)

    def _tokens_to_map(self, tokens, b, h, w):
        # drop the class token before reshaping to a spatial grid
        d = self.config.embed_dim
        return tokens[:, 1:].transpose(1, 2).reshape(b, d, h, w)

    def encode(self, image):
        """Run one image (3,H,W) or a batch (B,3,H,W) through the encoder."""
        single = image.dim() == 3
        x = image.unsqueeze(0) if single else image
        b, _, hh, ww = x.shape
        p = self.config.patch_size
        if hh % p != 0 or ww % p != 0:
            raise ShapeError(f"input {hh}x{ww} not divisible by patch size {p}")
        tok = self.patch_embed(x)
        h, w = tok.shape[-2:]
        tok = tok.flatten(2).transpose(1, 2)
        pe = sincos_position_encoding(h, w, self.config.embed_dim,
                                      device=tok.device, dtype=tok.dtype)
        tok = tok + pe
        x = torch.cat([self.cls_token.expand(b, -1, -1), tok], dim=1)

        taps = {}
        tap_set = set(self.config.tap_layers)
        for i, blk in enumerate(self.blocks):
            x = blk(x)
            if i in tap_set:
                taps[i] = self._tokens_to_map(x, b, h, w)
        s = self._tokens_to_map(self.norm(x), b, h, w)

        t2, t3, t4 = (taps[i] for i in self.config.tap_layers)
        if single:
            s, t2, t3, t4 = s[0], t2[0], t3[0], t4[0]
        return FeatureBundle(S=s, C2=t2, C3=t3, C4=t4)

    def forward(self, image):
        return self.encode(image)

    def trainable_parameters(self):
        """Name -> parameter map of everything that may receive updates."""
        return OrderedDict(
            (name, p) for name, p in self.named_parameters() if p.requires_grad
        )

    def base_state(self):
        """Name -> tensor map of the base (non-LoRA, non-adapter) weights."""
        return OrderedDict(
            (name, p) for name, p in self.named_parameters()
            if not _is_insert_param(name)
        )

    def save_base_weights(self, path):
        blob = OrderedDict(
            ("backbone." + name, t.detach().cpu().clone())
            for name, t in self.base_state().items()
        )
        torch.save(blob, path)

    def load_external_weights(self, path):
        """Replace base weights from a name->tensor file; inserts stay untouched."""
        blob = torch.load(path, map_location="cpu", weights_only=True)
        state = self.base_state()
        for name, tensor in state.items():
            key = "backbone." + name
            if key not in blob:
                raise MissingTensor(key)
            if tuple(blob[key].shape) != tuple(tensor.shape):
                raise ShapeMismatch(
                    f"{key}: checkpoint {tuple(blob[key].shape)} vs model {tuple(tensor.shape)}"
                )
        with torch.no_grad():
            for name, tensor in state.items():
                tensor.copy_(blob["backbone." + name].to(tensor.dtype))
