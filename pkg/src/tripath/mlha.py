"""Multi-level hybrid attention decoder.

Stage one gates the fused feature with a multi-kernel context map and adds a
refined residual; stage two adds channel-gated, spatial-gated and local
branches onto the identity. A progressive upsampling head then produces
full-resolution class logits.
"""

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import InvalidArg, ShapeError


@dataclass
class MLHAConfig:
    channels: int = 192
    kernel_sizes: tuple = (3, 5, 7)
    num_classes: int = 3
    upsample_factor: int = 8
    gate_reduction: int = 4

    def __post_init__(self):
        self.kernel_sizes = tuple(int(k) for k in self.kernel_sizes)
        if len(self.kernel_sizes) < 1:
            raise ShapeError("need at least one kernel size")
        for k in self.kernel_sizes:
            if k % 2 == 0 or k < 1:
                raise ShapeError(f"kernel sizes must be odd, got {k}")
        if self.num_classes < 1:
            raise InvalidArg("num_classes must be >= 1")
        f = self.upsample_factor
        if f < 1 or (f & (f - 1)) != 0:
            raise ShapeError(f"upsample_factor must be a power of two, got {f}")


class InitialFusion(nn.Module):
    """Parallel multi-kernel gating with a residual refinement.

    y = f + GELU(BN(Conv3(f * sigmoid(BN(Conv1(concat_k GELU(BN(Conv_k(f)))))))))
    """

    def __init__(self, channels, kernel_sizes):
        super().__init__()
        self.branches = nn.ModuleList(
            nn.Sequential(
                nn.Conv2d(channels, channels, k, padding=k // 2),
                nn.BatchNorm2d(channels),
                nn.GELU(),
            )
            for k in kernel_sizes
        )
        self.gate_conv = nn.Conv2d(len(kernel_sizes) * channels, channels, 1)
        self.gate_norm = nn.BatchNorm2d(channels)
        self.refine_conv = nn.Conv2d(channels, channels, 3, padding=1)
        self.refine_norm = nn.BatchNorm2d(channels)
        self.act = nn.GELU()

    def gate(self, f_fuse):
        stacked = torch.cat([branch(f_fuse) for branch in self.branches], dim=1)
        return torch.sigmoid(self.gate_norm(self.gate_conv(stacked)))

    def forward(self, f_fuse):
        x_spatial = f_fuse * self.gate(f_fuse)
        return f_fuse + self.act(self.refine_norm(self.refine_conv(x_spatial)))


class FinalFusion(nn.Module):
    """out = y + channel branch + spatial branch + local branch.

    The channel and spatial branches gate y with a sigmoid and pass through a
    1x1 projection; the local branch is a depthwise 3x3 conv. Zeroing the
    three projections turns the block into the identity.
    """

    def __init__(self, channels, reduction=4):
        super().__init__()
        hidden = max(channels // reduction, 1)
        self.channel_mlp = nn.Sequential(
            nn.Conv2d(channels, hidden, 1), nn.GELU(), nn.Conv2d(hidden, channels, 1)
        )
        self.channel_proj = nn.Conv2d(channels, channels, 1)
        self.spatial_conv = nn.Conv2d(channels, 1, 1)
        self.spatial_proj = nn.Conv2d(channels, channels, 1)
        self.local_conv = nn.Conv2d(channels, channels, 3, padding=1, groups=channels)

    def channel_gate(self, y):
        return torch.sigmoid(self.channel_mlp(y.mean(dim=(-2, -1), keepdim=True)))

    def spatial_gate(self, y):
        return torch.sigmoid(self.spatial_conv(y))

    def forward(self, y):
        y_channel = self.channel_proj(y * self.channel_gate(y))
        y_spatial = self.spatial_proj(y * self.spatial_gate(y))
        y_local = self.local_conv(y)
        return y + y_channel + y_spatial + y_local


class DecodeHead(nn.Module):
    """Progressive x2 bilinear upsampling with conv+GELU stages, then 1x1 logits."""

    def __init__(self, channels, num_classes, upsample_factor, min_channels=16):
        super().__init__()
        f = upsample_factor
        if f < 1 or (f & (f - 1)) != 0:
            raise ShapeError(f"upsample_factor must be a power of two, got {f}")
        stages = []
        c = channels
        while f > 1:
            c_next = max(c // 2, min_channels)
            stages.append(
                nn.Sequential(
                    nn.Upsample(scale_factor=2, mode="bilinear", align_corners=False),
                    nn.Conv2d(c, c_next, 3, padding=1),
                    nn.GELU(),
                )
            )
            c = c_next
            f //= 2
        self.stages = nn.Sequential(*stages)
        self.classifier = nn.Conv2d(c, num_classes + 1, 1)

    def forward(self, x):
        return self.classifier(self.stages(x))


class MLHADecoder(nn.Module):
    def __init__(self, config: MLHAConfig):
        super().__init__()
        self.config = config
        self.initial = InitialFusion(config.channels, config.kernel_sizes)
        self.final = FinalFusion(config.channels, config.gate_reduction)
        self.head = DecodeHead(config.channels, config.num_classes, config.upsample_factor)

    def fuse(self, f_fuse):
        return self.final(self.initial(f_fuse))

    def forward(self, f_fuse):
        single = f_fuse.dim() == 3
        if single:
            f_fuse = f_fuse.unsqueeze(0)
        logits = self.head(self.fuse(f_fuse))
        return logits[0] if single else logits


class PlainDecoder(nn.Module):
    """Ablation decoder: a single 3x3 conv block in place of the MLHA stages."""

    def __init__(self, channels, num_classes, upsample_factor):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.BatchNorm2d(channels),
            nn.GELU(),
        )
        self.head = DecodeHead(channels, num_classes, upsample_factor)

    def forward(self, f_fuse):
        single = f_fuse.dim() == 3
        if single:
            f_fuse = f_fuse.unsqueeze(0)
        logits = self.head(self.block(f_fuse))
        return logits[0] if single else logits
