"""Coarse-grained change path.

Fuses the two final backbone features and their difference through two
convolutional feature processors:

    u = FT1(concat(S1, S2))
    v = concat(S1 - S2, u)
    f_cnn = FT2(v)
"""

import torch
import torch.nn as nn

from .errors import ShapeMismatch


class ConvProcessor(nn.Module):
    """3x3 conv -> batch norm -> GELU -> 1x1 conv; spatial size preserved."""

    def __init__(self, in_channels, out_channels, hidden=None):
        super().__init__()
        hidden = out_channels if hidden is None else hidden
        self.conv3 = nn.Conv2d(in_channels, hidden, 3, padding=1)
        self.norm = nn.BatchNorm2d(hidden)
        self.act = nn.GELU()
        self.conv1 = nn.Conv2d(hidden, out_channels, 1)

    def forward(self, x):
        return self.conv1(self.act(self.norm(self.conv3(x))))


class CnnPath(nn.Module):
    def __init__(self, in_channels, ft1_channels=None, out_channels=128):
        super().__init__()
        ft1_channels = in_channels if ft1_channels is None else ft1_channels
        self.ft1 = ConvProcessor(2 * in_channels, ft1_channels)
        self.ft2 = ConvProcessor(in_channels + ft1_channels, out_channels)
        self.in_channels = in_channels
        self.out_channels = out_channels

    def fuse_inputs(self, s1, s2):
        """Build the pre-FT2 tensor: difference channels first, then FT1 output."""
        if s1.shape != s2.shape:
            raise ShapeMismatch(f"S1 {tuple(s1.shape)} vs S2 {tuple(s2.shape)}")
        single = s1.dim() == 3
        if single:
            s1, s2 = s1.unsqueeze(0), s2.unsqueeze(0)
        u = self.ft1(torch.cat([s1, s2], dim=1))
        v = torch.cat([s1 - s2, u], dim=1)
        return v[0] if single else v

    def forward(self, s1, s2):
        v = self.fuse_inputs(s1, s2)
        single = v.dim() == 3
        if single:
            v = v.unsqueeze(0)
        out = self.ft2(v)
        return out[0] if single else out
