"""Small building blocks shared by the encoder paths."""

import torch
import torch.nn as nn
import torch.nn.functional as F


def sincos_position_encoding(h, w, dim, device=None, dtype=torch.float32):
    """2-D sinusoidal position table for an h*w token grid.

    Returns a (h*w, dim) tensor; half the channels encode the row index,
    half the column index. Parameter-free, so it works for any grid size.
    """
    quarter = max(dim // 4, 1)
    omega = torch.arange(quarter, dtype=torch.float64) / quarter
    omega = 1.0 / (10000.0 ** omega)
    ys = torch.arange(h, dtype=torch.float64).repeat_interleave(w)
    xs = torch.arange(w, dtype=torch.float64).repeat(h)
    ang_y = ys[:, None] * omega[None, :]
    ang_x = xs[:, None] * omega[None, :]
    table = torch.cat([ang_y.sin(), ang_y.cos(), ang_x.sin(), ang_x.cos()], dim=1)
    if table.shape[1] > dim:
        table = table[:, :dim]
    elif table.shape[1] < dim:
        pad = torch.zeros(h * w, dim - table.shape[1], dtype=torch.float64)
        table = torch.cat([table, pad], dim=1)
    return table.to(device=device, dtype=dtype)


class LoRALinear(nn.Module):
    """Linear layer with a trainable low-rank additive update on a frozen base.

    The up-projection starts at zero, so a freshly built layer computes
    exactly what the base layer computes.
    """

    def __init__(self, in_features, out_features, rank, bias=True):
        super().__init__()
        self.base = nn.Linear(in_features, out_features, bias=bias)
        self.rank = rank
        if rank > 0:
            self.lora_a = nn.Parameter(torch.empty(rank, in_features))
            self.lora_b = nn.Parameter(torch.zeros(out_features, rank))
            nn.init.normal_(self.lora_a, std=1.0 / rank)

    def forward(self, x):
        out = self.base(x)
        if self.rank > 0:
            out = out + F.linear(F.linear(x, self.lora_a), self.lora_b)
        return out


class BottleneckAdapter(nn.Module):
    """Residual bottleneck adapter (down-project, GELU, up-project).

    Zero-initialized up-projection makes the insert a no-op until trained.
    """

    def __init__(self, dim, hidden):
        super().__init__()
        self.down = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.up = nn.Linear(hidden, dim)
        nn.init.zeros_(self.up.weight)
        nn.init.zeros_(self.up.bias)

    def forward(self, x):
        return x + self.up(self.act(self.down(x)))
