"""Full change-detection network: siamese encoder, two paths, fused decoder."""

import hashlib
from collections import OrderedDict
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .backbone import BackboneConfig, SiameseBackbone
from .cnn_path import CnnPath
from .errors import InvalidArg
from .mlha import MLHAConfig, MLHADecoder, PlainDecoder
from .third_path import ThirdPath, ThirdPathConfig


@dataclass
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    third_path: ThirdPathConfig = field(default_factory=ThirdPathConfig)
    cnn_channels: int = 128
    ft1_channels: int | None = None
    kernel_sizes: tuple = (3, 5, 7)
    gate_reduction: int = 4
    use_third_path: bool = True
    use_mlha: bool = True

    def __post_init__(self):
        self.kernel_sizes = tuple(int(k) for k in self.kernel_sizes)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "backbone" in d:
            d["backbone"] = BackboneConfig(**d["backbone"])
        if "third_path" in d:
            d["third_path"] = ThirdPathConfig(**d["third_path"])
        return cls(**d)


class ChangeDetector(nn.Module):
    """Bi-temporal pair -> per-pixel logits over the no-change + change classes."""

    def __init__(self, config: ModelConfig, num_classes):
        super().__init__()
        if num_classes < 1:
            raise InvalidArg("num_classes must be >= 1")
        self.config = config
        self.num_classes = num_classes
        # backbone first: its init must not depend on the ablation flags so
        # every ablation variant built under one seed shares base weights
        self.backbone = SiameseBackbone(config.backbone)
        d = config.backbone.embed_dim
        self.cnn_path = CnnPath(d, config.ft1_channels, config.cnn_channels)
        if config.use_third_path:
            self.third_path = ThirdPath(config.third_path, d)
            fuse_channels = config.cnn_channels + self.third_path.out_channels
        else:
            self.third_path = None
            fuse_channels = config.cnn_channels
        if config.use_mlha:
            mlha_cfg = MLHAConfig(
                channels=fuse_channels,
                kernel_sizes=config.kernel_sizes,
                num_classes=num_classes,
                upsample_factor=config.backbone.patch_size,
                gate_reduction=config.gate_reduction,
            )
            self.decoder = MLHADecoder(mlha_cfg)
        else:
            self.decoder = PlainDecoder(fuse_channels, num_classes,
                                        config.backbone.patch_size)

    def forward_features(self, t1, t2):
        """Forward pass that also returns the per-path feature maps."""
        bundle1 = self.backbone.encode(t1)
        bundle2 = self.backbone.encode(t2)
        f_cnn = self.cnn_path(bundle1.S, bundle2.S)
        f_tr = None
        if self.third_path is not None:
            f_tr = self.third_path(bundle1.taps(), bundle2.taps())
            if f_tr.shape[-2:] != f_cnn.shape[-2:]:
                f_tr = F.interpolate(f_tr, size=f_cnn.shape[-2:], mode="bilinear",
                                     align_corners=False)
            f_fuse = torch.cat([f_cnn, f_tr], dim=-3)
        else:
            f_fuse = f_cnn
        logits = self.decoder(f_fuse)
        return {"f_cnn": f_cnn, "f_tr": f_tr, "f_fuse": f_fuse, "logits": logits}

    def forward(self, t1, t2):
        return self.forward_features(t1, t2)["logits"]

    def trainable_parameters(self):
        return OrderedDict(
            (name, p) for name, p in self.named_parameters() if p.requires_grad
        )

    def frozen_state(self):
        """Name -> tensor map of every frozen parameter (the backbone base)."""
        return OrderedDict(
            (name, p) for name, p in self.named_parameters() if not p.requires_grad
        )

    def frozen_fingerprint(self):
        return fingerprint_tensors(self.frozen_state())

    def parameter_count(self, trainable_only=False):
        params = self.trainable_parameters() if trainable_only else dict(self.named_parameters())
        return sum(p.numel() for p in params.values())


def fingerprint_tensors(named_tensors):
    """Order-independent SHA-256 over (name, dtype, shape, bytes) records."""
    digest = hashlib.sha256()
    for name in sorted(named_tensors):
        t = named_tensors[name].detach().cpu().contiguous()
        digest.update(name.encode())
        digest.update(str(t.dtype).encode())
        digest.update(str(tuple(t.shape)).encode())
        digest.update(t.numpy().tobytes())
    return digest.hexdigest()


def build_model(model_config: ModelConfig, num_classes, seed=0):
    """Construct a model with a seeded, reproducible initialization."""
    torch.manual_seed(seed)
    return ChangeDetector(model_config, num_classes)
