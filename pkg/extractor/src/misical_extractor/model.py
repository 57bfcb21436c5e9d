"""Segmentation backbones with dropout kept active at inference.

The default is a small encoder-decoder: strided convolutions down,
two 50% dropout layers around the high-level features, a 1x1 classifier
and bilinear upsampling back to the input resolution. Weights may come
from a checkpoint; untrained weights are fine for pipeline work since
the selection engine treats the features as fixed.
"""
from __future__ import annotations

import os

import torch
from torch import nn
from torch.nn import functional as F

from .errors import ModelLoadError


class TinySegNet(nn.Module):
    """3-stage fully convolutional net with MC-dropout on deep features."""

    def __init__(self, n_classes: int, width: int = 16):
        super().__init__()
        self.stem = nn.Sequential(
            nn.Conv2d(3, width, 3, stride=2, padding=1), nn.ReLU(inplace=True),
            nn.Conv2d(width, 2 * width, 3, stride=2, padding=1), nn.ReLU(inplace=True),
        )
        self.drop_low = nn.Dropout2d(0.5)
        self.deep = nn.Sequential(
            nn.Conv2d(2 * width, 2 * width, 3, padding=1), nn.ReLU(inplace=True),
        )
        self.drop_high = nn.Dropout2d(0.5)
        self.classifier = nn.Conv2d(2 * width, n_classes, 1)
        self.n_classes = n_classes

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.stem(x)
        h = self.drop_low(h)
        h = self.deep(h)
        h = self.drop_high(h)
        logits = self.classifier(h)
        return F.interpolate(logits, size=x.shape[-2:], mode="bilinear",
                             align_corners=False)


def build_model(identifier: str, n_classes: int, seed: int = 0) -> nn.Module:
    """Instantiate a backbone from an identifier, optionally `name:ckpt.pt`.

    The model is returned in train mode so its dropout layers stay
    stochastic at inference, which is what the T forward passes sample.
    """
    name, _, ckpt = identifier.partition(":")
    if name != "tiny":
        raise ModelLoadError(f"unknown model identifier {name!r} (expected 'tiny')")
    torch.manual_seed(seed)
    model = TinySegNet(n_classes)
    if ckpt:
        if not os.path.exists(ckpt):
            raise ModelLoadError(f"checkpoint not found: {ckpt}")
        try:
            state = torch.load(ckpt, map_location="cpu", weights_only=True)
            model.load_state_dict(state)
        except (RuntimeError, ValueError, KeyError) as exc:
            raise ModelLoadError(f"cannot load checkpoint {ckpt}: {exc}") from exc
    model.train()  # dropout active; no normalization layers to worry about
    return model


@torch.no_grad()
def mc_probabilities(model: nn.Module, image: torch.Tensor, passes: int,
                     seed: int) -> torch.Tensor:
    """(T, C, H, W) softmax probabilities from T stochastic forward passes."""
    torch.manual_seed(seed)
    outs = []
    for _ in range(passes):
        logits = model(image[None])
        outs.append(torch.softmax(logits[0], dim=0))
    return torch.stack(outs)
