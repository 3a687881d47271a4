"""Segmentation model contract: built-in encoder-decoder, EMA pair, checkpoints.

The trainer only assumes `forward` semantics (logits at input resolution) and
an identically-shaped teacher, so full backbones can be plugged in through the
same surface. The built-in net is a small 4-level encoder-decoder sized for
CPU runs.
"""

from __future__ import annotations

import copy
from typing import Mapping

import torch
from torch import nn

from .errors import InvalidArgumentError

CHECKPOINT_VERSION = 1


class _ConvBlock(nn.Module):
    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(cin, cout, 3, padding=1, bias=False),
            nn.BatchNorm2d(cout),
            nn.ReLU(inplace=True),
            nn.Conv2d(cout, cout, 3, padding=1, bias=False),
            nn.BatchNorm2d(cout),
            nn.ReLU(inplace=True),
        )

    def forward(self, x):
        return self.net(x)


class SmallSegNet(nn.Module):
    """4-level encoder-decoder with skip connections; width scales parameter count.

    base_width=16 is roughly half a million parameters; base_width=8 about 120k.
    Input spatial dims must be divisible by 8.
    """

    def __init__(self, num_classes: int, base_width: int = 16, in_channels: int = 3):
        super().__init__()
        w = base_width
        widths = [w, 2 * w, 4 * w, 8 * w]
        self.in_channels = in_channels
        self.enc1 = _ConvBlock(in_channels, widths[0])
        self.enc2 = _ConvBlock(widths[0], widths[1])
        self.enc3 = _ConvBlock(widths[1], widths[2])
        self.enc4 = _ConvBlock(widths[2], widths[3])
        self.pool = nn.MaxPool2d(2)
        self.up3 = nn.ConvTranspose2d(widths[3], widths[2], 2, stride=2)
        self.dec3 = _ConvBlock(2 * widths[2], widths[2])
        self.up2 = nn.ConvTranspose2d(widths[2], widths[1], 2, stride=2)
        self.dec2 = _ConvBlock(2 * widths[1], widths[1])
        self.up1 = nn.ConvTranspose2d(widths[1], widths[0], 2, stride=2)
        self.dec1 = _ConvBlock(2 * widths[0], widths[0])
        self.head = nn.Conv2d(widths[0], num_classes, 1)

    def forward(self, x):
        s1 = self.enc1(x)
        s2 = self.enc2(self.pool(s1))
        s3 = self.enc3(self.pool(s2))
        b = self.enc4(self.pool(s3))
        y = self.dec3(torch.cat([self.up3(b), s3], dim=1))
        y = self.dec2(torch.cat([self.up2(y), s2], dim=1))
        y = self.dec1(torch.cat([self.up1(y), s1], dim=1))
        return self.head(y)


def forward(model: nn.Module, images: torch.Tensor, train: bool) -> torch.Tensor:
    """Run the model in the requested mode; logits come back at input resolution.

    Eval mode uses frozen normalization statistics and is wrapped in no_grad.
    """
    if images.ndim != 4 or images.shape[1] != getattr(model, "in_channels", 3):
        raise InvalidArgumentError(f"expected NCHW batch with "
                                   f"{getattr(model, 'in_channels', 3)} channels, "
                                   f"got {tuple(images.shape)}")
    if train:
        model.train()
        logits = model(images)
    else:
        model.eval()
        with torch.no_grad():
            logits = model(images)
    if logits.shape[2:] != images.shape[2:]:
        raise InvalidArgumentError("model did not return logits at input resolution")
    return logits


class ModelPair:
    """Student/teacher pair; the teacher is only ever written by ema_update."""

    def __init__(self, student: nn.Module, teacher: nn.Module | None = None):
        self.student = student
        self.teacher = teacher
        if teacher is not None:
            self._freeze_teacher()

    def _freeze_teacher(self) -> None:
        for p in self.teacher.parameters():
            p.requires_grad_(False)
        self.teacher.eval()

    @property
    def has_teacher(self) -> bool:
        return self.teacher is not None

    def spawn_teacher(self) -> None:
        """Teacher starts as an exact copy of the student."""
        self.teacher = copy.deepcopy(self.student)
        self._freeze_teacher()


def ema_update(pair: ModelPair, m: float) -> ModelPair:
    """teacher <- m*teacher + (1-m)*student for every parameter and running stat."""
    if not 0.0 <= m <= 1.0:
        raise InvalidArgumentError(f"EMA momentum must be in [0,1], got {m}")
    if pair.teacher is None:
        raise InvalidArgumentError("pair has no teacher to update")
    with torch.no_grad():
        s_state = pair.student.state_dict()
        t_state = pair.teacher.state_dict()
        for key, t_val in t_state.items():
            s_val = s_state[key]
            if t_val.dtype.is_floating_point:
                t_val.mul_(m).add_(s_val, alpha=1.0 - m)
            else:
                t_val.copy_(s_val)  # integer buffers (e.g. batch counters)
    return pair


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def save_checkpoint(path, pair: ModelPair, optimizer: torch.optim.Optimizer | None,
                    extra: Mapping | None = None) -> None:
    """Versioned container with both parameter sets, optimizer and caller state."""
    payload = {
        "version": CHECKPOINT_VERSION,
        "student": pair.student.state_dict(),
        "teacher": pair.teacher.state_dict() if pair.has_teacher else None,
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "extra": dict(extra or {}),
    }
    torch.save(payload, path)


def load_checkpoint(path) -> dict:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise InvalidArgumentError(f"unsupported checkpoint version {payload.get('version')}")
    return payload


def restore_pair(payload: dict, model_factory) -> ModelPair:
    """Rebuild a ModelPair from a checkpoint using a fresh-model factory."""
    student = model_factory()
    student.load_state_dict(payload["student"])
    pair = ModelPair(student)
    if payload["teacher"] is not None:
        teacher = model_factory()
        teacher.load_state_dict(payload["teacher"])
        pair.teacher = teacher
        pair._freeze_teacher()
    return pair
