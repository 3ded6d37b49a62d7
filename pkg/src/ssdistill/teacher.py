"""Barlow Twins objective and the frozen self-supervised teacher."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, NumericalError
from .nn import BatchNorm, ConvNetExtractor, Linear, Module
from .optim import AdamW, schedule

log = logging.getLogger(__name__)


def barlow_twins_loss(z1, z2, off_diag_weight: float = 5e-3, eps: float = 1e-12) -> T.Tensor:
    """Redundancy-reduction loss on the cross-correlation of two views.

    Columns are standardised with the per-batch mean and (population)
    standard deviation, ``C = z1n.T @ z2n / b``, and the loss is
    ``sum_i (1 - C_ii)^2 + off_diag_weight * sum_{i != j} C_ij^2``.
    """
    z1, z2 = T.as_tensor(z1), T.as_tensor(z2)
    b = z1.shape[0]
    if b < 2:
        raise ContractError("barlow_twins_loss needs a batch of at least 2 rows")
    if z1.shape != z2.shape:
        raise ContractError(f"view shapes differ: {z1.shape} vs {z2.shape}")

    def standardise(z):
        centred = z - z.mean(axis=0, keepdims=True)
        var = (centred * centred).mean(axis=0, keepdims=True)
        return centred / T.sqrt(var + eps)

    c = T.matmul(standardise(z1).T, standardise(z2)) * (1.0 / b)
    eye = np.eye(c.shape[0])
    on_diag = (((1.0 - c) * eye) ** 2).sum()
    off_diag = ((c * (1.0 - eye)) ** 2).sum()
    return on_diag + off_diag_weight * off_diag


class TeacherModel(Module):
    """ConvNet backbone + linear map to ``d_y``; a projector is used only in training."""

    def __init__(self, image_shape, d_y: int = 32, width: int = 32, depth: int = 3,
                 rng: np.random.Generator | None = None):
        super().__init__()
        rng = np.random.default_rng(0) if rng is None else rng
        c, h, _ = image_shape
        self.image_shape = tuple(image_shape)
        self.d_y = d_y
        self.backbone = self.add_child(
            "backbone", ConvNetExtractor(c, h, width, depth, rng=rng, track_running=True))
        self.embed = self.add_child("embed", Linear(self.backbone.feature_dim, d_y, rng))
        hidden = 4 * d_y
        self.proj1 = self.add_child("proj1", Linear(d_y, hidden, rng))
        self.proj_bn = self.add_child("proj_bn", BatchNorm(hidden))
        self.proj2 = self.add_child("proj2", Linear(hidden, hidden, rng))
        self.frozen = False

    def forward(self, x):
        return self.embed(self.backbone(x))

    def project(self, rep):
        return self.proj2(T.relu(self.proj_bn(self.proj1(rep))))

    def freeze(self) -> "TeacherModel":
        self.requires_grad_(False)
        self.backbone.set_running_stats(True)
        self.frozen = True
        return self

    def represent(self, images: np.ndarray, chunk: int = 1000) -> np.ndarray:
        """g(images): frozen representations, shape (n, d_y)."""
        images = np.asarray(images, dtype=np.float64)
        with T.no_grad():
            out = [self.forward(images[i : i + chunk]).data for i in range(0, len(images), chunk)]
        return np.concatenate(out, axis=0) if out else np.zeros((0, self.d_y))


@dataclass
class TeacherConfig:
    epochs: int = 15
    batch_size: int = 128
    lr: float = 2e-3
    weight_decay: float = 1e-4
    d_y: int = 32
    width: int = 32
    depth: int = 3
    pad: int = 4  # zero padding of the random crop
    off_diag_weight: float = 5e-3
    seed: int = 0


def two_views(x: np.ndarray, rng: np.random.Generator, pad: int) -> np.ndarray:
    """Random crop (zero padding ``pad``) and horizontal flip of each image."""
    n, c, h, w = x.shape
    padded = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    dy = rng.integers(0, 2 * pad + 1, size=n)
    dx = rng.integers(0, 2 * pad + 1, size=n)
    flip = rng.random(n) < 0.5
    out = np.empty_like(x)
    for i in range(n):
        img = padded[i, :, dy[i] : dy[i] + h, dx[i] : dx[i] + w]
        out[i] = img[:, :, ::-1] if flip[i] else img
    return out


def train_teacher(images: np.ndarray, config: TeacherConfig | None = None):
    """Self-supervised Barlow Twins pretraining; returns ``(teacher, epoch_losses)``."""
    cfg = config or TeacherConfig()
    images = np.asarray(images, dtype=np.float64)
    if len(images) < 2:
        raise ContractError("train_teacher needs at least two images")
    rng = np.random.default_rng(cfg.seed)
    model = TeacherModel(images.shape[1:], cfg.d_y, cfg.width, cfg.depth, rng=rng)
    opt = AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    n = len(images)
    steps_per_epoch = max(1, n // cfg.batch_size)
    total = cfg.epochs * steps_per_epoch
    losses: list[float] = []
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        running = []
        for b in range(steps_per_epoch):
            batch = images[order[b * cfg.batch_size : (b + 1) * cfg.batch_size]]
            v1, v2 = two_views(batch, rng, cfg.pad), two_views(batch, rng, cfg.pad)
            both = model.project(model(np.concatenate([v1, v2])))
            half = len(batch)
            loss = barlow_twins_loss(both[:half], both[half:], cfg.off_diag_weight)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericalError(f"teacher training diverged at epoch {epoch}, step {b}")
            opt.zero_grad()
            loss.backward()
            opt.step(schedule("cosine", cfg.lr, step, total))
            step += 1
            running.append(value)
        losses.append(float(np.mean(running)))
        log.info("teacher epoch %d loss %.4f", epoch, losses[-1])
    return model.freeze(), losses
