"""Deterministic, differentiable image transforms and batch expansion.

Transforms act on (m, c, h, w) batches.  Rotations and jigsaw swaps are
exact pixel permutations; corner crops are a slice followed by bilinear
resizing back to the input size, which is linear in the pixels.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import tensor as T
from .errors import ContractError

ROTATIONS = (90, 180, 270)
JIGSAWS = ("left_right", "top_bottom", "both")
CORNERS = ("top_left", "top_right", "bottom_left", "bottom_right", "center")


@dataclass(frozen=True)
class Transform:
    kind: str  # "rotate" | "jigsaw" | "crop"
    param: str | int
    crop_side: int = 0

    @property
    def tag(self) -> str:
        base = f"{self.kind}:{self.param}"
        return f"{base}:{self.crop_side}" if self.kind == "crop" else base

    @classmethod
    def from_tag(cls, tag: str) -> "Transform":
        parts = tag.split(":")
        if parts[0] == "rotate":
            return cls("rotate", int(parts[1]))
        if parts[0] == "jigsaw":
            return cls("jigsaw", parts[1])
        if parts[0] == "crop":
            return cls("crop", parts[1], int(parts[2]))
        raise ContractError(f"unknown transform tag {tag!r}")

    def check(self, shape) -> None:
        h, w = shape[-2:]
        if self.kind == "rotate":
            if self.param not in ROTATIONS:
                raise ContractError(f"{self.tag}: rotation must be one of {ROTATIONS}")
            if h != w:
                raise ContractError(f"{self.tag}: rotation needs square images, got {h}x{w}")
        elif self.kind == "jigsaw":
            if self.param not in JIGSAWS:
                raise ContractError(f"{self.tag}: swap must be one of {JIGSAWS}")
            if h % 2 or w % 2:
                raise ContractError(f"{self.tag}: jigsaw needs even sides, got {h}x{w}")
        elif self.kind == "crop":
            if self.param not in CORNERS:
                raise ContractError(f"{self.tag}: crop region must be one of {CORNERS}")
            if not 1 <= self.crop_side <= min(h, w):
                raise ContractError(f"{self.tag}: crop side {self.crop_side} exceeds {h}x{w}")
        else:
            raise ContractError(f"unknown transform kind {self.kind!r}")

    def is_permutation(self) -> bool:
        return self.kind in ("rotate", "jigsaw")


def apply(t: Transform, x) -> T.Tensor:
    """Apply a single transform to an (m, c, h, w) batch."""
    x = T.as_tensor(x)
    if x.ndim != 4:
        raise ContractError(f"{t.tag}: expected an (m, c, h, w) batch, got {x.shape}")
    t.check(x.shape)
    h, w = x.shape[-2:]
    if t.kind == "rotate":
        return T.rot90(x, t.param // 90)
    if t.kind == "jigsaw":
        if t.param == "left_right":
            return T.roll(x, w // 2, axis=3)
        if t.param == "top_bottom":
            return T.roll(x, h // 2, axis=2)
        return T.roll(T.roll(x, w // 2, axis=3), h // 2, axis=2)
    k = t.crop_side
    top = {"top_left": 0, "top_right": 0, "bottom_left": h - k, "bottom_right": h - k,
           "center": (h - k) // 2}[t.param]
    left = {"top_left": 0, "top_right": w - k, "bottom_left": 0, "bottom_right": w - k,
            "center": (w - k) // 2}[t.param]
    patch = x[:, :, top : top + k, left : left + k]
    return T.resize_bilinear(patch, h, w)


@dataclass(frozen=True)
class AugmentationSpec:
    transforms: tuple[Transform, ...]

    def __len__(self) -> int:
        return len(self.transforms)

    @property
    def tags(self) -> list[str]:
        return [t.tag for t in self.transforms]

    @classmethod
    def from_tags(cls, tags) -> "AugmentationSpec":
        return cls(tuple(Transform.from_tag(t) for t in tags))

    @classmethod
    def rotations(cls) -> "AugmentationSpec":
        return cls(tuple(Transform("rotate", r) for r in ROTATIONS))

    @classmethod
    def jigsaw(cls) -> "AugmentationSpec":
        return cls(tuple(Transform("jigsaw", j) for j in JIGSAWS))

    @classmethod
    def crops(cls, image_side: int) -> "AugmentationSpec":
        side = crop_side_for(image_side)
        return cls(tuple(Transform("crop", c, side) for c in CORNERS))

    @classmethod
    def none(cls) -> "AugmentationSpec":
        return cls(())

    @classmethod
    def named(cls, name: str, image_side: int) -> "AugmentationSpec":
        table = {"rotation": cls.rotations, "jigsaw": cls.jigsaw, "none": cls.none}
        if name == "crop":
            return cls.crops(image_side)
        if name not in table:
            raise ContractError(f"unknown augmentation family {name!r}")
        return table[name]()

    def check(self, shape) -> None:
        for t in self.transforms:
            t.check(shape)


def crop_side_for(image_side: int) -> int:
    """Crop side keeping the 20-of-32 fraction at other resolutions."""
    return int(round(20 / 32 * image_side))


def expand_batch(xs, spec: AugmentationSpec) -> T.Tensor:
    """Stack ``[xs, t1(xs), ..., tA(xs)]`` along the batch axis."""
    xs = T.as_tensor(xs)
    spec.check(xs.shape)
    if not spec.transforms:
        return xs
    return T.concat([xs] + [apply(t, xs) for t in spec.transforms], axis=0)
