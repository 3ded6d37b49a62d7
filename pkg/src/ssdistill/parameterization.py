"""Image/representation bases and coefficients, and their reconstruction.

Distilled images are ``upsample(Cx @ Bx + mean_x, s)`` and targets are
``C @ By + mean_y`` for the plain coefficients ``Cy`` and for each per-
augmentation block ``Cay[a]``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import tensor as T
from .augment import AugmentationSpec, expand_batch
from .errors import ConfigurationError, ContractError, ShapeError
from .spectral import fit_pca, project
from .tensor import Tensor


def downsample(images: np.ndarray, s: int) -> np.ndarray:
    """s x s average pooling of an (n, c, h, w) array."""
    if s == 1:
        return np.asarray(images, dtype=np.float64)
    n, c, h, w = images.shape
    if h % s or w % s:
        raise ShapeError(f"scale {s} does not divide image size {h}x{w}")
    return images.reshape(n, c, h // s, s, w // s, s).mean(axis=(3, 5))


def upsample(x, s: int) -> Tensor:
    x = T.as_tensor(x)
    if s == 1:
        return x
    return T.resize_bilinear(x, x.shape[-2] * s, x.shape[-1] * s)


def derive_m(n_images: int, d_x: int, U: int, V: int, d_xb: int, d_y: int,
             approx_float_count: int = 0, include_means: bool = True) -> int:
    """Largest number of distilled samples fitting in ``n_images * d_x`` floats."""
    total = n_images * d_x
    fixed = U * d_xb + V * d_y + approx_float_count
    if include_means:
        fixed += d_xb + d_y
    m = (total - fixed) // (U + V)
    if m < 1:
        raise ConfigurationError(
            f"budget {n_images}x{d_x}={total} floats leaves {total - fixed} after bases "
            f"({U}x{d_xb} + {V}x{d_y}{' + means ' + str(d_xb + d_y) if include_means else ''}) "
            f"and approximation nets ({approx_float_count}); need at least {U + V} for one sample"
        )
    return int(m)


def approx_float_count(A: int, V: int, hidden: int) -> int:
    """Float count of A two-layer perceptrons V -> hidden -> V with biases."""
    return A * (V * hidden + hidden + hidden * V + V)


def reconstruct_images(cx, bx, mean_x: np.ndarray, s: int, image_shape) -> Tensor:
    c, h, w = image_shape
    flat = T.matmul(cx, bx) + mean_x
    low = flat.reshape(flat.shape[0], c, h // s, w // s)
    return upsample(low, s)


def reconstruct_targets(cy, by, mean_y: np.ndarray, cay=()) -> Tensor:
    """Stack ``[Cy By; C1 By; ...; CA By] + mean_y`` in augmentation order."""
    blocks = [cy] + list(cay)
    if any(b is None for b in blocks):
        raise ContractError("reconstruct_targets: missing augmentation coefficient block")
    stacked = T.concat(blocks, axis=0) if len(blocks) > 1 else T.as_tensor(cy)
    return T.matmul(stacked, by) + mean_y


@dataclass
class BasisParams:
    """Bases, coefficients and means of a basis-parameterised distilled set."""

    image_shape: tuple[int, int, int]
    scale: int
    bx: Tensor
    mean_x: np.ndarray
    cx: Tensor
    by: Tensor
    mean_y: np.ndarray
    cy: Tensor
    cay: list[Tensor]
    spec: AugmentationSpec
    sample_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    degenerate: bool = False

    @property
    def m(self) -> int:
        return self.cx.shape[0]

    @property
    def U(self) -> int:
        return self.bx.shape[0]

    @property
    def V(self) -> int:
        return self.by.shape[0]

    @property
    def A(self) -> int:
        return len(self.spec)

    def images(self) -> Tensor:
        return reconstruct_images(self.cx, self.bx, self.mean_x, self.scale, self.image_shape)

    def targets(self) -> Tensor:
        return reconstruct_targets(self.cy, self.by, self.mean_y, self.cay)

    def pairs(self) -> tuple[Tensor, Tensor]:
        """Augmented images and aligned targets, both differentiable."""
        return expand_batch(self.images(), self.spec), self.targets()

    def groups(self) -> dict[str, list[Tensor]]:
        return {"bx": [self.bx], "cx": [self.cx], "by": [self.by], "cy": [self.cy],
                "cay": list(self.cay)}

    def parameters(self) -> list[Tensor]:
        return [p for ps in self.groups().values() for p in ps]


@dataclass
class DirectParams:
    """Pixels and representations stored directly (no bases, no augmentation)."""

    image_shape: tuple[int, int, int]
    x: Tensor  # (m, d_x)
    y: Tensor  # (m, d_y)
    sample_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    spec: AugmentationSpec = field(default_factory=AugmentationSpec.none)

    @property
    def m(self) -> int:
        return self.x.shape[0]

    def images(self) -> Tensor:
        return self.x.reshape((self.m,) + tuple(self.image_shape))

    def pairs(self) -> tuple[Tensor, Tensor]:
        return self.images(), self.y

    def groups(self) -> dict[str, list[Tensor]]:
        return {"x": [self.x], "y": [self.y]}

    def parameters(self) -> list[Tensor]:
        return [self.x, self.y]


def init_from_source(
    x_t: np.ndarray,
    represent: Callable[[np.ndarray], np.ndarray],
    U: int,
    V: int,
    s: int,
    m: int,
    spec: AugmentationSpec,
    seed: int = 0,
    init: str = "pca",
    teacher_reps: np.ndarray | None = None,
) -> BasisParams:
    """Initialise bases and coefficients from the unlabeled source images.

    ``init`` selects the basis/coefficient initialisation:
    ``pca`` (principal components + projections), ``real`` (random real
    images / their representations as bases, Gaussian coefficients) or
    ``random`` (Gaussian bases and coefficients).
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    n, c, h, w = x_t.shape
    if h % s or w % s:
        raise ConfigurationError(f"scale {s} must divide image size {h}x{w}")
    rng = np.random.default_rng(seed)
    low = downsample(x_t, s).reshape(n, -1)
    d_xb = low.shape[1]
    reps = represent(x_t) if teacher_reps is None else np.asarray(teacher_reps, dtype=np.float64)
    d_y = reps.shape[1]
    if not 1 <= U <= min(n, d_xb):
        raise ConfigurationError(f"U={U} must lie in [1, min(n={n}, d_xb={d_xb})]")
    if not 1 <= V <= min(n, d_y):
        raise ConfigurationError(f"V={V} must lie in [1, min(n={n}, d_y={d_y})]")
    if m < 1 or m > n:
        raise ConfigurationError(f"m={m} must lie in [1, n={n}]")
    idx = np.sort(rng.choice(n, size=m, replace=False))
    A = len(spec)
    degenerate = False

    if init == "pca":
        px = fit_pca(low, U)
        py = fit_pca(reps, V)
        degenerate = px.degenerate or py.degenerate
        if degenerate:
            warnings.warn("PCA rank below requested basis count; trailing components completed",
                          RuntimeWarning, stacklevel=2)
        bx, mean_x = px.components, px.mean
        by, mean_y = py.components, py.mean
        cx = project(low[idx], px)
        cy = project(reps[idx], py)
        with T.no_grad():
            xs0 = reconstruct_images(cx, bx, mean_x, s, (c, h, w))
            cay = [project(represent(_apply_np(t, xs0)), py) for t in spec.transforms]
    elif init in ("real", "random"):
        if init == "real":
            bx = low[rng.choice(n, size=U, replace=False)]
            by = reps[rng.choice(n, size=V, replace=False)]
        else:
            bx = rng.standard_normal((U, d_xb))
            by = rng.standard_normal((V, d_y))
        mean_x, mean_y = np.zeros(d_xb), np.zeros(d_y)
        cx = rng.standard_normal((m, U))
        cy = rng.standard_normal((m, V))
        cay = [rng.standard_normal((m, V)) for _ in range(A)]
    else:
        raise ConfigurationError(f"unknown initialisation {init!r}")

    return BasisParams(
        image_shape=(c, h, w),
        scale=s,
        bx=Tensor(bx, requires_grad=True),
        mean_x=np.asarray(mean_x, dtype=np.float64),
        cx=Tensor(cx, requires_grad=True),
        by=Tensor(by, requires_grad=True),
        mean_y=np.asarray(mean_y, dtype=np.float64),
        cy=Tensor(cy, requires_grad=True),
        cay=[Tensor(b, requires_grad=True) for b in cay],
        spec=spec,
        sample_indices=idx,
        degenerate=degenerate,
    )


def init_direct(x_t: np.ndarray, teacher_reps: np.ndarray, m: int, seed: int = 0) -> DirectParams:
    """Seed a pixel-space distilled set with ``m`` random real images and their targets."""
    n = x_t.shape[0]
    if not 1 <= m <= n:
        raise ConfigurationError(f"m={m} must lie in [1, n={n}]")
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(n, size=m, replace=False))
    return DirectParams(
        image_shape=tuple(x_t.shape[1:]),
        x=Tensor(x_t[idx].reshape(m, -1), requires_grad=True),
        y=Tensor(teacher_reps[idx], requires_grad=True),
        sample_indices=idx,
    )


def _apply_np(t, images) -> np.ndarray:
    from .augment import apply

    with T.no_grad():
        return apply(t, images).data
