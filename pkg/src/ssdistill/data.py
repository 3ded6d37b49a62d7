"""Desk-scale datasets: 16x16 digits, Gaussian-blob images, and a
raw-tensor directory loader."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, CorruptionError
from .tensor import bilinear_matrix


@dataclass
class LabeledDataset:
    train_x: np.ndarray  # (n, c, h, w)
    train_y: np.ndarray  # (n,)
    test_x: np.ndarray
    test_y: np.ndarray
    num_classes: int
    name: str = "dataset"

    def __post_init__(self):
        for split, y in (("train", self.train_y), ("test", self.test_y)):
            if y.size and (y.min() < 0 or y.max() >= self.num_classes):
                raise ContractError(f"{split} labels outside [0, {self.num_classes})")

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.train_x.shape[1:])

    @property
    def d_x(self) -> int:
        return int(np.prod(self.image_shape))


def _shift(img: np.ndarray, dy: int, dx: int) -> np.ndarray:
    out = np.zeros_like(img)
    h, w = img.shape[-2:]
    ys, yd = (slice(0, h - dy), slice(dy, h)) if dy >= 0 else (slice(-dy, h), slice(0, h + dy))
    xs, xd = (slice(0, w - dx), slice(dx, w)) if dx >= 0 else (slice(-dx, w), slice(0, w + dx))
    out[..., yd, xd] = img[..., ys, xs]
    return out


def _jitter(base: np.ndarray, count: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    src = rng.integers(0, len(base), size=count)
    src[: min(count, len(base))] = np.arange(min(count, len(base)))
    out = np.empty((count,) + base.shape[1:])
    for i, j in enumerate(src):
        img = _shift(base[j], int(rng.integers(-1, 2)), int(rng.integers(-1, 2)))
        img = img * rng.uniform(0.8, 1.2) + rng.normal(0.0, 0.03, size=img.shape)
        out[i] = np.clip(img, 0.0, 1.0)
    return out, src


def _place(base: np.ndarray, count: int, size: int,
           rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Paste randomly chosen ``base`` digits at random offsets on a blank canvas."""
    src = rng.integers(0, len(base), size=count)
    inner = base.shape[-1]
    out = np.zeros((count, 1, size, size))
    for i, j in enumerate(src):
        oy, ox = rng.integers(0, size - inner + 1, size=2)
        out[i, 0, oy : oy + inner, ox : ox + inner] = base[j] * rng.uniform(0.8, 1.2)
    out += rng.normal(0.0, 0.03, size=out.shape)
    return np.clip(out, 0.0, 1.0), src


def load_digits16(n_train: int = 5000, n_test: int = 1000, seed: int = 0,
                  layout: str = "placed") -> LabeledDataset:
    """Handwritten digits (the 8x8 corpus bundled with scikit-learn) on a 16x16 canvas.

    Source digits are split into disjoint train/test pools first.  With
    ``layout="placed"`` each sample is a digit upsampled to 10x10 and pasted
    at a random position; with ``layout="centered"`` it is the digit
    upsampled to the full canvas with a one-pixel shift.  Both add contrast
    jitter and light noise.
    """
    from sklearn.datasets import load_digits

    if layout not in ("placed", "centered"):
        raise ContractError(f"unknown digits layout {layout!r}")
    raw = load_digits()
    imgs = raw.images / 16.0
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(imgs))
    n_test_src = len(imgs) // 6
    test_src, train_src = perm[:n_test_src], perm[n_test_src:]
    if layout == "placed":
        r = bilinear_matrix(8, 10)
        up = r @ imgs @ r.T
        tx, ti = _place(up[train_src], n_train, 16, rng)
        vx, vi = _place(up[test_src], n_test, 16, rng)
    else:
        r = bilinear_matrix(8, 16)
        up = (r @ imgs @ r.T)[:, None]
        tx, ti = _jitter(up[train_src], n_train, rng)
        vx, vi = _jitter(up[test_src], n_test, rng)
    return LabeledDataset(tx, raw.target[train_src][ti], vx, raw.target[test_src][vi], 10,
                          f"digits16-{layout}")


def make_blobs_images(n_train: int = 600, n_test: int = 200, num_classes: int = 4,
                      size: int = 16, channels: int = 1, noise: float = 0.35,
                      seed: int = 0) -> LabeledDataset:
    """Smooth random class prototypes plus per-sample Gaussian noise."""
    rng = np.random.default_rng(seed)
    coarse = rng.normal(size=(num_classes, channels, 4, 4))
    r = bilinear_matrix(4, size)
    protos = r @ coarse @ r.T

    def draw(n):
        y = rng.integers(0, num_classes, size=n)
        x = protos[y] + noise * rng.normal(size=(n, channels, size, size))
        return x, y

    tx, ty = draw(n_train)
    vx, vy = draw(n_test)
    return LabeledDataset(tx, ty, vx, vy, num_classes, "blobs")


# ---------------------------------------------------------------------------
# raw-tensor directories
# ---------------------------------------------------------------------------

_DTYPES = {"f32": "<f4", "f64": "<f8", "i64": "<i8"}


def save_dataset_dir(ds: LabeledDataset, path) -> Path:
    """Write a dataset as raw little-endian tensors plus ``manifest.json``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = {}
    for key, arr, dt in (("train_x", ds.train_x, "f32"), ("train_y", ds.train_y, "i64"),
                         ("test_x", ds.test_x, "f32"), ("test_y", ds.test_y, "i64")):
        fname = f"{key}.bin"
        np.ascontiguousarray(arr, dtype=_DTYPES[dt]).tofile(path / fname)
        entries[key] = {"file": fname, "dtype": dt, "shape": list(arr.shape)}
    manifest = {"name": ds.name, "num_classes": ds.num_classes, "tensors": entries}
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return path


def load_dataset_dir(path) -> LabeledDataset:
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    arrays = {}
    for key in ("train_x", "train_y", "test_x", "test_y"):
        e = manifest["tensors"][key]
        arr = np.fromfile(path / e["file"], dtype=_DTYPES[e["dtype"]])
        if arr.size != int(np.prod(e["shape"])):
            raise CorruptionError(f"{key}: {arr.size} values, manifest says {e['shape']}")
        arrays[key] = arr.reshape(e["shape"])
    return LabeledDataset(arrays["train_x"].astype(np.float64), arrays["train_y"],
                          arrays["test_x"].astype(np.float64), arrays["test_y"],
                          int(manifest["num_classes"]), manifest.get("name", path.name))


def load_dataset(name: str, seed: int = 0, **kwargs) -> LabeledDataset:
    """``digits`` / ``blobs`` builtins, or a directory written by :func:`save_dataset_dir`."""
    if name == "digits":
        return load_digits16(seed=seed, **kwargs)
    if name == "blobs":
        return make_blobs_images(seed=seed, **kwargs)
    if Path(name).is_dir():
        return load_dataset_dir(name)
    raise ContractError(f"unknown dataset {name!r}")
