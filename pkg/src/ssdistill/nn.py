"""Feature extractors and heads built on :mod:`ssdistill.tensor`."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor


class Module:
    """Minimal container: subclasses register parameters in ``self._params``.

    Non-trainable state (batchnorm running statistics) is listed in
    ``self._buffers`` by attribute name and travels with ``state_dict``.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._children: dict[str, Module] = {}
        self._buffers: tuple[str, ...] = ()

    def add_param(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(value, requires_grad=True)
        self._params[name] = t
        return t

    def add_child(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        out = [(prefix + k, v) for k, v in self._params.items()]
        for name, child in self._children.items():
            out.extend(child.named_parameters(f"{prefix}{name}."))
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> list[tuple[str, "Module", str]]:
        out = [(prefix + b, self, b) for b in self._buffers]
        for name, child in self._children.items():
            out.extend(child.named_buffers(f"{prefix}{name}."))
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {k: v.data.copy() for k, v in self.named_parameters()}
        for key, owner, attr in self.named_buffers():
            state[key] = np.array(getattr(owner, attr), dtype=np.float64)
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k, v in self.named_parameters():
            if k not in state:
                raise ShapeError(f"checkpoint is missing parameter {k}")
            if state[k].shape != v.shape:
                raise ShapeError(f"{k}: checkpoint {state[k].shape} vs model {v.shape}")
            v.data = np.array(state[k], dtype=np.float64)
        for key, owner, attr in self.named_buffers():
            if key in state:
                setattr(owner, attr, np.array(state[key], dtype=np.float64))

    def requires_grad_(self, flag: bool) -> "Module":
        for p in self.parameters():
            p.requires_grad = flag
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def float_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def __call__(self, x):
        return self.forward(x)


def _he(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True,
                 init: str = "uniform"):
        super().__init__()
        bound = 1.0 / np.sqrt(d_in)
        if init == "he":
            w = _he(rng, (d_in, d_out), d_in)
        else:
            w = rng.uniform(-bound, bound, size=(d_in, d_out))
        self.weight = self.add_param("weight", w)
        self.bias = self.add_param("bias", rng.uniform(-bound, bound, size=d_out)) if bias else None

    def forward(self, x):
        return T.linear(x, self.weight, self.bias)


class BatchNorm(Module):
    """Batch normalization; optional running statistics for frozen inference."""

    def __init__(self, channels: int, track_running: bool = False, momentum: float = 0.1):
        super().__init__()
        self.gamma = self.add_param("gamma", np.ones(channels))
        self.beta = self.add_param("beta", np.zeros(channels))
        self.track_running = track_running
        self.momentum = momentum
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.use_running = False
        if track_running:
            self._buffers = ("running_mean", "running_var")

    def forward(self, x):
        x = T.as_tensor(x)
        bshape = [1] * x.ndim
        bshape[1] = x.shape[1]
        if self.use_running:
            inv = 1.0 / np.sqrt(self.running_var + 1e-5)
            scale = self.gamma * inv
            shift = self.beta - self.gamma * (self.running_mean * inv)
            return x * scale.reshape(bshape) + shift.reshape(bshape)
        if self.track_running and T._GRAD_ENABLED:
            axes = (0,) + tuple(range(2, x.ndim))
            n = x.data.size // x.shape[1]
            mu = x.data.mean(axis=axes)
            var = x.data.var(axis=axes) * n / max(n - 1, 1)
            self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mu
            self.running_var = (1 - self.momentum) * self.running_var + self.momentum * var
        return T.batchnorm(x, self.gamma, self.beta)


class ConvNetExtractor(Module):
    """Stack of conv3x3 -> batchnorm -> relu -> avgpool2x2 blocks, flattened."""

    def __init__(self, in_channels: int, image_size: int, width: int = 32, depth: int = 3,
                 rng: np.random.Generator | None = None, track_running: bool = False):
        super().__init__()
        rng = np.random.default_rng(0) if rng is None else rng
        if image_size % (2**depth) or image_size < 2**depth:
            raise ShapeError(f"image size {image_size} not divisible by 2**{depth}")
        self.in_channels, self.image_size = in_channels, image_size
        self.width, self.depth = width, depth
        self.convs: list[Tensor] = []
        self.norms: list[BatchNorm] = []
        c = in_channels
        for i in range(depth):
            self.convs.append(self.add_param(f"conv{i}", _he(rng, (width, c, 3, 3), c * 9)))
            self.norms.append(self.add_child(f"bn{i}", BatchNorm(width, track_running)))
            c = width

    @property
    def feature_dim(self) -> int:
        return self.output_dim(self.width, self.depth, self.image_size)

    @staticmethod
    def output_dim(width: int, depth: int, image_size: int) -> int:
        side = image_size // (2**depth)
        return width * side * side

    def forward(self, x):
        h = T.as_tensor(x)
        for w, bn in zip(self.convs, self.norms):
            h = T.avgpool2d(T.relu(bn(T.conv2d(h, w, padding=1))), 2)
        return h.reshape(h.shape[0], -1)

    def set_running_stats(self, flag: bool) -> None:
        for bn in self.norms:
            bn.use_running = flag


class MLPExtractor(Module):
    """Two hidden ReLU layers on the flattened image."""

    def __init__(self, in_dim: int, hidden: int = 256, out_dim: int = 128,
                 rng: np.random.Generator | None = None):
        super().__init__()
        rng = np.random.default_rng(0) if rng is None else rng
        self.fc1 = self.add_child("fc1", Linear(in_dim, hidden, rng, init="he"))
        self.fc2 = self.add_child("fc2", Linear(hidden, out_dim, rng, init="he"))
        self.feature_dim = out_dim

    def forward(self, x):
        x = T.as_tensor(x)
        h = x.reshape(x.shape[0], -1)
        return T.relu(self.fc2(T.relu(self.fc1(h))))


class LinearHead(Linear):
    """Bias-free linear map from features to representation space."""

    def __init__(self, d_f: int, d_y: int, rng: np.random.Generator, bias: bool = False):
        super().__init__(d_f, d_y, rng, bias=bias)


class RegressionModel(Module):
    """Extractor followed by a linear head: the inner model of distillation."""

    def __init__(self, extractor: Module, head: Module):
        super().__init__()
        self.extractor = self.add_child("extractor", extractor)
        self.head = self.add_child("head", head)

    def forward(self, x):
        return self.head(self.extractor(x))


def build_extractor(arch: str, image_shape: tuple[int, int, int], rng: np.random.Generator,
                    width: int = 32, depth: int = 3, mlp_hidden: int = 256) -> Module:
    """Construct a feature extractor by name (``convnet`` or ``mlp``)."""
    c, h, w = image_shape
    if arch == "convnet":
        return ConvNetExtractor(c, h, width=width, depth=depth, rng=rng)
    if arch == "mlp":
        if h % (2**depth) or h < 2**depth:
            raise ShapeError(f"image size {h} not divisible by 2**{depth}")
        return MLPExtractor(c * h * w, hidden=mlp_hidden,
                            out_dim=ConvNetExtractor.output_dim(width, depth, h), rng=rng)
    raise ValueError(f"unknown architecture {arch!r}")


def build_regressor(arch: str, image_shape, d_y: int, rng: np.random.Generator,
                    width: int = 32, depth: int = 3) -> RegressionModel:
    ext = build_extractor(arch, image_shape, rng, width=width, depth=depth)
    return RegressionModel(ext, LinearHead(ext.feature_dim, d_y, rng))


def extract_features(extractor: Module, images: np.ndarray, chunk: int = 1000) -> np.ndarray:
    """Frozen forward pass in fixed-order chunks (batch statistics per chunk)."""
    n_chunks = max(1, -(-len(images) // chunk))
    with T.no_grad():
        out = [extractor(part).data for part in np.array_split(images, n_chunks)]
    return np.concatenate(out, axis=0)
