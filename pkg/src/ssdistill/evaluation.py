"""Pretraining on distilled pairs, linear evaluation, and selection baselines."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import tensor as T
from .data import LabeledDataset
from .errors import ContractError, NumericalError
from .nn import Module, build_regressor, extract_features
from .optim import OptimizerState, schedule, sgd_step
from .spectral import kmeans

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# pretraining
# ---------------------------------------------------------------------------


@dataclass
class PretrainConfig:
    arch: str = "convnet"
    epochs: int = 300
    batch_size: int = 256
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-3
    width: int = 32
    depth: int = 3
    seed: int = 0


def pretrain_extractor(images: np.ndarray, targets: np.ndarray,
                       config: PretrainConfig | None = None) -> tuple[Module, list[float]]:
    """Regress ``targets`` from ``images`` with minibatch SGD; return the extractor and epoch losses.

    Losses are reported as squared norms averaged over rows; as in the inner
    loop, SGD steps on the per-element mean.  The linear head is discarded and
    the returned extractor has gradients disabled.
    """
    cfg = config or PretrainConfig()
    images = np.asarray(images, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if len(images) != len(targets):
        raise ContractError(f"{len(images)} images vs {len(targets)} targets")
    rng = np.random.default_rng(cfg.seed)
    model = build_regressor(cfg.arch, images.shape[1:], targets.shape[1], rng,
                            width=cfg.width, depth=cfg.depth)
    params = model.parameters()
    state = OptimizerState("sgd")
    n = len(images)
    losses: list[float] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        batches = [order[i : i + cfg.batch_size] for i in range(0, n, cfg.batch_size)]
        if len(batches) > 1 and len(batches[-1]) < 2:
            batches[-2] = np.concatenate(batches[-2:])
            batches.pop()
        running = []
        for idx in batches:
            model.zero_grad()
            loss = T.mse(model(images[idx]), targets[idx])
            value = loss.item()
            if not np.isfinite(value):
                raise NumericalError(f"pretraining diverged at epoch {epoch}")
            (loss * (1.0 / targets.shape[1])).backward()
            sgd_step([p.data for p in params], [p.grad for p in params], state,
                     cfg.lr, cfg.momentum, cfg.weight_decay)
            running.append(value)
        losses.append(float(np.mean(running)))
    return model.extractor.requires_grad_(False), losses


def pretrain_on_artifact(artifact, config: PretrainConfig | None = None,
                         variant: str = "approx") -> tuple[Module, list[float]]:
    """Pretrain on an artifact's augmented images and ``variant`` targets."""
    images, targets = artifact.pairs(variant) if artifact.A else artifact.pairs()
    return pretrain_extractor(images, targets, config)


def training_mse(extractor: Module, images, targets) -> float:
    """MSE of the best linear head (least squares) on top of ``extractor``."""
    f = extract_features(extractor, np.asarray(images, dtype=np.float64))
    w, *_ = np.linalg.lstsq(f, targets, rcond=None)
    return float(((f @ w - targets) ** 2).sum(axis=1).mean())


# ---------------------------------------------------------------------------
# linear evaluation
# ---------------------------------------------------------------------------


@dataclass
class LinearEvalConfig:
    epochs: int = 100
    batch_size: int = 256
    lr: float = 0.2
    momentum: float = 0.9
    seed: int = 0


def _features(extractor, images) -> np.ndarray:
    if isinstance(extractor, Module):
        return extract_features(extractor, images)
    return np.asarray(extractor(images), dtype=np.float64)


def linear_probe(train_f, train_y, test_f, test_y, num_classes: int,
                 config: LinearEvalConfig | None = None) -> float:
    """Softmax classifier trained on fixed features; returns test top-1 accuracy.

    Features are standardised with the training mean and standard deviation
    (constant columns are left centred at zero).
    """
    cfg = config or LinearEvalConfig()
    mu = train_f.mean(axis=0)
    sd = train_f.std(axis=0)
    sd[sd < 1e-12] = 1.0
    tr = (train_f - mu) / sd
    te = (test_f - mu) / sd
    rng = np.random.default_rng(cfg.seed)
    w = T.Tensor(np.zeros((tr.shape[1], num_classes)), requires_grad=True)
    b = T.Tensor(np.zeros(num_classes), requires_grad=True)
    state = OptimizerState("sgd")
    n = len(tr)
    steps = -(-n // cfg.batch_size)
    total = cfg.epochs * steps
    step = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for i in range(0, n, cfg.batch_size):
            idx = order[i : i + cfg.batch_size]
            w.grad = b.grad = None
            loss = T.softmax_xent(T.matmul(T.Tensor(tr[idx]), w) + b, train_y[idx])
            loss.backward()
            sgd_step([w.data, b.data], [w.grad, b.grad], state,
                     schedule("cosine", cfg.lr, step, total), cfg.momentum)
            step += 1
    pred = (te @ w.data + b.data).argmax(axis=1)
    return float((pred == test_y).mean())


def linear_eval(extractor, data: LabeledDataset, config: LinearEvalConfig | None = None) -> float:
    """Top-1 test accuracy of a linear classifier on the frozen extractor's features."""
    train_f = _features(extractor, data.train_x)
    test_f = _features(extractor, data.test_x)
    return linear_probe(train_f, data.train_y, test_f, data.test_y, data.num_classes, config)


def parameter_checksum(module: Module) -> str:
    h = hashlib.sha256()
    for name, p in module.named_parameters():
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# selection baselines
# ---------------------------------------------------------------------------


@dataclass
class PairSet:
    images: np.ndarray
    targets: np.ndarray
    indices: np.ndarray


def baseline_random(x_t: np.ndarray, teacher_reps: np.ndarray, N: int, seed: int = 0) -> PairSet:
    """``N`` source images drawn without replacement, with their teacher representations."""
    n = len(x_t)
    if not 1 <= N <= n:
        raise ContractError(f"N={N} must lie in [1, {n}]")
    idx = np.sort(np.random.default_rng(seed).choice(n, size=N, replace=False))
    return PairSet(x_t[idx], teacher_reps[idx], idx)


def baseline_kmeans(x_t: np.ndarray, teacher_reps: np.ndarray, N: int, seed: int = 0) -> PairSet:
    """Medoid images of ``N`` k-means clusters in teacher representation space."""
    if not 1 <= N <= len(x_t):
        raise ContractError(f"N={N} must lie in [1, {len(x_t)}]")
    result = kmeans(teacher_reps, N, seed=seed)
    idx = result.medoid_indices
    return PairSet(x_t[idx], teacher_reps[idx], idx)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

REPORT_FIELDS = ("arch", "dataset", "method", "seed", "accuracy")


@dataclass
class EvalReport:
    rows: list[dict] = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    def add(self, arch: str, dataset: str, method: str, seed: int, accuracy: float) -> None:
        if not 0.0 <= accuracy <= 1.0:
            raise ContractError(f"accuracy {accuracy} outside [0, 1]")
        self.rows.append({"arch": arch, "dataset": dataset, "method": method,
                          "seed": int(seed), "accuracy": float(accuracy)})

    def summary(self) -> dict[tuple[str, str, str], tuple[float, float, int]]:
        """(arch, dataset, method) -> (mean, sample std, number of seeds)."""
        cells: dict[tuple[str, str, str], list[float]] = {}
        for r in self.rows:
            cells.setdefault((r["arch"], r["dataset"], r["method"]), []).append(r["accuracy"])
        out = {}
        for key, accs in cells.items():
            a = np.array(accs)
            out[key] = (float(a.mean()), float(a.std(ddof=1)) if len(a) > 1 else 0.0, len(a))
        return out

    def mean(self, method: str, arch: str = "convnet", dataset: str | None = None) -> float:
        for (a, d, m), (mu, _, _) in self.summary().items():
            if a == arch and m == method and (dataset is None or d == dataset):
                return mu
        raise KeyError((arch, dataset, method))

    def to_tsv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, delimiter="\t", lineterminator="\n")
        w.writerow(REPORT_FIELDS)
        for r in self.rows:
            w.writerow([r["arch"], r["dataset"], r["method"], r["seed"], repr(r["accuracy"])])
        return buf.getvalue()

    def summary_tsv(self) -> str:
        lines = ["arch\tdataset\tmethod\tmean\tstd\tseeds"]
        for (a, d, m), (mu, sd, k) in self.summary().items():
            lines.append(f"{a}\t{d}\t{m}\t{mu:.4f}\t{sd:.4f}\t{k}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        summary = [{"arch": a, "dataset": d, "method": m, "mean": mu, "std": sd, "seeds": k}
                   for (a, d, m), (mu, sd, k) in self.summary().items()]
        return json.dumps({"rows": self.rows, "summary": summary, "extras": self.extras},
                          indent=2, sort_keys=True)

    @classmethod
    def from_tsv(cls, text: str) -> "EvalReport":
        report = cls()
        reader = csv.DictReader(io.StringIO(text), delimiter="\t")
        for r in reader:
            report.add(r["arch"], r["dataset"], r["method"], int(r["seed"]), float(r["accuracy"]))
        return report

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.tsv").write_text(self.to_tsv())
        (out / "summary.tsv").write_text(self.summary_tsv())
        (out / "report.json").write_text(self.to_json())
        return out


def evaluate_pairs(images, targets, data: LabeledDataset, pre: PretrainConfig,
                   lin: LinearEvalConfig | None = None) -> float:
    extractor, _ = pretrain_extractor(images, targets, pre)
    return linear_eval(extractor, data, lin)


def config_dict(*configs) -> dict:
    out = {}
    for c in configs:
        out[type(c).__name__] = asdict(c)
    return out


Evaluator = Callable[[np.ndarray, np.ndarray], float]
