"""Bilevel distillation: model pool, inner MSE training, and the closed-form
kernel-ridge outer objective."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractError, NumericalError
from .nn import Module, RegressionModel, build_regressor
from .optim import AdamW, OptimizerState, schedule, sgd_step
from .tensor import Tensor

log = logging.getLogger(__name__)


@dataclass
class DistillConfig:
    outer_iterations: int = 400
    outer_lr: float = 1e-3
    outer_weight_decay: float = 0.01
    outer_schedule: str = "linear"
    inner_lr: float = 0.1  # step size for the per-element mean of the squared error
    inner_momentum: float = 0.9
    pool_size: int = 10
    max_steps: int = 100
    krr_lambda: float | None = None  # None: relative ridge krr_rel * trace(K) / n_s
    krr_rel: float = 1e-6
    real_batch: int = 64
    width: int = 32
    depth: int = 3
    arch: str = "convnet"
    log_every: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.krr_lambda is not None and self.krr_lambda <= 0:
            raise ContractError("krr_lambda must be positive")
        for name in ("pool_size", "max_steps", "real_batch"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be positive")
        if self.outer_iterations < 0:
            raise ContractError("outer_iterations must be non-negative")


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def inner_loss(model: Module, xs, ys) -> Tensor:
    """Mean over rows of the squared error between model output and targets."""
    xs, ys = T.as_tensor(xs), T.as_tensor(ys)
    if xs.shape[0] != ys.shape[0]:
        raise ContractError(f"inner_loss: {xs.shape[0]} images vs {ys.shape[0]} targets")
    return T.mse(model(xs), ys)


def krr_outer_loss(extractor: Module, xs, ys, x_real, y_teacher, lam: float | None = None,
                   rel: float = 1e-6) -> Tensor:
    """Kernel-ridge-regression outer objective.

    With ``F_s = f(xs)`` and ``F_t = f(x_real)``: ``K = F_s F_s^T``,
    ``alpha = (K + lam I)^-1 ys`` and the loss is
    ``0.5 * ||y_teacher - F_t F_s^T alpha||_F^2 / b``.  Real-data features
    are treated as constants; gradients flow to ``xs`` and ``ys``.
    """
    xs, ys = T.as_tensor(xs), T.as_tensor(ys)
    b = len(x_real)
    if b < 2:
        raise ContractError("krr_outer_loss needs a real batch of at least 2")
    phi_s = extractor(xs)
    with T.no_grad():
        phi_t = extractor(x_real).data
    k = T.matmul(phi_s, phi_s.T)
    n_s = k.shape[0]
    if lam is None:
        lam = rel * float(np.trace(k.data)) / n_s
    if not lam > 0:
        raise NumericalError(f"ridge lambda {lam} is not positive (trace(K)={np.trace(k.data):.3e})")
    try:
        alpha = T.solve_linear(k + lam * np.eye(n_s), ys, name=f"K+{lam:.3e}I")
    except NumericalError as exc:
        raise NumericalError(f"{exc}; lambda={lam:.3e}, diag(K) in "
                             f"[{k.data.diagonal().min():.3e}, {k.data.diagonal().max():.3e}]") from exc
    pred = T.matmul(T.matmul(Tensor(phi_t), phi_s.T), alpha)
    resid = pred - np.asarray(y_teacher, dtype=np.float64)
    return (resid * resid).sum() * (0.5 / b)


def krr_head(features: np.ndarray, targets: np.ndarray, lam: float) -> np.ndarray:
    """Closed-form ridge weights ``W = F^T (F F^T + lam I)^-1 Y`` (kernel form)."""
    k = features @ features.T
    return features.T @ np.linalg.solve(k + lam * np.eye(len(k)), targets)


# ---------------------------------------------------------------------------
# model pool
# ---------------------------------------------------------------------------


@dataclass
class PoolEntry:
    model: RegressionModel
    z: int
    state: OptimizerState = field(default_factory=lambda: OptimizerState("sgd"))


@dataclass
class ModelPool:
    entries: list[PoolEntry]
    max_steps: int
    increments: int = 0
    resets: int = 0
    reset_total: int = 0  # sum of z values discarded at resets

    def histogram(self, bins: int = 4) -> list[int]:
        edges = np.linspace(0, self.max_steps, bins + 1)
        counts, _ = np.histogram([e.z for e in self.entries], bins=edges)
        return counts.tolist()


def _new_model(cfg: DistillConfig, image_shape, d_y: int, rng) -> RegressionModel:
    return build_regressor(cfg.arch, image_shape, d_y, rng, width=cfg.width, depth=cfg.depth)


def inner_step(entry: PoolEntry, xs: np.ndarray, ys: np.ndarray, cfg: DistillConfig) -> float:
    """One full-batch SGD step of the inner model on the distilled pairs.

    Returns the inner loss (squared norm, mean over rows).  The step is taken
    on that loss divided by ``d_y``, i.e. on the per-element mean squared
    error, which is what ``cfg.inner_lr`` is calibrated for.
    """
    model = entry.model
    model.requires_grad_(True)
    model.zero_grad()
    loss = inner_loss(model, xs, ys)
    (loss * (1.0 / ys.shape[1])).backward()
    params = model.parameters()
    sgd_step([p.data for p in params], [p.grad for p in params], entry.state,
             cfg.inner_lr, cfg.inner_momentum)
    return loss.item()


def pool_init(cfg: DistillConfig, xs: np.ndarray, ys: np.ndarray,
              rng: np.random.Generator) -> ModelPool:
    """L fresh models, each trained for z ~ U{1..Z} steps on the initial pairs."""
    entries = []
    for _ in range(cfg.pool_size):
        model = _new_model(cfg, xs.shape[1:], ys.shape[1], rng)
        entry = PoolEntry(model, int(rng.integers(1, cfg.max_steps + 1)))
        for _ in range(entry.z):
            inner_step(entry, xs, ys, cfg)
        entries.append(entry)
    return ModelPool(entries, cfg.max_steps)


def distill_step(pool: ModelPool, params, x_real: np.ndarray, y_real: np.ndarray,
                 cfg: DistillConfig, rng: np.random.Generator, outer_opt: AdamW,
                 lr: float, iteration: int = 0) -> tuple[float, int]:
    """One outer iteration; returns ``(outer_loss, sampled_entry_index)``."""
    xs, ys = params.pairs()
    j = int(rng.integers(len(pool.entries)))
    entry = pool.entries[j]
    entry.model.requires_grad_(False)
    loss = krr_outer_loss(entry.model.extractor, xs, ys, x_real, y_real, cfg.krr_lambda, cfg.krr_rel)
    value = loss.item()
    if not np.isfinite(value):
        raise NumericalError(f"outer loss is not finite at iteration {iteration}")
    outer_opt.zero_grad()
    loss.backward()
    outer_opt.step(lr)

    if entry.z < pool.max_steps:
        with T.no_grad():
            fx, fy = params.pairs()
        inner_step(entry, fx.data, fy.data, cfg)
        entry.z += 1
        pool.increments += 1
    else:
        pool.resets += 1
        pool.reset_total += entry.z
        pool.entries[j] = PoolEntry(_new_model(cfg, xs.shape[1:], ys.shape[1], rng), 0)
    return value, j


@dataclass
class DistillResult:
    params: object
    pool: ModelPool
    trace: list[tuple[int, float]]
    log_lines: list[str]


def run_distillation(params, x_t: np.ndarray, teacher_reps: np.ndarray,
                     cfg: DistillConfig) -> DistillResult:
    """Pool initialisation followed by ``cfg.outer_iterations`` outer steps.

    ``params`` (a :class:`~ssdistill.parameterization.BasisParams` or
    ``DirectParams``) is updated in place and returned in the result.
    """
    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    pool_rng, batch_rng, step_rng = (np.random.default_rng(s) for s in seeds)
    with T.no_grad():
        xs, ys = params.pairs()
    pool = pool_init(cfg, xs.data, ys.data, pool_rng)
    outer_opt = AdamW(params.parameters(), lr=cfg.outer_lr, weight_decay=cfg.outer_weight_decay)
    n = len(x_t)
    b = min(cfg.real_batch, n)
    trace: list[tuple[int, float]] = []
    lines = ["iter\touter_loss\tz_hist"]
    for it in range(cfg.outer_iterations):
        idx = batch_rng.choice(n, size=b, replace=False)
        lr = schedule(cfg.outer_schedule, cfg.outer_lr, it, cfg.outer_iterations)
        value, _ = distill_step(pool, params, x_t[idx], teacher_reps[idx], cfg, step_rng,
                                outer_opt, lr, it)
        trace.append((it, value))
        if it % cfg.log_every == 0 or it == cfg.outer_iterations - 1:
            line = f"{it}\t{value:.6g}\t{','.join(map(str, pool.histogram()))}"
            lines.append(line)
            log.info(line)
    return DistillResult(params, pool, trace, lines)


def evaluate_outer_loss(params, extractor: Module, x_real, y_real, cfg: DistillConfig) -> float:
    with T.no_grad():
        xs, ys = params.pairs()
        return krr_outer_loss(extractor, xs, ys, x_real, y_real, cfg.krr_lambda, cfg.krr_rel).item()
