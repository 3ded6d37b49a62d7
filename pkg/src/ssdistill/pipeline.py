"""End-to-end methods (distilled sets and baselines) and the ablation suite."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .approx import bias_model, same_model, shift_mse, train_approx, approx_model
from .augment import AugmentationSpec
from .data import LabeledDataset
from .distill import DistillConfig, DistillResult, run_distillation
from .evaluation import (EvalReport, LinearEvalConfig, PairSet, PretrainConfig, baseline_kmeans,
                         baseline_random, linear_eval, pretrain_extractor)
from .parameterization import approx_float_count, derive_m, init_direct, init_from_source
from .store import DistilledArtifact, artifact_from_params

log = logging.getLogger(__name__)


@dataclass
class MethodConfig:
    """Budget and parameterisation choices for one distilled set."""

    N: int = 20
    U: int = 32
    V: int = 16
    scale: int = 2
    hidden: int = 4
    augment: str = "rotation"
    init: str = "pca"
    approx_steps: int = 2000
    approx_lr: float = 1e-3


def plan_budget(image_shape, d_y: int, mc: MethodConfig) -> tuple[int, AugmentationSpec]:
    """Number of distilled samples ``m`` and the augmentation spec for a method config."""
    c, h, w = image_shape
    spec = AugmentationSpec.named(mc.augment, h)
    d_xb = c * (h // mc.scale) * (w // mc.scale)
    nets = approx_float_count(len(spec), mc.V, mc.hidden) if len(spec) else 0
    m = derive_m(mc.N, c * h * w, mc.U, mc.V, d_xb, d_y, nets)
    return m, spec


def distill_basis(x_t: np.ndarray, teacher_reps: np.ndarray,
                  represent: Callable[[np.ndarray], np.ndarray], mc: MethodConfig,
                  dcfg: DistillConfig) -> tuple[DistilledArtifact, DistillResult, list[float]]:
    """Initialise, distill, and fit approximation nets; returns ``(artifact, run, net_mse)``.

    The artifact keeps the optimised augmentation blocks as ``aux`` records so
    that the Bias/Ideal shift models can be evaluated afterwards.
    """
    m, spec = plan_budget(x_t.shape[1:], teacher_reps.shape[1], mc)
    params = init_from_source(x_t, represent, mc.U, mc.V, mc.scale, m, spec, seed=dcfg.seed,
                              init=mc.init, teacher_reps=teacher_reps)
    result = run_distillation(params, x_t, teacher_reps, dcfg)
    nets, errors = [], []
    if len(spec):
        cy = params.cy.data
        nets, errors = train_approx(cy, [b.data - cy for b in params.cay], hidden=mc.hidden,
                                    steps=mc.approx_steps, lr=mc.approx_lr, seed=dcfg.seed)
    meta = {"N": mc.N, "U": mc.U, "V": mc.V, "m": m, "init": mc.init, "seed": dcfg.seed,
            "d_x": int(np.prod(x_t.shape[1:])), "d_y": teacher_reps.shape[1],
            "outer_iterations": dcfg.outer_iterations}
    art = artifact_from_params(params, nets, mc.hidden if nets else 0, meta)
    return art, result, errors


def distill_pixels(x_t: np.ndarray, teacher_reps: np.ndarray, N: int,
                   dcfg: DistillConfig) -> tuple[PairSet, DistillResult]:
    """No-parameterisation baseline: ``N`` images and targets optimised directly."""
    params = init_direct(x_t, teacher_reps, N, seed=dcfg.seed)
    result = run_distillation(params, x_t, teacher_reps, dcfg)
    return PairSet(params.images().data, params.y.data, params.sample_indices), result


# ---------------------------------------------------------------------------
# ablation suite
# ---------------------------------------------------------------------------

AXES = ("main", "components", "init", "shift", "augment", "arch")


@dataclass
class SuiteConfig:
    method: MethodConfig
    distill: DistillConfig
    pretrain: PretrainConfig
    linear: LinearEvalConfig
    seeds: tuple[int, ...] = (0, 1, 2)
    axes: tuple[str, ...] = ("main", "components", "init", "shift", "arch")


def ablation_suite(data: LabeledDataset, teacher_reps: np.ndarray,
                   represent: Callable[[np.ndarray], np.ndarray], cfg: SuiteConfig,
                   progress: Callable[[str], None] | None = None) -> EvalReport:
    """Evaluate the requested ablation axes over ``cfg.seeds``.

    Method names in the report: ``ours``, ``random``, ``kmeans`` (main);
    ``no_param``, ``param_only`` (components); ``init_real``, ``init_random``
    (init); ``shift_same``, ``shift_bias``, ``shift_ideal`` (shift);
    ``aug_none``, ``aug_jigsaw``, ``aug_crop`` (augment); the ``arch`` axis
    repeats ``ours`` and ``random`` with the MLP extractor.  Shift-model MSEs
    go to ``report.extras["shift_mse"]``; wall-clock seconds per method
    (construction, pretraining and probe, summed over seeds) go to
    ``report.extras["seconds"]``.
    """
    say = progress or (lambda msg: log.info(msg))
    axes = set(cfg.axes)
    unknown = axes - set(AXES)
    if unknown:
        raise ValueError(f"unknown ablation axes {sorted(unknown)}")
    report = EvalReport()
    report.extras["shift_mse"] = {}
    seconds = report.extras["seconds"] = {}
    x_t = data.train_x
    N = cfg.method.N

    for seed in cfg.seeds:
        dcfg = replace(cfg.distill, seed=seed)
        pre = replace(cfg.pretrain, seed=seed)
        lin = replace(cfg.linear, seed=seed)

        def score(method, images, targets, arch="convnet", start=None):
            """Pretrain, probe and record; ``start`` backdates the timer to include construction."""
            start = time.perf_counter() if start is None else start
            ext, _ = pretrain_extractor(images, targets, replace(pre, arch=arch))
            acc = linear_eval(ext, data, lin)
            report.add(arch, data.name, method, seed, acc)
            key = method if arch == "convnet" else f"{method}/{arch}"
            seconds[key] = seconds.get(key, 0.0) + time.perf_counter() - start
            say(f"seed {seed}\t{arch}\t{method}\t{acc:.4f}")
            return acc

        start = time.perf_counter()
        art, _, _ = distill_basis(x_t, teacher_reps, represent, cfg.method, dcfg)
        ours_pairs = art.pairs("approx") if art.A else art.pairs()
        score("ours", *ours_pairs, start=start)
        start = time.perf_counter()
        rand = baseline_random(x_t, teacher_reps, N, seed)
        if axes & {"main", "arch"}:
            score("random", rand.images, rand.targets, start=start)
        if "main" in axes:
            start = time.perf_counter()
            km = baseline_kmeans(x_t, teacher_reps, N, seed)
            score("kmeans", km.images, km.targets, start=start)
        if "components" in axes:
            start = time.perf_counter()
            direct, _ = distill_pixels(x_t, teacher_reps, N, dcfg)
            score("no_param", direct.images, direct.targets, start=start)
        if axes & {"components", "augment"}:
            start = time.perf_counter()
            plain, _, _ = distill_basis(x_t, teacher_reps, represent,
                                        replace(cfg.method, augment="none"), dcfg)
            pairs = plain.pairs()
            if "components" in axes:
                score("param_only", *pairs, start=start)
            if "augment" in axes:
                score("aug_none", *pairs, start=start if "components" not in axes else None)
        if "init" in axes:
            for init in ("real", "random"):
                start = time.perf_counter()
                a, _, _ = distill_basis(x_t, teacher_reps, represent,
                                        replace(cfg.method, init=init), dcfg)
                score(f"init_{init}", *(a.pairs("approx") if a.A else a.pairs()), start=start)
        if "shift" in axes and art.A:
            cy = art.cy.astype(np.float64)
            blocks = art.aug_blocks()
            _, mse_same = shift_mse(same_model(art.A), cy, blocks)
            _, mse_bias = shift_mse(bias_model(cy, blocks), cy, blocks)
            _, mse_nets = shift_mse(approx_model(art.approx_nets()), cy, blocks)
            report.extras["shift_mse"][str(seed)] = {"same": mse_same, "bias": mse_bias,
                                                     "approx": mse_nets, "ideal": 0.0}
            for variant in ("same", "bias", "ideal"):
                score(f"shift_{variant}", *art.pairs(variant))
        if "augment" in axes:
            for aug in ("jigsaw", "crop"):
                start = time.perf_counter()
                a, _, _ = distill_basis(x_t, teacher_reps, represent,
                                        replace(cfg.method, augment=aug), dcfg)
                score(f"aug_{aug}", *a.pairs("approx"), start=start)
        if "arch" in axes:
            score("ours", *ours_pairs, arch="mlp")
            score("random", rand.images, rand.targets, arch="mlp")
    return report
