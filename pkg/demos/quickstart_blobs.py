"""Small end-to-end run on the Gaussian-blobs generator (a few seconds on one core).

Trains a tiny Barlow Twins teacher, distills a 10-image budget into bases and
coefficients, writes the artifact, prints its budget ledger, then pretrains
an extractor on the distilled pairs and reports linear-probe accuracy next to
the Random baseline.

    python demos/quickstart_blobs.py [out_dir]
"""

import sys
from pathlib import Path

from ssdistill.data import make_blobs_images
from ssdistill.distill import DistillConfig
from ssdistill.evaluation import (LinearEvalConfig, PretrainConfig, baseline_random, linear_eval,
                                  pretrain_extractor, pretrain_on_artifact)
from ssdistill.pipeline import MethodConfig, distill_basis
from ssdistill.store import audit_budget, load_artifact, save_artifact
from ssdistill.teacher import TeacherConfig, train_teacher


def main(out_dir="demo_out"):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = make_blobs_images(n_train=600, n_test=200, num_classes=8, size=8, noise=1.5, seed=0)
    teacher, losses = train_teacher(data.train_x, TeacherConfig(epochs=3, width=8, depth=2, d_y=8, pad=1,
                                                                batch_size=64))
    print(f"teacher loss {losses[0]:.3f} -> {losses[-1]:.3f}")
    reps = teacher.represent(data.train_x)

    mc = MethodConfig(N=10, U=4, V=4, approx_steps=300)
    dcfg = DistillConfig(outer_iterations=60, pool_size=4, max_steps=10, width=8, depth=2,
                         real_batch=32)
    art, run, net_mse = distill_basis(data.train_x, reps, teacher.represent, mc, dcfg)
    print(f"m = {art.m}, outer loss {run.trace[0][1]:.4f} -> {run.trace[-1][1]:.4f}, "
          f"approx-net mse {sum(net_mse) / len(net_mse):.4f}")

    path = save_artifact(art, out / "artifact.ssda")
    for line in audit_budget(load_artifact(path), mc.N, data.d_x).lines():
        print(line)

    pre = PretrainConfig(epochs=30, width=8, depth=2)
    lin = LinearEvalConfig(epochs=30)
    ext, _ = pretrain_on_artifact(load_artifact(path), pre)
    rand = baseline_random(data.train_x, reps, mc.N)
    base, _ = pretrain_extractor(rand.images, rand.targets, pre)
    print(f"linear probe: distilled {linear_eval(ext, data, lin):.3f}, "
          f"random {linear_eval(base, data, lin):.3f}")


if __name__ == "__main__":
    main(*sys.argv[1:])
