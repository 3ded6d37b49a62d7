"""Command-line interface for the distillation pipeline.

Each subcommand reads its inputs from files, writes outputs under ``--out``,
and records a ``manifest.json`` with the resolved configuration, its hash,
the seed and library versions.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .approx import train_approx
from .config import apply_overrides, canonical, desk_defaults, parse_config_text
from .data import load_dataset
from .errors import (BudgetError, ConfigurationError, ContractError, CorruptionError,
                     NumericalError)
from .evaluation import EvalReport, linear_eval, pretrain_on_artifact
from .nn import build_extractor
from .distill import run_distillation
from .parameterization import init_from_source
from .pipeline import SuiteConfig, ablation_suite, plan_budget
from .store import (artifact_from_params, audit_budget, config_hash, deserialize, load_artifact,
                    load_module_state, recount_container, save_artifact, save_module)
from .teacher import TeacherModel, train_teacher

log = logging.getLogger("ssdistill")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_BUDGET = 4
EXIT_CORRUPT = 5
EXIT_NUMERICAL = 6
EXIT_CONTRACT = 7
EXIT_IO = 8

EXIT_CODES_HELP = f"""exit codes:
  {EXIT_OK}  success
  {EXIT_USAGE}  usage error (unknown flag or subcommand)
  {EXIT_CONFIG}  invalid configuration (bad key, infeasible budget)
  {EXIT_BUDGET}  artifact exceeds its storage budget
  {EXIT_CORRUPT}  corrupted or mismatched container
  {EXIT_NUMERICAL}  numerical failure (divergence, failed factorisation)
  {EXIT_CONTRACT}  shape or argument contract violated
  {EXIT_IO}  file not found or unreadable
"""


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _configs(args) -> dict:
    configs = desk_defaults()
    if args.config:
        configs = apply_overrides(configs, parse_config_text(Path(args.config).read_text()))
    return configs


def _set(configs: dict, section: str, **values) -> dict:
    values = {k: v for k, v in values.items() if v is not None}
    if values:
        configs = dict(configs)
        configs[section] = dataclasses.replace(configs[section], **values)
    return configs


def _write_manifest(out: Path, command: str, argv, configs: dict, seed: int, outputs) -> None:
    import scipy

    text = canonical(configs)
    manifest = {
        "command": command,
        "argv": list(argv),
        "seed": seed,
        "config": json.loads(text),
        "config_hash": config_hash(text),
        "versions": {"ssdistill": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "outputs": sorted(str(p) for p in outputs),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _load_teacher(path) -> TeacherModel:
    meta, state = load_module_state(path, "teacher")
    shape = tuple(int(v) for v in meta["image_shape"].split(","))
    teacher = TeacherModel(shape, int(meta["d_y"]), int(meta["width"]), int(meta["depth"]))
    teacher.load_state_dict(state)
    return teacher.freeze()


def _load_extractor(path):
    meta, state = load_module_state(path, "extractor")
    shape = tuple(int(v) for v in meta["image_shape"].split(","))
    ext = build_extractor(meta["arch"], shape, np.random.default_rng(0),
                          width=int(meta["width"]), depth=int(meta["depth"]))
    ext.load_state_dict(state)
    return ext.requires_grad_(False)


def _write_pgm_grid(images: np.ndarray, path: Path, cols: int = 10) -> None:
    """Tile images into one portable graymap (1 channel) or pixmap (3 channels)."""
    n, c, h, w = images.shape
    rows = -(-n // cols)
    grid = np.zeros((c, rows * (h + 1) + 1, cols * (w + 1) + 1))
    lo, hi = float(images.min()), float(images.max())
    scaled = (images - lo) / (hi - lo) if hi > lo else np.zeros_like(images)
    for i in range(n):
        r, k = divmod(i, cols)
        grid[:, 1 + r * (h + 1) : 1 + r * (h + 1) + h, 1 + k * (w + 1) : 1 + k * (w + 1) + w] = scaled[i]
    pix = np.round(grid * 255).astype(np.uint8)
    if c == 1:
        header, body = b"P5", pix[0]
    elif c == 3:
        header, body = b"P6", pix.transpose(1, 2, 0)
    else:
        raise ContractError(f"preview needs 1 or 3 channels, got {c}")
    path.write_bytes(header + f"\n{pix.shape[2]} {pix.shape[1]}\n255\n".encode() + body.tobytes())


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_train_teacher(args, configs, out):
    configs = _set(configs, "teacher", epochs=args.epochs, seed=args.seed)
    cfg = configs["teacher"]
    data = load_dataset(args.dataset)
    teacher, losses = train_teacher(data.train_x, cfg)
    path = save_module(teacher, out / "teacher.ssda", "teacher", {
        "image_shape": ",".join(map(str, data.image_shape)), "d_y": cfg.d_y,
        "width": cfg.width, "depth": cfg.depth, "dataset": data.name})
    (out / "teacher_losses.tsv").write_text(
        "epoch\tloss\n" + "".join(f"{i}\t{v!r}\n" for i, v in enumerate(losses)))
    print(f"teacher saved to {path}; final epoch loss {losses[-1]:.4f}" if losses else f"teacher saved to {path}")
    return configs, [path, out / "teacher_losses.tsv"]


def cmd_distill(args, configs, out):
    configs = _set(configs, "distill", outer_iterations=args.iterations, seed=args.seed)
    configs = _set(configs, "method", N=args.N, U=args.U, V=args.V)
    mc, dcfg = configs["method"], configs["distill"]
    data = load_dataset(args.dataset)
    teacher = _load_teacher(args.teacher)
    reps = teacher.represent(data.train_x)
    m, spec = plan_budget(data.image_shape, reps.shape[1], mc)
    params = init_from_source(data.train_x, teacher.represent, mc.U, mc.V, mc.scale, m, spec,
                              seed=dcfg.seed, init=mc.init, teacher_reps=reps)
    result = run_distillation(params, data.train_x, reps, dcfg)
    meta = {"N": mc.N, "U": mc.U, "V": mc.V, "m": m, "init": mc.init, "seed": dcfg.seed,
            "d_x": data.d_x, "d_y": reps.shape[1], "outer_iterations": dcfg.outer_iterations,
            "config_hash": config_hash(canonical(configs))}
    art = artifact_from_params(params, metadata=meta)
    path = save_artifact(art, out / "artifact.ssda")
    (out / "progress.tsv").write_text("\n".join(result.log_lines) + "\n")
    (out / "outer_loss.tsv").write_text(
        "iter\touter_loss\n" + "".join(f"{i}\t{v!r}\n" for i, v in result.trace))
    print(f"distilled m={m} samples ({len(spec)} augmentations) -> {path}")
    return configs, [path, out / "progress.tsv", out / "outer_loss.tsv"]


def cmd_train_approx(args, configs, out):
    mc = configs["method"]
    art = load_artifact(args.artifact)
    blocks = art.aug_blocks()
    if blocks is None:
        raise ContractError("artifact has no stored augmentation blocks to fit")
    cy = art.cy.astype(np.float64)
    hidden = args.hidden or mc.hidden
    nets, errors = train_approx(cy, [b - cy for b in blocks], hidden=hidden,
                                steps=mc.approx_steps, lr=mc.approx_lr, seed=args.seed)
    art.nets = [n.state_dict() for n in nets]
    art.hidden = hidden
    art.__post_init__()
    path = save_artifact(art, out / "artifact.ssda")
    (out / "approx_mse.tsv").write_text(
        "augmentation\tmse\n" + "".join(f"{t}\t{e!r}\n" for t, e in zip(art.spec.tags, errors)))
    print(f"trained {len(nets)} approximation nets; mean shift MSE {np.mean(errors):.4g}")
    return configs, [path, out / "approx_mse.tsv"]


def cmd_reconstruct(args, configs, out):
    art = load_artifact(args.artifact)
    images = art.augmented_images() if args.augmented else art.images()
    raw = out / "images.bin"
    images.astype("<f4").tofile(raw)
    (out / "images.json").write_text(json.dumps(
        {"file": "images.bin", "dtype": "f32", "shape": list(images.shape)}, indent=2) + "\n")
    ext = "pgm" if images.shape[1] == 1 else "ppm"
    preview = out / f"preview.{ext}"
    _write_pgm_grid(images, preview)
    print(f"wrote {len(images)} images to {raw} and {preview}")
    return configs, [raw, out / "images.json", preview]


def cmd_pretrain(args, configs, out):
    configs = _set(configs, "pretrain", arch=args.arch, epochs=args.epochs, seed=args.seed)
    cfg = configs["pretrain"]
    art = load_artifact(args.artifact)
    ext, losses = pretrain_on_artifact(art, cfg, args.variant)
    path = save_module(ext, out / "extractor.ssda", "extractor", {
        "arch": cfg.arch, "width": cfg.width, "depth": cfg.depth,
        "image_shape": ",".join(map(str, art.image_shape))})
    (out / "pretrain_losses.tsv").write_text(
        "epoch\tloss\n" + "".join(f"{i}\t{v!r}\n" for i, v in enumerate(losses)))
    print(f"pretrained {cfg.arch} extractor on {art.m * (art.A + 1)} pairs -> {path}")
    return configs, [path, out / "pretrain_losses.tsv"]


def cmd_linear_eval(args, configs, out):
    configs = _set(configs, "linear", seed=args.seed)
    data = load_dataset(args.dataset)
    meta, _ = load_module_state(args.extractor, "extractor")
    ext = _load_extractor(args.extractor)
    acc = linear_eval(ext, data, configs["linear"])
    report = EvalReport()
    report.add(meta["arch"], data.name, args.method, args.seed, acc)
    report.write(out)
    print(f"linear-eval accuracy {acc:.4f}")
    return configs, [out / "report.tsv", out / "summary.tsv", out / "report.json"]


def cmd_ablate(args, configs, out):
    configs = _set(configs, "distill", outer_iterations=args.iterations)
    data = load_dataset(args.dataset)
    teacher = _load_teacher(args.teacher)
    reps = teacher.represent(data.train_x)
    seeds = tuple(range(args.seed, args.seed + args.num_seeds))
    axes = tuple(a.strip() for a in args.axes.split(",") if a.strip())
    suite = SuiteConfig(configs["method"], configs["distill"], configs["pretrain"],
                        configs["linear"], seeds, axes)
    report = ablation_suite(data, reps, teacher.represent, suite, progress=print)
    report.write(out)
    print(report.summary_tsv(), end="")
    return configs, [out / "report.tsv", out / "summary.tsv", out / "report.json"]


def cmd_audit(args, configs, out):
    buf = Path(args.artifact).read_bytes()
    art = deserialize(buf)
    N = args.N if args.N is not None else int(art.metadata.get("N", 0))
    d_x = int(np.prod(art.image_shape))
    ledger = audit_budget(art, N, d_x)
    recount = recount_container(buf)
    if recount != ledger.total:
        raise CorruptionError(f"ledger total {ledger.total} disagrees with container recount {recount}")
    for line in ledger.lines():
        print(line)
    return configs, []


COMMANDS = {
    "train-teacher": cmd_train_teacher,
    "distill": cmd_distill,
    "train-approx": cmd_train_approx,
    "reconstruct": cmd_reconstruct,
    "pretrain": cmd_pretrain,
    "linear-eval": cmd_linear_eval,
    "ablate": cmd_ablate,
    "audit": cmd_audit,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    common.add_argument("--config", help="key=value file, e.g. distill.outer_iterations=200")
    common.add_argument("--out", default="run", help="output directory (default ./run)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(
        prog="ssdistill", description="Self-supervised dataset distillation with bases and coefficients.",
        epilog=EXIT_CODES_HELP, formatter_class=argparse.RawDescriptionHelpFormatter,
        parents=[common])
    sub = parser.add_subparsers(dest="command", metavar="command")

    def add(name, help_text):
        return sub.add_parser(name, help=help_text, parents=[common], epilog=EXIT_CODES_HELP,
                              formatter_class=argparse.RawDescriptionHelpFormatter)

    p = add("train-teacher", "train the self-supervised teacher")
    p.add_argument("--dataset", default="digits")
    p.add_argument("--epochs", type=int)

    p = add("distill", "distill bases and coefficients (no approximation nets)")
    p.add_argument("--dataset", default="digits")
    p.add_argument("--teacher", required=True)
    p.add_argument("--iterations", type=int)
    p.add_argument("--N", type=int)
    p.add_argument("--U", type=int)
    p.add_argument("--V", type=int)

    p = add("train-approx", "fit approximation nets to an artifact's augmentation shifts")
    p.add_argument("--artifact", required=True)
    p.add_argument("--hidden", type=int)

    p = add("reconstruct", "write distilled images as raw tensors plus a preview grid")
    p.add_argument("--artifact", required=True)
    p.add_argument("--augmented", action="store_true", help="include augmented views")

    p = add("pretrain", "pretrain a feature extractor on an artifact's pairs")
    p.add_argument("--artifact", required=True)
    p.add_argument("--arch", choices=("convnet", "mlp"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--variant", default="approx", choices=("approx", "same", "bias", "ideal"))

    p = add("linear-eval", "linear evaluation of a pretrained extractor")
    p.add_argument("--extractor", required=True)
    p.add_argument("--dataset", default="digits")
    p.add_argument("--method", default="ours", help="method label for the report row")

    p = add("ablate", "run ablation axes over several seeds")
    p.add_argument("--dataset", default="digits")
    p.add_argument("--teacher", required=True)
    p.add_argument("--num-seeds", type=int, default=3)
    p.add_argument("--iterations", type=int)
    p.add_argument("--axes", default="main,components,init,shift,arch")

    p = add("audit", "print the storage-budget ledger of an artifact")
    p.add_argument("--artifact", required=True)
    p.add_argument("--N", type=int, help="budget in images (default: from artifact metadata)")
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    if not args.command:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        configs = _configs(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        configs, outputs = COMMANDS[args.command](args, configs, out)
        _write_manifest(out, args.command, argv, configs, args.seed, outputs)
        return EXIT_OK
    except BudgetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CorruptionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ContractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
