"""Command-line entry point.

Subcommands:
  gen       write a synthetic dataset to disk
  train     train a model and save checkpoint + training log
  eval      score a checkpoint; writes metrics.csv/.jsonl and predicted masks
  ablate    run the toggle/fusion ablation matrix
  gradcheck finite-difference audit of the core differentiable pieces

Exit codes: 0 success, 2 configuration error, 3 numeric failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from . import tensor as T
from .config import ExperimentSpec, load_spec
from .data import gen_synthetic, save_samples
from .errors import ConfigError, NumericError
from .train import ablation_matrix, evaluate, train


def _apply_overrides(spec: ExperimentSpec, args) -> ExperimentSpec:
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.size is not None:
        changes["image_size"] = args.size
    if getattr(args, "epochs", None) is not None:
        changes["epochs"] = args.epochs
    if getattr(args, "fusion", None) is not None:
        changes["fusion"] = args.fusion
    if args.out is not None:
        changes["out_dir"] = args.out
    if getattr(args, "lr", None) is not None:
        changes["optimizer"] = dataclasses.replace(spec.optimizer, lr=args.lr)
    toggles = {}
    for name in ("convnext", "dbfeb", "lfsa"):
        v = getattr(args, f"toggle_{name}", None)
        if v is not None:
            toggles[name] = v
    if toggles:
        changes["toggles"] = dataclasses.replace(spec.toggles, **toggles)
    return dataclasses.replace(spec, **changes) if changes else spec


def _load_base_spec(args) -> ExperimentSpec:
    spec = load_spec(args.config) if args.config else ExperimentSpec()
    return _apply_overrides(spec, args)


def _add_common(p: argparse.ArgumentParser, training: bool = False):
    p.add_argument("--config", help="INI experiment file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--size", type=int, default=None, help="square image size")
    p.add_argument("--out", default=None, help="output directory")
    if training:
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--lr", type=float, default=None)
        p.add_argument("--fusion", choices=("fnf", "uf", "sf"), default=None)
        for name in ("convnext", "dbfeb", "lfsa"):
            p.add_argument(f"--toggle-{name}", dest=f"toggle_{name}",
                           action=argparse.BooleanOptionalAction, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polypseg")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    _add_common(p)
    p.add_argument("--n", type=int, default=8, help="number of samples")

    p = sub.add_parser("train", help="train a model")
    _add_common(p, training=True)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_common(p, training=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-dir", default=None, help="images/ + masks/ directory")

    p = sub.add_parser("ablate", help="run the ablation matrix")
    _add_common(p, training=True)

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    _add_common(p)
    p.add_argument("--tol", type=float, default=1e-4)
    return parser


def cmd_gen(args) -> int:
    spec = _load_base_spec(args)
    out = args.out or "dataset"
    samples = gen_synthetic(args.n, spec.image_size, spec.seed)
    save_samples(samples, out)
    print(f"wrote {len(samples)} samples to {out}")
    return 0


def cmd_train(args) -> int:
    spec = _load_base_spec(args)
    res = train(spec)
    print(f"trained {spec.epochs} epochs: train_dice={res.train_dice:.4f} "
          f"val_dice={res.val_dice:.4f} -> {spec.out_dir}")
    return 0


def cmd_eval(args) -> int:
    spec = _load_base_spec(args)
    if args.data_dir:
        spec = dataclasses.replace(
            spec, data=dataclasses.replace(spec.data, kind="directory",
                                           directory=args.data_dir))
    out = args.out or spec.out_dir
    agg = evaluate(spec, args.checkpoint, out)
    print(f"dice={agg.dice:.4f} iou={agg.iou:.4f} mae={agg.mae:.4f} "
          f"boundary_f={agg.boundary_f:.4f} s_measure={agg.s_measure:.4f}")
    return 0


def cmd_ablate(args) -> int:
    spec = _load_base_spec(args)
    out = args.out or spec.out_dir
    rows = ablation_matrix(spec, out)
    for r in rows:
        print(f"{r['row']:>10}  fusion={r['fusion']}  params={r['params']:>8}  "
              f"train_dice={r['train_dice']:.4f}  val_dice={r['val_dice']:.4f}")
    return 0


def cmd_gradcheck(args) -> int:
    spec = _load_base_spec(args)
    rng = np.random.default_rng(spec.seed)
    from .dbfeb import DualGraphBlock
    from .fusion import FusionHead
    from .layers import Conv2d
    from .lfsa import LocationFusedAttention

    checks = []
    conv = Conv2d(2, 3, 3, pad=1, rng=rng)
    x = T.Tensor(rng.normal(size=(2, 5, 5)), requires_grad=True)
    checks.append(("conv2d", T.grad_check(
        lambda w, b: T.tsum(T.conv2d(x, w, pad=1)), [conv.weight, conv.bias],
        tol=args.tol)))
    att = LocationFusedAttention(3, 3, window=1, rng=rng)
    qs = T.Tensor(rng.normal(size=(3, 4, 4)))
    ks = T.Tensor(rng.normal(size=(3, 4, 4)))
    checks.append(("windowed_attention", T.grad_check(
        lambda *_: T.tsum(att(qs, ks)), list(att.parameters().values()),
        tol=args.tol, max_coords=6, seed=spec.seed)))
    block = DualGraphBlock(3, rng=rng)
    a = T.Tensor(rng.normal(size=(3, 3, 3)))
    checks.append(("dual_graph_block", T.grad_check(
        lambda *_: T.tsum(block(a)), list(block.parameters().values()),
        tol=args.tol, max_coords=4, seed=spec.seed)))
    head = FusionHead("fnf")
    maps = [T.Tensor(rng.normal(size=(2, 3, 3))) for _ in range(3)]
    checks.append(("fusion_head", T.grad_check(
        lambda *_: T.tsum(head(*maps)), [head.weights], tol=args.tol)))

    ok = True
    for name, rep in checks:
        status = "PASS" if rep.passed else "FAIL"
        print(f"{status} {name}: max_rel_err={rep.max_rel_err:.3e} (tol {args.tol:g})")
        ok &= rep.passed
    if not ok:
        raise NumericError("gradient check failed")
    return 0


_COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval,
             "ablate": cmd_ablate, "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
