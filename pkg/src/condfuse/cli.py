"""Batch front-end: train, eval, ablate, gradcheck, synth.

Exit codes: 0 ok, 1 check failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import imageops
from .ablate import SUITES, run_suite, suite_csv, suite_report
from .config import RunConfig, config_text, load_config
from .errors import CondfuseError, ConfigError
from .fileio import read_tensor, write_tensor
from .gradsuite import THRESHOLD, run_suite as run_gradsuite
from .metrics import ConfusionMatrix  # noqa: F401  (re-export for scripts)
from .prompts import SceneCondition
from .report import report_text, write_report
from .synth import save_split, synth_generate
from .train import evaluate, run_training


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    overrides = {}
    for key in (
        "gating",
        "router",
        "granularity",
        "seed",
        "epochs",
        "dataset",
        "out_dir",
    ):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "experts", None) is not None:
        overrides["n_experts"] = args.experts
    if getattr(args, "topk", None) is not None:
        overrides["topk"] = args.topk
    if getattr(args, "calibrator", None) is not None:
        overrides["calibrator"] = args.calibrator == "on"
    return replace(cfg, **overrides).validate()


def _load_cfg(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    return _apply_overrides(cfg, args)


def cmd_train(args):
    cfg = _load_cfg(args)
    if cfg.dataset != "synth" and not Path(cfg.dataset).exists():
        raise ConfigError(f"dataset path {cfg.dataset!r} does not exist", key="dataset")
    start = time.time()
    model, result = run_training(cfg)
    out = write_report(cfg.out_dir, cfg, result, wall_clock=time.time() - start)
    params_dir = out / "params"
    for name, p in model.parameters().items():
        write_tensor(params_dir / f"{name}.cltf", p.data)
    print(report_text(cfg, result, wall_clock=time.time() - start))
    print(f"report written to {out}")
    return 0


def cmd_eval(args):
    run_dir = Path(args.run)
    cfg = load_config(run_dir / "config.echo")
    if args.dataset:
        cfg = replace(cfg, dataset=args.dataset)
    from .model import FusionSegmenter
    from .synth import generate_split, load_split

    model = FusionSegmenter(cfg)
    params = model.parameters()
    for name, p in params.items():
        p.data = read_tensor(run_dir / "params" / f"{name}.cltf")
    if cfg.dataset == "synth":
        scenes = generate_split(cfg.resolved_data_seed() + 1, cfg.val_scenes, cfg.size)
    else:
        scenes = load_split(Path(cfg.dataset) / "val")
    val = evaluate(model, scenes, cfg)
    print(f"mAcc {val['m_acc']:.4f}  mIoU {val['m_iou']:.4f}")
    for i, (a, i_) in enumerate(zip(val["acc"], val["iou"])):
        print(f"  class {i}: acc {a:.4f} iou {i_:.4f}")
    return 0


def cmd_ablate(args):
    base = _load_cfg(args)
    outcome = run_suite(args.suite, base, n_seeds=args.seeds, jobs=args.jobs)
    text = suite_report(outcome)
    print(text)
    out = Path(args.out_dir or base.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"ablate_{args.suite}.txt").write_text(text)
    (out / f"ablate_{args.suite}.csv").write_text(suite_csv(outcome))
    for name, cfg in outcome["rows"]:
        (out / f"row_{name}.config").write_text(config_text(cfg))
    return 0


def cmd_gradcheck(args):
    if args.corrupt_op:
        imageops.BACKWARD_SCALE[args.corrupt_op] = 1.01
    try:
        results = run_gradsuite()
    finally:
        imageops.BACKWARD_SCALE.clear()
    width = max(len(name) for name, _, _ in results)
    failed = []
    for name, err, ok in results:
        print(f"{name:<{width}}  {err:12.3e}  {'PASS' if ok else 'FAIL'}")
        if not ok:
            failed.append(name)
    print(f"{len(results)} blocks checked, threshold {THRESHOLD:g}")
    if failed:
        print("FAILED: " + ", ".join(failed))
        return 1
    return 0


def cmd_synth(args):
    out = Path(args.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        print(f"error: cannot write to {out}: {exc}", file=sys.stderr)
        return 2
    conditions = list(SceneCondition)
    scenes = [
        synth_generate(
            np.random.SeedSequence((args.seed, i)).generate_state(1)[0],
            conditions[i % len(conditions)],
            args.size,
        )
        for i in range(args.count)
    ]
    save_split(out, scenes)
    print(f"wrote {len(scenes)} scenes to {out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="condfuse")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--gating", choices=["none", "hard", "soft"])
        p.add_argument("--router", choices=["condition", "random"])
        p.add_argument("--granularity", choices=["none", "binary", "ternary", "five"])
        p.add_argument("--experts", type=int)
        p.add_argument("--topk", type=int)
        p.add_argument("--calibrator", choices=["on", "off"])
        p.add_argument("--seed", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--dataset")
        p.add_argument("--out-dir", dest="out_dir")

    p_train = sub.add_parser("train", help="train one run and write its report")
    common(p_train)
    p_train.set_defaults(fn=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a finished run directory")
    p_eval.add_argument("--run", required=True)
    p_eval.add_argument("--dataset")
    p_eval.set_defaults(fn=cmd_eval)

    p_abl = sub.add_parser("ablate", help="run a comparative suite")
    p_abl.add_argument("--suite", choices=list(SUITES), required=True)
    p_abl.add_argument("--seeds", type=int, default=3)
    p_abl.add_argument("--jobs", type=int, default=1)
    common(p_abl)
    p_abl.set_defaults(fn=cmd_ablate)

    p_gc = sub.add_parser("gradcheck", help="gradient-check every block (64-bit)")
    p_gc.add_argument("--corrupt-op", help="test fixture: corrupt one op's backward")
    p_gc.set_defaults(fn=cmd_gradcheck)

    p_sy = sub.add_parser("synth", help="emit a synthetic dataset split")
    p_sy.add_argument("--count", type=int, required=True)
    p_sy.add_argument("--size", type=int, default=32)
    p_sy.add_argument("--out-dir", dest="out_dir", required=True)
    p_sy.add_argument("--seed", type=int, default=0)
    p_sy.set_defaults(fn=cmd_synth)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        key = f" (key: {exc.key})" if exc.key else ""
        print(f"config error: {exc}{key}", file=sys.stderr)
        return 2
    except CondfuseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
