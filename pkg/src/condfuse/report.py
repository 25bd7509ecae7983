"""Run reports: a human table shaped like the usual per-class Acc/IoU grid,
a deterministic CSV, and a re-runnable config echo."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .config import RunConfig, config_text
from .prompts import TargetClass

CLASS_NAMES = ["Background"] + [t.surface for t in TargetClass]


def _fmt(x):
    return "nan" if x is None or (isinstance(x, float) and not np.isfinite(x)) else format(x, ".8g")


def report_csv(cfg: RunConfig, result) -> str:
    """Deterministic CSV: config, per-epoch losses, final metrics, routing."""
    lines = ["kind,key,value"]
    for line in config_text(cfg).strip().splitlines():
        key, value = (p.strip() for p in line.split("=", 1))
        lines.append(f"config,{key},{value}")
    for epoch, loss in enumerate(result.epoch_losses):
        lines.append(f"epoch_loss,{epoch},{_fmt(loss)}")
    val = result.val
    for i, name in enumerate(CLASS_NAMES):
        lines.append(f"acc,{name},{_fmt(float(val['acc'][i]))}")
        lines.append(f"iou,{name},{_fmt(float(val['iou'][i]))}")
    lines.append(f"summary,mAcc,{_fmt(val['m_acc'])}")
    lines.append(f"summary,mIoU,{_fmt(val['m_iou'])}")
    for key, freq in sorted(result.route.items()):
        for e, f in enumerate(freq):
            lines.append(f"route,{key}.expert_{e},{_fmt(float(f))}")
    return "\n".join(lines) + "\n"


def report_text(cfg: RunConfig, result, wall_clock=None) -> str:
    val = result.val
    rows = []
    header = f"{'Class':<12}{'Acc':>8}{'IoU':>8}"
    rows.append(header)
    rows.append("-" * len(header))
    for i, name in enumerate(CLASS_NAMES):
        acc = val["acc"][i]
        iou = val["iou"][i]
        rows.append(
            f"{name:<12}{'--' if np.isnan(acc) else format(acc, '.3f'):>8}"
            f"{'--' if np.isnan(iou) else format(iou, '.3f'):>8}"
        )
    rows.append("-" * len(header))
    rows.append(f"{'mAcc':<12}{val['m_acc']:>8.3f}")
    rows.append(f"{'mIoU':<12}{val['m_iou']:>8.3f}")
    rows.append("")
    if result.route:
        rows.append("routing frequency (per expert, sums to topk):")
        for key, freq in sorted(result.route.items()):
            rows.append(f"  {key}: " + " ".join(format(float(f), ".3f") for f in freq))
        rows.append("")
    rows.append("per-epoch loss:")
    rows.append("  " + " ".join(format(l, ".4f") for l in result.epoch_losses))
    rows.append("")
    if wall_clock is not None:
        rows.append(f"wall-clock seconds: {wall_clock:.1f}")
    rows.append("config:")
    for line in config_text(cfg).strip().splitlines():
        rows.append("  " + line)
    return "\n".join(rows) + "\n"


def write_report(out_dir, cfg: RunConfig, result, wall_clock=None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(report_csv(cfg, result))
    (out / "report.txt").write_text(report_text(cfg, result, wall_clock))
    (out / "config.echo").write_text(config_text(cfg))
    return out
