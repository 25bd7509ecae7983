"""Comparative suites: component stack-up, attention gating, prompt granularity.

Each suite is a list of rows where consecutive configs differ in exactly one
key. Every row runs over several seeds (spec'd scheme: base + row*1000 +
replicate) against a shared per-replicate dataset so comparisons are paired.
"""

from __future__ import annotations

import multiprocessing as mp
from dataclasses import asdict, replace

import numpy as np

from .config import RunConfig, config_diff
from .errors import ContractError
from .train import run_training

SUITES = ("components", "gating", "prompts")


def suite_rows(suite, base: RunConfig):
    """Row (name, config) pairs; consecutive rows differ by one key."""
    if suite == "components":
        r0 = replace(base, fusion="static", router="random", scene_inject=False, gating="none")
        r1 = replace(r0, fusion="moe")
        r2 = replace(r1, router="condition")
        r3 = replace(r2, scene_inject=True)
        r4 = replace(r3, gating="soft")
        rows = [
            ("baseline_static", r0),
            ("sparse_experts_random_router", r1),
            ("condition_gated_router", r2),
            ("scene_embedding", r3),
            ("soft_gated_attention", r4),
        ]
    elif suite == "gating":
        rows = [
            ("no_prior", replace(base, gating="none")),
            ("hard_cut", replace(base, gating="hard")),
            ("soft_tanh", replace(base, gating="soft")),
        ]
    elif suite == "prompts":
        rows = [
            ("no_prompt", replace(base, granularity="none")),
            ("binary_day_night", replace(base, granularity="binary")),
            ("ternary", replace(base, granularity="ternary")),
            ("five_way", replace(base, granularity="five")),
        ]
    else:
        raise ContractError(f"unknown suite {suite!r}; choose from {SUITES}")
    for i in range(1, len(rows)):
        diff = config_diff(rows[i - 1][1], rows[i][1])
        assert len(diff) == 1, f"rows {i-1}->{i} differ in {diff}"
    return rows


def _run_one(args):
    name, cfg = args
    _, result = run_training(cfg)
    return name, cfg.seed, result.val["m_iou"], result.val["iou"], result.route


def run_suite(suite, base: RunConfig, n_seeds=3, jobs=1):
    """Train every row x replicate; returns per-row mIoU stats and details."""
    rows = suite_rows(suite, base)
    tasks = []
    for row_index, (name, cfg) in enumerate(rows):
        for rep in range(n_seeds):
            run_cfg = replace(
                cfg,
                seed=base.seed + row_index * 1000 + rep,
                data_seed=base.seed + 7000 + rep,  # paired datasets across rows
            )
            tasks.append((name, run_cfg))
    if jobs > 1:
        with mp.get_context("spawn").Pool(jobs) as pool:
            outputs = pool.map(_run_one, tasks)
    else:
        outputs = [_run_one(t) for t in tasks]

    by_row = {name: [] for name, _ in rows}
    details = {}
    for name, seed, miou, iou, route in outputs:
        by_row[name].append(miou)
        details[(name, seed)] = {"m_iou": miou, "iou": iou, "route": route}
    stats = []
    baseline_mean = None
    for name, _ in rows:
        vals = np.asarray(by_row[name])
        mean, std = float(vals.mean()), float(vals.std(ddof=0))
        if baseline_mean is None:
            baseline_mean = mean
        stats.append({"row": name, "mean": mean, "stdev": std, "delta": mean - baseline_mean})
    return {"suite": suite, "rows": rows, "stats": stats, "details": details}


def suite_report(outcome) -> str:
    lines = [f"suite: {outcome['suite']}", ""]
    lines.append(f"{'row':<32}{'mIoU mean':>12}{'stdev':>10}{'delta':>10}")
    lines.append("-" * 64)
    for s in outcome["stats"]:
        lines.append(
            f"{s['row']:<32}{s['mean']:>12.4f}{s['stdev']:>10.4f}{s['delta']:>+10.4f}"
        )
    return "\n".join(lines) + "\n"


def suite_csv(outcome) -> str:
    lines = ["row,mean_miou,stdev,delta"]
    for s in outcome["stats"]:
        lines.append(
            f"{s['row']},{s['mean']:.8g},{s['stdev']:.8g},{s['delta']:.8g}"
        )
    return "\n".join(lines) + "\n"
