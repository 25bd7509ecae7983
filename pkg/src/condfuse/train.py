"""Deterministic training loop, evaluation, and routing diagnostics."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig
from .errors import ContractError, NumericError
from .losses import LossConfig, total_loss, weighted_ce
from .metrics import ConfusionMatrix, metrics
from .model import FusionSegmenter
from .moe import route_statistics
from .optim import AdamW, poly_lr
from .prompts import PromptGranularity, build_prompt, oracle_condition
from .synth import N_CLASSES, SyntheticScene, generate_split, load_split
from .tensor import Tape, Tensor, backward, no_grad


@dataclass
class PreparedScene:
    rgb: np.ndarray
    thermal: np.ndarray
    labels: np.ndarray
    edges: np.ndarray
    cond_vec: np.ndarray
    scene_vec: np.ndarray
    condition_index: int
    caption_text: str


def prepare_scene(scene: SyntheticScene, model: FusionSegmenter, corruption=0.0) -> PreparedScene:
    """Freeze the caption's table vectors; objects come from the label map."""
    condition = oracle_condition(scene, corruption_rate=corruption)
    present = sorted(set(scene.labels.reshape(-1).tolist()) - {0})
    if not present:
        raise ContractError("scene has no objects")
    from .prompts import TargetClass

    caption = build_prompt(condition, [TargetClass(c) for c in present])
    gran = model.granularity
    return PreparedScene(
        rgb=scene.rgb.astype(np.float32),
        thermal=scene.thermal.astype(np.float32),
        labels=scene.labels,
        edges=scene.edges,
        cond_vec=model.provider.condition_vector(caption, gran).astype(np.float32),
        scene_vec=model.provider.scene_vector(caption, gran).astype(np.float32),
        condition_index=scene.condition.value,
        caption_text=caption.text,
    )


def _batch(prepared, idx):
    return {
        "rgb": np.stack([prepared[i].rgb for i in idx]),
        "thermal": np.stack([prepared[i].thermal for i in idx]),
        "labels": np.stack([prepared[i].labels for i in idx]),
        "edges": np.stack([prepared[i].edges for i in idx])[:, None].astype(np.float32),
        "cond": np.stack([prepared[i].cond_vec for i in idx]),
        "scene": np.stack([prepared[i].scene_vec for i in idx]),
    }


def class_weights(scenes, n_classes=N_CLASSES, clamp=(0.5, 10.0)):
    """Inverse-frequency weights over the training labels, clamped."""
    counts = np.zeros(n_classes, dtype=np.int64)
    for s in scenes:
        counts += np.bincount(s.labels.reshape(-1), minlength=n_classes)
    total = counts.sum()
    freq = counts / max(total, 1)
    with np.errstate(divide="ignore"):
        w = 1.0 / (n_classes * freq)
    w[~np.isfinite(w)] = clamp[1]
    return np.clip(w, clamp[0], clamp[1])


@dataclass
class TrainResult:
    epoch_losses: list = field(default_factory=list)
    val: dict = field(default_factory=dict)
    route: dict = field(default_factory=dict)
    weights: np.ndarray = None


class TrainingDiverged(NumericError):
    pass


def train(model: FusionSegmenter, train_scenes, cfg: RunConfig, log=None) -> TrainResult:
    """Run the optimizer for cfg.epochs; bit-reproducible for a fixed seed."""
    prepared = [prepare_scene(s, model, cfg.corruption) for s in train_scenes]
    weights = class_weights(train_scenes)
    loss_cfg = LossConfig(beta=cfg.beta, gamma_focal=cfg.gamma_focal, class_weights=weights)
    params = model.parameters()
    opt = AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    order_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0x0DD)))

    n = len(prepared)
    bs = min(cfg.batch_size, n)
    steps_per_epoch = (n + bs - 1) // bs
    total_steps = cfg.epochs * steps_per_epoch
    result = TrainResult(weights=weights)
    step = 0
    for epoch in range(cfg.epochs):
        order = order_rng.permutation(n)
        epoch_loss = 0.0
        for b in range(steps_per_epoch):
            idx = order[b * bs : (b + 1) * bs]
            batch = _batch(prepared, idx)
            lr = poly_lr(cfg.lr, step, total_steps)
            with Tape():
                out = model(batch["rgb"], batch["thermal"], batch["cond"], batch["scene"])
                loss = total_loss(
                    (out["seg"], batch["labels"]), (out["edge"], batch["edges"]), loss_cfg
                )
                value = loss.item()
                if not np.isfinite(value):
                    _dump_divergence(cfg, epoch, step, value, params)
                    raise TrainingDiverged(f"loss became {value} at step {step}")
                model.zero_grad()
                backward(loss)
            opt.step(lr=lr)
            epoch_loss += value * len(idx)
            step += 1
        result.epoch_losses.append(epoch_loss / n)
        if log:
            log(epoch, result.epoch_losses[-1])
    return result


def _dump_divergence(cfg, epoch, step, value, params):
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    state = {
        "epoch": epoch,
        "step": step,
        "loss": value,
        "param_norms": {k: float(np.linalg.norm(p.data)) for k, p in params.items()},
    }
    (out / "divergence.json").write_text(json.dumps(state, indent=2))


def evaluate(model: FusionSegmenter, scenes, cfg: RunConfig, batch_size=32):
    """Confusion-matrix metrics plus per-condition routing frequencies."""
    prepared = [prepare_scene(s, model, 0.0) for s in scenes]
    cm = ConfusionMatrix(N_CLASSES)
    freq_by_condition = {}
    count_by_condition = {}
    overall = None
    n_batches = 0
    for start in range(0, len(prepared), batch_size):
        idx = list(range(start, min(start + batch_size, len(prepared))))
        batch = _batch(prepared, idx)
        pred, out = model.predict(batch["rgb"], batch["thermal"], batch["cond"], batch["scene"])
        cm.add(batch["labels"], pred)
        if out["scores"][0] is not None:
            for j, i in enumerate(idx):
                per_scene = np.concatenate(
                    [
                        route_statistics(s.data[j], model.cfg.topk)[None]
                        for s in out["scores"]
                    ],
                    axis=0,
                ).mean(axis=0)
                cidx = prepared[i].condition_index
                freq_by_condition[cidx] = freq_by_condition.get(cidx, 0.0) + per_scene
                count_by_condition[cidx] = count_by_condition.get(cidx, 0) + 1
                overall = per_scene if overall is None else overall + per_scene
        n_batches += 1
    acc, iou, m_acc, m_iou = metrics(cm)
    if not cfg.include_background:
        m_acc = float(np.nanmean(acc[1:]))
        m_iou = float(np.nanmean(iou[1:]))
    route = {}
    if overall is not None:
        route["overall"] = overall / len(prepared)
        for cidx, total in sorted(freq_by_condition.items()):
            route[f"condition_{cidx}"] = total / count_by_condition[cidx]
    return {
        "confusion": cm,
        "acc": acc,
        "iou": iou,
        "m_acc": m_acc,
        "m_iou": m_iou,
        "route": route,
    }


def routing_tv_distance(freq_a, freq_b, k):
    """Total-variation distance between two routing frequency vectors."""
    return 0.5 * float(np.abs(freq_a / k - freq_b / k).sum())


def run_training(cfg: RunConfig, log=None):
    """Build data + model from a config, train, evaluate; returns everything."""
    cfg.validate()
    if cfg.dataset == "synth":
        data_seed = cfg.resolved_data_seed()
        train_scenes = generate_split(data_seed, cfg.train_scenes, cfg.size)
        val_scenes = generate_split(data_seed + 1, cfg.val_scenes, cfg.size)
    else:
        root = Path(cfg.dataset)
        if not root.exists():
            raise ContractError(f"dataset path {root} does not exist")
        train_scenes = load_split(root / "train")
        val_scenes = load_split(root / "val")
    model = FusionSegmenter(cfg)
    result = train(model, train_scenes, cfg, log=log)
    result.val = evaluate(model, val_scenes, cfg)
    result.route = result.val["route"]
    return model, result
