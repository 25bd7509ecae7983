"""Procedural RGB-thermal scene generator and the on-disk dataset layout.

Scene content (geometry, colors, thermal signatures) is drawn from a layout
stream keyed by the seed alone, so the same seed renders the same scene under
every illumination condition; degradations draw from a separate stream keyed
by (seed, condition). RGB degradations: darkness dims and adds noise, glare
saturates a large region and adds thermal shimmer, overcast flattens
contrast, twilight dims mildly. Thermal content is untouched by darkness.

Class design notes: cones and bumps share shape and near-identical thermal
signatures, so color is what separates them; guardrails are 2 px cold bars;
cars and persons run warm. Object coordinates snap to even pixels so a
half-resolution decoder can represent their boundaries exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, ParameterError
from .fileio import read_tensor, write_tensor
from .prompts import CONDITION_FROM_SURFACE, SceneCondition, TargetClass

N_CLASSES = 9  # background + 8 target classes


@dataclass
class SyntheticScene:
    rgb: np.ndarray  # [3,H,W] float32 in [0,1]
    thermal: np.ndarray  # [1,H,W] float32 in [0,1]
    labels: np.ndarray  # [H,W] int64 in 0..8
    edges: np.ndarray  # [H,W] uint8
    condition: SceneCondition
    seed: int


def derive_edges(labels):
    """A pixel is an edge iff any in-bounds 4-neighbor has another label."""
    lab = np.asarray(labels)
    edge = np.zeros(lab.shape, dtype=np.uint8)
    edge[:-1, :] |= lab[:-1, :] != lab[1:, :]
    edge[1:, :] |= lab[1:, :] != lab[:-1, :]
    edge[:, :-1] |= lab[:, :-1] != lab[:, 1:]
    edge[:, 1:] |= lab[:, 1:] != lab[:, :-1]
    return edge


# per-class (rgb color, thermal value); colors get a small per-instance jitter
_PALETTE = {
    TargetClass.CAR: ((0.72, 0.16, 0.16), 0.82),
    TargetClass.PERSON: ((0.30, 0.30, 0.62), 0.92),
    TargetClass.BIKE: ((0.16, 0.58, 0.26), 0.68),
    TargetClass.CURVE: ((0.86, 0.86, 0.80), 0.46),
    TargetClass.CAR_STOP: ((0.58, 0.32, 0.10), 0.56),
    TargetClass.GUARDRAIL: ((0.76, 0.78, 0.82), 0.14),
    TargetClass.COLOR_CONE: ((0.96, 0.46, 0.08), 0.40),
    TargetClass.BUMP: ((0.52, 0.58, 0.12), 0.47),
}


def _even(rng, lo, hi):
    return int(rng.integers(lo // 2, hi // 2 + 1)) * 2


def _paint_rect(scene, cls, color, temp, x0, y0, w, h):
    rgb, th, lab = scene
    x1, y1 = min(x0 + w, lab.shape[1]), min(y0 + h, lab.shape[0])
    lab[y0:y1, x0:x1] = cls.value
    for ch in range(3):
        rgb[ch, y0:y1, x0:x1] = color[ch]
    th[0, y0:y1, x0:x1] = temp


def _paint_disc(scene, cls, color, temp, cx, cy, r):
    rgb, th, lab = scene
    hh, ww = lab.shape
    yy, xx = np.ogrid[:hh, :ww]
    mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    lab[mask] = cls.value
    for ch in range(3):
        rgb[ch][mask] = color[ch]
    th[0][mask] = temp


def _place_object(scene, cls, rng, size):
    base_color, temp = _PALETTE[cls]
    color = np.clip(np.asarray(base_color) + rng.uniform(-0.05, 0.05, 3), 0.0, 1.0)
    temp = float(np.clip(temp + rng.uniform(-0.02, 0.02), 0.0, 1.0))
    if cls in (TargetClass.GUARDRAIL, TargetClass.CURVE):
        w = _even(rng, 12, min(20, size - 4))
        x0 = _even(rng, 0, size - w)
        y0 = _even(rng, size // 2 if cls == TargetClass.CURVE else 2, size - 4)
        _paint_rect(scene, cls, color, temp, x0, y0, w, 2)
    elif cls in (TargetClass.COLOR_CONE, TargetClass.BUMP):
        r = int(rng.integers(2, 4))
        cx = _even(rng, r + 2, size - r - 2)
        cy = _even(rng, r + 2, size - r - 2)
        _paint_disc(scene, cls, color, temp, cx, cy, r)
    else:
        dims = {
            TargetClass.CAR: (range(8, 13), range(4, 7)),
            TargetClass.PERSON: (range(2, 4), range(6, 9)),
            TargetClass.BIKE: (range(4, 7), range(4, 5)),
            TargetClass.CAR_STOP: (range(6, 9), range(4, 5)),
        }[cls]
        w = _even(rng, min(dims[0]), max(dims[0]))
        h = _even(rng, min(dims[1]), max(dims[1]))
        x0 = _even(rng, 0, size - w)
        y0 = _even(rng, 0, size - h)
        _paint_rect(scene, cls, color, temp, x0, y0, w, h)


def _degrade(rgb, thermal, condition, rng):
    """Opposed trust profiles: darkness destroys RGB and leaves thermal
    pristine; glare saturates an RGB blob and shimmers the whole thermal
    channel, so these two conditions want opposite modality weighting."""
    if condition == SceneCondition.WELL_LIT:
        return rgb, thermal
    if condition == SceneCondition.OVERCAST:
        rgb = 0.55 * rgb + 0.25 + rng.normal(0.0, 0.02, rgb.shape)
    elif condition == SceneCondition.TWILIGHT:
        # uneven dusk: a linear ramp leaves one side of the frame usable and
        # drives the other toward noise, so trust varies across the image
        h, w = rgb.shape[1], rgb.shape[2]
        ramp = np.linspace(0.08, 0.45, w)
        if rng.uniform() < 0.5:
            ramp = ramp[::-1]
        field = ramp[None, :, None] if rng.uniform() < 0.5 else ramp[None, None, :]
        rgb = field * rgb + rng.normal(0.0, 0.06, rgb.shape)
    elif condition == SceneCondition.TOTAL_DARKNESS:
        rgb = 0.05 * rgb + rng.normal(0.0, 0.10, rgb.shape)
    elif condition == SceneCondition.GLARE:
        h, w = rgb.shape[1], rgb.shape[2]
        cy = rng.uniform(0.30, 0.70) * h
        cx = rng.uniform(0.30, 0.70) * w
        ry, rx = 0.22 * h, 0.22 * w
        yy, xx = np.ogrid[:h, :w]
        blob = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        rgb = rgb + rng.normal(0.0, 0.02, rgb.shape)
        rgb[:, blob] = 0.98 + 0.02 * rng.uniform(size=(3, int(blob.sum())))
        thermal = thermal + rng.normal(0.0, 0.15, thermal.shape)
    return np.clip(rgb, 0.0, 1.0), np.clip(thermal, 0.0, 1.0)


def synth_generate(seed, condition: SceneCondition, size=32) -> SyntheticScene:
    """Render one scene, fully determined by (seed, condition, size)."""
    if size not in (32, 64):
        raise ParameterError(f"size must be 32 or 64, got {size}")
    layout = np.random.default_rng(np.random.SeedSequence((int(seed), 0xA11)))
    rgb = np.full((3, size, size), layout.uniform(0.40, 0.55))
    thermal = 0.30 + 0.05 * np.linspace(0, 1, size)[None, :, None] + layout.normal(
        0.0, 0.02, (1, size, size)
    )
    labels = np.zeros((size, size), dtype=np.int64)
    n_objects = int(layout.integers(1, 5))
    classes = [TargetClass(int(layout.integers(1, 9))) for _ in range(n_objects)]
    scene = (rgb, thermal, labels)
    for cls in classes:
        _place_object(scene, cls, layout, size)
    rgb += layout.normal(0.0, 0.015, (1, size, size))
    rgb = np.clip(rgb, 0.0, 1.0)
    thermal = np.clip(thermal, 0.0, 1.0)

    degrade = np.random.default_rng(np.random.SeedSequence((int(seed), 0xDE6, condition.value)))
    rgb, thermal = _degrade(rgb, thermal, condition, degrade)
    return SyntheticScene(
        rgb=rgb.astype(np.float32),
        thermal=thermal.astype(np.float32),
        labels=labels,
        edges=derive_edges(labels),
        condition=condition,
        seed=int(seed),
    )


def generate_split(data_seed, count, size=32):
    """Scenes stratified over the five conditions (count need not divide 5)."""
    conditions = list(SceneCondition)
    return [
        synth_generate(np.random.SeedSequence((int(data_seed), i)).generate_state(1)[0],
                       conditions[i % len(conditions)], size)
        for i in range(count)
    ]


# --- disk layout: <split>/scene_XXXXX/{rgb,thermal,labels}.cltf + condition.txt


def save_scene(directory, scene: SyntheticScene):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_tensor(d / "rgb.cltf", scene.rgb)
    write_tensor(d / "thermal.cltf", scene.thermal)
    write_tensor(d / "labels.cltf", scene.labels.astype(np.float32))
    (d / "condition.txt").write_text(scene.condition.surface + "\n")


def load_scene(directory) -> SyntheticScene:
    d = Path(directory)
    rgb = read_tensor(d / "rgb.cltf")
    thermal = read_tensor(d / "thermal.cltf")
    labels = read_tensor(d / "labels.cltf").astype(np.int64)
    surface = (d / "condition.txt").read_text().strip()
    if surface not in CONDITION_FROM_SURFACE:
        raise ContractError(f"{d}: unknown condition {surface!r}")
    return SyntheticScene(
        rgb=rgb,
        thermal=thermal,
        labels=labels,
        edges=derive_edges(labels),
        condition=CONDITION_FROM_SURFACE[surface],
        seed=0,
    )


def save_split(directory, scenes):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for i, scene in enumerate(scenes):
        save_scene(d / f"scene_{i:05d}", scene)


def load_split(directory):
    d = Path(directory)
    dirs = sorted(p for p in d.iterdir() if p.is_dir())
    if not dirs:
        raise ContractError(f"no scenes under {d}")
    scenes = []
    for i, p in enumerate(dirs):
        scene = load_scene(p)
        scene.seed = i
        scenes.append(scene)
    return scenes
