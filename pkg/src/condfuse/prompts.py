"""Scene captions and their embeddings.

A constrained caption ("A <condition> driving scene containing <objects>") is
rendered from closed vocabularies, then mapped to a condition embedding and a
holistic scene embedding. The text encoder is a deterministic seeded table of
unit vectors plus two small trainable perceptrons; the table is frozen, so no
gradient ever reaches it.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ContractError
from .layers import Linear, Module
from .tensor import Tensor, tanh


class SceneCondition(Enum):
    GLARE = 0
    WELL_LIT = 1
    OVERCAST = 2
    TWILIGHT = 3
    TOTAL_DARKNESS = 4

    @property
    def surface(self):
        return _CONDITION_SURFACE[self]


_CONDITION_SURFACE = {
    SceneCondition.GLARE: "Glare",
    SceneCondition.WELL_LIT: "Well-lit",
    SceneCondition.OVERCAST: "Overcast",
    SceneCondition.TWILIGHT: "Twilight",
    SceneCondition.TOTAL_DARKNESS: "Total Darkness",
}

CONDITION_FROM_SURFACE = {v: k for k, v in _CONDITION_SURFACE.items()}


class TargetClass(Enum):
    CAR = 1
    PERSON = 2
    BIKE = 3
    CURVE = 4
    CAR_STOP = 5
    GUARDRAIL = 6
    COLOR_CONE = 7
    BUMP = 8

    @property
    def surface(self):
        return _TARGET_SURFACE[self]


_TARGET_SURFACE = {
    TargetClass.CAR: "Car",
    TargetClass.PERSON: "Person",
    TargetClass.BIKE: "Bike",
    TargetClass.CURVE: "Curve",
    TargetClass.CAR_STOP: "Car Stop",
    TargetClass.GUARDRAIL: "Guardrail",
    TargetClass.COLOR_CONE: "Color Cone",
    TargetClass.BUMP: "Bump",
}


class PromptGranularity(Enum):
    """How finely the caption's condition phrase distinguishes illumination."""

    NONE = "none"
    BINARY = "binary"
    TERNARY = "ternary"
    FIVE = "five"


_BINARY_MAP = {
    SceneCondition.WELL_LIT: "Day",
    SceneCondition.OVERCAST: "Day",
    SceneCondition.GLARE: "Night",
    SceneCondition.TWILIGHT: "Night",
    SceneCondition.TOTAL_DARKNESS: "Night",
}

_TERNARY_MAP = {
    SceneCondition.WELL_LIT: "Day",
    SceneCondition.OVERCAST: "Overcast",
    SceneCondition.GLARE: "Night",
    SceneCondition.TWILIGHT: "Night",
    SceneCondition.TOTAL_DARKNESS: "Night",
}


def condition_token(condition: SceneCondition, granularity: PromptGranularity):
    """Vocabulary token used for the condition under a given granularity."""
    if granularity == PromptGranularity.FIVE:
        return condition.surface
    if granularity == PromptGranularity.BINARY:
        return _BINARY_MAP[condition]
    if granularity == PromptGranularity.TERNARY:
        return _TERNARY_MAP[condition]
    return None


@dataclass(frozen=True)
class Caption:
    condition: SceneCondition
    objects: tuple
    text: str

    @property
    def condition_phrase(self):
        return f"A {self.condition.surface} driving scene"


def build_prompt(condition: SceneCondition, objects) -> Caption:
    """Render the constrained caption; objects are listed in class order."""
    objs = list(objects)
    if not objs:
        raise ContractError("caption needs at least one object")
    if len(set(objs)) != len(objs):
        raise ContractError("caption object list contains duplicates")
    objs = tuple(sorted(objs, key=lambda t: t.value))
    names = [o.surface for o in objs]
    if len(names) == 1:
        listed = names[0]
    else:
        listed = ", ".join(names[:-1]) + " and " + names[-1]
    text = f"A {condition.surface} driving scene containing {listed}"
    return Caption(condition=condition, objects=objs, text=text)


class EmbeddingProvider(Module):
    """Frozen token table (seeded unit vectors) + two trainable 2-layer MLPs.

    Condition-token vectors are rejection-resampled until every pair has
    cosine similarity below `max_cosine`. Vectors never receive gradients.
    """

    def __init__(self, rng, text_dim=64, embed_dim=32, max_cosine=0.5):
        self.text_dim = text_dim
        self.embed_dim = embed_dim
        tokens = (
            [c.surface for c in SceneCondition]
            + ["Day", "Night"]
            + [t.surface for t in TargetClass]
        )
        self.table = {}
        vecs = []
        for tok in tokens:
            for _ in range(1000):
                v = rng.standard_normal(text_dim)
                v /= np.linalg.norm(v)
                if all(abs(float(v @ u)) < max_cosine for u in vecs):
                    break
            else:
                raise ContractError("could not sample a sufficiently spread table")
            vecs.append(v)
            self.table[tok] = v.astype(np.float64)
        hidden = 2 * embed_dim
        self.cond_in = Linear(text_dim, hidden, rng)
        self.cond_out = Linear(hidden, embed_dim, rng)
        self.scene_in = Linear(text_dim, hidden, rng)
        self.scene_out = Linear(hidden, embed_dim, rng)

    def _vector(self, token):
        if token not in self.table:
            raise ContractError(f"unknown vocabulary token {token!r}")
        return self.table[token]

    def condition_vector(self, caption: Caption, granularity=PromptGranularity.FIVE):
        """Frozen table vector for the caption's condition phrase."""
        tok = condition_token(caption.condition, granularity)
        if tok is None:
            return np.zeros(self.text_dim)
        return self._vector(tok)

    def scene_vector(self, caption: Caption, granularity=PromptGranularity.FIVE):
        """Unit-normalized mean of the condition and object token vectors."""
        tok = condition_token(caption.condition, granularity)
        if tok is None:
            return np.zeros(self.text_dim)
        vs = [self._vector(tok)] + [self._vector(o.surface) for o in caption.objects]
        m = np.mean(vs, axis=0)
        norm = np.linalg.norm(m)
        if norm < 1e-9:
            raise ContractError("degenerate scene vector")
        return m / norm

    def _mlp(self, head_in, head_out, vec):
        if isinstance(vec, Tensor):
            x = vec
        else:
            x = Tensor(np.asarray(vec, dtype=head_in.weight.dtype)[None, :])
        return head_out(tanh(head_in(x)))

    def encode_condition(self, caption: Caption, granularity=PromptGranularity.FIVE) -> Tensor:
        """Condition embedding; depends on the condition phrase only."""
        return self._mlp(self.cond_in, self.cond_out, self.condition_vector(caption, granularity))

    def encode_scene(self, caption: Caption, granularity=PromptGranularity.FIVE) -> Tensor:
        """Holistic embedding of the full caption (condition + objects)."""
        return self._mlp(self.scene_in, self.scene_out, self.scene_vector(caption, granularity))

    def encode_condition_batch(self, vecs: Tensor) -> Tensor:
        return self._mlp(self.cond_in, self.cond_out, vecs)

    def encode_scene_batch(self, vecs: Tensor) -> Tensor:
        return self._mlp(self.scene_in, self.scene_out, vecs)


def oracle_condition(scene, corruption_rate=0.0, oracle_seed=0) -> SceneCondition:
    """Ground-truth condition of a generated scene, optionally corrupted.

    Stands in for a scene classifier that is perfect by construction. With a
    nonzero corruption rate, a seeded per-scene draw decides whether the label
    is resampled uniformly from the other four conditions.
    """
    if corruption_rate <= 0.0:
        return scene.condition
    rng = np.random.default_rng(np.random.SeedSequence((int(scene.seed), oracle_seed, 0xC0)))
    if rng.uniform() >= corruption_rate:
        return scene.condition
    others = [c for c in SceneCondition if c != scene.condition]
    return others[int(rng.integers(len(others)))]
