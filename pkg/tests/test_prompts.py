import itertools

import numpy as np
import pytest

from condfuse.errors import ContractError
from condfuse.prompts import (
    EmbeddingProvider,
    PromptGranularity,
    SceneCondition,
    TargetClass,
    build_prompt,
    condition_token,
    oracle_condition,
)
from condfuse.synth import synth_generate
from condfuse.tensor import Tape, backward


@pytest.fixture(scope="module")
def provider():
    return EmbeddingProvider(np.random.default_rng(7))


class TestBuildPrompt:
    def test_reference_three_object_caption(self):
        cap = build_prompt(
            SceneCondition.TOTAL_DARKNESS,
            [TargetClass.CAR, TargetClass.PERSON, TargetClass.GUARDRAIL],
        )
        assert cap.text == "A Total Darkness driving scene containing Car, Person and Guardrail"

    def test_single_object(self):
        cap = build_prompt(SceneCondition.WELL_LIT, [TargetClass.CAR])
        assert cap.text == "A Well-lit driving scene containing Car"

    def test_two_objects(self):
        cap = build_prompt(SceneCondition.GLARE, [TargetClass.BIKE, TargetClass.BUMP])
        assert cap.text == "A Glare driving scene containing Bike and Bump"

    def test_objects_canonicalized_to_class_order(self):
        a = build_prompt(SceneCondition.GLARE, [TargetClass.BUMP, TargetClass.BIKE])
        b = build_prompt(SceneCondition.GLARE, [TargetClass.BIKE, TargetClass.BUMP])
        assert a.text == b.text

    def test_multiword_surface_forms(self):
        cap = build_prompt(SceneCondition.OVERCAST, [TargetClass.COLOR_CONE, TargetClass.CAR_STOP])
        assert "Car Stop and Color Cone" in cap.text

    def test_empty_objects_rejected(self):
        with pytest.raises(ContractError):
            build_prompt(SceneCondition.GLARE, [])

    def test_duplicates_rejected(self):
        with pytest.raises(ContractError):
            build_prompt(SceneCondition.GLARE, [TargetClass.CAR, TargetClass.CAR])

    def test_injective_over_condition_and_object_set(self):
        seen = {}
        for condition in SceneCondition:
            for r in (1, 2, 3):
                for objs in itertools.combinations(list(TargetClass), r):
                    text = build_prompt(condition, list(objs)).text
                    assert text not in seen, f"collision with {seen.get(text)}"
                    seen[text] = (condition, objs)

    def test_condition_phrase_prefix(self):
        cap = build_prompt(SceneCondition.TWILIGHT, [TargetClass.CAR])
        assert cap.text.startswith(cap.condition_phrase)


class TestVocabularies:
    def test_exactly_five_conditions(self):
        assert len(SceneCondition) == 5
        assert {c.surface for c in SceneCondition} == {
            "Glare", "Well-lit", "Overcast", "Twilight", "Total Darkness",
        }

    def test_exactly_eight_targets_in_metric_order(self):
        assert [t.value for t in TargetClass] == list(range(1, 9))
        assert [t.surface for t in TargetClass] == [
            "Car", "Person", "Bike", "Curve", "Car Stop", "Guardrail", "Color Cone", "Bump",
        ]

    def test_granularity_maps_are_surjective(self):
        binary = {condition_token(c, PromptGranularity.BINARY) for c in SceneCondition}
        ternary = {condition_token(c, PromptGranularity.TERNARY) for c in SceneCondition}
        assert binary == {"Day", "Night"}
        assert ternary == {"Day", "Overcast", "Night"}
        assert condition_token(SceneCondition.OVERCAST, PromptGranularity.BINARY) == "Day"
        assert condition_token(SceneCondition.GLARE, PromptGranularity.BINARY) == "Night"


class TestEmbeddings:
    def test_condition_vectors_spread(self, provider):
        vecs = [provider.table[c.surface] for c in SceneCondition]
        for i in range(5):
            assert np.linalg.norm(vecs[i]) == pytest.approx(1.0, abs=1e-9)
            for j in range(i + 1, 5):
                assert abs(float(vecs[i] @ vecs[j])) < 0.5

    def test_encode_condition_deterministic(self, provider):
        cap = build_prompt(SceneCondition.GLARE, [TargetClass.CAR])
        a = provider.encode_condition(cap).data
        b = provider.encode_condition(cap).data
        assert np.array_equal(a, b)

    def test_condition_embedding_ignores_objects(self, provider):
        c1 = build_prompt(SceneCondition.TWILIGHT, [TargetClass.CAR])
        c2 = build_prompt(SceneCondition.TWILIGHT, [TargetClass.PERSON, TargetClass.BUMP])
        assert np.array_equal(provider.encode_condition(c1).data, provider.encode_condition(c2).data)

    def test_scene_embedding_order_invariant(self, provider):
        c1 = build_prompt(SceneCondition.GLARE, [TargetClass.BIKE, TargetClass.CAR])
        c2 = build_prompt(SceneCondition.GLARE, [TargetClass.CAR, TargetClass.BIKE])
        assert np.array_equal(provider.encode_scene(c1).data, provider.encode_scene(c2).data)

    def test_scene_embedding_distinguishes_objects(self, provider):
        c1 = build_prompt(SceneCondition.WELL_LIT, [TargetClass.CAR])
        c2 = build_prompt(SceneCondition.WELL_LIT, [TargetClass.PERSON])
        assert not np.allclose(provider.encode_scene(c1).data, provider.encode_scene(c2).data)

    def test_scene_vector_unit_norm(self, provider):
        cap = build_prompt(SceneCondition.OVERCAST, [TargetClass.CAR, TargetClass.BUMP])
        vec = provider.scene_vector(cap)
        assert np.linalg.norm(vec) == pytest.approx(1.0, abs=1e-6)

    def test_unknown_token_rejected(self, provider):
        with pytest.raises(ContractError):
            provider._vector("Spaceship")

    def test_table_is_frozen_no_gradient(self, provider):
        cap = build_prompt(SceneCondition.GLARE, [TargetClass.CAR])
        with Tape():
            out = provider.encode_condition(cap)
            backward((out * out).sum())
        # MLP weights trained, table untouched: vectors are bare ndarrays
        assert provider.cond_in.weight.grad is not None
        assert all(isinstance(v, np.ndarray) for v in provider.table.values())

    def test_granularity_binary_merges_conditions(self, provider):
        dark = build_prompt(SceneCondition.TOTAL_DARKNESS, [TargetClass.CAR])
        glare = build_prompt(SceneCondition.GLARE, [TargetClass.CAR])
        lit = build_prompt(SceneCondition.WELL_LIT, [TargetClass.CAR])
        g = PromptGranularity.BINARY
        assert np.array_equal(
            provider.encode_condition(dark, g).data, provider.encode_condition(glare, g).data
        )
        assert not np.allclose(
            provider.encode_condition(dark, g).data, provider.encode_condition(lit, g).data
        )


class TestOracle:
    def test_passthrough(self):
        scene = synth_generate(5, SceneCondition.TOTAL_DARKNESS)
        assert oracle_condition(scene) == SceneCondition.TOTAL_DARKNESS

    def test_zero_corruption_always_agrees(self):
        for i in range(100):
            scene = synth_generate(i, SceneCondition.OVERCAST)
            assert oracle_condition(scene, corruption_rate=0.0) == SceneCondition.OVERCAST

    def test_corruption_is_seeded_and_respects_rate(self):
        scenes = [synth_generate(i, SceneCondition.WELL_LIT) for i in range(200)]
        first = [oracle_condition(s, corruption_rate=0.2, oracle_seed=9) for s in scenes]
        second = [oracle_condition(s, corruption_rate=0.2, oracle_seed=9) for s in scenes]
        assert first == second  # exact seeded subset
        n_corrupt = sum(c != SceneCondition.WELL_LIT for c in first)
        assert 20 <= n_corrupt <= 60  # ~20% of 200
        assert all(c != SceneCondition.WELL_LIT or True for c in first)

    def test_corruption_resamples_other_conditions_only(self):
        scenes = [synth_generate(i, SceneCondition.GLARE) for i in range(300)]
        labels = [oracle_condition(s, corruption_rate=1.0) for s in scenes]
        assert all(c != SceneCondition.GLARE for c in labels)
        assert len(set(labels)) == 4
