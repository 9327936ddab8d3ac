from dataclasses import dataclass

import numpy as np
import pytest

from veraser import alignment as al
from veraser import mr
from veraser import synthetic as syn
from veraser.backends import BackendEndpoint, InProcessHandle, resolve_endpoint
from veraser.errors import BackendMalformed, BackendUnavailable, DimensionMismatch
from veraser.geometry import BBox, IouThreshold
from veraser.hypothesis import combine_units, parse_extraction
from veraser.wire import ImagePayload, RelationshipLabel


@dataclass
class Source:
    id: str
    hypothesis: str
    label: str


def handle(role, name="inprocess:synthetic"):
    return resolve_endpoint(BackendEndpoint(role, name))


def aligned_sample(seed=3, n=4, k=2):
    scene = syn.gen_scene(seed, n)
    sample = syn.make_sample(scene, k)
    pairs = parse_extraction(syn.invert_hypothesis(sample.hypothesis))
    units = combine_units(sample.hypothesis, pairs).units
    image = syn.render(scene)
    result = al.align(
        image, units, handle("detect"), handle("ground"), IouThreshold(0.1)
    )
    source = Source(sample.sample_id, sample.hypothesis, sample.label.value)
    return scene, sample, source, image, result


class TestApplicability:
    def test_non_entailment_sources_yield_nothing(self):
        _, _, source, _, result = aligned_sample()
        for label in ("neutral", "contradiction"):
            source.label = label
            assert mr.applicable_instantiations(source, result, IouThreshold(0.1)) == []

    def test_single_unit_hypothesis_has_no_mr1(self):
        _, _, source, _, result = aligned_sample(k=1)
        kinds = [i.kind for i in mr.applicable_instantiations(source, result, IouThreshold(0.1))]
        assert mr.MRKind.MR1 not in kinds
        assert mr.MRKind.MR2 in kinds
        assert mr.MRKind.MR3 in kinds

    def test_counts_match_scene_structure(self):
        scene, sample, source, _, result = aligned_sample(seed=5, n=4, k=2)
        got = mr.applicable_instantiations(source, result, IouThreshold(0.1))
        by_kind = {kind: 0 for kind in mr.MRKind}
        for inst in got:
            by_kind[inst.kind] += 1
        assert by_kind[mr.MRKind.MR1] == 2
        assert by_kind[mr.MRKind.MR2] == 2
        assert by_kind[mr.MRKind.MR3] == 2

    def test_infeasible_overlapping_detection_blocks_target(self):
        _, _, source, _, result = aligned_sample(seed=6, n=2, k=1)
        overlapping = BBox(
            result.linked[0].region.x1 + 1,
            result.linked[0].region.y1 + 1,
            result.linked[0].region.x2 + 1,
            result.linked[0].region.y2 + 1,
        )
        result.detected.append(overlapping)
        got = mr.applicable_instantiations(source, result, IouThreshold(0.1))
        assert all(inst.region != result.linked[0].region for inst in got if inst.kind is mr.MRKind.MR2)


class TestEraseObject:
    def test_perfect_fill(self):
        scene, sample, _, image, result = aligned_sample(seed=7)
        target = result.linked[0].region
        out = mr.erase_object(image, target, handle("inpaint"))
        before = image.to_array()
        after = out.to_array()
        from veraser.geometry import ImageDims, render_mask

        white = render_mask(ImageDims(image.width, image.height), target).pixels == 255
        bg = np.array(syn.BACKGROUND_COLORS[scene.background], dtype=np.uint8)
        assert np.all(after[white] == bg)
        assert np.array_equal(after[~white], before[~white])

    def test_single_object_scene_becomes_all_background(self):
        scene = syn.gen_scene(11, 1)
        image = syn.render(scene)
        out = mr.erase_object(image, scene.objects[0].region, handle("inpaint"))
        arr = out.to_array()
        bg = np.array(syn.BACKGROUND_COLORS[scene.background], dtype=np.uint8)
        assert np.all(arr == bg)

    def test_dimension_mismatch_detected(self):
        def bad_inpainter(body):
            wrong = ImagePayload.from_array(np.zeros((4, 4, 3), dtype=np.uint8))
            return {"image": wrong.to_wire()}

        scene = syn.gen_scene(11, 1)
        image = syn.render(scene)
        with pytest.raises(DimensionMismatch):
            mr.erase_object(
                image, scene.objects[0].region, InProcessHandle("inpaint", bad_inpainter)
            )


class TestSynonymTransform:
    def test_lexicon_substitutes_one_word(self):
        out = mr.synonym_transform("young boys fishing", handle("synonym", "inprocess:lexicon-synonym"))
        assert out.text == "young lads fishing"
        assert out.substitutions == [{"from": "boys", "to": "lads"}]

    def test_identity_backend(self):
        out = mr.synonym_transform("young boys fishing", handle("synonym", "inprocess:identity-synonym"))
        assert out.text == "young boys fishing"
        assert out.substitutions == []

    def test_outage_falls_back_to_identity(self):
        def down(body):
            raise BackendUnavailable("synonym backend down")

        out = mr.synonym_transform("a boy sits", InProcessHandle("synonym", down))
        assert out.text == "a boy sits"
        assert out.fallback is True

    def test_word_count_violation_is_malformed(self):
        def chatty(body):
            return {"text": body["text"] + " indeed", "substitutions": []}

        with pytest.raises(BackendMalformed):
            mr.synonym_transform("a boy sits", InProcessHandle("synonym", chatty))

    def test_unlisted_substitution_is_malformed(self):
        def sneaky(body):
            return {"text": "a girl sits", "substitutions": []}

        with pytest.raises(BackendMalformed):
            mr.synonym_transform("a boy sits", InProcessHandle("synonym", sneaky))


class TestApplyMrs:
    def test_mr1_output(self):
        scene, sample, source, image, result = aligned_sample(seed=8, n=3, k=2)
        targets = [
            i for i in mr.applicable_instantiations(source, result, IouThreshold(0.1))
            if i.kind is mr.MRKind.MR1
        ]
        test = mr.apply_mr1(
            source, result, targets[0], handle("inpaint"),
            handle("synonym", "inprocess:identity-synonym"), image,
        )
        assert test.oracle is RelationshipLabel.ENTAILMENT
        assert test.provenance.erased_unit is not None
        second = scene.objects[1]
        assert f"{second.color} {second.shape}" in test.hypothesis
        first = scene.objects[0]
        assert f"{first.color} {first.shape}" not in test.hypothesis

    def test_mr2_keeps_hypothesis(self):
        _, sample, source, image, result = aligned_sample(seed=8, n=3, k=2)
        targets = [
            i for i in mr.applicable_instantiations(source, result, IouThreshold(0.1))
            if i.kind is mr.MRKind.MR2
        ]
        test = mr.apply_mr2(source, result, targets[0], handle("inpaint"), image)
        assert test.hypothesis == sample.hypothesis
        assert test.oracle is RelationshipLabel.CONTRADICTION
        assert test.provenance.erased_unit is None

    def test_mr3_keeps_hypothesis(self):
        _, sample, source, image, result = aligned_sample(seed=8, n=3, k=2)
        targets = [
            i for i in mr.applicable_instantiations(source, result, IouThreshold(0.1))
            if i.kind is mr.MRKind.MR3
        ]
        test = mr.apply_mr3(source, result, targets[0], handle("inpaint"), image)
        assert test.hypothesis == sample.hypothesis
        assert test.oracle is RelationshipLabel.ENTAILMENT

    def test_reference_ve_agrees_with_all_oracles(self):
        predict = handle("predict")
        from veraser.backends import call_predict

        for seed in (1, 4, 9):
            scene, sample, source, image, result = aligned_sample(seed=seed, n=4, k=2)
            for inst in mr.applicable_instantiations(source, result, IouThreshold(0.1)):
                if inst.kind is mr.MRKind.MR1:
                    test = mr.apply_mr1(
                        source, result, inst, handle("inpaint"),
                        handle("synonym", "inprocess:identity-synonym"), image,
                    )
                elif inst.kind is mr.MRKind.MR2:
                    test = mr.apply_mr2(source, result, inst, handle("inpaint"), image)
                else:
                    test = mr.apply_mr3(source, result, inst, handle("inpaint"), image)
                pred = call_predict(predict, test.premise, test.hypothesis)
                assert pred.label is test.oracle

    def test_ids_are_content_derived_and_unique(self):
        _, _, source, image, result = aligned_sample(seed=8, n=4, k=2)
        insts = mr.applicable_instantiations(source, result, IouThreshold(0.1))
        ids = set()
        for inst in insts:
            unit_text = inst.unit.text if inst.kind is mr.MRKind.MR1 else None
            ids.add(mr.test_id_for(source.id, inst.kind, inst.region, unit_text))
        assert len(ids) == len(insts)
        again = mr.test_id_for(source.id, insts[0].kind, insts[0].region, insts[0].unit.text)
        assert again in ids
