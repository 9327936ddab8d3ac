"""Regenerate the golden request/response fixtures under resources/golden/.

Run from the repository root after changing the wire protocol or the
in-process stand-ins; the fixtures are checked in and replayed byte-level
by both the client tests and the reference server's conformance suite.
"""

from __future__ import annotations

import json
from pathlib import Path

from veraser import synthetic as syn
from veraser.backends import make_lexicon_synonym_fn
from veraser.geometry import ImageDims, render_mask
from veraser.hypothesis import build_prompt, default_prompt_spec
from veraser.wire import ImagePayload

OUT_DIR = Path(__file__).resolve().parent.parent / "src" / "veraser" / "resources" / "golden"

FIXTURE_SCENE_SEED = 1
FIXTURE_SCENE_OBJECTS = 3


def main() -> None:
    scene = syn.gen_scene(FIXTURE_SCENE_SEED, FIXTURE_SCENE_OBJECTS)
    sample = syn.make_sample(scene, 2)
    image = syn.render(scene)
    functions = syn._synthetic_factory({})

    prompt = build_prompt(sample.hypothesis, default_prompt_spec())
    mask = render_mask(ImageDims(image.width, image.height), scene.objects[0].region)
    mask_payload = ImagePayload.from_array(mask.pixels)
    erased = ImagePayload.from_wire(
        functions["inpaint"]({"image": image.to_wire(), "mask": mask_payload.to_wire()})["image"]
    )
    first_unit_text = (
        f"{scene.objects[0].color} {scene.objects[0].shape} is present"
    )

    fixtures = [
        {
            "name": "extract-sample-grammar",
            "role": "extract",
            "request": {"prompt": prompt},
        },
        {
            "name": "detect-three-objects",
            "role": "detect",
            "request": {"image": image.to_wire()},
        },
        {
            "name": "ground-first-unit",
            "role": "ground",
            "request": {"image": image.to_wire(), "text": first_unit_text},
        },
        {
            "name": "inpaint-first-object",
            "role": "inpaint",
            "request": {"image": image.to_wire(), "mask": mask_payload.to_wire()},
        },
        {
            "name": "synonym-lexicon-noun",
            "role": "synonym",
            "request": {"text": "young boys fishing"},
        },
        {
            "name": "predict-intact-entailment",
            "role": "predict",
            "request": {"image": image.to_wire(), "hypothesis": sample.hypothesis},
        },
        {
            "name": "predict-erased-contradiction",
            "role": "predict",
            "request": {"image": erased.to_wire(), "hypothesis": sample.hypothesis},
        },
    ]

    synonym_fn = make_lexicon_synonym_fn()
    OUT_DIR.mkdir(parents=True, exist_ok=True)
    for fixture in fixtures:
        role = fixture["role"]
        fn = synonym_fn if role == "synonym" else functions[role]
        fixture["endpoint"] = f"/v1/{role}"
        fixture["response"] = fn(fixture["request"])
        path = OUT_DIR / f"{fixture['name']}.json"
        path.write_text(json.dumps(fixture, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        print(f"wrote {path.relative_to(OUT_DIR.parent.parent.parent.parent)}")


if __name__ == "__main__":
    main()
