"""A deterministic synthetic world for desk-scale verification.

Flat-colored scenes of disjoint shapes render losslessly to PNG, so
in-process backends can answer every role exactly from the image content,
and a reference predictor provides ground-truth entailment decisions for
any perturbed premise. Deliberately buggy predictor variants validate the
issue accounting.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import hypothesis as hyp
from .backends import register_inprocess
from .errors import BackendMalformed, PlacementFailure
from .geometry import BBox, ImageDims
from .wire import ImagePayload, Prediction, RelationshipLabel

SCENE_WIDTH = 128
SCENE_HEIGHT = 96
MIN_OBJECT_SIZE = 12
MAX_OBJECT_SIZE = 28
PLACEMENT_MARGIN = 4
PLACEMENT_TRIES = 200
MAX_OBJECTS = 8

SHAPES = ("square", "circle", "triangle")

OBJECT_COLORS = {
    "red": (220, 40, 40),
    "green": (40, 160, 60),
    "blue": (50, 80, 220),
    "yellow": (230, 210, 50),
    "orange": (240, 140, 40),
    "purple": (140, 60, 180),
    "cyan": (60, 200, 210),
    "magenta": (220, 70, 190),
}

BACKGROUND_COLORS = {
    "white": (255, 255, 255),
    "black": (16, 16, 16),
    "gray": (128, 128, 128),
}


@dataclass(frozen=True)
class SceneObject:
    """One colored shape; region is the tight box of its rendered pixels."""

    shape: str
    color: str
    frame: BBox
    region: BBox


@dataclass(frozen=True)
class Scene:
    dims: ImageDims
    background: str
    objects: tuple[SceneObject, ...]
    seed: int

    @property
    def scene_id(self) -> str:
        return f"scene-{self.seed:05d}"


@dataclass(frozen=True)
class SyntheticSample:
    """A dataset record plus the scene ground truth behind it."""

    sample_id: str
    scene: Scene
    mentioned: tuple[int, ...]
    hypothesis: str
    label: RelationshipLabel

    @property
    def linked_regions(self) -> list[BBox]:
        return [self.scene.objects[i].region for i in self.mentioned]

    @property
    def unlinked_regions(self) -> list[BBox]:
        return [
            obj.region
            for i, obj in enumerate(self.scene.objects)
            if i not in self.mentioned
        ]


def _shape_mask(shape: str, width: int, height: int) -> np.ndarray:
    """Boolean pixel-center raster of a shape filling a width x height frame."""
    cx = np.arange(width) + 0.5
    cy = np.arange(height) + 0.5
    if shape == "square":
        return np.ones((height, width), dtype=bool)
    if shape == "circle":
        rx, ry = width / 2.0, height / 2.0
        dx = (cx[None, :] - rx) / rx
        dy = (cy[:, None] - ry) / ry
        return dx * dx + dy * dy <= 1.0
    if shape == "triangle":
        t = cy[:, None] / height
        half_width = t * width / 2.0
        return np.abs(cx[None, :] - width / 2.0) <= half_width
    raise ValueError(f"unknown shape: {shape}")


def _tight_bbox(mask: np.ndarray, x_off: int, y_off: int) -> BBox | None:
    rows = np.any(mask, axis=1)
    cols = np.any(mask, axis=0)
    if not rows.any():
        return None
    y_idx = np.where(rows)[0]
    x_idx = np.where(cols)[0]
    return BBox(
        float(x_off + x_idx[0]),
        float(y_off + y_idx[0]),
        float(x_off + x_idx[-1] + 1),
        float(y_off + y_idx[-1] + 1),
    )


def _frames_disjoint(a: tuple[int, int, int, int], b: tuple[int, int, int, int], margin: int) -> bool:
    return (
        a[2] + margin <= b[0]
        or b[2] + margin <= a[0]
        or a[3] + margin <= b[1]
        or b[3] + margin <= a[1]
    )


def gen_scene(seed: int, n_objects: int) -> Scene:
    """Deterministically place disjoint objects with unique color/shape combos."""
    if not 0 <= n_objects <= MAX_OBJECTS:
        raise ValueError(f"n_objects must be in [0, {MAX_OBJECTS}]")
    rng = random.Random(seed)
    background = rng.choice(sorted(BACKGROUND_COLORS))
    combos = [(c, s) for c in sorted(OBJECT_COLORS) for s in SHAPES]
    chosen = rng.sample(combos, n_objects)
    frames: list[tuple[int, int, int, int]] = []
    objects: list[SceneObject] = []
    for color, shape in chosen:
        placed = False
        for _ in range(PLACEMENT_TRIES):
            w = rng.randint(MIN_OBJECT_SIZE, MAX_OBJECT_SIZE)
            h = rng.randint(MIN_OBJECT_SIZE, MAX_OBJECT_SIZE)
            x1 = rng.randint(PLACEMENT_MARGIN, SCENE_WIDTH - PLACEMENT_MARGIN - w)
            y1 = rng.randint(PLACEMENT_MARGIN, SCENE_HEIGHT - PLACEMENT_MARGIN - h)
            frame = (x1, y1, x1 + w, y1 + h)
            if all(_frames_disjoint(frame, other, PLACEMENT_MARGIN) for other in frames):
                mask = _shape_mask(shape, w, h)
                region = _tight_bbox(mask, x1, y1)
                if region is None:
                    continue
                frames.append(frame)
                objects.append(
                    SceneObject(
                        shape=shape,
                        color=color,
                        frame=BBox(*map(float, frame)),
                        region=region,
                    )
                )
                placed = True
                break
        if not placed:
            raise PlacementFailure(
                f"could not place {n_objects} disjoint objects with seed {seed}"
            )
    return Scene(
        dims=ImageDims(SCENE_WIDTH, SCENE_HEIGHT),
        background=background,
        objects=tuple(objects),
        seed=seed,
    )


def render(scene: Scene) -> ImagePayload:
    """Flat-color rasterization; object pixels follow the center rule."""
    arr = np.empty((scene.dims.height, scene.dims.width, 3), dtype=np.uint8)
    arr[:] = BACKGROUND_COLORS[scene.background]
    for obj in scene.objects:
        x1, y1 = int(obj.frame.x1), int(obj.frame.y1)
        x2, y2 = int(obj.frame.x2), int(obj.frame.y2)
        mask = _shape_mask(obj.shape, x2 - x1, y2 - y1)
        arr[y1:y2, x1:x2][mask] = OBJECT_COLORS[obj.color]
    return ImagePayload.from_array(arr)


def make_sample(scene: Scene, k_mentioned: int) -> SyntheticSample:
    """Entailment sample mentioning the first k objects of the scene."""
    if not 1 <= k_mentioned <= len(scene.objects):
        raise ValueError("k_mentioned must be in [1, n_objects]")
    mentioned = tuple(range(k_mentioned))
    clauses = [
        f"a {scene.objects[i].color} {scene.objects[i].shape} is present"
        for i in mentioned
    ]
    return SyntheticSample(
        sample_id=f"{scene.scene_id}-k{k_mentioned}",
        scene=scene,
        mentioned=mentioned,
        hypothesis=" and ".join(clauses),
        label=RelationshipLabel.ENTAILMENT,
    )


def _rgb_to_color_name(rgb: tuple[int, int, int]) -> str | None:
    for name, value in OBJECT_COLORS.items():
        if value == rgb:
            return name
    return None


def _classify_shape(fill_ratio: float) -> str:
    if fill_ratio >= 0.92:
        return "square"
    if fill_ratio >= 0.65:
        return "circle"
    return "triangle"


def decode_objects(arr: np.ndarray) -> list[tuple[str, str, BBox]]:
    """Recover (color, shape, region) triples from a rendered scene image.

    Exact flat-color matching plus connected-component labeling; sorted by
    region coordinates for a transport-independent order.
    """
    found: list[tuple[str, str, BBox]] = []
    for name in sorted(OBJECT_COLORS):
        rgb = OBJECT_COLORS[name]
        mask = np.all(arr == np.array(rgb, dtype=np.uint8), axis=2)
        if not mask.any():
            continue
        labels, count = ndimage.label(mask)
        for idx in range(1, count + 1):
            component = labels == idx
            region = _tight_bbox(component, 0, 0)
            if region is None:
                continue
            area = (region.x2 - region.x1) * (region.y2 - region.y1)
            ratio = float(np.count_nonzero(component)) / area
            found.append((name, _classify_shape(ratio), region))
    found.sort(key=lambda item: (item[2].y1, item[2].x1, item[2].y2, item[2].x2))
    return found


def parse_mentions(text: str) -> list[tuple[str, str]]:
    """(color, shape) pairs mentioned in free text, in order of appearance."""
    tokens = re.findall(r"[a-z]+", text.lower())
    out = []
    for first, second in zip(tokens, tokens[1:]):
        if first in OBJECT_COLORS and second in SHAPES:
            out.append((first, second))
    return out


def most_frequent_color(arr: np.ndarray) -> np.ndarray:
    """Dominant RGB value; ties break toward the lexicographically smallest."""
    colors, counts = np.unique(arr.reshape(-1, 3), axis=0, return_counts=True)
    return colors[int(np.argmax(counts))]


def invert_hypothesis(hypothesis: str) -> str:
    """Rule-based extractor output for the synthetic sample grammar."""
    pairs = []
    for clause in hypothesis.split(" and "):
        words = clause.strip().split()
        if words and words[0].lower() in ("a", "an", "the"):
            words = words[1:]
        if len(words) >= 2 and words[0] in OBJECT_COLORS and words[1] in SHAPES:
            obj, prop = " ".join(words[:2]), " ".join(words[2:])
        else:
            obj, prop = " ".join(words), ""
        if obj:
            pairs.append(hyp.ExtractionPair(obj, prop))
    return hyp.render_pairs(pairs)


def hypothesis_from_prompt(prompt: str) -> str:
    """Pull the slotted hypothesis back out of the extraction prompt."""
    idx = prompt.rfind("Input:")
    if idx < 0:
        return ""
    return prompt[idx + len("Input:"):].split(";")[0].strip()


def reference_ve(image: ImagePayload, hypothesis: str) -> Prediction:
    """Entailment iff every mentioned color/shape exists in the image."""
    present = {(color, shape) for color, shape, _ in decode_objects(image.to_array())}
    mentioned = parse_mentions(hypothesis)
    if all(pair in present for pair in mentioned):
        return Prediction(RelationshipLabel.ENTAILMENT)
    return Prediction(RelationshipLabel.CONTRADICTION)


def _flip_decision(seed: int, p: float, image: ImagePayload, hypothesis: str) -> bool:
    digest = hashlib.sha256(
        f"{seed}|".encode() + image.png + b"|" + hypothesis.encode()
    ).digest()
    return int.from_bytes(digest[:8], "big") / 2**64 < p


def flipped(label: RelationshipLabel) -> RelationshipLabel:
    if label is RelationshipLabel.ENTAILMENT:
        return RelationshipLabel.CONTRADICTION
    if label is RelationshipLabel.CONTRADICTION:
        return RelationshipLabel.ENTAILMENT
    return label


def _extract_fn(body: dict) -> dict:
    return {"response": invert_hypothesis(hypothesis_from_prompt(body["prompt"]))}


def _detect_fn(body: dict) -> dict:
    image = ImagePayload.from_wire(body["image"])
    boxes = [region.to_json() for _, _, region in decode_objects(image.to_array())]
    return {"boxes": boxes}


def _ground_fn(body: dict) -> dict:
    image = ImagePayload.from_wire(body["image"])
    mentions = parse_mentions(body["text"])
    if mentions:
        want = mentions[0]
        for color, shape, region in decode_objects(image.to_array()):
            if (color, shape) == want:
                return {"box": region.to_json()}
    # unresolvable text: a degenerate box, dropped and counted upstream
    return {"box": {"x1": 0.0, "y1": 0.0, "x2": 0.0, "y2": 0.0}}


def _inpaint_fn(body: dict) -> dict:
    image = ImagePayload.from_wire(body["image"])
    mask = ImagePayload.from_wire(body["mask"])
    if (mask.width, mask.height) != (image.width, image.height):
        raise BackendMalformed("mask dimensions differ from image dimensions")
    arr = image.to_array().copy()
    arr[mask.to_array("L") == 255] = most_frequent_color(arr)
    return {"image": ImagePayload.from_array(arr).to_wire()}


def _predict_perfect_fn(body: dict) -> dict:
    image = ImagePayload.from_wire(body["image"])
    return reference_ve(image, body["hypothesis"]).to_json()


def _predict_always_entailment_fn(body: dict) -> dict:
    return {"label": RelationshipLabel.ENTAILMENT.value}


def make_flip_predict_fn(seed: int, p: float):
    def predict_fn(body: dict) -> dict:
        image = ImagePayload.from_wire(body["image"])
        label = reference_ve(image, body["hypothesis"]).label
        if _flip_decision(seed, p, image, body["hypothesis"]):
            label = flipped(label)
        return {"label": label.value}

    return predict_fn


def _synthetic_factory(options: dict) -> dict:
    return {
        "extract": _extract_fn,
        "detect": _detect_fn,
        "ground": _ground_fn,
        "inpaint": _inpaint_fn,
        "predict": _predict_perfect_fn,
    }


def _always_entailment_factory(options: dict) -> dict:
    return {"predict": _predict_always_entailment_fn}


def _flip_factory(options: dict) -> dict:
    seed = int(options.get("seed", 0))
    p = float(options.get("p", 0.25))
    return {"predict": make_flip_predict_fn(seed, p)}


register_inprocess("synthetic", _synthetic_factory)
register_inprocess("synthetic-always-entailment", _always_entailment_factory)
register_inprocess("synthetic-flip", _flip_factory)


def scene_to_manifest(scene: Scene, image: ImagePayload) -> dict:
    return {
        "scene_id": scene.scene_id,
        "seed": scene.seed,
        "dims": {"width": scene.dims.width, "height": scene.dims.height},
        "background": scene.background,
        "background_rgb": list(BACKGROUND_COLORS[scene.background]),
        "image_sha256": image.sha256(),
        "objects": [
            {
                "shape": obj.shape,
                "color": obj.color,
                "rgb": list(OBJECT_COLORS[obj.color]),
                "frame": obj.frame.to_json(),
                "region": obj.region.to_json(),
            }
            for obj in scene.objects
        ],
    }


def write_corpus(
    out_dir: str | Path,
    scene_seeds: list[int],
    n_objects: int | list[int] = 4,
    ks: list[int] | None = None,
) -> Path:
    """Write scenes, PNGs, and a dataset manifest; returns the manifest path.

    Layout: images/<scene_id>.png, scenes/<scene_id>.json, dataset.jsonl.
    """
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "scenes").mkdir(parents=True, exist_ok=True)
    counts = n_objects if isinstance(n_objects, list) else [n_objects] * len(scene_seeds)
    lines = []
    for seed, count in zip(scene_seeds, counts):
        scene = gen_scene(seed, count)
        image = render(scene)
        (out / "images" / f"{scene.scene_id}.png").write_bytes(image.png)
        (out / "scenes" / f"{scene.scene_id}.json").write_text(
            json.dumps(scene_to_manifest(scene, image), indent=2, sort_keys=True),
            encoding="utf-8",
        )
        wanted_ks = ks if ks is not None else [min(2, count)]
        for k in wanted_ks:
            if not 1 <= k <= count:
                continue
            sample = make_sample(scene, k)
            lines.append(
                json.dumps(
                    {
                        "id": sample.sample_id,
                        "image": f"images/{scene.scene_id}.png",
                        "hypothesis": sample.hypothesis,
                        "label": sample.label.value,
                    },
                    sort_keys=True,
                )
            )
    manifest = out / "dataset.jsonl"
    manifest.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    return manifest
