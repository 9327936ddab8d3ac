"""Stub models behind each protocol role.

The detector and grounder answer from a ground-truth scene directory
(JSON manifests + PNGs, indexed by image hash). The predictor stub decodes
the flat-color scene images directly, so it can judge premises that were
perturbed after the ground truth was written. Real models replace these
functions; the route layer only cares about the call signatures.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

# The synthetic corpus palette; part of the scene-manifest contract.
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

SHAPES = ("square", "circle", "triangle")

ARTICLES = ("a", "an", "the")

SYNONYM_NOUNS = {
    "boys": "lads",
    "boy": "lad",
    "girls": "lasses",
    "girl": "lass",
    "man": "gentleman",
    "men": "gentlemen",
    "woman": "lady",
    "women": "ladies",
    "kid": "child",
    "kids": "children",
    "dog": "hound",
    "dogs": "hounds",
}

SYNONYM_MODIFIERS = {
    "big": "large",
    "small": "little",
    "young": "youthful",
    "old": "elderly",
}


class StubError(Exception):
    """Raised for content the stubs cannot serve (4xx at the route layer)."""

    def __init__(self, message: str, status: int = 422):
        super().__init__(message)
        self.status = status


def decode_image(payload: dict) -> tuple[np.ndarray, bytes]:
    """RGB array + raw PNG bytes from a wire image payload."""
    if payload["encoding"] == "png-base64":
        try:
            raw = base64.b64decode(payload["data"], validate=True)
        except Exception as e:
            raise StubError(f"image data is not valid base64: {e}", status=400) from e
    else:
        try:
            raw = Path(payload["data"]).read_bytes()
        except OSError as e:
            raise StubError(f"image path unreadable: {e}", status=400) from e
    try:
        img = Image.open(io.BytesIO(raw))
    except Exception as e:
        raise StubError(f"image bytes are not decodable: {e}", status=400) from e
    if (img.width, img.height) != (payload["width"], payload["height"]):
        raise StubError("stated image dimensions do not match the pixels", status=400)
    return np.asarray(img.convert("RGB"), dtype=np.uint8), raw


def encode_image(arr: np.ndarray) -> dict:
    img = Image.fromarray(arr.astype(np.uint8), mode="RGB")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return {
        "encoding": "png-base64",
        "data": base64.b64encode(buf.getvalue()).decode("ascii"),
        "width": img.width,
        "height": img.height,
    }


def decode_mask(payload: dict) -> np.ndarray:
    if payload["encoding"] == "png-base64":
        raw = base64.b64decode(payload["data"])
    else:
        raw = Path(payload["data"]).read_bytes()
    img = Image.open(io.BytesIO(raw)).convert("L")
    return np.asarray(img, dtype=np.uint8)


@dataclass(frozen=True)
class SceneTruth:
    """One ground-truth scene: object regions keyed for detect/ground."""

    scene_id: str
    objects: tuple[dict, ...]


class SceneIndex:
    """Ground-truth scenes indexed by the sha256 of their PNG bytes."""

    def __init__(self, scene_dir: str | Path):
        self._by_hash: dict[str, SceneTruth] = {}
        root = Path(scene_dir)
        for manifest_path in sorted(root.glob("scenes/*.json")):
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
            truth = SceneTruth(
                scene_id=manifest["scene_id"],
                objects=tuple(manifest["objects"]),
            )
            self._by_hash[manifest["image_sha256"]] = truth

    def __len__(self) -> int:
        return len(self._by_hash)

    def lookup(self, png: bytes) -> SceneTruth:
        digest = hashlib.sha256(png).hexdigest()
        truth = self._by_hash.get(digest)
        if truth is None:
            raise StubError("image is not part of the ground-truth corpus", status=404)
        return truth


def _region_sort_key(region: dict) -> tuple:
    return (region["y1"], region["x1"], region["y2"], region["x2"])


def detect_stub(index: SceneIndex, body: dict) -> dict:
    _, png = decode_image(body["image"])
    truth = index.lookup(png)
    regions = sorted((dict(obj["region"]) for obj in truth.objects), key=_region_sort_key)
    return {"boxes": regions}


def parse_mentions(text: str) -> list[tuple[str, str]]:
    tokens = re.findall(r"[a-z]+", text.lower())
    return [
        (first, second)
        for first, second in zip(tokens, tokens[1:])
        if first in OBJECT_COLORS and second in SHAPES
    ]


def ground_stub(index: SceneIndex, body: dict) -> dict:
    _, png = decode_image(body["image"])
    truth = index.lookup(png)
    mentions = parse_mentions(body["text"])
    if mentions:
        color, shape = mentions[0]
        for obj in truth.objects:
            if obj["color"] == color and obj["shape"] == shape:
                return {"box": dict(obj["region"])}
    # unresolvable text: degenerate box, the client drops and counts it
    return {"box": {"x1": 0.0, "y1": 0.0, "x2": 0.0, "y2": 0.0}}


def extract_stub(body: dict) -> dict:
    prompt = body["prompt"]
    idx = prompt.rfind("Input:")
    hypothesis = prompt[idx + len("Input:"):].split(";")[0].strip() if idx >= 0 else ""
    pairs = []
    for clause in hypothesis.split(" and "):
        words = clause.strip().split()
        if words and words[0].lower() in ARTICLES:
            words = words[1:]
        if len(words) >= 2 and words[0] in OBJECT_COLORS and words[1] in SHAPES:
            obj, prop = " ".join(words[:2]), " ".join(words[2:])
        else:
            obj, prop = " ".join(words), ""
        if obj:
            pairs.append({"object": obj, "property": prop})
    return {"response": json.dumps(pairs)}


def inpaint_stub(body: dict) -> dict:
    arr, _ = decode_image(body["image"])
    mask = decode_mask(body["mask"])
    if mask.shape != arr.shape[:2]:
        raise StubError("mask dimensions differ from image dimensions", status=400)
    colors, counts = np.unique(arr.reshape(-1, 3), axis=0, return_counts=True)
    background = colors[int(np.argmax(counts))]
    filled = arr.copy()
    filled[mask == 255] = background
    return {"image": encode_image(filled)}


def synonym_identity_stub(body: dict) -> dict:
    return {"text": body["text"], "substitutions": []}


def synonym_lexicon_stub(body: dict) -> dict:
    words = body["text"].split(" ")
    for table in (SYNONYM_NOUNS, SYNONYM_MODIFIERS):
        for i, word in enumerate(words):
            replacement = table.get(word.lower())
            if replacement is None:
                continue
            if word[:1].isupper():
                replacement = replacement[:1].upper() + replacement[1:]
            substituted = words[:i] + [replacement] + words[i + 1:]
            return {
                "text": " ".join(substituted),
                "substitutions": [{"from": word, "to": replacement}],
            }
    return {"text": body["text"], "substitutions": []}


def _decode_present(arr: np.ndarray) -> set[tuple[str, str]]:
    """(color, shape) pairs present in a flat-color scene image."""
    present = set()
    for name in sorted(OBJECT_COLORS):
        rgb = OBJECT_COLORS[name]
        mask = np.all(arr == np.array(rgb, dtype=np.uint8), axis=2)
        if not mask.any():
            continue
        labels, count = ndimage.label(mask)
        for idx in range(1, count + 1):
            component = labels == idx
            rows = np.where(np.any(component, axis=1))[0]
            cols = np.where(np.any(component, axis=0))[0]
            if rows.size == 0:
                continue
            height = int(rows[-1] - rows[0] + 1)
            width = int(cols[-1] - cols[0] + 1)
            ratio = float(np.count_nonzero(component)) / (width * height)
            if ratio >= 0.92:
                shape = "square"
            elif ratio >= 0.65:
                shape = "circle"
            else:
                shape = "triangle"
            present.add((name, shape))
    return present


def reference_label(arr: np.ndarray, hypothesis: str) -> str:
    present = _decode_present(arr)
    mentioned = parse_mentions(hypothesis)
    return "entailment" if all(m in present for m in mentioned) else "contradiction"


def predict_stub(mode: str, seed: int, p: float, body: dict) -> dict:
    if mode == "always-entailment":
        return {"label": "entailment"}
    arr, png = decode_image(body["image"])
    label = reference_label(arr, body["hypothesis"])
    if mode == "random":
        digest = hashlib.sha256(
            f"{seed}|".encode() + png + b"|" + body["hypothesis"].encode()
        ).digest()
        if int.from_bytes(digest[:8], "big") / 2**64 < p:
            label = "contradiction" if label == "entailment" else "entailment"
    return {"label": label}
