"""Wire protocol vocabulary: payload types, endpoint schemas, validation.

All six backend roles speak JSON over HTTP (or the in-process equivalent);
images travel as base64 PNG by default, with a local-path mode for
same-host runs. Responses are validated against these schemas before any
other module sees them.
"""

from __future__ import annotations

import base64
import enum
import hashlib
import io
import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np
from PIL import Image

from .errors import BackendMalformed

ROLES = ("extract", "detect", "ground", "inpaint", "synonym", "predict")

PNG_BASE64 = "png-base64"
PNG_PATH = "png-path"


class RelationshipLabel(str, enum.Enum):
    """The three-way visual entailment codomain."""

    ENTAILMENT = "entailment"
    NEUTRAL = "neutral"
    CONTRADICTION = "contradiction"

    @classmethod
    def parse(cls, value: str) -> "RelationshipLabel":
        try:
            return cls(value.lower())
        except ValueError:
            raise BackendMalformed(f"unknown relationship label: {value!r}") from None


@dataclass(frozen=True)
class ImagePayload:
    """A PNG image plus its pixel dimensions."""

    width: int
    height: int
    png: bytes
    path: str | None = None

    @classmethod
    def from_png(cls, data: bytes, path: str | None = None) -> "ImagePayload":
        img = Image.open(io.BytesIO(data))
        return cls(img.width, img.height, data, path)

    @classmethod
    def from_file(cls, path: str | Path) -> "ImagePayload":
        return cls.from_png(Path(path).read_bytes(), path=str(path))

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "ImagePayload":
        mode = "L" if arr.ndim == 2 else "RGB"
        img = Image.fromarray(arr.astype(np.uint8), mode=mode)
        buf = io.BytesIO()
        img.save(buf, format="PNG")
        return cls(img.width, img.height, buf.getvalue())

    def to_array(self, mode: str = "RGB") -> np.ndarray:
        img = Image.open(io.BytesIO(self.png)).convert(mode)
        return np.asarray(img, dtype=np.uint8)

    def sha256(self) -> str:
        return hashlib.sha256(self.png).hexdigest()

    def to_wire(self, encoding: str = PNG_BASE64) -> dict:
        if encoding == PNG_PATH:
            if not self.path:
                raise ValueError("payload has no backing file for png-path mode")
            data = self.path
        elif encoding == PNG_BASE64:
            data = base64.b64encode(self.png).decode("ascii")
        else:
            raise ValueError(f"unknown payload encoding: {encoding}")
        return {"encoding": encoding, "data": data, "width": self.width, "height": self.height}

    @classmethod
    def from_wire(cls, obj: dict) -> "ImagePayload":
        encoding = obj.get("encoding")
        if encoding == PNG_BASE64:
            try:
                raw = base64.b64decode(obj["data"], validate=True)
            except Exception as e:
                raise BackendMalformed(f"image data is not valid base64: {e}") from e
            path = None
        elif encoding == PNG_PATH:
            path = obj["data"]
            try:
                raw = Path(path).read_bytes()
            except OSError as e:
                raise BackendMalformed(f"image path unreadable: {e}") from e
        else:
            raise BackendMalformed(f"unknown image encoding: {encoding!r}")
        try:
            img = Image.open(io.BytesIO(raw))
            width, height = img.width, img.height
        except Exception as e:
            raise BackendMalformed(f"image bytes are not a decodable PNG: {e}") from e
        if width != obj["width"] or height != obj["height"]:
            raise BackendMalformed(
                f"stated dims {obj['width']}x{obj['height']} != actual {width}x{height}"
            )
        return cls(width, height, raw, path)


@dataclass(frozen=True)
class Prediction:
    """A system-under-test verdict for one premise/hypothesis pair."""

    label: RelationshipLabel
    confidence: float | None = None

    def to_json(self) -> dict:
        out: dict = {"label": self.label.value}
        if self.confidence is not None:
            out["confidence"] = self.confidence
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "Prediction":
        return cls(RelationshipLabel.parse(obj["label"]), obj.get("confidence"))


_IMAGE_SCHEMA = {
    "type": "object",
    "properties": {
        "encoding": {"enum": [PNG_BASE64, PNG_PATH]},
        "data": {"type": "string"},
        "width": {"type": "integer", "minimum": 1},
        "height": {"type": "integer", "minimum": 1},
    },
    "required": ["encoding", "data", "width", "height"],
    "additionalProperties": False,
}

_BOX_SCHEMA = {
    "type": "object",
    "properties": {
        "x1": {"type": "number"},
        "y1": {"type": "number"},
        "x2": {"type": "number"},
        "y2": {"type": "number"},
        "score": {"type": "number"},
    },
    "required": ["x1", "y1", "x2", "y2"],
    "additionalProperties": False,
}

_PLAIN_BOX_SCHEMA = {
    "type": "object",
    "properties": {
        "x1": {"type": "number"},
        "y1": {"type": "number"},
        "x2": {"type": "number"},
        "y2": {"type": "number"},
    },
    "required": ["x1", "y1", "x2", "y2"],
    "additionalProperties": False,
}

REQUEST_SCHEMAS = {
    "extract": {
        "type": "object",
        "properties": {"prompt": {"type": "string"}},
        "required": ["prompt"],
        "additionalProperties": False,
    },
    "detect": {
        "type": "object",
        "properties": {"image": _IMAGE_SCHEMA},
        "required": ["image"],
        "additionalProperties": False,
    },
    "ground": {
        "type": "object",
        "properties": {"image": _IMAGE_SCHEMA, "text": {"type": "string"}},
        "required": ["image", "text"],
        "additionalProperties": False,
    },
    "inpaint": {
        "type": "object",
        "properties": {"image": _IMAGE_SCHEMA, "mask": _IMAGE_SCHEMA},
        "required": ["image", "mask"],
        "additionalProperties": False,
    },
    "synonym": {
        "type": "object",
        "properties": {"text": {"type": "string"}},
        "required": ["text"],
        "additionalProperties": False,
    },
    "predict": {
        "type": "object",
        "properties": {"image": _IMAGE_SCHEMA, "hypothesis": {"type": "string"}},
        "required": ["image", "hypothesis"],
        "additionalProperties": False,
    },
}

RESPONSE_SCHEMAS = {
    "extract": {
        "type": "object",
        "properties": {"response": {"type": "string"}},
        "required": ["response"],
        "additionalProperties": False,
    },
    "detect": {
        "type": "object",
        "properties": {"boxes": {"type": "array", "items": _BOX_SCHEMA}},
        "required": ["boxes"],
        "additionalProperties": False,
    },
    "ground": {
        "type": "object",
        "properties": {
            "box": _PLAIN_BOX_SCHEMA,
            "confidence": {"type": "number", "minimum": 0, "maximum": 1},
        },
        "required": ["box"],
        "additionalProperties": False,
    },
    "inpaint": {
        "type": "object",
        "properties": {"image": _IMAGE_SCHEMA},
        "required": ["image"],
        "additionalProperties": False,
    },
    "synonym": {
        "type": "object",
        "properties": {
            "text": {"type": "string"},
            "substitutions": {
                "type": "array",
                "items": {
                    "type": "object",
                    "properties": {"from": {"type": "string"}, "to": {"type": "string"}},
                    "required": ["from", "to"],
                    "additionalProperties": False,
                },
            },
        },
        "required": ["text", "substitutions"],
        "additionalProperties": False,
    },
    "predict": {
        "type": "object",
        "properties": {
            "label": {"enum": [label.value for label in RelationshipLabel]},
            "confidence": {"type": "number", "minimum": 0, "maximum": 1},
        },
        "required": ["label"],
        "additionalProperties": False,
    },
}

ENDPOINT_PATHS = {role: f"/v1/{role}" for role in ROLES}


def validate_request(role: str, body: dict) -> None:
    try:
        jsonschema.validate(body, REQUEST_SCHEMAS[role])
    except jsonschema.ValidationError as e:
        raise BackendMalformed(f"{role} request violates schema: {e.message}") from e


def validate_response(role: str, body: dict) -> None:
    try:
        jsonschema.validate(body, RESPONSE_SCHEMAS[role])
    except jsonschema.ValidationError as e:
        raise BackendMalformed(f"{role} response violates schema: {e.message}") from e


def canonical_json(obj) -> str:
    """Stable serialization used for manifests, reports, and fixtures."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def load_golden_fixtures() -> list[dict]:
    """The shipped request/response conformance fixtures, sorted by name."""
    from importlib import resources

    root = resources.files("veraser.resources").joinpath("golden")
    fixtures = [
        json.loads(entry.read_text(encoding="utf-8"))
        for entry in root.iterdir()
        if entry.name.endswith(".json")
    ]
    fixtures.sort(key=lambda f: f["name"])
    return fixtures
