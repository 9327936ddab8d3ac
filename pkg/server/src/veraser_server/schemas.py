"""Request schemas for the wire protocol, validated server-side.

Kept independent from any client implementation: the protocol contract is
the JSON shapes documented here, not shared code.
"""

from __future__ import annotations

import jsonschema

ROLES = ("extract", "detect", "ground", "inpaint", "synonym", "predict")

_IMAGE = {
    "type": "object",
    "properties": {
        "encoding": {"enum": ["png-base64", "png-path"]},
        "data": {"type": "string"},
        "width": {"type": "integer", "minimum": 1},
        "height": {"type": "integer", "minimum": 1},
    },
    "required": ["encoding", "data", "width", "height"],
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
        "properties": {"image": _IMAGE},
        "required": ["image"],
        "additionalProperties": False,
    },
    "ground": {
        "type": "object",
        "properties": {"image": _IMAGE, "text": {"type": "string"}},
        "required": ["image", "text"],
        "additionalProperties": False,
    },
    "inpaint": {
        "type": "object",
        "properties": {"image": _IMAGE, "mask": _IMAGE},
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
        "properties": {"image": _IMAGE, "hypothesis": {"type": "string"}},
        "required": ["image", "hypothesis"],
        "additionalProperties": False,
    },
}


def validate_request(role: str, body) -> str | None:
    """None when the body satisfies the role's schema, else the error text."""
    try:
        jsonschema.validate(body, REQUEST_SCHEMAS[role])
        return None
    except jsonschema.ValidationError as e:
        return e.message
