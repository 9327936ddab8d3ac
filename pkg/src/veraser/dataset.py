"""Dataset ingestion: a JSONL manifest plus an image directory.

Each line holds one record: {"id", "image", "hypothesis", "label"} with the
image path relative to the image directory. Bad lines are collected with
their line numbers and only abort the load past a configurable ratio.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from pathlib import Path

from PIL import Image

from .errors import DatasetInvalid, ManifestUnreadable
from .wire import RelationshipLabel

DEFAULT_MAX_BAD_RATIO = 0.25


@dataclass(frozen=True)
class DatasetRecord:
    id: str
    image: str
    hypothesis: str
    label: RelationshipLabel


@dataclass(frozen=True)
class LineError:
    line_number: int
    message: str


def _parse_line(raw: str, line_number: int, image_dir: Path, seen_ids: set[str]) -> DatasetRecord:
    try:
        obj = json.loads(raw)
    except json.JSONDecodeError as e:
        raise ValueError(f"not valid JSON: {e}") from e
    if not isinstance(obj, dict):
        raise ValueError("record is not a JSON object")
    for key in ("id", "image", "hypothesis", "label"):
        if key not in obj or not isinstance(obj[key], str) or not obj[key]:
            raise ValueError(f"missing or empty field {key!r}")
    if obj["id"] in seen_ids:
        raise ValueError(f"duplicate id {obj['id']!r}")
    try:
        label = RelationshipLabel(obj["label"].lower())
    except ValueError:
        raise ValueError(f"unknown label {obj['label']!r}") from None
    image_path = image_dir / obj["image"]
    try:
        with Image.open(io.BytesIO(image_path.read_bytes())) as img:
            img.verify()
    except OSError as e:
        raise ValueError(f"image {obj['image']!r} missing or undecodable: {e}") from e
    except Exception as e:
        raise ValueError(f"image {obj['image']!r} is not a valid image: {e}") from e
    return DatasetRecord(obj["id"], obj["image"], obj["hypothesis"], label)


def load_dataset(
    manifest_path: str | Path,
    image_dir: str | Path | None = None,
    max_bad_ratio: float = DEFAULT_MAX_BAD_RATIO,
) -> tuple[list[DatasetRecord], list[LineError]]:
    """Validated records plus per-line errors for the rejects.

    The image directory defaults to the manifest's parent. Raises
    ManifestUnreadable when the manifest itself cannot be read and
    DatasetInvalid when the bad-line ratio exceeds ``max_bad_ratio``.
    """
    manifest = Path(manifest_path)
    images = Path(image_dir) if image_dir is not None else manifest.parent
    try:
        text = manifest.read_text(encoding="utf-8")
    except OSError as e:
        raise ManifestUnreadable(f"cannot read manifest {manifest}: {e}") from e

    records: list[DatasetRecord] = []
    errors: list[LineError] = []
    seen_ids: set[str] = set()
    total = 0
    for line_number, raw in enumerate(text.splitlines(), 1):
        if not raw.strip():
            continue
        total += 1
        try:
            record = _parse_line(raw, line_number, images, seen_ids)
        except ValueError as e:
            errors.append(LineError(line_number, str(e)))
            continue
        seen_ids.add(record.id)
        records.append(record)
    if total and len(errors) / total > max_bad_ratio:
        raise DatasetInvalid(
            f"{len(errors)}/{total} manifest lines failed validation "
            f"(limit {max_bad_ratio:.0%}); first: line "
            f"{errors[0].line_number}: {errors[0].message}"
        )
    return records, errors
