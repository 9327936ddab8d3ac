"""Two-sided alignment of description units against detected image regions."""

from __future__ import annotations

from dataclasses import dataclass

from .backends import GroundingCache, Handle, call_detect, call_ground
from .errors import DegenerateBox
from .geometry import BBox, ImageDims, IouThreshold, clamp_to_image, is_unlinked
from .hypothesis import ObjectDescriptionUnit
from .wire import ImagePayload

SKIP_PLURAL = "plural_object"
SKIP_DEGENERATE_GROUNDING = "degenerate_grounding"


@dataclass(frozen=True)
class LinkedPair:
    """A description unit grounded to one premise region."""

    unit: ObjectDescriptionUnit
    region: BBox
    confidence: float | None = None

    def to_json(self) -> dict:
        return {
            "unit": self.unit.to_json(),
            "region": self.region.to_json(),
            "confidence": self.confidence,
        }


@dataclass
class AlignmentResult:
    """Linked pairs, un-linked regions, and skip accounting for one sample."""

    linked: list[LinkedPair]
    unlinked: list[BBox]
    skipped_units: list[tuple[ObjectDescriptionUnit, str]]
    detected: list[BBox]
    dropped_detections: int = 0

    def all_units(self) -> list[ObjectDescriptionUnit]:
        """Every unit that reached alignment, back in hypothesis order."""
        units = [pair.unit for pair in self.linked]
        units.extend(unit for unit, _ in self.skipped_units)
        units.sort(key=lambda u: (u.object_index, u.property_index or -1, u.object))
        return units

    def to_json(self) -> dict:
        return {
            "linked": [pair.to_json() for pair in self.linked],
            "unlinked": [box.to_json() for box in self.unlinked],
            "skipped_units": [
                {"unit": unit.to_json(), "reason": reason}
                for unit, reason in self.skipped_units
            ],
            "detected": [box.to_json() for box in self.detected],
            "dropped_detections": self.dropped_detections,
        }


def _ingest_detections(image: ImagePayload, detector: Handle) -> tuple[list[BBox], int]:
    dims = ImageDims(image.width, image.height)
    boxes: list[BBox] = []
    dropped = 0
    for raw in call_detect(detector, image):
        try:
            box = BBox(float(raw["x1"]), float(raw["y1"]), float(raw["x2"]), float(raw["y2"]))
            boxes.append(clamp_to_image(box, dims))
        except DegenerateBox:
            dropped += 1
    # canonical order keeps downstream artifacts transport-independent
    boxes.sort(key=lambda b: (b.y1, b.x1, b.y2, b.x2))
    return boxes, dropped


def detect_objects(image: ImagePayload, detector: Handle) -> list[BBox]:
    """Detector regions clamped to the image; degenerate boxes dropped."""
    boxes, _ = _ingest_detections(image, detector)
    return boxes


def ground_unit(
    image: ImagePayload,
    unit: ObjectDescriptionUnit,
    grounder: Handle,
    cache: GroundingCache | None = None,
) -> LinkedPair:
    """One clamped region for the unit's text.

    Raises DegenerateBox when the grounder's region is invalid, in which
    case the caller moves the unit to the skip list.
    """
    if unit.plural:
        raise ValueError("plural units must be skipped before grounding")
    if cache is not None:
        raw, confidence = cache.lookup_or_call(grounder, image, unit.text)
    else:
        raw, confidence = call_ground(grounder, image, unit.text)
    dims = ImageDims(image.width, image.height)
    box = BBox(float(raw["x1"]), float(raw["y1"]), float(raw["x2"]), float(raw["y2"]))
    return LinkedPair(unit, clamp_to_image(box, dims), confidence)


def align(
    image: ImagePayload,
    units: list[ObjectDescriptionUnit],
    detector: Handle,
    grounder: Handle,
    t: IouThreshold,
    cache: GroundingCache | None = None,
) -> AlignmentResult:
    """Ground every non-plural unit and classify detected regions.

    A detected region is un-linked iff its max IoU against every linked
    grounding region stays below the threshold. Backend errors propagate
    so the harness can skip the sample with a counted reason.
    """
    detected, dropped = _ingest_detections(image, detector)
    linked: list[LinkedPair] = []
    skipped: list[tuple[ObjectDescriptionUnit, str]] = []
    for unit in units:
        if unit.plural:
            skipped.append((unit, SKIP_PLURAL))
            continue
        try:
            linked.append(ground_unit(image, unit, grounder, cache))
        except DegenerateBox:
            skipped.append((unit, SKIP_DEGENERATE_GROUNDING))
    linked_regions = [pair.region for pair in linked]
    unlinked = [box for box in detected if is_unlinked(box, linked_regions, t)]
    return AlignmentResult(
        linked=linked,
        unlinked=unlinked,
        skipped_units=skipped,
        detected=detected,
        dropped_detections=dropped,
    )
