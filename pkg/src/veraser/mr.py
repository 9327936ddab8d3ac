"""The three metamorphic relations: applicability, erasing, and oracles.

MR1 erases a linked region together with its description unit (oracle
stays entailment, after synonym substitution on the remaining units).
MR2 erases a linked region only (oracle becomes contradiction). MR3
erases an un-linked region only (oracle stays entailment).
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass

from .alignment import AlignmentResult
from .backends import Handle, call_inpaint, call_synonym
from .errors import BackendMalformed, BackendUnavailable, DimensionMismatch
from .geometry import BBox, ImageDims, IouThreshold, erasure_feasible, render_mask
from .hypothesis import ObjectDescriptionUnit, reassemble_after_erase
from .wire import ImagePayload, RelationshipLabel


class MRKind(str, enum.Enum):
    MR1 = "MR1"
    MR2 = "MR2"
    MR3 = "MR3"


ORACLE_BY_KIND = {
    MRKind.MR1: RelationshipLabel.ENTAILMENT,
    MRKind.MR2: RelationshipLabel.CONTRADICTION,
    MRKind.MR3: RelationshipLabel.ENTAILMENT,
}


@dataclass(frozen=True)
class Instantiation:
    """One applicable perturbation: which MR, which region, which unit."""

    kind: MRKind
    region: BBox
    unit: ObjectDescriptionUnit | None = None


@dataclass(frozen=True)
class Provenance:
    erased_region: BBox
    erased_unit: ObjectDescriptionUnit | None
    substitutions: tuple[dict, ...] = ()
    synonym_fallback: bool = False

    def to_json(self) -> dict:
        return {
            "erased_region": self.erased_region.to_json(),
            "erased_unit": self.erased_unit.to_json() if self.erased_unit else None,
            "substitutions": list(self.substitutions),
            "synonym_fallback": self.synonym_fallback,
        }


@dataclass(frozen=True)
class GeneratedTest:
    """A perturbed premise/hypothesis pair with its derived oracle."""

    test_id: str
    source_id: str
    mr: MRKind
    premise: ImagePayload
    hypothesis: str
    oracle: RelationshipLabel
    provenance: Provenance

    def to_manifest_entry(self, premise_path: str) -> dict:
        return {
            "test_id": self.test_id,
            "source_id": self.source_id,
            "mr": self.mr.value,
            "premise": premise_path,
            "premise_sha256": self.premise.sha256(),
            "hypothesis": self.hypothesis,
            "oracle": self.oracle.value,
            "provenance": self.provenance.to_json(),
        }


@dataclass
class SynonymOutcome:
    text: str
    substitutions: list[dict]
    fallback: bool = False


def test_id_for(source_id: str, kind: MRKind, region: BBox, unit_text: str | None = None) -> str:
    """Content-derived id: reruns regenerate the same id for the same target."""
    material = "|".join(
        [
            source_id,
            kind.value,
            f"{region.x1!r},{region.y1!r},{region.x2!r},{region.y2!r}",
            unit_text or "",
        ]
    )
    digest = hashlib.sha256(material.encode("utf-8")).hexdigest()[:16]
    return f"{kind.value.lower()}-{digest}"


def applicable_instantiations(
    sample, alignment: AlignmentResult, t: IouThreshold
) -> list[Instantiation]:
    """Every MR target on this sample that passes the feasibility guard.

    Empty unless the source label is entailment. Feasibility compares the
    target against every other detected region (coordinate-equal boxes are
    the target itself and excluded). MR1 additionally needs a second unit
    so the reassembled hypothesis stays non-empty.
    """
    if RelationshipLabel(sample.label) is not RelationshipLabel.ENTAILMENT:
        return []
    out: list[Instantiation] = []
    n_units = len(alignment.linked) + len(alignment.skipped_units)
    mr1: list[Instantiation] = []
    mr2: list[Instantiation] = []
    for pair in alignment.linked:
        remaining = [box for box in alignment.detected if box != pair.region]
        if not erasure_feasible(pair.region, remaining, t):
            continue
        if n_units >= 2:
            mr1.append(Instantiation(MRKind.MR1, pair.region, pair.unit))
        mr2.append(Instantiation(MRKind.MR2, pair.region, pair.unit))
    out.extend(mr1)
    out.extend(mr2)
    for box in alignment.unlinked:
        remaining = [other for other in alignment.detected if other != box]
        if erasure_feasible(box, remaining, t):
            out.append(Instantiation(MRKind.MR3, box))
    return out


def erase_object(image: ImagePayload, region: BBox, inpainter: Handle) -> ImagePayload:
    """Mask the region and have the inpainter repair it; dims must survive."""
    dims = ImageDims(image.width, image.height)
    mask = render_mask(dims, region)
    inpainted = call_inpaint(inpainter, image, ImagePayload.from_array(mask.pixels))
    if (inpainted.width, inpainted.height) != (image.width, image.height):
        raise DimensionMismatch(
            f"inpainter returned {inpainted.width}x{inpainted.height} "
            f"for a {image.width}x{image.height} image"
        )
    return inpainted


def synonym_transform(text: str, synonymizer: Handle) -> SynonymOutcome:
    """Substituted text plus the applied word pairs; identity on outage.

    The backend may only swap whole words it lists: word count must be
    preserved and every changed position must appear in the substitution
    list, otherwise the response counts as malformed.
    """
    if not text:
        raise ValueError("text must be non-empty")
    try:
        new_text, substitutions = call_synonym(synonymizer, text)
    except BackendUnavailable:
        return SynonymOutcome(text=text, substitutions=[], fallback=True)
    old_words = text.split(" ")
    new_words = new_text.split(" ")
    if len(old_words) != len(new_words):
        raise BackendMalformed("synonym backend changed the word count")
    listed = {(s["from"], s["to"]) for s in substitutions}
    for old, new in zip(old_words, new_words):
        if old != new and (old, new) not in listed:
            raise BackendMalformed(f"unlisted substitution {old!r} -> {new!r}")
    return SynonymOutcome(text=new_text, substitutions=list(substitutions))


def apply_mr1(
    sample,
    alignment: AlignmentResult,
    target: Instantiation,
    inpainter: Handle,
    synonymizer: Handle,
    image: ImagePayload,
) -> GeneratedTest:
    """Joint erase: inpaint the region, drop its unit, synonymize the rest."""
    premise = erase_object(image, target.region, inpainter)
    reassembled = reassemble_after_erase(
        alignment.all_units(), target.unit, hypothesis=sample.hypothesis
    )
    outcome = synonym_transform(reassembled, synonymizer)
    return GeneratedTest(
        test_id=test_id_for(sample.id, MRKind.MR1, target.region, target.unit.text),
        source_id=sample.id,
        mr=MRKind.MR1,
        premise=premise,
        hypothesis=outcome.text,
        oracle=ORACLE_BY_KIND[MRKind.MR1],
        provenance=Provenance(
            erased_region=target.region,
            erased_unit=target.unit,
            substitutions=tuple(outcome.substitutions),
            synonym_fallback=outcome.fallback,
        ),
    )


def apply_mr2(
    sample,
    alignment: AlignmentResult,
    target: Instantiation,
    inpainter: Handle,
    image: ImagePayload,
) -> GeneratedTest:
    """Erase the linked region only; the hypothesis stays byte-identical."""
    premise = erase_object(image, target.region, inpainter)
    return GeneratedTest(
        test_id=test_id_for(sample.id, MRKind.MR2, target.region),
        source_id=sample.id,
        mr=MRKind.MR2,
        premise=premise,
        hypothesis=sample.hypothesis,
        oracle=ORACLE_BY_KIND[MRKind.MR2],
        provenance=Provenance(erased_region=target.region, erased_unit=None),
    )


def apply_mr3(
    sample,
    alignment: AlignmentResult,
    target: Instantiation,
    inpainter: Handle,
    image: ImagePayload,
) -> GeneratedTest:
    """Erase an un-linked region only; the oracle stays entailment."""
    premise = erase_object(image, target.region, inpainter)
    return GeneratedTest(
        test_id=test_id_for(sample.id, MRKind.MR3, target.region),
        source_id=sample.id,
        mr=MRKind.MR3,
        premise=premise,
        hypothesis=sample.hypothesis,
        oracle=ORACLE_BY_KIND[MRKind.MR3],
        provenance=Provenance(erased_region=target.region, erased_unit=None),
    )
