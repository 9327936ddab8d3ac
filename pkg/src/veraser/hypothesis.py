"""Hypothesis deconstruction into object description units.

Covers the extraction prompt, response parsing, object/property index
location, unit assembly, plural detection, and hypothesis reassembly after
a unit has been erased.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from importlib import resources

from .errors import EmptyPool, MalformedResponse, NoRemainingUnits

PROMPT_TEMPLATE_RESOURCE = "prompt_template_v1.txt"
SLOT_TOKEN = "[Input hypothesis]"
EXAMPLES_MARKER = "{examples}"
DEFAULT_ICL_COUNT = 10

ARTICLES = ("a", "an", "the")

NUMERAL_WORDS = frozenset(
    ["two", "three", "four", "five", "six", "seven", "eight", "nine", "ten"]
)

# Singular nouns ending in "s" that the suffix heuristic must not flag.
DEFAULT_SINGULAR_EXCEPTIONS = frozenset(
    [
        "bus", "gas", "glass", "grass", "dress", "class", "boss", "cross",
        "chess", "press", "kiss", "mess", "lens", "news", "tennis", "iris",
        "atlas", "alias", "bias", "bonus", "cactus", "campus", "canvas",
        "census", "circus", "corpus", "focus", "status", "virus", "christmas",
        "princess", "waitress", "address", "business", "witness", "mattress",
        "analysis", "basis", "crisis", "thesis", "axis", "oasis", "pelvis",
    ]
)


@dataclass(frozen=True)
class ExtractionPair:
    """One extracted object string plus its (possibly empty) property string."""

    object: str
    property: str

    def __post_init__(self):
        if not self.object or self.object != self.object.strip():
            raise ValueError(f"object must be non-empty and stripped: {self.object!r}")


@dataclass(frozen=True)
class ObjectDescriptionUnit:
    """An object with its property, located inside the source hypothesis."""

    object: str
    property: str
    object_index: int
    property_index: int | None
    text: str
    plural: bool

    def to_json(self) -> dict:
        return {
            "object": self.object,
            "property": self.property,
            "object_index": self.object_index,
            "property_index": self.property_index,
            "text": self.text,
            "plural": self.plural,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ObjectDescriptionUnit":
        return cls(
            object=obj["object"],
            property=obj["property"],
            object_index=obj["object_index"],
            property_index=obj["property_index"],
            text=obj["text"],
            plural=obj["plural"],
        )


@dataclass(frozen=True)
class PromptExample:
    """A candidate hypothesis with its gold extraction, usable in the prompt."""

    sentence: str
    pairs: tuple[ExtractionPair, ...]


@dataclass(frozen=True)
class CandidatePool:
    """Sentences with gold extractions available for in-context examples."""

    entries: tuple[PromptExample, ...]


@dataclass(frozen=True)
class PromptSpec:
    """Fixed instruction template plus the rendered in-context examples."""

    instruction: str
    examples: tuple[PromptExample, ...]
    slot: str = SLOT_TOKEN


@dataclass
class CombineOutcome:
    """Units built from extraction pairs plus the pairs that could not be."""

    units: list[ObjectDescriptionUnit]
    dropped: list[ExtractionPair] = field(default_factory=list)
    degraded: list[ExtractionPair] = field(default_factory=list)


def load_prompt_template() -> str:
    return resources.files("veraser.resources").joinpath(PROMPT_TEMPLATE_RESOURCE).read_text("utf-8")


def prompt_template_sha256() -> str:
    """Hash of the shipped template file, recorded in run reports."""
    raw = resources.files("veraser.resources").joinpath(PROMPT_TEMPLATE_RESOURCE).read_bytes()
    return hashlib.sha256(raw).hexdigest()


def default_candidate_pool() -> CandidatePool:
    raw = resources.files("veraser.resources").joinpath("icl_candidates.json").read_text("utf-8")
    entries = tuple(
        PromptExample(
            sentence=item["sentence"],
            pairs=tuple(ExtractionPair(p["object"], p["property"]) for p in item["pairs"]),
        )
        for item in json.loads(raw)
    )
    return CandidatePool(entries)


def default_prompt_spec() -> PromptSpec:
    examples = select_icl_examples(default_candidate_pool(), DEFAULT_ICL_COUNT)
    return PromptSpec(instruction=load_prompt_template(), examples=tuple(examples))


def select_icl_examples(pool: CandidatePool, k: int) -> list[PromptExample]:
    """Pick the k longest pool sentences; ties break lexicographically."""
    if not pool.entries:
        raise EmptyPool("candidate pool is empty")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    ranked = sorted(pool.entries, key=lambda ex: (-len(ex.sentence), ex.sentence))
    return ranked[:k]


def render_pairs(pairs: list[ExtractionPair] | tuple[ExtractionPair, ...]) -> str:
    """Canonical JSON rendering of extraction pairs, inverse of parse_extraction."""
    return json.dumps([{"object": p.object, "property": p.property} for p in pairs])


def build_prompt(hypothesis: str, spec: PromptSpec) -> str:
    """Render the extraction prompt with the hypothesis in the slot position."""
    if not hypothesis:
        raise ValueError("hypothesis must be non-empty")
    block = "".join(
        f"Example{i}:\nInput: {ex.sentence}\nOutput: {render_pairs(ex.pairs)}\n"
        for i, ex in enumerate(spec.examples, 1)
    )
    return spec.instruction.replace(EXAMPLES_MARKER, block).replace(spec.slot, hypothesis)


def parse_extraction(response: str) -> list[ExtractionPair]:
    """Parse an extractor response into pairs.

    Accepts a JSON array of {"object", "property"} string fields; trims
    whitespace and drops entries whose object is empty after trimming.
    Raises MalformedResponse for anything else, which callers count as a
    skipped sample.
    """
    try:
        data = json.loads(response)
    except (json.JSONDecodeError, TypeError) as e:
        raise MalformedResponse(f"extractor response is not JSON: {e}") from e
    if not isinstance(data, list):
        raise MalformedResponse(f"expected a JSON array, got {type(data).__name__}")
    pairs = []
    for i, item in enumerate(data):
        if not isinstance(item, dict):
            raise MalformedResponse(f"entry {i} is not an object")
        if "object" not in item or "property" not in item:
            raise MalformedResponse(f"entry {i} lacks object/property fields")
        obj, prop = item["object"], item["property"]
        if not isinstance(obj, str) or not isinstance(prop, str):
            raise MalformedResponse(f"entry {i} has non-string fields")
        obj = obj.strip()
        if not obj:
            continue
        pairs.append(ExtractionPair(obj, prop.strip()))
    return pairs


def _find_ci(haystack: str, needle: str) -> int:
    return haystack.lower().find(needle.lower())


def _object_is_plural(obj: str, singular_exceptions: frozenset[str]) -> bool:
    words = re.findall(r"[a-z0-9]+", obj.lower())
    if not words:
        return False
    for w in words:
        if w in NUMERAL_WORDS:
            return True
        if w.isdigit() and int(w) >= 2:
            return True
    final = words[-1]
    return len(final) >= 3 and final.endswith("s") and final not in singular_exceptions


def detect_plural(
    unit: ObjectDescriptionUnit,
    singular_exceptions: frozenset[str] = DEFAULT_SINGULAR_EXCEPTIONS,
) -> bool:
    """True when the unit's object reads as plural (numeral or -s suffix)."""
    return _object_is_plural(unit.object, singular_exceptions)


def combine_units(
    hypothesis: str,
    pairs: list[ExtractionPair],
    singular_exceptions: frozenset[str] = DEFAULT_SINGULAR_EXCEPTIONS,
) -> CombineOutcome:
    """Locate each pair inside the hypothesis and assemble description units.

    The element with the smaller index comes first in the unit text. Pairs
    whose object does not occur in the hypothesis are dropped; pairs whose
    property does not occur degrade to object-only units. Units come back
    ordered by object index.
    """
    if not hypothesis:
        raise ValueError("hypothesis must be non-empty")
    outcome = CombineOutcome(units=[])
    for pair in pairs:
        obj_idx = _find_ci(hypothesis, pair.object)
        if obj_idx < 0:
            outcome.dropped.append(pair)
            continue
        prop = pair.property
        prop_idx: int | None = None
        if prop:
            prop_idx = _find_ci(hypothesis, prop)
            if prop_idx < 0:
                outcome.degraded.append(pair)
                prop = ""
                prop_idx = None
        if prop_idx is not None and prop_idx < obj_idx:
            text = f"{prop} {pair.object}"
        elif prop:
            text = f"{pair.object} {prop}"
        else:
            text = pair.object
        outcome.units.append(
            ObjectDescriptionUnit(
                object=pair.object,
                property=prop,
                object_index=obj_idx,
                property_index=prop_idx,
                text=text,
                plural=_object_is_plural(pair.object, singular_exceptions),
            )
        )
    outcome.units.sort(key=lambda u: (u.object_index, u.property_index or -1, u.object))
    return outcome


def _contains_whole_word(text: str, phrase: str) -> bool:
    return re.search(rf"\b{re.escape(phrase)}\b", text, re.IGNORECASE) is not None


def _preceding_article(hypothesis: str, index: int) -> str | None:
    words = hypothesis[:index].rstrip().split()
    if words and words[-1].lower() in ARTICLES:
        return words[-1]
    return None


def reassemble_after_erase(
    units: list[ObjectDescriptionUnit],
    erased: ObjectDescriptionUnit,
    hypothesis: str | None = None,
) -> str:
    """Rebuild the hypothesis text after erasing one unit.

    Remaining units whose property mentions the erased object (whole-word,
    case-insensitive) shrink to their object-only text. When the source
    hypothesis is supplied, an unreduced first unit keeps the article that
    preceded it there; reduced units never regain one.
    """
    if erased not in units:
        raise ValueError("erased unit is not a member of the unit list")
    remaining = list(units)
    remaining.remove(erased)
    if not remaining:
        raise NoRemainingUnits("no description units remain after erasing")

    parts = []
    for pos, unit in enumerate(remaining):
        reduced = bool(unit.property) and _contains_whole_word(unit.property, erased.object)
        text = unit.object if reduced else unit.text
        if pos == 0 and not reduced and hypothesis is not None:
            lead_idx = unit.object_index
            if unit.property_index is not None and unit.property_index < unit.object_index:
                lead_idx = unit.property_index
            article = _preceding_article(hypothesis, lead_idx)
            if article:
                text = f"{article} {text}"
        parts.append(text)
    return " and ".join(parts)
