"""End-to-end orchestration: generate, execute, detect, report, review.

A run directory accumulates tests.jsonl + images/ (generate),
predictions.jsonl (execute), issues.jsonl + report.json (detect), and
report.md (report). All files are written atomically with canonical
serialization so reruns with the same seed are byte-identical regardless
of worker count.
"""

from __future__ import annotations

import json
import math
import os
import random
import tempfile
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__, mr
from . import synthetic  # noqa: F401  (registers the in-process backends)
from .alignment import align
from .backends import (
    BackendEndpoint,
    GroundingCache,
    Handle,
    call_extract,
    call_predict,
    resolve_endpoint,
)
from .dataset import DatasetRecord, load_dataset
from .errors import (
    BackendMalformed,
    BackendUnavailable,
    DimensionMismatch,
    MalformedResponse,
    NoRemainingUnits,
    PendingVerdicts,
    RunAborted,
)
from .geometry import IouThreshold
from .hypothesis import (
    build_prompt,
    combine_units,
    default_prompt_spec,
    parse_extraction,
    prompt_template_sha256,
)
from .mr import GeneratedTest, MRKind, applicable_instantiations
from .wire import ImagePayload, canonical_json

SKIP_NON_ENTAILMENT = "non_entailment_label"
SKIP_EXTRACTOR_MALFORMED = "extractor_malformed"
SKIP_BACKEND_UNAVAILABLE = "backend_unavailable"
SKIP_BACKEND_MALFORMED = "backend_malformed"
SKIP_NO_UNITS = "no_units"

TESTS_FILE = "tests.jsonl"
ALIGNMENTS_FILE = "alignments.jsonl"
GENERATION_FILE = "generation.json"
PREDICTIONS_FILE = "predictions.jsonl"
ISSUES_FILE = "issues.jsonl"
REPORT_JSON = "report.json"
REPORT_MD = "report.md"
VTR_SHEET_FILE = "vtr_sheet.json"
VTR_RESULT_FILE = "vtr.json"


@dataclass
class RunConfig:
    dataset_manifest: Path
    output_dir: Path
    backends: dict[str, BackendEndpoint]
    image_dir: Path | None = None
    iou_threshold: float = 0.1
    mr_selection: tuple[str, ...] = ("MR1", "MR2", "MR3")
    workers: int = 4
    seed: int = 0
    cache_grounding: bool = True

    @classmethod
    def from_file(cls, path: str | Path, **overrides) -> "RunConfig":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        backends = {
            role: BackendEndpoint(
                role=role,
                base_url=spec["base_url"],
                timeout_ms=spec.get("timeout_ms", 10_000),
                retries=spec.get("retries", 2),
            )
            for role, spec in raw["backends"].items()
        }
        config = cls(
            dataset_manifest=Path(raw["dataset"]["manifest"]),
            image_dir=Path(raw["dataset"]["image_dir"]) if "image_dir" in raw["dataset"] else None,
            output_dir=Path(raw["output_dir"]),
            backends=backends,
            iou_threshold=raw.get("iou_threshold", 0.1),
            mr_selection=tuple(raw.get("mr_selection", ["MR1", "MR2", "MR3"])),
            workers=raw.get("workers", 4),
            seed=raw.get("seed", 0),
            cache_grounding=raw.get("cache_grounding", True),
        )
        for key, value in overrides.items():
            if value is not None:
                setattr(config, key, value)
        config.mr_selection = tuple(config.mr_selection)
        return config

    def metadata(self) -> dict:
        # transport-free on purpose: reports stay byte-identical whether the
        # same backends answer in-process or over HTTP
        return {
            "prompt_template_sha256": prompt_template_sha256(),
            "package_version": __version__,
        }

    def endpoints(self) -> dict:
        return {role: ep.base_url for role, ep in sorted(self.backends.items())}


@dataclass
class _RecordOutcome:
    record_id: str
    skip: str | None = None
    drops: Counter = field(default_factory=Counter)
    tests: list[GeneratedTest] = field(default_factory=list)
    alignment_json: dict | None = None


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_if_changed(path: Path, data: bytes) -> None:
    if path.exists() and path.read_bytes() == data:
        return
    _atomic_write(path, data)


def _jsonl(entries: list[dict]) -> bytes:
    return ("".join(canonical_json(e) + "\n" for e in entries)).encode("utf-8")


class _Backends:
    """Resolved handles for one run, shared across workers."""

    def __init__(self, config: RunConfig, roles: tuple[str, ...]):
        for role in roles:
            if role not in config.backends:
                raise RunAborted(f"config lacks a backend for role {role!r}")
        self.handles: dict[str, Handle] = {
            role: resolve_endpoint(config.backends[role]) for role in roles
        }
        self.cache = GroundingCache(enabled=config.cache_grounding)

    def __getitem__(self, role: str) -> Handle:
        return self.handles[role]


def _process_record(
    record: DatasetRecord,
    image_dir: Path,
    backends: _Backends,
    threshold: IouThreshold,
    mr_selection: tuple[str, ...],
    prompt_spec,
) -> _RecordOutcome:
    outcome = _RecordOutcome(record_id=record.id)
    if record.label.value != "entailment":
        outcome.skip = SKIP_NON_ENTAILMENT
        return outcome
    try:
        image = ImagePayload.from_file(image_dir / record.image)
        prompt = build_prompt(record.hypothesis, prompt_spec)
        try:
            pairs = parse_extraction(call_extract(backends["extract"], prompt))
        except MalformedResponse:
            outcome.skip = SKIP_EXTRACTOR_MALFORMED
            return outcome
        combined = combine_units(record.hypothesis, pairs)
        outcome.drops["pairs_dropped_object_missing"] += len(combined.dropped)
        outcome.drops["pairs_degraded_property_missing"] += len(combined.degraded)
        if not combined.units:
            outcome.skip = SKIP_NO_UNITS
            return outcome
        result = align(
            image,
            combined.units,
            backends["detect"],
            backends["ground"],
            threshold,
            backends.cache,
        )
        outcome.alignment_json = {"id": record.id} | result.to_json()
        outcome.drops["detections_dropped_degenerate"] += result.dropped_detections
        for unit, reason in result.skipped_units:
            outcome.drops[f"units_skipped_{reason}"] += 1
        for inst in applicable_instantiations(record, result, threshold):
            if inst.kind.value not in mr_selection:
                continue
            try:
                if inst.kind is MRKind.MR1:
                    test = mr.apply_mr1(
                        record, result, inst, backends["inpaint"], backends["synonym"], image
                    )
                elif inst.kind is MRKind.MR2:
                    test = mr.apply_mr2(record, result, inst, backends["inpaint"], image)
                else:
                    test = mr.apply_mr3(record, result, inst, backends["inpaint"], image)
            except DimensionMismatch:
                outcome.drops["tests_skipped_dimension_mismatch"] += 1
                continue
            except (BackendUnavailable, BackendMalformed, NoRemainingUnits):
                outcome.drops["tests_skipped_instantiation_failed"] += 1
                continue
            outcome.tests.append(test)
    except BackendUnavailable:
        outcome.skip = SKIP_BACKEND_UNAVAILABLE
        outcome.tests = []
    except BackendMalformed:
        outcome.skip = SKIP_BACKEND_MALFORMED
        outcome.tests = []
    return outcome


def generate(config: RunConfig) -> Path:
    """Run the full pipeline over every entailment record; write the suite.

    Returns the run directory. Content-derived test ids make this
    idempotent: rerunning over the same output directory changes nothing.
    """
    records, _ = load_dataset(config.dataset_manifest, config.image_dir)
    image_dir = config.image_dir or config.dataset_manifest.parent
    backends = _Backends(config, ("extract", "detect", "ground", "inpaint", "synonym"))
    threshold = IouThreshold(config.iou_threshold)
    prompt_spec = default_prompt_spec()

    out = Path(config.output_dir)
    try:
        (out / "images").mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise RunAborted(f"output directory not writable: {e}") from e

    def work(record: DatasetRecord) -> _RecordOutcome:
        return _process_record(
            record, image_dir, backends, threshold, config.mr_selection, prompt_spec
        )

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            outcomes = list(pool.map(work, records))
    else:
        outcomes = [work(record) for record in records]

    skips: Counter = Counter()
    drops: Counter = Counter()
    tests: dict[str, GeneratedTest] = {}
    alignments: list[dict] = []
    for outcome in outcomes:
        if outcome.skip:
            skips[outcome.skip] += 1
        drops.update(outcome.drops)
        if outcome.alignment_json is not None:
            alignments.append(outcome.alignment_json)
        for test in outcome.tests:
            if test.test_id in tests:
                drops["tests_deduplicated"] += 1
                continue
            tests[test.test_id] = test

    if records and skips.get(SKIP_BACKEND_UNAVAILABLE, 0) == len(records):
        raise RunAborted("all samples failed: backends unavailable")

    entries = []
    for test_id in sorted(tests):
        test = tests[test_id]
        rel_path = f"images/{test_id}.png"
        try:
            _write_if_changed(out / rel_path, test.premise.png)
        except OSError as e:
            raise RunAborted(f"output directory not writable: {e}") from e
        entries.append(test.to_manifest_entry(rel_path))

    per_mr = Counter(entry["mr"] for entry in entries)
    generation = {
        "dataset_size": len(records),
        "processed": len(records) - sum(skips.values()),
        "skips": dict(sorted(skips.items())),
        "drops": dict(sorted(drops.items())),
        "gnum": len(entries),
        "per_mr_gnum": {kind.value: per_mr.get(kind.value, 0) for kind in MRKind},
        "iou_threshold": config.iou_threshold,
        "mr_selection": list(config.mr_selection),
        "seed": config.seed,
        "endpoints": config.endpoints(),
        "backend_metadata": config.metadata(),
    }
    alignments.sort(key=lambda a: a["id"])
    _write_if_changed(out / TESTS_FILE, _jsonl(entries))
    _write_if_changed(out / ALIGNMENTS_FILE, _jsonl(alignments))
    _write_if_changed(
        out / GENERATION_FILE,
        (json.dumps(generation, indent=2, sort_keys=True) + "\n").encode("utf-8"),
    )
    return out


def load_suite(run_dir: str | Path) -> list[dict]:
    path = Path(run_dir) / TESTS_FILE
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line]


def _load_jsonl(path: Path) -> list[dict]:
    if not path.exists():
        return []
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line]


def execute(run_dir: str | Path, config: RunConfig) -> Path:
    """Predict every generated test; resumable by test id."""
    run = Path(run_dir)
    suite = load_suite(run)
    backends = _Backends(config, ("predict",))
    existing = {
        entry["test_id"]: entry
        for entry in _load_jsonl(run / PREDICTIONS_FILE)
        if entry.get("status") == "ok"
    }
    todo = [entry for entry in suite if entry["test_id"] not in existing]

    def work(entry: dict) -> dict:
        try:
            image = ImagePayload.from_file(run / entry["premise"])
            prediction = call_predict(backends["predict"], image, entry["hypothesis"])
        except BackendUnavailable:
            return {"test_id": entry["test_id"], "status": "error", "reason": SKIP_BACKEND_UNAVAILABLE}
        except BackendMalformed:
            return {"test_id": entry["test_id"], "status": "error", "reason": SKIP_BACKEND_MALFORMED}
        result = {"test_id": entry["test_id"], "status": "ok", "label": prediction.label.value}
        if prediction.confidence is not None:
            result["confidence"] = prediction.confidence
        return result

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            fresh = list(pool.map(work, todo))
    else:
        fresh = [work(entry) for entry in todo]

    merged = list(existing.values()) + fresh
    merged.sort(key=lambda e: e["test_id"])
    path = run / PREDICTIONS_FILE
    _write_if_changed(path, _jsonl(merged))
    return path


def detect_issues(run_dir: str | Path) -> dict:
    """Compare predictions with oracles; write issues.jsonl and report.json."""
    run = Path(run_dir)
    suite = load_suite(run)
    predictions = {p["test_id"]: p for p in _load_jsonl(run / PREDICTIONS_FILE)}
    generation = {}
    gen_path = run / GENERATION_FILE
    if gen_path.exists():
        generation = json.loads(gen_path.read_text(encoding="utf-8"))

    issues: list[dict] = []
    skips: Counter = Counter(generation.get("skips", {}))
    per_mr = {kind.value: {"gnum": 0, "gnum_effective": 0, "inum": 0} for kind in MRKind}
    effective = 0
    for entry in suite:
        stats = per_mr[entry["mr"]]
        stats["gnum"] += 1
        prediction = predictions.get(entry["test_id"])
        if prediction is None:
            skips["unpredicted_missing"] += 1
            continue
        if prediction.get("status") != "ok":
            skips[f"unpredicted_{prediction.get('reason', 'error')}"] += 1
            continue
        effective += 1
        stats["gnum_effective"] += 1
        if prediction["label"] != entry["oracle"]:
            stats["inum"] += 1
            issues.append(
                {
                    "test_id": entry["test_id"],
                    "source_id": entry["source_id"],
                    "mr": entry["mr"],
                    "oracle": entry["oracle"],
                    "predicted": prediction["label"],
                }
            )

    inum = len(issues)
    for stats in per_mr.values():
        stats["ifr"] = (
            stats["inum"] / stats["gnum_effective"] if stats["gnum_effective"] else None
        )
    report = {
        "gnum": len(suite),
        "gnum_effective": effective,
        "inum": inum,
        "ifr": inum / effective if effective else None,
        "accuracy": (effective - inum) / effective if effective else None,
        "per_mr": per_mr,
        "skips": dict(sorted(skips.items())),
        "drops": generation.get("drops", {}),
        "dataset_size": generation.get("dataset_size"),
        "processed": generation.get("processed"),
        "seed": generation.get("seed"),
        "iou_threshold": generation.get("iou_threshold"),
        "mr_selection": generation.get("mr_selection"),
        "backend_metadata": generation.get("backend_metadata", {}),
    }
    issues.sort(key=lambda e: e["test_id"])
    _write_if_changed(run / ISSUES_FILE, _jsonl(issues))
    _write_if_changed(
        run / REPORT_JSON,
        (json.dumps(report, indent=2, sort_keys=True) + "\n").encode("utf-8"),
    )
    return report


def _percent(value: float | None) -> str:
    return "n/a" if value is None else f"{value * 100:.1f}%"


def render_report_md(report: dict, vtr: float | None = None) -> str:
    """Markdown tables: overall plus per-MR GNUM/INUM/IFR breakdown."""
    lines = ["# Run report", ""]
    lines.append("| Scope | GNUM | INUM | IFR |")
    lines.append("|-------|------|------|-----|")
    lines.append(
        f"| Overall | {report['gnum']} | {report['inum']} | {_percent(report['ifr'])} |"
    )
    for kind in ("MR1", "MR2", "MR3"):
        stats = report["per_mr"][kind]
        lines.append(
            f"| {kind} | {stats['gnum']} | {stats['inum']} | {_percent(stats['ifr'])} |"
        )
    lines.append("")
    if report.get("accuracy") is not None:
        lines.append(f"Prediction-vs-oracle accuracy: {_percent(report['accuracy'])}")
        lines.append("")
    if vtr is not None:
        lines.append(f"VTR (reviewed sample): {_percent(vtr)}")
        adjusted = None if report["ifr"] is None else report["ifr"] * vtr
        lines.append(f"Adjusted IFR (IFR x VTR): {_percent(adjusted)}")
        lines.append("")
    if report.get("skips"):
        lines.append("## Skips")
        lines.append("")
        lines.append("| Reason | Count |")
        lines.append("|--------|-------|")
        for reason, count in sorted(report["skips"].items()):
            lines.append(f"| {reason} | {count} |")
        lines.append("")
    return "\n".join(lines) + "\n"


def write_report(run_dir: str | Path) -> Path:
    """Render report.md from report.json (computing it first if absent)."""
    run = Path(run_dir)
    report_path = run / REPORT_JSON
    if report_path.exists():
        report = json.loads(report_path.read_text(encoding="utf-8"))
    else:
        report = detect_issues(run)
    vtr = None
    vtr_path = run / VTR_RESULT_FILE
    if vtr_path.exists():
        vtr = json.loads(vtr_path.read_text(encoding="utf-8"))["vtr"]
    path = run / REPORT_MD
    _write_if_changed(path, render_report_md(report, vtr).encode("utf-8"))
    return path


def sample_vtr(run_dir: str | Path, n: int = 100, seed: int = 0) -> Path:
    """Draw a seeded review sample without replacement; write the sheet."""
    run = Path(run_dir)
    ids = sorted(entry["test_id"] for entry in load_suite(run))
    rng = random.Random(seed)
    sampled = sorted(rng.sample(ids, n)) if n < len(ids) else ids
    sheet = {
        "seed": seed,
        "n": len(sampled),
        "sampled": sampled,
        "verdicts": {test_id: "pending" for test_id in sampled},
    }
    path = run / VTR_SHEET_FILE
    _write_if_changed(path, (json.dumps(sheet, indent=2, sort_keys=True) + "\n").encode("utf-8"))
    return path


def ingest_vtr(sheet_path: str | Path, run_dir: str | Path | None = None) -> float:
    """Valid-test rate from a fully reviewed sheet; pending blocks it."""
    sheet = json.loads(Path(sheet_path).read_text(encoding="utf-8"))
    verdicts = sheet["verdicts"]
    if not verdicts:
        raise ValueError("review sheet contains no verdicts")
    counts = Counter(verdicts.values())
    if counts.get("pending"):
        raise PendingVerdicts(f"{counts['pending']} verdicts still pending")
    unknown = set(counts) - {"valid", "invalid"}
    if unknown:
        raise ValueError(f"unknown verdicts: {sorted(unknown)}")
    vtr = counts.get("valid", 0) / (counts.get("valid", 0) + counts.get("invalid", 0))
    if run_dir is not None:
        _write_if_changed(
            Path(run_dir) / VTR_RESULT_FILE,
            (json.dumps({"vtr": vtr, "n": len(verdicts)}, sort_keys=True) + "\n").encode("utf-8"),
        )
    return vtr


def split_retrain(
    run_dir: str | Path, seed: int = 0, eval_ratio: float = 0.2
) -> tuple[Path, Path]:
    """Disjoint, exhaustive 8:2 split; the eval share is floor(ratio * N)."""
    run = Path(run_dir)
    suite = {entry["test_id"]: entry for entry in load_suite(run)}
    ids = sorted(suite)
    rng = random.Random(seed)
    rng.shuffle(ids)
    eval_count = math.floor(eval_ratio * len(ids))
    eval_ids = set(ids[:eval_count])
    improve = [suite[i] for i in sorted(suite) if i not in eval_ids]
    evaluation = [suite[i] for i in sorted(suite) if i in eval_ids]
    improve_path = run / "retrain_improve.jsonl"
    eval_path = run / "retrain_eval.jsonl"
    _write_if_changed(improve_path, _jsonl(improve))
    _write_if_changed(eval_path, _jsonl(evaluation))
    return improve_path, eval_path
