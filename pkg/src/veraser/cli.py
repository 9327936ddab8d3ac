"""Command-line surface: generate, execute, detect, report, review, split.

Exit codes: 0 success, 1 usage error, 2 run aborted, 3 selftest failure.
"""

from __future__ import annotations

import argparse
import sys
import tempfile
from pathlib import Path

from . import harness, synthetic
from .backends import BackendEndpoint
from .errors import PendingVerdicts, RunAborted, VeraserError
from .harness import RunConfig

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_ABORTED = 2
EXIT_SELFTEST = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_config_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="run configuration JSON")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--workers", type=int, default=None)
    parser.add_argument("--mrs", default=None, help="comma-separated subset of MR1,MR2,MR3")
    parser.add_argument("--iou-threshold", type=float, default=None)


def _load_config(args) -> RunConfig:
    mrs = tuple(args.mrs.split(",")) if args.mrs else None
    return RunConfig.from_file(
        args.config,
        seed=args.seed,
        workers=args.workers,
        mr_selection=mrs,
        iou_threshold=args.iou_threshold,
    )


def _inprocess_config(dataset_dir: Path, out_dir: Path, predict_url: str, workers: int) -> RunConfig:
    roles = {
        "extract": "inprocess:synthetic",
        "detect": "inprocess:synthetic",
        "ground": "inprocess:synthetic",
        "inpaint": "inprocess:synthetic",
        "synonym": "inprocess:identity-synonym",
        "predict": predict_url,
    }
    return RunConfig(
        dataset_manifest=dataset_dir / "dataset.jsonl",
        image_dir=dataset_dir,
        output_dir=out_dir,
        backends={role: BackendEndpoint(role, url) for role, url in roles.items()},
        workers=workers,
    )


def run_selftest(scenes: int, workers: int, keep_dir: str | None) -> int:
    """Synthetic end-to-end check: perfect backends must yield zero issues
    and the always-entailment stub must flag exactly the MR2 tests."""
    base = Path(keep_dir) if keep_dir else Path(tempfile.mkdtemp(prefix="veraser-selftest-"))
    corpus = base / "corpus"
    seeds = list(range(scenes))
    synthetic.write_corpus(corpus, seeds, n_objects=[2 + s % 3 for s in seeds], ks=[1, 2])

    perfect_dir = base / "run-perfect"
    config = _inprocess_config(corpus, perfect_dir, "inprocess:synthetic", workers)
    harness.generate(config)
    harness.execute(perfect_dir, config)
    report = harness.detect_issues(perfect_dir)
    harness.write_report(perfect_dir)
    print(f"selftest: generated {report['gnum']} tests from {report['dataset_size']} samples")
    failures = []
    if report["inum"] != 0:
        failures.append(f"perfect backends produced {report['inum']} issues (expected 0)")

    buggy_dir = base / "run-always-entailment"
    config_buggy = _inprocess_config(
        corpus, buggy_dir, "inprocess:synthetic-always-entailment", workers
    )
    harness.generate(config_buggy)
    harness.execute(buggy_dir, config_buggy)
    buggy = harness.detect_issues(buggy_dir)
    expected_inum = buggy["per_mr"]["MR2"]["gnum"]
    if buggy["inum"] != expected_inum:
        failures.append(
            f"always-entailment stub flagged {buggy['inum']} issues, expected {expected_inum}"
        )
    if buggy["per_mr"]["MR1"]["inum"] or buggy["per_mr"]["MR3"]["inum"]:
        failures.append("always-entailment stub flagged MR1/MR3 tests")

    for failure in failures:
        print(f"selftest FAIL: {failure}", file=sys.stderr)
    if not failures:
        print("selftest: OK")
    return EXIT_OK if not failures else EXIT_SELFTEST


def build_parser() -> _Parser:
    parser = _Parser(prog="veraser", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_generate = sub.add_parser("generate", help="deconstruct, align, and emit tests")
    _add_config_options(p_generate)

    p_execute = sub.add_parser("execute", help="predict every generated test")
    _add_config_options(p_execute)
    p_execute.add_argument("--run-dir", default=None, help="defaults to the config output_dir")

    p_detect = sub.add_parser("detect", help="compare predictions against oracles")
    p_detect.add_argument("--run-dir", required=True)

    p_report = sub.add_parser("report", help="render report.md for a run directory")
    p_report.add_argument("--run-dir", required=True)

    p_sample = sub.add_parser("sample-vtr", help="draw a seeded review sample")
    p_sample.add_argument("--run-dir", required=True)
    p_sample.add_argument("--n", type=int, default=100)
    p_sample.add_argument("--seed", type=int, default=0)

    p_ingest = sub.add_parser("ingest-vtr", help="compute VTR from a reviewed sheet")
    p_ingest.add_argument("--sheet", required=True)
    p_ingest.add_argument("--run-dir", default=None)

    p_split = sub.add_parser("split", help="8:2 improve/eval split of the suite")
    p_split.add_argument("--run-dir", required=True)
    p_split.add_argument("--seed", type=int, default=0)
    p_split.add_argument("--eval-ratio", type=float, default=0.2)

    p_selftest = sub.add_parser("selftest", help="run the synthetic end-to-end suite")
    p_selftest.add_argument("--scenes", type=int, default=20)
    p_selftest.add_argument("--workers", type=int, default=4)
    p_selftest.add_argument("--keep-dir", default=None, help="keep artifacts here")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "generate":
            out = harness.generate(_load_config(args))
            print(f"suite written to {out}")
        elif args.command == "execute":
            config = _load_config(args)
            run_dir = Path(args.run_dir) if args.run_dir else config.output_dir
            path = harness.execute(run_dir, config)
            print(f"predictions written to {path}")
        elif args.command == "detect":
            report = harness.detect_issues(args.run_dir)
            ifr = "n/a" if report["ifr"] is None else f"{report['ifr'] * 100:.1f}%"
            print(f"GNUM={report['gnum']} INUM={report['inum']} IFR={ifr}")
        elif args.command == "report":
            path = harness.write_report(args.run_dir)
            print(path.read_text(encoding="utf-8"))
        elif args.command == "sample-vtr":
            path = harness.sample_vtr(args.run_dir, n=args.n, seed=args.seed)
            print(f"review sheet written to {path}")
        elif args.command == "ingest-vtr":
            vtr = harness.ingest_vtr(args.sheet, args.run_dir)
            print(f"VTR={vtr:.4f}")
        elif args.command == "split":
            improve, evaluation = harness.split_retrain(
                args.run_dir, seed=args.seed, eval_ratio=args.eval_ratio
            )
            print(f"improve set: {improve}\neval set: {evaluation}")
        elif args.command == "selftest":
            return run_selftest(args.scenes, args.workers, args.keep_dir)
    except PendingVerdicts as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (RunAborted, OSError) as e:
        print(f"run aborted: {e}", file=sys.stderr)
        return EXIT_ABORTED
    except VeraserError as e:
        print(f"run aborted: {e}", file=sys.stderr)
        return EXIT_ABORTED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
