import json
from pathlib import Path

import pytest

from veraser import cli, harness, synthetic as syn
from veraser.backends import BackendEndpoint, register_inprocess
from veraser.dataset import load_dataset
from veraser.errors import DatasetInvalid, ManifestUnreadable, PendingVerdicts
from veraser.harness import RunConfig


def make_config(corpus: Path, out: Path, predict="inprocess:synthetic", workers=2, **kw):
    roles = {
        "extract": "inprocess:synthetic",
        "detect": "inprocess:synthetic",
        "ground": "inprocess:synthetic",
        "inpaint": "inprocess:synthetic",
        "synonym": "inprocess:identity-synonym",
        "predict": predict,
    }
    return RunConfig(
        dataset_manifest=corpus / "dataset.jsonl",
        image_dir=corpus,
        output_dir=out,
        backends={r: BackendEndpoint(r, u) for r, u in roles.items()},
        workers=workers,
        **kw,
    )


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    seeds = list(range(20))
    syn.write_corpus(root, seeds, n_objects=[2 + s % 3 for s in seeds], ks=[1, 2])
    return root


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, corpus):
    out = tmp_path_factory.mktemp("run")
    config = make_config(corpus, out)
    harness.generate(config)
    harness.execute(out, config)
    harness.detect_issues(out)
    return out


def brute_force_gnum(corpus: Path) -> dict:
    """Applicability recount straight from the scene manifests."""
    per_mr = {"MR1": 0, "MR2": 0, "MR3": 0}
    for line in (corpus / "dataset.jsonl").read_text().splitlines():
        record = json.loads(line)
        scene_id = record["id"].rsplit("-", 1)[0]
        k = int(record["id"].rsplit("-k", 1)[1])
        scene = json.loads((corpus / "scenes" / f"{scene_id}.json").read_text())
        n = len(scene["objects"])
        per_mr["MR1"] += k if k >= 2 else 0
        per_mr["MR2"] += k
        per_mr["MR3"] += n - k
    per_mr["total"] = sum(per_mr.values())
    return per_mr


class TestLoadDataset:
    def test_valid_manifest(self, corpus):
        records, errors = load_dataset(corpus / "dataset.jsonl")
        assert len(records) == 40
        assert errors == []

    def test_bad_label_line_rejected(self, tmp_path, corpus):
        good = (corpus / "dataset.jsonl").read_text().splitlines()[:3]
        bad = json.dumps(
            {"id": "x", "image": good[0] and json.loads(good[0])["image"], "hypothesis": "h", "label": "maybe"}
        )
        manifest = tmp_path / "mixed.jsonl"
        manifest.write_text("\n".join(good + [bad]) + "\n")
        records, errors = load_dataset(manifest, corpus)
        assert len(records) == 3
        assert len(errors) == 1
        assert "label" in errors[0].message

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(ManifestUnreadable):
            load_dataset(tmp_path / "absent.jsonl")

    def test_too_many_bad_lines(self, tmp_path):
        manifest = tmp_path / "broken.jsonl"
        manifest.write_text("not json\nstill not json\n")
        with pytest.raises(DatasetInvalid):
            load_dataset(manifest)

    def test_duplicate_ids_rejected(self, tmp_path, corpus):
        line = (corpus / "dataset.jsonl").read_text().splitlines()[0]
        manifest = tmp_path / "dup.jsonl"
        manifest.write_text(line + "\n" + line + "\n")
        records, errors = load_dataset(manifest, corpus, max_bad_ratio=0.6)
        assert len(records) == 1
        assert "duplicate" in errors[0].message


class TestGenerate:
    def test_gnum_matches_brute_force_oracle(self, corpus, run_dir):
        expect = brute_force_gnum(corpus)
        generation = json.loads((run_dir / "generation.json").read_text())
        assert generation["gnum"] == expect["total"]
        assert generation["per_mr_gnum"] == {
            "MR1": expect["MR1"], "MR2": expect["MR2"], "MR3": expect["MR3"]
        }

    def test_manifest_sorted_by_test_id(self, run_dir):
        ids = [e["test_id"] for e in harness.load_suite(run_dir)]
        assert ids == sorted(ids)

    def test_images_exist_with_stated_hashes(self, run_dir):
        import hashlib

        for entry in harness.load_suite(run_dir)[:10]:
            data = (run_dir / entry["premise"]).read_bytes()
            assert hashlib.sha256(data).hexdigest() == entry["premise_sha256"]

    def test_mr_selection_subset(self, corpus, tmp_path):
        out = tmp_path / "mr2-only"
        config = make_config(corpus, out, mr_selection=("MR2",))
        harness.generate(config)
        suite = harness.load_suite(out)
        assert suite and all(e["mr"] == "MR2" for e in suite)

    def test_neutral_only_dataset_yields_zero(self, corpus, tmp_path):
        lines = []
        for i, line in enumerate((corpus / "dataset.jsonl").read_text().splitlines()[:4]):
            record = json.loads(line)
            record["label"] = "neutral" if i % 2 else "contradiction"
            record["id"] += "-relabel"
            lines.append(json.dumps(record))
        manifest = tmp_path / "neutral.jsonl"
        manifest.write_text("\n".join(lines) + "\n")
        out = tmp_path / "neutral-run"
        config = make_config(corpus, out)
        config.dataset_manifest = manifest
        config.image_dir = corpus
        harness.generate(config)
        generation = json.loads((out / "generation.json").read_text())
        assert generation["gnum"] == 0
        assert generation["skips"]["non_entailment_label"] == 4

    def test_idempotent_rerun(self, corpus, run_dir):
        before = {p: p.read_bytes() for p in run_dir.rglob("*") if p.is_file()}
        harness.generate(make_config(corpus, run_dir))
        after = {p: p.read_bytes() for p in run_dir.rglob("*") if p.is_file()}
        assert before == after

    def test_accounting_covers_every_record(self, run_dir):
        generation = json.loads((run_dir / "generation.json").read_text())
        assert generation["processed"] + sum(generation["skips"].values()) == generation[
            "dataset_size"
        ]


class TestExecuteAndDetect:
    def test_perfect_backend_zero_issues(self, run_dir):
        report = json.loads((run_dir / "report.json").read_text())
        assert report["inum"] == 0
        assert report["ifr"] == 0
        assert report["gnum"] == report["gnum_effective"]

    def test_always_entailment_flags_exactly_mr2(self, corpus, tmp_path):
        out = tmp_path / "buggy"
        config = make_config(corpus, out, predict="inprocess:synthetic-always-entailment")
        harness.generate(config)
        harness.execute(out, config)
        report = harness.detect_issues(out)
        assert report["inum"] == report["per_mr"]["MR2"]["gnum"]
        assert report["per_mr"]["MR1"]["inum"] == 0
        assert report["per_mr"]["MR3"]["inum"] == 0
        assert report["ifr"] == report["per_mr"]["MR2"]["gnum"] / report["gnum"]

    def test_execute_is_resumable(self, corpus, tmp_path):
        calls = {"n": 0}

        def counting_predict(body):
            calls["n"] += 1
            return {"label": "entailment"}

        register_inprocess("test-counting-predict", lambda opts: {"predict": counting_predict})
        out = tmp_path / "resume"
        config = make_config(corpus, out, predict="inprocess:test-counting-predict")
        harness.generate(config)
        harness.execute(out, config)
        first = calls["n"]
        assert first == len(harness.load_suite(out))
        harness.execute(out, config)
        assert calls["n"] == first

    def test_empty_suite_reports_undefined_ifr(self, tmp_path):
        run = tmp_path / "empty"
        run.mkdir()
        (run / "tests.jsonl").write_text("")
        (run / "predictions.jsonl").write_text("")
        report = harness.detect_issues(run)
        assert report["gnum"] == 0
        assert report["ifr"] is None
        md = harness.render_report_md(report)
        assert "n/a" in md

    def test_ifr_times_gnum_equals_inum(self, corpus, tmp_path):
        out = tmp_path / "mathcheck"
        config = make_config(corpus, out, predict="inprocess:synthetic-flip?p=0.5&seed=3")
        harness.generate(config)
        harness.execute(out, config)
        report = harness.detect_issues(out)
        assert report["ifr"] * report["gnum_effective"] == report["inum"]
        per_mr_gnum = sum(s["gnum"] for s in report["per_mr"].values())
        assert per_mr_gnum == report["gnum"]


class TestManifestInvariants:
    def test_oracle_is_pure_function_of_mr(self, run_dir):
        expect = {"MR1": "entailment", "MR2": "contradiction", "MR3": "entailment"}
        for entry in harness.load_suite(run_dir):
            assert entry["oracle"] == expect[entry["mr"]]

    def test_mr2_mr3_keep_source_hypothesis_and_mr1_changes_it(self, corpus, run_dir):
        sources = {
            json.loads(line)["id"]: json.loads(line)["hypothesis"]
            for line in (corpus / "dataset.jsonl").read_text().splitlines()
        }
        for entry in harness.load_suite(run_dir):
            source_hypothesis = sources[entry["source_id"]]
            if entry["mr"] in ("MR2", "MR3"):
                assert entry["hypothesis"] == source_hypothesis
                assert entry["provenance"]["erased_unit"] is None
            else:
                assert entry["hypothesis"] != source_hypothesis
                assert entry["provenance"]["erased_unit"] is not None

    def test_erased_regions_recheck_as_feasible(self, run_dir):
        from veraser.geometry import BBox, IouThreshold, erasure_feasible

        alignments = {
            json.loads(line)["id"]: json.loads(line)
            for line in (run_dir / "alignments.jsonl").read_text().splitlines()
        }
        threshold = IouThreshold(0.1)
        for entry in harness.load_suite(run_dir):
            region = BBox.from_json(entry["provenance"]["erased_region"])
            detected = [
                BBox.from_json(b) for b in alignments[entry["source_id"]]["detected"]
            ]
            remaining = [b for b in detected if b != region]
            assert erasure_feasible(region, remaining, threshold)


class TestVtrWorkflow:
    def test_sample_smaller_than_suite(self, run_dir):
        sheet_path = harness.sample_vtr(run_dir, n=10, seed=1)
        sheet = json.loads(sheet_path.read_text())
        assert sheet["n"] == 10
        assert len(set(sheet["sampled"])) == 10

    def test_sample_larger_than_suite_takes_all(self, run_dir):
        suite_size = len(harness.load_suite(run_dir))
        sheet = json.loads(harness.sample_vtr(run_dir, n=10_000, seed=1).read_text())
        assert sheet["n"] == suite_size

    def test_pending_verdicts_block(self, run_dir):
        sheet_path = harness.sample_vtr(run_dir, n=5, seed=2)
        with pytest.raises(PendingVerdicts):
            harness.ingest_vtr(sheet_path)

    def test_ratio_93_of_100(self, tmp_path):
        verdicts = {f"t{i:03d}": "valid" if i < 93 else "invalid" for i in range(100)}
        sheet = tmp_path / "sheet.json"
        sheet.write_text(json.dumps({"seed": 0, "n": 100, "sampled": sorted(verdicts), "verdicts": verdicts}))
        assert harness.ingest_vtr(sheet) == pytest.approx(0.93)

    def test_unknown_verdict_rejected(self, tmp_path):
        sheet = tmp_path / "sheet.json"
        sheet.write_text(json.dumps({"verdicts": {"t0": "meh"}}))
        with pytest.raises(ValueError):
            harness.ingest_vtr(sheet)


class TestSplitRetrain:
    def test_five_tests_split_four_one(self, tmp_path):
        run = tmp_path / "five"
        run.mkdir()
        entries = [
            {"test_id": f"t{i}", "oracle": "entailment", "mr": "MR3",
             "premise": "x.png", "premise_sha256": "0", "source_id": "s", "hypothesis": "h",
             "provenance": {}}
            for i in range(5)
        ]
        from veraser.harness import _jsonl

        (run / "tests.jsonl").write_bytes(_jsonl(entries))
        improve, evaluation = harness.split_retrain(run, seed=0)
        n_improve = len(improve.read_text().splitlines())
        n_eval = len(evaluation.read_text().splitlines())
        assert (n_improve, n_eval) == (4, 1)

    def test_partition_disjoint_exhaustive_deterministic(self, run_dir):
        improve1, eval1 = harness.split_retrain(run_dir, seed=7)
        ids_improve = {json.loads(l)["test_id"] for l in improve1.read_text().splitlines()}
        ids_eval = {json.loads(l)["test_id"] for l in eval1.read_text().splitlines()}
        all_ids = {e["test_id"] for e in harness.load_suite(run_dir)}
        assert ids_improve | ids_eval == all_ids
        assert ids_improve & ids_eval == set()
        bytes_a = improve1.read_bytes()
        harness.split_retrain(run_dir, seed=7)
        assert improve1.read_bytes() == bytes_a

    def test_empty_suite_splits_empty(self, tmp_path):
        run = tmp_path / "none"
        run.mkdir()
        (run / "tests.jsonl").write_text("")
        improve, evaluation = harness.split_retrain(run, seed=0)
        assert improve.read_text() == ""
        assert evaluation.read_text() == ""


class TestDeterminism:
    def test_worker_count_does_not_change_bytes(self, corpus, tmp_path):
        outputs = []
        for workers in (1, 4):
            out = tmp_path / f"workers-{workers}"
            config = make_config(corpus, out, workers=workers)
            harness.generate(config)
            harness.execute(out, config)
            harness.detect_issues(out)
            outputs.append(
                {
                    name: (out / name).read_bytes()
                    for name in ("tests.jsonl", "predictions.jsonl", "report.json", "alignments.jsonl")
                }
            )
        assert outputs[0] == outputs[1]


class TestCli:
    def test_usage_error_exit_code(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main(["generate"])  # missing --config
        assert exc.value.code == 1

    def test_unknown_run_dir_aborts(self, tmp_path):
        assert cli.main(["detect", "--run-dir", str(tmp_path / "missing")]) == 2

    def test_full_cli_flow(self, corpus, tmp_path, capsys):
        config_path = tmp_path / "config.json"
        out = tmp_path / "cli-run"
        config_path.write_text(
            json.dumps(
                {
                    "dataset": {"manifest": str(corpus / "dataset.jsonl"), "image_dir": str(corpus)},
                    "backends": {
                        role: {"base_url": url}
                        for role, url in {
                            "extract": "inprocess:synthetic",
                            "detect": "inprocess:synthetic",
                            "ground": "inprocess:synthetic",
                            "inpaint": "inprocess:synthetic",
                            "synonym": "inprocess:identity-synonym",
                            "predict": "inprocess:synthetic",
                        }.items()
                    },
                    "output_dir": str(out),
                    "workers": 2,
                }
            )
        )
        assert cli.main(["generate", "--config", str(config_path), "--mrs", "MR2,MR3"]) == 0
        assert cli.main(["execute", "--config", str(config_path)]) == 0
        assert cli.main(["detect", "--run-dir", str(out)]) == 0
        assert cli.main(["report", "--run-dir", str(out)]) == 0
        assert cli.main(["sample-vtr", "--run-dir", str(out), "--n", "5"]) == 0
        assert cli.main(["split", "--run-dir", str(out)]) == 0
        captured = capsys.readouterr()
        assert "GNUM=" in captured.out
        assert all(json.loads(l)["mr"] in ("MR2", "MR3") for l in (out / "tests.jsonl").read_text().splitlines())

    def test_selftest_small(self, capsys):
        assert cli.main(["selftest", "--scenes", "4", "--workers", "1"]) == 0
        assert "selftest: OK" in capsys.readouterr().out
