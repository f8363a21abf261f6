import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from capdet.cli import main
from capdet.masks import RleMask
from tests.test_masks import reference_bitmap

FIXTURES = Path(__file__).resolve().parent / "fixtures"
TWENTY = FIXTURES / "twenty.jsonl"
GOLDEN = FIXTURES / "golden"


@pytest.fixture
def runner():
    return CliRunner()


def invoke(runner, *args):
    return runner.invoke(main, [str(a) for a in args], catch_exceptions=False)


def annotate_fixture(runner, stub_url, tmp_path):
    """Run annotate against the stub; returns (annotated manifest, cache dir)."""
    out = tmp_path / "annotated.jsonl"
    cache = tmp_path / "cache"
    result = invoke(
        runner,
        "annotate", "--manifest", TWENTY, "--cache-dir", cache,
        "--endpoint", stub_url, "--out", out,
    )
    assert result.exit_code == 0, result.output
    return out, cache


class TestUsage:
    def test_unknown_subcommand_exits_2(self, runner):
        result = runner.invoke(main, ["nonsense"])
        assert result.exit_code == 2
        assert "Usage" in result.output or "No such command" in result.output

    def test_missing_required_option_exits_2(self, runner):
        result = runner.invoke(main, ["score"])
        assert result.exit_code == 2

    def test_help_on_every_subcommand(self, runner):
        for cmd in ("validate", "annotate", "score", "filter", "sample", "analyze"):
            result = runner.invoke(main, [cmd, "--help"])
            assert result.exit_code == 0, cmd

    def test_backend_reports(self, runner):
        result = invoke(runner, "backend")
        assert result.output.strip() in ("compiled", "python")


class TestValidate:
    def test_clean_manifest(self, runner):
        result = invoke(runner, "validate", "--manifest", TWENTY)
        assert result.exit_code == 0
        assert "20 records" in result.output

    def test_annotated_manifest_with_cache(self, runner, stub_url, tmp_path):
        annotated, cache = annotate_fixture(runner, stub_url, tmp_path)
        result = invoke(runner, "validate", "--manifest", annotated, "--cache-dir", cache)
        assert result.exit_code == 0

    def test_missing_annotation_file_fails(self, runner, stub_url, tmp_path):
        annotated, cache = annotate_fixture(runner, stub_url, tmp_path)
        victim = next((cache / "graphs").iterdir())
        victim.unlink()
        result = invoke(runner, "validate", "--manifest", annotated, "--cache-dir", cache)
        assert result.exit_code == 1

    def test_duplicate_ids_fail(self, runner, tmp_path):
        line = TWENTY.read_text().splitlines()[0]
        bad = tmp_path / "bad.jsonl"
        bad.write_text(line + "\n" + line + "\n")
        result = invoke(runner, "validate", "--manifest", bad)
        assert result.exit_code == 1


class TestAnnotate:
    def test_matches_golden(self, runner, stub_url, tmp_path):
        annotated, _ = annotate_fixture(runner, stub_url, tmp_path)
        assert annotated.read_bytes() == (GOLDEN / "annotated.jsonl").read_bytes()

    def test_refuses_overwrite_without_force(self, runner, stub_url, tmp_path):
        out = tmp_path / "annotated.jsonl"
        cache = tmp_path / "cache"
        args = (
            "annotate", "--manifest", TWENTY, "--cache-dir", cache,
            "--endpoint", stub_url, "--out", out,
        )
        assert invoke(runner, *args).exit_code == 0
        second = runner.invoke(main, [str(a) for a in args])
        assert second.exit_code == 1
        assert "--force" in second.output

    def test_strict_offline_with_missing_annotations_exits_3(self, runner, tmp_path):
        result = runner.invoke(
            main,
            [
                "annotate", "--manifest", str(TWENTY), "--cache-dir",
                str(tmp_path / "cache"), "--out", str(tmp_path / "out.jsonl"), "--strict",
            ],
        )
        assert result.exit_code == 3
        assert (tmp_path / "out.jsonl.errors.jsonl").exists()


class TestScore:
    def test_matches_golden_and_oracle(self, runner, stub_url, tmp_path):
        annotated, cache = annotate_fixture(runner, stub_url, tmp_path)
        reports = tmp_path / "reports.jsonl"
        result = invoke(
            runner, "score", "--manifest", annotated, "--cache-dir", cache, "--out", reports
        )
        assert result.exit_code == 0
        assert reports.read_bytes() == (GOLDEN / "reports.jsonl").read_bytes()

        # independent per-record oracle over the cached annotations
        for line, record_line in zip(
            reports.read_text().splitlines(), annotated.read_text().splitlines()
        ):
            report = json.loads(line)
            record = json.loads(record_line)
            assert report["record_id"] == record["record_id"]
            graph = json.loads((cache / record["scene_graph_ref"]).read_text())
            masks_doc = json.loads((cache / record["masks_ref"]).read_text())
            h, w = record["image_height"], record["image_width"]
            graph_ids = {o["id"] for o in graph["objects"]}
            bitmaps = [
                reference_bitmap(RleMask(m["height"], m["width"], tuple(m["counts"])))
                for oid, m in masks_doc.items()
                if oid in graph_ids
            ]
            covered = int(np.logical_or.reduce(bitmaps).sum()) if bitmaps else 0
            assert report["icr"] == covered / (h * w)
            n_objects = len(graph["objects"])
            edges = len(graph["attributes"]) + len(graph["relations"])
            assert report["aod"] == (edges / n_objects if n_objects else 0.0)
            words = len(record["caption"].split())
            assert report["length"] == words
            if words == 0:
                assert report["detailness"] is None
            else:
                assert report["detailness"] == report["icr"] * report["aod"] / words


class TestFilter:
    def write_hand_fixture(self, tmp_path):
        """The worked 5-record fixture with ids a..e."""
        manifest = tmp_path / "five.jsonl"
        reports = tmp_path / "five_reports.jsonl"
        itms = {"a": 0.9, "b": 0.8, "c": 0.7, "d": 0.6, "e": 0.5}
        cds = {"a": 0.01, "b": 0.05, "c": 0.03, "d": 0.9, "e": 0.9}
        lengths = {"a": 10, "b": 20, "c": 30, "d": 40, "e": 50}
        with manifest.open("w") as f:
            for rid in "abcde":
                f.write(
                    json.dumps(
                        {
                            "record_id": rid,
                            "image_path": f"{rid}.png",
                            "image_height": 2,
                            "image_width": 2,
                            "caption": "w " * lengths[rid],
                            "itm_score": itms[rid],
                        }
                    )
                    + "\n"
                )
        with reports.open("w") as f:
            for rid in "abcde":
                f.write(
                    json.dumps(
                        {
                            "record_id": rid,
                            "icr": 0.5,
                            "aod": 2.0,
                            "length": lengths[rid],
                            "detailness": cds[rid],
                        }
                    )
                    + "\n"
                )
        return manifest, reports

    def test_detailness_hand_example(self, runner, tmp_path):
        manifest, reports = self.write_hand_fixture(tmp_path)
        out = tmp_path / "selection.txt"
        result = invoke(
            runner,
            "filter", "--manifest", manifest, "--reports", reports,
            "--strategy", "detailness", "--k", 3, "--t", 2, "--out", out,
        )
        assert result.exit_code == 0
        ids = [l for l in out.read_text().splitlines() if not l.startswith("#")]
        assert ids == ["b", "c"]

    def test_itm_length_hand_example(self, runner, tmp_path):
        manifest, _ = self.write_hand_fixture(tmp_path)
        out = tmp_path / "selection.txt"
        result = invoke(
            runner,
            "filter", "--manifest", manifest, "--strategy", "itm_length",
            "--k", 3, "--t", 2, "--out", out,
        )
        assert result.exit_code == 0
        ids = [l for l in out.read_text().splitlines() if not l.startswith("#")]
        assert ids == ["c", "b"]

    def test_matches_golden(self, runner, stub_url, tmp_path):
        annotated, cache = annotate_fixture(runner, stub_url, tmp_path)
        reports = tmp_path / "reports.jsonl"
        invoke(runner, "score", "--manifest", annotated, "--cache-dir", cache, "--out", reports)
        out = tmp_path / "selection.txt"
        result = invoke(
            runner,
            "filter", "--manifest", annotated, "--reports", reports,
            "--strategy", "detailness", "--k", 8, "--t", 4, "--seed", 0, "--out", out,
        )
        assert result.exit_code == 0
        assert out.read_bytes() == (GOLDEN / "selection.txt").read_bytes()

    def test_t_larger_than_dataset_fails(self, runner, tmp_path):
        manifest, _ = self.write_hand_fixture(tmp_path)
        result = runner.invoke(
            main,
            [
                "filter", "--manifest", str(manifest), "--strategy", "random",
                "--t", "9", "--k", "9", "--out", str(tmp_path / "x.txt"),
            ],
        )
        assert result.exit_code == 1


class TestSample:
    def test_default_targets_on_fixture(self, runner, stub_url, tmp_path):
        annotated, cache = annotate_fixture(runner, stub_url, tmp_path)
        out = tmp_path / "samples.jsonl"
        result = invoke(
            runner,
            "sample", "--manifest", annotated, "--cache-dir", cache,
            "--seed", 0, "--out", out,
        )
        assert result.exit_code == 0, result.output
        lines = [json.loads(l) for l in out.read_text().splitlines()]
        assert lines, "expected at least some successful samples"
        for entry in lines:
            assert abs(entry["achieved_ratio"] - entry["ratio"]) <= entry["tolerance"]
            assert entry["dimension"] in ("icr", "aod")
            graph = entry["graph"]
            assert {"objects", "attributes", "relations"} <= graph.keys()
            if entry["dimension"] == "aod" and entry["graph"]["objects"]:
                assert entry["caption"]

    def test_spec_file(self, runner, stub_url, tmp_path):
        annotated, cache = annotate_fixture(runner, stub_url, tmp_path)
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps([{"dimension": "aod", "ratio": 0.5, "seed": 3}]))
        out = tmp_path / "samples.jsonl"
        result = invoke(
            runner,
            "sample", "--manifest", annotated, "--cache-dir", cache,
            "--spec", spec, "--out", out,
        )
        assert result.exit_code == 0
        lines = [json.loads(l) for l in out.read_text().splitlines()]
        assert all(e["dimension"] == "aod" and e["seed"] == 3 for e in lines)

    def test_deterministic_across_runs(self, runner, stub_url, tmp_path):
        annotated, cache = annotate_fixture(runner, stub_url, tmp_path)
        outs = []
        for name in ("s1.jsonl", "s2.jsonl"):
            out = tmp_path / name
            invoke(
                runner,
                "sample", "--manifest", annotated, "--cache-dir", cache,
                "--seed", 5, "--out", out,
            )
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]


class TestAnalyze:
    def test_pearson_matches_golden(self, runner, stub_url, tmp_path):
        annotated, cache = annotate_fixture(runner, stub_url, tmp_path)
        reports = tmp_path / "reports.jsonl"
        invoke(runner, "score", "--manifest", annotated, "--cache-dir", cache, "--out", reports)
        out = tmp_path / "p.json"
        result = invoke(
            runner,
            "analyze", "--reports", reports, "--manifest", annotated,
            "--pearson", "--metric", "icr", "--out", out,
        )
        assert result.exit_code == 0
        assert out.read_bytes() == (GOLDEN / "analysis_pearson.json").read_bytes()

    def test_binned_matches_golden(self, runner, stub_url, tmp_path):
        annotated, cache = annotate_fixture(runner, stub_url, tmp_path)
        reports = tmp_path / "reports.jsonl"
        invoke(runner, "score", "--manifest", annotated, "--cache-dir", cache, "--out", reports)
        out = tmp_path / "b.json"
        result = invoke(
            runner,
            "analyze", "--reports", reports, "--manifest", annotated,
            "--binned", "--metric", "icr", "--bins", 5, "--out", out,
        )
        assert result.exit_code == 0
        assert out.read_bytes() == (GOLDEN / "analysis_binned.json").read_bytes()

    def test_correlation_table(self, runner, tmp_path):
        table = tmp_path / "table.json"
        table.write_text(
            json.dumps(
                {
                    "0.2": {"entity": 79.78},
                    "0.4": {"entity": 79.70},
                    "0.6": {"entity": 81.21},
                    "0.8": {"entity": 80.38},
                    "1.0": {"entity": 83.11},
                }
            )
        )
        out = tmp_path / "corr.json"
        result = invoke(
            runner, "analyze", "--correlation-table", table, "--out", out, "--format", "table"
        )
        assert result.exit_code == 0
        doc = json.loads(out.read_text())
        assert doc["mode"] == "correlation_table"
        assert 0.7 < doc["coefficients"]["entity"] < 1.0

    def test_mode_required(self, runner, tmp_path):
        result = runner.invoke(main, ["analyze", "--out", str(tmp_path / "x.json")])
        assert result.exit_code == 1
