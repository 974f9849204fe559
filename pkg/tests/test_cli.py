"""End-to-end CLI runs over a temporary store, exit codes, config precedence."""

import csv
import json
import subprocess
import sys

import pytest

from vulngraph.cli import EXIT_DATA, EXIT_MISSING_STAGE, EXIT_OK, EXIT_USAGE, main


def run_cli(args, cwd):
    return subprocess.run(
        [sys.executable, "-m", "vulngraph.cli", *args],
        cwd=cwd,
        capture_output=True,
        text=True,
    )


@pytest.fixture(scope="module")
def staged(tmp_path_factory):
    """A store taken through synth -> ingest -> split -> cluster -> build-graph."""
    root = tmp_path_factory.mktemp("cli")
    steps = [
        ["synth", "--out", "fixtures", "--seed", "42", "--cves", "120", "--machines", "18"],
        ["ingest", "--cve", "fixtures/cves.json", "--machines", "fixtures/machines"],
        ["split"],
        ["cluster"],
        ["build-graph"],
    ]
    for step in steps:
        proc = run_cli(step, root)
        assert proc.returncode == EXIT_OK, proc.stderr
    return root


class TestHappyPath:
    def test_ingest_counts_match_fixtures(self, staged):
        cves = sum(1 for _ in open(staged / "store" / "cves.jsonl"))
        machines = sum(1 for _ in open(staged / "store" / "machines.jsonl"))
        assert cves == 120
        assert machines == 18

    def test_ingest_idempotent(self, staged):
        before = (staged / "store" / "cves.jsonl").read_bytes()
        proc = run_cli(["ingest", "--cve", "fixtures/cves.json"], staged)
        assert proc.returncode == EXIT_OK
        assert (staged / "store" / "cves.jsonl").read_bytes() == before

    def test_split_counts(self, staged):
        parts = {"populate": 0, "train": 0, "test": 0}
        for line in open(staged / "store" / "splits" / "42.jsonl"):
            parts[json.loads(line)["part"]] += 1
        assert parts == {"populate": 60, "train": 36, "test": 24}

    def test_graph_artifacts_exist(self, staged):
        assert (staged / "store" / "graph" / "nodes.jsonl").exists()
        assert (staged / "store" / "graph" / "edges.jsonl").exists()

    def test_train_logs_epochs(self, staged):
        proc = run_cli(["train", "--epochs", "20"], staged)
        assert proc.returncode == EXIT_OK
        assert "epochs: 20" in proc.stdout
        log = json.loads((staged / "store" / "graph" / "train_log.json").read_text())
        assert log["epochs"] == 20
        assert len(log["mean_losses"]) == 21

    def test_predict_by_library(self, staged):
        nodes = [
            json.loads(line)["name"]
            for line in open(staged / "store" / "graph" / "nodes.jsonl")
        ]
        proc = run_cli(
            ["predict", "--library", nodes[0], "--threshold", "0.1", "--out", "hits.csv"],
            staged,
        )
        assert proc.returncode == EXIT_OK
        rows = list(csv.reader(open(staged / "hits.csv")))
        assert rows[0] == ["input_id", "library", "activation", "depth"]

    def test_predict_by_cve(self, staged):
        cve_id = json.loads(next(open(staged / "store" / "cves.jsonl")))["id"]
        proc = run_cli(["predict", "--cve", cve_id, "--threshold", "0.0"], staged)
        assert proc.returncode == EXIT_OK
        assert cve_id in proc.stdout

    def test_cluster_writes_feature_matrix(self, staged):
        path = staged / "store" / "models" / "fs1" / "features.csv"
        rows = list(csv.reader(open(path)))
        assert rows[0][0] == "cve_id"
        assert "topic" in rows[0]
        assert len(rows) == 97  # header + populate + train records

    def test_ingest_nvd_adapter(self, tmp_path):
        feed = {
            "CVE_Items": [
                {
                    "cve": {
                        "CVE_data_meta": {"ID": "CVE-2014-0160"},
                        "description": {
                            "description_data": [{"lang": "en", "value": "overrun"}]
                        },
                    },
                    "configurations": {
                        "nodes": [
                            {
                                "cpe_match": [
                                    {
                                        "vulnerable": True,
                                        "cpe23Uri": "cpe:2.3:a:openssl:openssl:1.0.1:*:*:*:*:*:*:*",
                                    }
                                ]
                            }
                        ]
                    },
                    "impact": {},
                    "publishedDate": "2014-04-07T22:55Z",
                }
            ]
        }
        (tmp_path / "nvd.json").write_text(json.dumps(feed))
        proc = run_cli(["ingest", "--nvd", "nvd.json"], tmp_path)
        assert proc.returncode == EXIT_OK, proc.stderr
        stored = json.loads(next(open(tmp_path / "store" / "cves.jsonl")))
        assert stored["id"] == "CVE-2014-0160"
        assert stored["affected"] == [{"name": "openssl", "version": "1.0.1"}]

    def test_evaluate_notraining_unit_weights(self, staged):
        proc = run_cli(
            ["evaluate", "--preset", "notraining", "--feature-sets", "1"], staged
        )
        assert proc.returncode == EXIT_OK, proc.stderr
        report = json.loads(
            (staged / "store" / "reports" / "notraining" / "report.json").read_text()
        )
        assert report["runs"][0]["unit_weights"] is True

    def test_report_subcommand_reemits(self, staged):
        proc = run_cli(["report", "--preset", "notraining", "--out", "reemit"], staged)
        assert proc.returncode == EXIT_OK
        original = (
            staged / "store" / "reports" / "notraining" / "trend_notraining_1.csv"
        ).read_bytes()
        assert (staged / "reemit" / "trend_notraining_1.csv").read_bytes() == original

    def test_evaluate_deterministic(self, staged):
        for out in ("det1", "det2"):
            proc = run_cli(
                [
                    "evaluate", "--preset", "lessepochs", "--feature-sets", "1",
                    "--out", out,
                ],
                staged,
            )
            assert proc.returncode == EXIT_OK, proc.stderr
        for name in ("trend_lessepochs_1.csv", "box_lessepochs_1.csv", "bycount_lessepochs_1.csv"):
            assert (staged / "det1" / name).read_bytes() == (staged / "det2" / name).read_bytes()


class TestExitCodes:
    def test_usage_error(self, tmp_path):
        proc = run_cli(["bogus-command"], tmp_path)
        assert proc.returncode == EXIT_USAGE

    def test_corrupt_feed_names_file(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("not json [")
        proc = run_cli(["ingest", "--cve", "bad.json"], tmp_path)
        assert proc.returncode == EXIT_DATA
        assert "bad.json" in proc.stderr

    def test_missing_stage(self, tmp_path):
        proc = run_cli(["split"], tmp_path)
        assert proc.returncode == EXIT_MISSING_STAGE
        assert "ingest" in proc.stderr

    def test_predict_before_graph(self, tmp_path):
        proc = run_cli(["predict", "--library", "x"], tmp_path)
        assert proc.returncode == EXIT_MISSING_STAGE
        assert "build-graph" in proc.stderr

    def test_unknown_config_key_rejected(self, tmp_path):
        store = tmp_path / "store"
        store.mkdir()
        (store / "config").write_text("bogus_key = 1\n")
        proc = run_cli(["split"], tmp_path)
        assert proc.returncode == EXIT_DATA
        assert "bogus_key" in proc.stderr

    def test_out_of_range_config_rejected(self, tmp_path):
        store = tmp_path / "store"
        store.mkdir()
        (store / "config").write_text("threshold = 1.5\n")
        proc = run_cli(["split"], tmp_path)
        assert proc.returncode == EXIT_DATA


class TestConfig:
    def test_config_file_applies_and_flag_overrides(self, tmp_path):
        fixtures = tmp_path / "fixtures"
        proc = run_cli(["synth", "--out", "fixtures", "--cves", "40", "--machines", "6"], tmp_path)
        assert proc.returncode == EXIT_OK
        proc = run_cli(["ingest", "--cve", "fixtures/cves.json"], tmp_path)
        assert proc.returncode == EXIT_OK
        (tmp_path / "store" / "config").write_text("seed = 7\n")
        proc = run_cli(["split"], tmp_path)
        assert proc.returncode == EXIT_OK
        assert (tmp_path / "store" / "splits" / "7.jsonl").exists()
        proc = run_cli(["split", "--seed", "9"], tmp_path)
        assert proc.returncode == EXIT_OK
        assert (tmp_path / "store" / "splits" / "9.jsonl").exists()

    def test_help_lists_flag_defaults(self):
        for command, expected in [
            (["train", "--help"], ["default: 50", "default: 0.1", "default: 45"]),
            (["predict", "--help"], ["default: 0.9", "default: 2"]),
            (["cluster", "--help"], ["default: 10", "default: 6", "default: argmax"]),
        ]:
            proc = subprocess.run(
                [sys.executable, "-m", "vulngraph.cli", *command],
                capture_output=True,
                text=True,
            )
            assert proc.returncode == 0
            for needle in expected:
                assert needle in proc.stdout

    def test_main_callable_in_process(self, tmp_path, capsys, monkeypatch):
        monkeypatch.chdir(tmp_path)
        code = main(["synth", "--out", "f", "--cves", "30", "--machines", "6"])
        assert code == EXIT_OK
        assert "synthetic corpus" in capsys.readouterr().out


def test_store_lock_blocks_second_writer(tmp_path):
    from vulngraph.errors import StoreLockedError
    from vulngraph.store import Store

    store = Store(tmp_path / "store")
    with store.write_lock():
        with pytest.raises(StoreLockedError):
            with store.write_lock():
                pass
    with store.write_lock():
        pass  # lock released after the first context exits
